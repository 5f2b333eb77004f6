"""Alignment of per-view skeletons to a canonical (reference-camera) frame and averaging."""
import numpy as np

from . import diffcore as dc
from .align import DegenerateError, SimilarityTransform, apply, invert, procrustes
from .camera import relative_rotation


def alignment_rotations(refined, cams=None, reference=0):
    """Rotations (V, 3, 3) taking each view's frame to the reference view's frame.

    With cameras the relative extrinsic rotation is used; otherwise a
    rotation-only Procrustes fit of each view onto the reference view.
    """
    refined = np.asarray(refined, dtype=np.float64)
    V = refined.shape[0]
    if cams is not None:
        return np.stack([relative_rotation(cams[reference], cams[i]) for i in range(V)])
    out = np.empty((V, 3, 3))
    for i in range(V):
        if i == reference:
            out[i] = np.eye(3)
            continue
        try:
            out[i] = procrustes(refined[i], refined[reference], mode="rotation-only").rotation
        except DegenerateError as exc:
            raise DegenerateError(f"view {i}: {exc}") from None
    return out


def fuse(refined, cams=None, reference=0):
    """Mean of the aligned views. Returns (fused (21, 3), [SimilarityTransform per view])."""
    refined = np.asarray(refined, dtype=np.float64)
    if refined.ndim != 3 or refined.shape[0] < 1:
        raise ValueError("fuse needs at least one view of shape (k, 3)")
    rots = alignment_rotations(refined, cams, reference)
    transforms = [SimilarityTransform.from_rotation(R) for R in rots]
    aligned = np.stack([apply(T, X) for T, X in zip(transforms, refined)])
    return aligned.mean(axis=0), transforms


def to_view(fused, T):
    return apply(invert(T), fused)


# batched helpers used during training; rotations are constants


def batch_alignment_rotations(joints, cams=None, reference=0):
    """(T, V, k, 3) joints -> (T, V, 3, 3) rotations to the reference view."""
    T, V = joints.shape[:2]
    if cams is not None:
        rots = alignment_rotations(joints[0], cams, reference)
        return np.broadcast_to(rots, (T, V, 3, 3)).copy()
    return np.stack([alignment_rotations(joints[t], None, reference) for t in range(T)])


def fuse_nodes(joints, rots):
    """Differentiable mean of aligned views: (T, V, k, 3) node, (T, V, 3, 3) -> (T, k, 3) node."""
    T, V, k, _ = joints.shape
    aligned = dc.matmul(joints, dc.constant(np.swapaxes(rots, -1, -2)))
    return dc.scale(dc.reduce_sum(aligned, axis=1), 1.0 / V)


def fused_to_views(fused, rots):
    """(T, k, 3) canonical skeletons -> (T, V, k, 3) in every view's frame (numpy)."""
    return np.einsum("tkc,tvcd->tvkd", fused, rots)
