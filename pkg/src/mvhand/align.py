"""Procrustes alignment between joint sets and similarity-transform algebra."""
from dataclasses import dataclass

import numpy as np

SVD_TOL = 1e-12


class DegenerateError(ValueError):
    """Alignment problem has no unique solution (collinear or coincident points)."""


@dataclass
class SimilarityTransform:
    """y = scale * R @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.scale = float(self.scale)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))

    @classmethod
    def from_rotation(cls, R):
        return cls(1.0, R, np.zeros(3))

    def is_valid(self, tol=1e-9):
        R = self.rotation
        return self.scale > 0 and np.abs(R.T @ R - np.eye(3)).max() < tol and abs(np.linalg.det(R) - 1) < tol


def apply(T, X):
    return T.scale * np.asarray(X) @ T.rotation.T + T.translation


def invert(T):
    Rt = T.rotation.T
    return SimilarityTransform(1.0 / T.scale, Rt, -(Rt @ T.translation) / T.scale)


def compose(A, B):
    """Transform equal to applying B then A."""
    return SimilarityTransform(A.scale * B.scale, A.rotation @ B.rotation,
                               A.scale * A.rotation @ B.translation + A.translation)


def _kabsch(src_c, tgt_c):
    """Rotation R maximising tr(R^T H) for centred sets, with reflection excluded."""
    H = tgt_c.T @ src_c  # sum target_j source_j^T
    U, S, Vt = np.linalg.svd(H)
    top = max(S[0], 1e-300)
    if S[1] <= SVD_TOL * top:
        raise DegenerateError("point set is collinear or coincident")
    d = np.sign(np.linalg.det(U @ Vt))
    if d < 0 and S[1] - S[2] < SVD_TOL * top:
        raise DegenerateError("reflection correction is ambiguous (singular-value gap below tolerance)")
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    return U @ D @ Vt, S, D


def procrustes(source, target, mode="similarity"):
    """Transform T minimising sum_j |T(source_j) - target_j|^2.

    ``mode`` is ``"similarity"``, ``"rotation+translation"`` or
    ``"rotation-only"``. Rotation-only centres both sets on the root joint
    (index 0) and returns scale 1, translation 0.
    """
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"procrustes: shape mismatch {src.shape} vs {tgt.shape}")
    if src.shape[0] < 3:
        raise DegenerateError("need at least 3 points")
    if mode == "rotation-only":
        R, _, _ = _kabsch(src - src[0], tgt - tgt[0])
        return SimilarityTransform(1.0, R, np.zeros(3))
    mu_s, mu_t = src.mean(0), tgt.mean(0)
    sc, tc = src - mu_s, tgt - mu_t
    R, S, D = _kabsch(sc, tc)
    if mode == "similarity":
        var = np.sum(sc * sc)
        scale = float(np.sum(S * np.diag(D)) / var)
    elif mode == "rotation+translation":
        scale = 1.0
    else:
        raise ValueError(f"unknown procrustes mode {mode!r}")
    return SimilarityTransform(scale, R, mu_t - scale * R @ mu_s)


def residual(T, source, target):
    d = apply(T, source) - np.asarray(target)
    return float(np.sum(d * d))


def align_translation_scale(pred, gt):
    """Optimal scale + translation (no rotation) taking ``pred`` onto ``gt``.

    The least-squares scale can be non-positive for a prediction that is
    anti-correlated with the target; it is returned as is.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mu_p, mu_g = pred.mean(0), gt.mean(0)
    pc, gc = pred - mu_p, gt - mu_g
    if np.sum(gc * gc) == 0:
        raise DegenerateError("ground truth points are coincident")
    den = np.sum(pc * pc)
    if den <= 1e-24:
        raise DegenerateError("prediction has zero variance")
    s = float(np.sum(pc * gc) / den)
    return SimilarityTransform(s, np.eye(3), mu_g - s * mu_p)


# batched helpers used by metrics over many samples


def batch_align_translation_scale(pred, gt):
    """Aligned predictions for (N, k, 3) stacks; degenerate rows are left centred only."""
    pc = pred - pred.mean(-2, keepdims=True)
    mu_g = gt.mean(-2, keepdims=True)
    gc = gt - mu_g
    den = np.sum(pc * pc, axis=(-2, -1))
    s = np.sum(pc * gc, axis=(-2, -1)) / np.where(den > 1e-24, den, 1.0)
    return s[..., None, None] * pc + mu_g


def batch_procrustes_align(pred, gt):
    """Similarity-aligned predictions for (N, k, 3) stacks."""
    mu_p = pred.mean(-2, keepdims=True)
    mu_g = gt.mean(-2, keepdims=True)
    pc, gc = pred - mu_p, gt - mu_g
    H = np.swapaxes(gc, -1, -2) @ pc
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros(S.shape[:-1] + (3,))
    D[..., 0] = 1.0
    D[..., 1] = 1.0
    D[..., 2] = d
    R = (U * D[..., None, :]) @ Vt
    var = np.sum(pc * pc, axis=(-2, -1))
    scale = np.sum(S * D, axis=-1) / np.where(var > 1e-24, var, 1.0)
    return scale[..., None, None] * pc @ np.swapaxes(R, -1, -2) + mu_g
