"""Training objectives.

L1 convention everywhere: sum over coordinates, mean over joints, views and
timesteps. Skeletons are (T, V, k, 3) nodes, per-view 2D data (T*V, k, 2).
"""
import numpy as np

from . import diffcore as dc
from .camera import project_weak
from .config import LossWeights

WARMUP, FULL = "warmup", "full"


def l_2d(pred2d, labels, conf=None):
    """Confidence-weighted mean L1 between (B, k, 2) predictions and labels."""
    pred2d = dc.as_node(pred2d)
    labels = np.asarray(labels, dtype=np.float64)
    B, k, _ = labels.shape
    w = np.ones((B, k)) if conf is None else np.asarray(conf, dtype=np.float64)
    w = np.broadcast_to(w[..., None], labels.shape)
    d = dc.abs_(dc.sub(pred2d, dc.constant(labels)))
    return dc.scale(dc.reduce_sum(dc.mul(d, dc.constant(w))), 1.0 / (B * k))


def pair_rotations(rots):
    """(T, V, 3, 3) view->canonical rotations -> (T, V, V, 3, 3) with [i, j] taking view j to view i."""
    return np.einsum("tiba,tjbc->tijac", rots, rots)


def l_c2d(joints, cam_s, cam_t, rots):
    """2D consistency: mean over (i, j) of |Pi_i(M*_i) - Pi_i(A_i(M*_j))|_1.

    ``joints`` (T, V, k, 3), ``cam_s`` (T, V, 1), ``cam_t`` (T, V, 2).
    """
    joints, cam_s, cam_t = dc.as_node(joints), dc.as_node(cam_s), dc.as_node(cam_t)
    T, V, k, _ = joints.shape
    pairs = pair_rotations(rots)
    src = dc.broadcast_repeat(dc.reshape(joints, (T, 1, V, k, 3)), (T, V, V, k, 3))
    aligned = dc.matmul(src, dc.constant(np.swapaxes(pairs, -1, -2)))
    s = dc.broadcast_repeat(dc.reshape(cam_s, (T, V, 1, 1)), (T, V, V, 1))
    t = dc.broadcast_repeat(dc.reshape(cam_t, (T, V, 1, 2)), (T, V, V, 2))
    proj_other = project_weak(aligned, s, t)                       # (T, V, V, k, 2)
    own = project_weak(joints, cam_s, cam_t)                        # (T, V, k, 2)
    own = dc.broadcast_repeat(dc.reshape(own, (T, V, 1, k, 2)), (T, V, V, k, 2))
    d = dc.abs_(dc.sub(own, proj_other))
    return dc.scale(dc.reduce_sum(d), 1.0 / (T * V * V * k))


def _rms_size(x):
    """Per-skeleton RMS joint distance from the root (root at origin), keeping the last two axes."""
    sq = dc.reduce_mean(dc.reduce_sum(dc.square(x), axis=-1, keepdims=True), axis=-2, keepdims=True)
    return dc.sqrt(sq)


def match_scale(joints, target):
    """Rescale each predicted skeleton to the RMS size of its target.

    Without this, shrinking every skeleton is a free way to lower 3D L1 terms
    whose targets are built from the same predictions.
    """
    joints = dc.as_node(joints)
    tgt = np.sqrt(np.mean(np.sum(np.asarray(target) ** 2, axis=-1, keepdims=True), axis=-2, keepdims=True))
    size = _rms_size(joints)
    ratio = dc.div(dc.constant(tgt), dc.shift(size, 1e-12))
    return dc.mul(joints, dc.broadcast_repeat(ratio, joints.shape))


def _l1_to_target(joints, target, scale_invariant=False):
    joints = dc.as_node(joints)
    T, V, k, _ = joints.shape
    if scale_invariant:
        joints = match_scale(joints, target)
    d = dc.abs_(dc.sub(joints, dc.constant(target)))
    return dc.scale(dc.reduce_sum(d), 1.0 / (T * V * k))


def l_cf(refined, fused_in_views, scale_invariant=False):
    """Fusion consistency: refined (T, V, k, 3) node vs constant back-transformed fused target."""
    return _l1_to_target(refined, fused_in_views, scale_invariant)


def l_d(single, fused_in_views, scale_invariant=False):
    """Distillation: single-view (T, V, k, 3) node vs constant back-transformed fused target."""
    return _l1_to_target(single, fused_in_views, scale_invariant)


def l_prior(theta, theta_star, beta, weights: LossWeights):
    """alpha * (|theta|_1 + |theta*|_1 + gamma |beta|_1) averaged over views; root row excluded."""
    B = theta.shape[0]
    rows = list(range(1, 16))
    pose = dc.reduce_sum(dc.abs_(dc.take(theta, rows, axis=1)))
    if theta_star is not None:
        pose = pose + dc.reduce_sum(dc.abs_(dc.take(theta_star, rows, axis=1)))
    shape = dc.scale(dc.reduce_sum(dc.abs_(beta)), weights.gamma)
    return dc.scale(pose + shape, weights.alpha / B)


def consistency_term(step, weights: LossWeights):
    """Which consistency loss is active at this optimizer step: 'c2d', 'cf' or None."""
    options = [n for n, on in (("c2d", weights.use_c2d), ("cf", weights.use_cf)) if on]
    if not options:
        return None
    if len(options) == 1:
        return options[0]
    return "c2d" if step % 2 == 0 else "cf"


def total_loss(terms, phase, step, weights: LossWeights, ramp=1.0):
    """Weighted sum of precomputed term nodes.

    ``terms`` maps 'l2d', 'prior', 'c2d', 'cf', 'd' to scalar nodes (missing
    entries are skipped). Warmup uses L_2D + L_p only; the full phase adds
    L_d and one of L_c2D / L_cf chosen by step parity (even -> L_c2D).
    ``ramp`` in [0, 1] scales the three collaborative terms.
    Returns (total node, {name: float}) with the weighted contributions.
    """
    parts = [("l2d", weights.w_2d), ("prior", weights.w_prior)]
    if phase == FULL:
        which = consistency_term(step, weights)
        if which == "c2d":
            parts.append(("c2d", weights.w_c2d * ramp))
        elif which == "cf":
            parts.append(("cf", weights.w_cf * weights.metric_scale * ramp))
        if weights.use_d:
            parts.append(("d", weights.w_d * weights.metric_scale * ramp))
    elif phase != WARMUP:
        raise ValueError(f"unknown phase {phase!r}")
    total, logged = None, {}
    for name, w in parts:
        node = terms.get(name)
        if node is None:
            continue
        contrib = dc.scale(node, w)
        logged[name] = float(contrib.value)
        total = contrib if total is None else total + contrib
    if total is None:
        total = dc.constant(0.0)
    return total, logged
