"""Calibrated multi-view 3D recovery: DLT, RANSAC triangulation and center placement."""
from itertools import combinations
from typing import NamedTuple

import numpy as np

from . import kernels
from .camera import project_pinhole

RANK_TOL = 1e-9


class TriangulationError(ValueError):
    """Rank-deficient system (parallel rays or too few views)."""


class ConsensusError(RuntimeError):
    """RANSAC found no hypothesis supported by at least two views."""


def _normalised(points2d, cams):
    """Pixels (..., V, 2) -> normalised image coordinates and [R | t] matrices (V, 3, 4)."""
    pts = np.asarray(points2d, dtype=np.float64)
    Kinv = np.stack([np.linalg.inv(c.K) for c in cams])
    xn = np.einsum("vab,...vb->...va", Kinv[:, :2, :2], pts) + Kinv[:, :2, 2]
    Ps = np.stack([np.hstack([c.R, c.tvec[:, None]]) for c in cams])
    return xn, Ps


def dlt_many(points2d, cams, weights=None):
    """Triangulate (N, V, 2) pixel observations -> (N, 3); raises on rank deficiency."""
    pts = np.asarray(points2d, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[1] != len(cams):
        raise ValueError(f"expected (N, {len(cams)}, 2) observations, got {pts.shape}")
    if len(cams) < 2:
        raise TriangulationError("need at least 2 views")
    xn, Ps = _normalised(pts, cams)
    w = np.ones(pts.shape[:2]) if weights is None else np.asarray(weights, dtype=np.float64)
    Xh, sv = kernels.dlt_batch(xn, np.broadcast_to(Ps, (len(pts),) + Ps.shape), w)
    bad = (sv[:, 1] <= RANK_TOL * sv[:, 0]) | (np.abs(Xh[:, 3]) < 1e-15)
    if bad.any():
        raise TriangulationError(f"rank-deficient DLT system for point {int(np.flatnonzero(bad)[0])}")
    return Xh[:, :3] / Xh[:, 3:4]


def dlt(points2d, cams):
    """Single point from per-view (V, 2) pixels."""
    return dlt_many(np.asarray(points2d)[None], cams)[0]


def reprojection_errors(X, points2d, cams):
    """Per-view pixel error of a 3D point; inf where the point is behind a camera."""
    return _reproj(np.asarray(X, dtype=np.float64)[None], np.asarray(points2d, dtype=np.float64), cams)[0]


def _reproj(Xs, points2d, cams):
    """(H, 3) hypotheses -> (H, V) pixel errors, inf behind a camera."""
    R = np.stack([c.R for c in cams])
    t = np.stack([c.tvec for c in cams])
    K = np.stack([c.K for c in cams])
    Xc = np.einsum("vab,hb->hva", R, Xs) + t
    z = Xc[..., 2]
    safe = np.where(z > 0, z, 1.0)
    uv = Xc[..., :2] / safe[..., None] * K[:, [0, 1], [0, 1]] + K[:, :2, 2]
    err = np.linalg.norm(uv - points2d, axis=-1)
    return np.where(z > 0, err, np.inf)


def ransac_triangulate(points2d, cams, threshold=2.0, iterations=100, seed=0, view_ids=None):
    """Robust triangulation from view-pair hypotheses.

    Pairs are drawn from the canonical (sorted by view id) pair list, so the
    result does not depend on the order views are passed in. Returns
    (X, inlier_mask); raises :class:`ConsensusError` if fewer than two views agree.
    """
    pts = np.asarray(points2d, dtype=np.float64)
    V = len(cams)
    if V < 2:
        raise TriangulationError("need at least 2 views")
    ids = list(range(V)) if view_ids is None else list(view_ids)
    pos = {vid: i for i, vid in enumerate(ids)}
    pairs = np.array([(pos[a], pos[b]) for a, b in combinations(sorted(ids), 2)])
    # every pair hypothesis is triangulated once; the sampled sequence indexes into them
    xn, Ps = _normalised(pts, cams)
    Xh, sv = kernels.dlt_batch(xn[pairs], Ps[pairs], np.ones(pairs.shape))
    ok = (sv[:, 1] > RANK_TOL * sv[:, 0]) & (np.abs(Xh[:, 3]) >= 1e-15)
    hyp = Xh[:, :3] / np.where(ok, Xh[:, 3], 1.0)[:, None]
    errs = _reproj(hyp, pts, cams)
    rng = np.random.default_rng(seed)
    best_mask, best_key = None, None
    for k in rng.integers(len(pairs), size=iterations):
        if not ok[k]:
            continue
        mask = errs[k] <= threshold
        key = (int(mask.sum()), -float(np.sum(errs[k][mask])))
        if best_key is None or key > best_key:
            best_key, best_mask = key, mask
    if best_mask is None or best_mask.sum() < 2:
        raise ConsensusError("no hypothesis with at least two inlier views")
    sel = np.flatnonzero(best_mask)
    X = dlt(pts[sel], [cams[v] for v in sel])
    return X, best_mask


class CenterFit(NamedTuple):
    center: np.ndarray
    converged: bool
    iterations: int
    residual: float
    initial_residual: float


def _center_residuals(center, offsets, points2d, cams):
    r = []
    for v, c in enumerate(cams):
        Xc = c.to_camera(center + offsets)
        if np.any(Xc[:, 2] <= 0):
            return None
        uv = Xc[:, :2] / Xc[:, 2:3] * np.diag(c.K)[:2] + c.K[:2, 2]
        r.append((uv - points2d[v]).ravel())
    return np.concatenate(r)


def _center_jacobian(center, offsets, cams):
    rows = []
    for c in cams:
        Xc = c.to_camera(center + offsets)
        fx, fy = c.K[0, 0], c.K[1, 1]
        x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
        du = np.stack([fx / z, np.zeros_like(z), -fx * x / z ** 2], axis=1) @ c.R
        dv = np.stack([np.zeros_like(z), fy / z, -fy * y / z ** 2], axis=1) @ c.R
        rows.append(np.stack([du, dv], axis=1).reshape(-1, 3))
    return np.concatenate(rows)


def opt_center(skeleton, points2d, cams, root=0, frame_rotation=None, max_iter=20, tol=1e-9):
    """Place a root-relative skeleton in world space against multi-view 2D predictions.

    ``skeleton`` (k, 3) is root-relative in a frame rotated into world by
    ``frame_rotation`` (default: world axes). ``points2d`` is (V, k, 2). The
    center starts at the DLT of the root joint and is refined by Gauss-Newton
    with step halving on all joints' squared reprojection error.
    """
    pts = np.asarray(points2d, dtype=np.float64)
    skel = np.asarray(skeleton, dtype=np.float64)
    skel = skel - skel[root]
    offsets = skel if frame_rotation is None else skel @ np.asarray(frame_rotation).T
    center = dlt(pts[:, root], cams)
    r = _center_residuals(center, offsets, pts, cams)
    if r is None:
        return CenterFit(center, False, 0, np.inf, np.inf)
    cost = float(r @ r)
    init_cost = cost
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _center_jacobian(center, offsets, cams)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        accepted = False
        for _ in range(11):
            cand = center + step
            rc = _center_residuals(cand, offsets, pts, cams)
            if rc is not None and float(rc @ rc) <= cost:
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            converged = True  # no descent direction left at this precision
            break
        center, r, cost = cand, rc, float(rc @ rc)
        if np.linalg.norm(step) < tol:
            converged = True
            break
    return CenterFit(center, converged, it, cost, init_cost)
