"""Hot inner loops with a numba path and a pure-numpy path.

Each kernel exists twice: ``*_numpy`` (vectorised numpy) and ``*_jit``
(explicit loops compiled by numba). The public names dispatch on
:data:`mvhand._accel.HAVE_NUMBA`; both variants stay importable so tests and
the benchmark can compare them directly.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit


def _corners(coords, h, w):
    x = np.clip(coords[..., 0], 0.0, w - 1.0)
    y = np.clip(coords[..., 1], 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return x, y, x0, y0, x1, y1


# bilinear sampling: fmap (B, h, w, c), coords (B, m, 2) as (x, y) pixels


def bilinear_forward_numpy(fmap, coords):
    B, h, w, _ = fmap.shape
    x, y, x0, y0, x1, y1 = _corners(coords, h, w)
    wx = (x - x0)[..., None]
    wy = (y - y0)[..., None]
    b = np.arange(B)[:, None]
    f00 = fmap[b, y0, x0]
    f01 = fmap[b, y0, x1]
    f10 = fmap[b, y1, x0]
    f11 = fmap[b, y1, x1]
    return (1 - wy) * ((1 - wx) * f00 + wx * f01) + wy * ((1 - wx) * f10 + wx * f11)


def bilinear_backward_numpy(fmap, coords, grad_out):
    """Return (grad_fmap, grad_coords)."""
    B, h, w, c = fmap.shape
    x, y, x0, y0, x1, y1 = _corners(coords, h, w)
    wx = (x - x0)[..., None]
    wy = (y - y0)[..., None]
    b = np.arange(B)[:, None]
    f00 = fmap[b, y0, x0]
    f01 = fmap[b, y0, x1]
    f10 = fmap[b, y1, x0]
    f11 = fmap[b, y1, x1]

    g_fmap = np.zeros_like(fmap)
    bb = np.broadcast_to(b, x0.shape)
    np.add.at(g_fmap, (bb, y0, x0), grad_out * (1 - wy) * (1 - wx))
    np.add.at(g_fmap, (bb, y0, x1), grad_out * (1 - wy) * wx)
    np.add.at(g_fmap, (bb, y1, x0), grad_out * wy * (1 - wx))
    np.add.at(g_fmap, (bb, y1, x1), grad_out * wy * wx)

    dx = np.sum(grad_out * ((1 - wy) * (f01 - f00) + wy * (f11 - f10)), axis=-1)
    dy = np.sum(grad_out * ((1 - wx) * (f10 - f00) + wx * (f11 - f01)), axis=-1)
    inside_x = (coords[..., 0] >= 0.0) & (coords[..., 0] <= w - 1.0)
    inside_y = (coords[..., 1] >= 0.0) & (coords[..., 1] <= h - 1.0)
    g_coords = np.stack([dx * inside_x, dy * inside_y], axis=-1)
    return g_fmap, g_coords


@njit(cache=True)
def _bilinear_forward_loops(fmap, coords, out):
    B, h, w, c = fmap.shape
    m = coords.shape[1]
    for bi in range(B):
        for j in range(m):
            x = min(max(coords[bi, j, 0], 0.0), w - 1.0)
            y = min(max(coords[bi, j, 1], 0.0), h - 1.0)
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            wx = x - x0
            wy = y - y0
            for ch in range(c):
                top = (1 - wx) * fmap[bi, y0, x0, ch] + wx * fmap[bi, y0, x1, ch]
                bot = (1 - wx) * fmap[bi, y1, x0, ch] + wx * fmap[bi, y1, x1, ch]
                out[bi, j, ch] = (1 - wy) * top + wy * bot


@njit(cache=True)
def _bilinear_backward_loops(fmap, coords, grad_out, g_fmap, g_coords):
    B, h, w, c = fmap.shape
    m = coords.shape[1]
    for bi in range(B):
        for j in range(m):
            cx = coords[bi, j, 0]
            cy = coords[bi, j, 1]
            x = min(max(cx, 0.0), w - 1.0)
            y = min(max(cy, 0.0), h - 1.0)
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            wx = x - x0
            wy = y - y0
            dx = 0.0
            dy = 0.0
            for ch in range(c):
                g = grad_out[bi, j, ch]
                f00 = fmap[bi, y0, x0, ch]
                f01 = fmap[bi, y0, x1, ch]
                f10 = fmap[bi, y1, x0, ch]
                f11 = fmap[bi, y1, x1, ch]
                g_fmap[bi, y0, x0, ch] += g * (1 - wy) * (1 - wx)
                g_fmap[bi, y0, x1, ch] += g * (1 - wy) * wx
                g_fmap[bi, y1, x0, ch] += g * wy * (1 - wx)
                g_fmap[bi, y1, x1, ch] += g * wy * wx
                dx += g * ((1 - wy) * (f01 - f00) + wy * (f11 - f10))
                dy += g * ((1 - wx) * (f10 - f00) + wx * (f11 - f01))
            if cx >= 0.0 and cx <= w - 1.0:
                g_coords[bi, j, 0] = dx
            if cy >= 0.0 and cy <= h - 1.0:
                g_coords[bi, j, 1] = dy


def bilinear_forward_jit(fmap, coords):
    out = np.empty(coords.shape[:2] + fmap.shape[3:], dtype=np.float64)
    _bilinear_forward_loops(np.ascontiguousarray(fmap), np.ascontiguousarray(coords), out)
    return out


def bilinear_backward_jit(fmap, coords, grad_out):
    g_fmap = np.zeros_like(fmap)
    g_coords = np.zeros_like(coords)
    _bilinear_backward_loops(np.ascontiguousarray(fmap), np.ascontiguousarray(coords),
                             np.ascontiguousarray(grad_out), g_fmap, g_coords)
    return g_fmap, g_coords


# Gaussian heatmaps rendered straight into non-overlapping patch layout.
# Output (B, gh/p, gw/p, k*p*p) with channel order (joint, dy, dx).


def heatmap_patches_numpy(points, weights, grid, patch, sigma):
    B, k, _ = points.shape
    ax = np.arange(grid, dtype=np.float64)
    gx = np.exp(-0.5 * ((ax[None, None, :] - points[..., 0:1]) / sigma) ** 2)
    gy = np.exp(-0.5 * ((ax[None, None, :] - points[..., 1:2]) / sigma) ** 2)
    gy = gy * weights[..., None]
    n = grid // patch
    gx = gx.reshape(B, k, n, patch)
    gy = gy.reshape(B, k, n, patch)
    # (B, ny, nx, k, dy, dx)
    out = np.einsum("bjYy,bjXx->bYXjyx", gy, gx, optimize=True)
    return out.reshape(B, n, n, k * patch * patch)


@njit(cache=True)
def _heatmap_patch_loops(points, weights, grid, patch, sigma, out):
    B, k, _ = points.shape
    n = grid // patch
    gx = np.empty(grid)
    gy = np.empty(grid)
    pp = patch * patch
    for bi in range(B):
        for j in range(k):
            px = points[bi, j, 0]
            py = points[bi, j, 1]
            wgt = weights[bi, j]
            for a in range(grid):
                gx[a] = np.exp(-0.5 * ((a - px) / sigma) ** 2)
                gy[a] = wgt * np.exp(-0.5 * ((a - py) / sigma) ** 2)
            for yy in range(n):
                for dy in range(patch):
                    vy = gy[yy * patch + dy]
                    for xx in range(n):
                        base = j * pp + dy * patch
                        for dx in range(patch):
                            out[bi, yy, xx, base + dx] = vy * gx[xx * patch + dx]


def heatmap_patches_jit(points, weights, grid, patch, sigma):
    B, k, _ = points.shape
    n = grid // patch
    out = np.empty((B, n, n, k * patch * patch), dtype=np.float64)
    _heatmap_patch_loops(np.ascontiguousarray(points, dtype=np.float64),
                         np.ascontiguousarray(weights, dtype=np.float64),
                         int(grid), int(patch), float(sigma), out)
    return out


if HAVE_NUMBA:
    bilinear_forward = bilinear_forward_jit
    bilinear_backward = bilinear_backward_jit
    heatmap_patches = heatmap_patches_jit
else:
    bilinear_forward = bilinear_forward_numpy
    bilinear_backward = bilinear_backward_numpy
    heatmap_patches = heatmap_patches_numpy


# Batched DLT: normalised image points (N, V, 2), projection matrices (N, V, 3, 4),
# per-(point, view) weights (N, V) -> homogeneous solutions (N, 4) and the two
# smallest singular values (N, 2) for degeneracy checks.


def _dlt_system(xn, Ps, w):
    r1 = xn[..., 0:1] * Ps[..., 2, :] - Ps[..., 0, :]          # (N, V, 4)
    r2 = xn[..., 1:2] * Ps[..., 2, :] - Ps[..., 1, :]
    A = np.stack([r1, r2], axis=2) * w[..., None, None]
    return A.reshape(xn.shape[0], -1, 4)


def dlt_batch_numpy(xn, Ps, w):
    A = _dlt_system(xn, Ps, w)
    _, S, Vt = np.linalg.svd(A)
    return Vt[:, -1, :], np.stack([S[:, 0], S[:, -2], S[:, -1]], axis=1)


@njit(cache=True)
def _dlt_loops(xn, Ps, w, out, sv):
    N, V, _ = xn.shape
    A = np.empty((2 * V, 4))
    for n in range(N):
        for v in range(V):
            for c in range(4):
                A[2 * v, c] = w[n, v] * (xn[n, v, 0] * Ps[n, v, 2, c] - Ps[n, v, 0, c])
                A[2 * v + 1, c] = w[n, v] * (xn[n, v, 1] * Ps[n, v, 2, c] - Ps[n, v, 1, c])
        _, S, Vt = np.linalg.svd(A)
        for c in range(4):
            out[n, c] = Vt[3, c]
        sv[n, 0] = S[0]
        sv[n, 1] = S[2]
        sv[n, 2] = S[3]


def dlt_batch_jit(xn, Ps, w):
    N = xn.shape[0]
    out = np.empty((N, 4))
    sv = np.empty((N, 3))
    _dlt_loops(np.ascontiguousarray(xn, dtype=np.float64), np.ascontiguousarray(Ps, dtype=np.float64),
               np.ascontiguousarray(w, dtype=np.float64), out, sv)
    return out, sv


dlt_batch = dlt_batch_jit if HAVE_NUMBA else dlt_batch_numpy
