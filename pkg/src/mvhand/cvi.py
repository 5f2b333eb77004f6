"""Cross-view interaction network.

Per view, three view-shared extractors build a per-joint graph feature:
a location embedding of the single-view joints and pose (G1), a reshaped
projection of the last feature level (G2, "SAIGB") and bilinear samples of
levels 1-3 at the projected joints (G3, "JFS"). Views are stacked into
v*k tokens and refined by two residual interaction blocks, each adding a
cross-view attention branch and a view-shared max-pooled GCN branch.
"""
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import handmodel
from .camera import IMAGE_SIZE
from .config import ModelConfig
from .estimator import CAM_SCALE_BIAS, FIRST_PATCH, decode_camera
from .nn import linear, mlp

K = handmodel.NUM_JOINTS
NUM_BLOCKS = 2
LOCATION_SCALE = 10.0  # meters -> decimeters for the location embedding input
MASK_FILL = -1e30


@dataclass
class RefinedOutput:
    theta: dc.Node     # (B, 16, 3)
    cam_s: dc.Node     # (B, 1)
    cam_t: dc.Node     # (B, 2)
    joints: dc.Node    # (B, 21, 3)
    graph: dc.Node     # (T, V*21, C) refined graph feature


def skeleton_adjacency(tree=None):
    tree = tree or handmodel.default_tree()
    A = np.eye(K)
    for j in range(1, K):
        A[j, tree.parent[j]] = A[tree.parent[j], j] = 1.0
    return A


def init_cvi(params, cfg: ModelConfig):
    C = cfg.width
    h4_cells = (cfg.grid // 32) ** 2
    params.add_mlp("le", 3 + 45, cfg.c1, cfg.c1)
    params.add_linear("saigb", cfg.channels[3], K * (cfg.c2 // h4_cells))
    adj = skeleton_adjacency() * cfg.adjacency_gain
    for b in range(NUM_BLOCKS):
        for proj in ("q", "k", "v", "o"):
            params.add_linear(f"cva{b}.{proj}", C, C)
        params.add_mlp(f"cva{b}.mlp", C, cfg.cva_hidden, C)
        params.add_const(f"vsf{b}.adj", adj)
        params.add_linear(f"vsf{b}.gcn0", C, cfg.gcn_hidden)
        params.add_linear(f"vsf{b}.gcn1", cfg.gcn_hidden, C)
    params.add_mlp("ref.token", C, cfg.refine_hidden, cfg.token_width)
    params.add_mlp("ref.theta", K * cfg.token_width, cfg.refine_hidden, 48)
    params.add_mlp("ref.cam", K * cfg.token_width, cfg.refine_hidden, 3)
    params.arrays["ref.cam.1.b"][0] = CAM_SCALE_BIAS
    return params


# ------------------------------------------------------------ graph features


def location_embed(p, joints, theta):
    """(B, 21, 3) joints and (B, 16, 3) pose -> (B, 21, c1); root rotation excluded."""
    B = joints.shape[0]
    pose = dc.reshape(dc.take(theta, list(range(1, 16)), axis=1), (B, 1, 45))
    pose = dc.broadcast_repeat(pose, (B, K, 45))
    x = dc.concat([dc.scale(joints, LOCATION_SCALE), pose], axis=-1)
    return mlp(x, p, "le")


def saigb(p, h4, cfg: ModelConfig):
    """(B, h, w, c4) -> (B, 21, c2): each joint owns a fixed slice of every cell's projection."""
    B, h, w, _ = h4.shape
    per = cfg.c2 // (h * w)
    y = linear(h4, p, "saigb")                      # (B, h, w, 21*per)
    y = dc.reshape(y, (B, h * w, K, per))
    y = dc.transpose(y, (0, 2, 1, 3))               # (B, 21, hw, per)
    return dc.reshape(y, (B, K, h * w * per))


def level_coords(joints2d, level, cfg: ModelConfig):
    """Image pixels -> coordinates on pyramid level ``level`` (0-based)."""
    stride = IMAGE_SIZE / cfg.grid * FIRST_PATCH * 2 ** level
    return dc.shift(dc.scale(dc.shift(joints2d, 0.5), 1.0 / stride), -0.5)


def jfs(pyramid, joints2d, cfg: ModelConfig):
    """Bilinear samples of H1..H3 at the projected joints -> (B, 21, c3)."""
    return dc.concat([dc.bilinear_sample(pyramid[lv], level_coords(joints2d, lv, cfg))
                      for lv in range(3)], axis=-1)


def build_graph(parts, views):
    """Concatenate [G1 | G2 | G3] per view and stack views: (T*V, 21, C) -> (T, V*21, C)."""
    g = dc.concat(parts, axis=-1)
    B, k, C = g.shape
    if B % views:
        raise dc.ShapeError(f"build_graph: {B} view items is not a multiple of {views} views")
    return dc.reshape(g, (B // views, views * k, C))


def vsgfe(p, joints, theta, joints2d, pyramid, cfg: ModelConfig, views):
    B = joints.shape[0]
    parts = []
    parts.append(location_embed(p, joints, theta) if cfg.use_g1 else dc.constant(np.zeros((B, K, cfg.c1))))
    parts.append(saigb(p, pyramid[3], cfg) if cfg.use_g2 else dc.constant(np.zeros((B, K, cfg.c2))))
    parts.append(jfs(pyramid, joints2d, cfg) if cfg.use_g3 else dc.constant(np.zeros((B, K, cfg.c3))))
    return build_graph(parts, views)


# ------------------------------------------------------------- interaction


def token_mask(view_mask, T, views):
    """Additive attention mask (T, 1, 1, V*21) from a (T, V) or (V,) boolean view mask."""
    active = np.broadcast_to(np.asarray(view_mask, dtype=bool), (T, views))
    if not active.any(axis=1).all():
        raise ValueError("view mask must keep at least one view active")
    tok = np.repeat(active, K, axis=1)
    return np.where(tok, 0.0, MASK_FILL)[:, None, None, :]


def attention(p, g, name, heads, mask=None, return_weights=False):
    """Multi-head self-attention over all tokens of each timestep: (T, N, C) -> (T, N, C)."""
    T, N, C = g.shape
    d = C // heads

    def split(x):
        return dc.transpose(dc.reshape(x, (T, N, heads, d)), (0, 2, 1, 3))  # (T, h, N, d)

    q = split(linear(g, p, f"{name}.q"))
    k = split(linear(g, p, f"{name}.k"))
    v = split(linear(g, p, f"{name}.v"))
    scores = dc.scale(dc.matmul(q, dc.swap_last(k)), 1.0 / np.sqrt(d))
    if mask is not None:
        scores = scores + dc.constant(np.broadcast_to(mask, scores.shape))
    w = dc.softmax(scores, axis=-1)
    out = dc.reshape(dc.transpose(dc.matmul(w, v), (0, 2, 1, 3)), (T, N, C))
    out = linear(out, p, f"{name}.o")
    return (out, w) if return_weights else out


def cva(p, g, block, cfg: ModelConfig, mask=None):
    """Cross-view attention branch F_t: attention then a per-token MLP."""
    return mlp(attention(p, g, f"cva{block}", cfg.heads, mask), p, f"cva{block}.mlp")


def normalized_adjacency(p, block):
    return dc.softmax(p[f"vsf{block}.adj"], axis=-1)


def adaptive_gcn(p, x, block):
    """Two graph-convolution layers over the 21 joints: (B, 21, C) -> (B, 21, C)."""
    B = x.shape[0]
    A = dc.broadcast_repeat(dc.reshape(normalized_adjacency(p, block), (1, K, K)), (B, K, K))
    h = dc.leaky_relu(linear(dc.matmul(A, x), p, f"vsf{block}.gcn0"))
    return linear(dc.matmul(A, h), p, f"vsf{block}.gcn1")


def vsf(p, g, block, views, view_mask=None):
    """View-shared branch: per-view GCN, max over active views, repeated to every view."""
    T, N, C = g.shape
    c = adaptive_gcn(p, dc.reshape(g, (T * views, K, C)), block)
    c = dc.reshape(c, (T, views, K, C))
    if view_mask is not None:
        active = np.broadcast_to(np.asarray(view_mask, dtype=bool), (T, views))
        fill = np.where(active, 0.0, MASK_FILL)[:, :, None, None]
        c = c + dc.constant(np.broadcast_to(fill, c.shape))
    pooled = dc.max_axis(c, axis=1)                  # (T, 21, C)
    rep = dc.broadcast_repeat(dc.reshape(pooled, (T, 1, K, C)), (T, views, K, C))
    return dc.reshape(rep, (T, N, C))


def dcvi(p, g, cfg: ModelConfig, views, view_mask=None):
    """G* = G + F_t(G) + C' applied by two blocks with independent weights."""
    if not cfg.use_dcvi:
        return g
    mask = token_mask(view_mask, g.shape[0], views) if view_mask is not None else None
    for b in range(NUM_BLOCKS):
        terms = [g]
        if cfg.use_cva:
            terms.append(cva(p, g, b, cfg, mask))
        if cfg.use_vsf:
            terms.append(vsf(p, g, b, views, view_mask))
        g = dc.add_n(terms)
    return g


def regress_refined(p, g_star, beta, cfg: ModelConfig, views, tree=None):
    """Per-token MLP -> per-view flatten (21 * token_width) -> theta* and camera heads."""
    T, N, C = g_star.shape
    tok = mlp(g_star, p, "ref.token")                          # (T, N, w)
    flat = dc.reshape(tok, (T * views, K * cfg.token_width))
    theta = dc.reshape(mlp(flat, p, "ref.theta"), (T * views, 16, 3))
    s, t = decode_camera(mlp(flat, p, "ref.cam"))
    joints = handmodel.forward_kinematics(theta, beta, tree)
    return theta, s, t, joints


def refine(p, single, cfg: ModelConfig, views, view_mask=None, tree=None):
    """Full cross-view stage on top of a :class:`SingleViewOutput` batch of T*V items."""
    from .camera import project_weak

    joints2d = project_weak(single.joints, single.cam_s, single.cam_t)
    g = vsgfe(p, single.joints, single.theta, joints2d, single.pyramid, cfg, views)
    g_star = dcvi(p, g, cfg, views, view_mask)
    theta, s, t, joints = regress_refined(p, g_star, single.beta, cfg, views, tree)
    return RefinedOutput(theta, s, t, joints, g_star)
