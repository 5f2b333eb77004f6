"""Single-view network: heatmap encoder pyramid + parameter regression head.

Input is a 21-channel Gaussian heatmap stack rendered from 2D pseudo labels
on a ``grid x grid`` lattice (image / 4). Level 1 linearly mixes 4x4 patches
of the heatmaps, levels 2-4 mix 2x2 patches of the previous level, each
followed by a leaky-relu, giving strides 4/8/16/32 of the heatmap grid.
"""
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import handmodel, kernels
from .camera import IMAGE_SIZE
from .config import ModelConfig
from .nn import ParamStore, linear, mlp

NUM_JOINTS = handmodel.NUM_JOINTS
FIRST_PATCH = 4
# weak-perspective camera decoding: s = CAM_SCALE_UNIT * softplus(c0), t = center + CAM_SHIFT_UNIT * c[1:]
CAM_SCALE_UNIT = 200.0
CAM_SHIFT_UNIT = 32.0
# softplus^-1(2.4): rest skeleton at the rig distance spans roughly the image
CAM_SCALE_BIAS = float(np.log(np.expm1(2.4)))


@dataclass
class SingleViewOutput:
    theta: dc.Node       # (B, 16, 3)
    beta: dc.Node        # (B, 10)
    cam_s: dc.Node       # (B, 1) pixels per meter
    cam_t: dc.Node       # (B, 2) pixels
    joints: dc.Node      # (B, 21, 3) root-relative, camera frame
    pyramid: list        # four (B, h, w, c) nodes


def init_estimator(params: ParamStore, cfg: ModelConfig):
    c = cfg.channels
    params.add_linear("enc.0", NUM_JOINTS * FIRST_PATCH * FIRST_PATCH, c[0])
    for lv in range(1, 4):
        params.add_linear(f"enc.{lv}", 4 * c[lv - 1], c[lv])
    feat = head_width(cfg)
    for name, n_out in (("theta", 48), ("beta", 10), ("cam", 3)):
        params.add_mlp(f"head.{name}", feat, cfg.head_hidden, n_out, cfg.head_layers)
    params.arrays[f"head.cam.{cfg.head_layers}.b"][0] = CAM_SCALE_BIAS
    return params


def head_width(cfg: ModelConfig):
    cells = (cfg.grid // 32) ** 2 if cfg.head_pool == "flatten" else 1
    return cells * cfg.channels[3] + (READOUT_WIDTH if cfg.head_coords else 0)


READOUT_WIDTH = 3 * NUM_JOINTS + 3


def heatmap_readout(patches, cfg: ModelConfig):
    """Fixed summary of the input heatmaps -> (B, 66).

    Per joint: centroid relative to the mass-weighted hand centre, divided by
    the hand's spread (42), and normalised mass (21); then the hand centre in
    [-1, 1] image units (2) and the spread (1). Empty joints get zeros.
    """
    x = np.asarray(patches.value if isinstance(patches, dc.Node) else patches)
    B, n = x.shape[:2]
    p = FIRST_PATCH
    hm = x.reshape(B, n, n, NUM_JOINTS, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(B, NUM_JOINTS, n * p, n * p)
    ax = (np.arange(cfg.grid) + 0.5) / (cfg.grid / 2) - 1.0
    mass = hm.sum(axis=(2, 3))
    safe = np.where(mass > 1e-12, mass, 1.0)
    xy = np.stack([np.einsum("bkyx,x->bk", hm, ax), np.einsum("bkyx,y->bk", hm, ax)], axis=-1) / safe[..., None]
    norm = mass / (2 * np.pi * cfg.heatmap_sigma ** 2)
    w = np.where(mass > 1e-12, norm, 0.0)
    wsum = np.maximum(w.sum(axis=1, keepdims=True), 1e-12)
    centre = (w[..., None] * xy).sum(axis=1, keepdims=True) / wsum[..., None]
    rel = np.where(w[..., None] > 0, xy - centre, 0.0)
    spread = np.sqrt((w * (rel ** 2).sum(-1)).sum(axis=1, keepdims=True) / wsum)
    rel = rel / np.maximum(spread, 1e-6)[..., None]
    return np.concatenate([rel[..., 0], rel[..., 1], norm, centre[:, 0], spread * 4.0], axis=1)


def render_heatmap_patches(points2d, conf, cfg: ModelConfig):
    """Heatmaps for (B, 21, 2) image-pixel labels in level-1 patch layout.

    Returns (B, grid/4, grid/4, 21 * 16). Each joint's Gaussian is scaled by
    its confidence, so dropped joints (confidence 0) render empty.
    """
    factor = cfg.grid / IMAGE_SIZE
    pts = (np.asarray(points2d) + 0.5) * factor - 0.5
    return kernels.heatmap_patches(pts, np.asarray(conf, dtype=np.float64), cfg.grid, FIRST_PATCH,
                                   cfg.heatmap_sigma)


def heatmaps_to_patches(heatmaps, patch=FIRST_PATCH):
    """(B, 21, h, w) heatmap stack -> (B, h/p, w/p, 21 * p * p) patch layout."""
    hm = np.asarray(heatmaps, dtype=np.float64)
    B, k, h, w = hm.shape
    if h % patch or w % patch:
        raise dc.ShapeError(f"encode: resolution {h}x{w} is not divisible by patch {patch}")
    x = hm.reshape(B, k, h // patch, patch, w // patch, patch)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(B, h // patch, w // patch, k * patch * patch)


def _patchify2(x):
    B, h, w, c = x.shape
    x = dc.reshape(x, (B, h // 2, 2, w // 2, 2, c))
    x = dc.transpose(x, (0, 1, 3, 2, 4, 5))
    return dc.reshape(x, (B, h // 2, w // 2, 4 * c))


def encode(p, patches, cfg: ModelConfig):
    """Feature pyramid [H1, H2, H3, H4] from level-1 patches (B, n, n, 21*16)."""
    x = dc.as_node(patches)
    n = cfg.grid // FIRST_PATCH
    if x.shape[1:] != (n, n, NUM_JOINTS * FIRST_PATCH * FIRST_PATCH):
        raise dc.ShapeError(f"encode: expected patches (B, {n}, {n}, {NUM_JOINTS * 16}), got {x.shape}")
    pyramid = []
    for lv in range(4):
        if lv:
            x = _patchify2(x)
        x = dc.leaky_relu(linear(x, p, f"enc.{lv}"))
        pyramid.append(x)
    return pyramid


def regress(p, h4, pool="mean", extra=None):
    """Pool the last level then one MLP per head -> (theta 48, beta 10, cam 3) raw outputs.

    ``pool="flatten"`` keeps the cell layout instead of averaging it away.
    """
    B, h, w, c = h4.shape
    if pool == "flatten":
        pooled = dc.reshape(h4, (B, h * w * c))
    else:
        pooled = dc.reduce_mean(dc.reshape(h4, (B, h * w, c)), axis=1)
    if extra is not None:
        pooled = dc.concat([pooled, dc.as_node(extra)], axis=1)
    return mlp(pooled, p, "head.theta"), mlp(pooled, p, "head.beta"), mlp(pooled, p, "head.cam")


def decode_camera(cam_raw):
    """Raw (B, 3) -> scale (B, 1) > 0 and translation (B, 2) in pixels."""
    s = dc.scale(dc.softplus(dc.take(cam_raw, [0], axis=1)), CAM_SCALE_UNIT)
    t = dc.shift(dc.scale(dc.take(cam_raw, [1, 2], axis=1), CAM_SHIFT_UNIT), IMAGE_SIZE / 2)
    return s, t


def estimate(p, patches, cfg: ModelConfig, tree=None):
    pyramid = encode(p, patches, cfg)
    extra = heatmap_readout(patches, cfg) if cfg.head_coords else None
    theta_raw, beta, cam_raw = regress(p, pyramid[3], cfg.head_pool, extra)
    B = theta_raw.shape[0]
    theta = dc.reshape(theta_raw, (B, 16, 3))
    s, t = decode_camera(cam_raw)
    joints = handmodel.forward_kinematics(theta, beta, tree)
    return SingleViewOutput(theta, beta, s, t, joints, pyramid)


def new_estimator_params(cfg: ModelConfig, seed=0):
    return init_estimator(ParamStore(seed), cfg)
