"""Full two-stage network (single-view estimator + cross-view refinement) and batch inference."""
from dataclasses import dataclass

import numpy as np

from . import cvi, estimator, fusion
from .camera import project_weak
from .config import ModelConfig
from .nn import ParamStore


def new_params(cfg: ModelConfig, seed=0):
    params = estimator.init_estimator(ParamStore(seed), cfg)
    return cvi.init_cvi(params, cfg)


def forward(p, labels, conf, cfg: ModelConfig, view_mask=None, tree=None):
    """Run both stages on (T, V, 21, 2) labels with (T, V, 21) confidences."""
    T, V = labels.shape[:2]
    patches = estimator.render_heatmap_patches(labels.reshape(T * V, -1, 2), conf.reshape(T * V, -1), cfg)
    single = estimator.estimate(p, patches, cfg, tree)
    refined = cvi.refine(p, single, cfg, V, view_mask, tree)
    return single, refined


@dataclass
class Predictions:
    single: np.ndarray      # (N, V, 21, 3) root-relative, per camera frame
    refined: np.ndarray     # (N, V, 21, 3)
    single2d: np.ndarray    # (N, V, 21, 2)
    refined2d: np.ndarray   # (N, V, 21, 2)
    fused: np.ndarray       # (N, 21, 3) in the reference camera frame
    rotations: np.ndarray   # (N, V, 3, 3) view -> reference


def predict(params: ParamStore, labels, conf, cfg: ModelConfig, cams=None, batch=8, reference=0,
            view_mask=None):
    """Inference over (N, V, 21, 2) labels; ``cams`` enables extrinsic alignment for fusion."""
    p = params.constants()
    N, V = labels.shape[:2]
    out = {k: [] for k in ("single", "refined", "single2d", "refined2d")}
    for s in range(0, N, batch):
        lab, cf = labels[s:s + batch], conf[s:s + batch]
        T = lab.shape[0]
        single, refined = forward(p, lab, cf, cfg, view_mask)
        out["single"].append(single.joints.value.reshape(T, V, -1, 3))
        out["refined"].append(refined.joints.value.reshape(T, V, -1, 3))
        out["single2d"].append(project_weak(single.joints, single.cam_s, single.cam_t).value.reshape(T, V, -1, 2))
        out["refined2d"].append(project_weak(refined.joints, refined.cam_s, refined.cam_t).value.reshape(T, V, -1, 2))
    arr = {k: np.concatenate(v) for k, v in out.items()}
    active = list(range(V)) if view_mask is None else list(np.flatnonzero(view_mask))
    if reference not in active:
        reference = active[0]
    rots = fusion.batch_alignment_rotations(arr["refined"], cams, reference)
    sel = arr["refined"][:, active]
    fused = np.einsum("tvkc,tvdc->tkd", sel, rots[:, active]) / len(active)
    return Predictions(arr["single"], arr["refined"], arr["single2d"], arr["refined2d"], fused, rots)
