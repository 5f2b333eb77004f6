"""Training loop: warmup (2D + prior) then full collaborative losses, AdamW, held-out metrics."""
import copy
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import fusion, losses, metrics, model
from .camera import project_weak
from .config import ExperimentConfig
from .optim import AdamW, clip_global_norm

log = logging.getLogger(__name__)

STEP_COLUMNS = ["step", "epoch", "phase", "consistency", "total", "l2d", "prior", "c2d", "cf", "d", "grad_norm"]
METRIC_COLUMNS = ["round", "epoch", "phase", "steps", "single_nmpjpe", "refined_nmpjpe", "fused_nmpjpe",
                  "single_px", "refined_px", "label_px"]


class DivergenceError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"non-finite total loss at step {step}")
        self.step = step


@dataclass
class TrainResult:
    params: object
    step_log: list = field(default_factory=list)
    metric_log: list = field(default_factory=list)
    steps: int = 0
    full_steps: int = 0


def compute_losses(p, labels, conf, cfg: ExperimentConfig, phase, step, cams=None, view_mask=None, ramp=1.0):
    """Forward a batch and build every loss term. Returns (total, logged terms, consistency term)."""
    w = cfg.loss
    T, V = labels.shape[:2]
    single, refined = model.forward(p, labels, conf, cfg.model, view_mask)
    flat_labels = labels.reshape(T * V, -1, 2)
    flat_conf = conf.reshape(T * V, -1) if w.use_confidence else None
    single2d = project_weak(single.joints, single.cam_s, single.cam_t)
    refined2d = project_weak(refined.joints, refined.cam_s, refined.cam_t)
    terms = {
        "l2d": losses.l_2d(single2d, flat_labels, flat_conf) + losses.l_2d(refined2d, flat_labels, flat_conf),
        "prior": losses.l_prior(single.theta, refined.theta, single.beta, w),
    }
    which = None
    if phase == losses.FULL:
        ref_j = dc.reshape(refined.joints, (T, V, -1, 3))
        rots = fusion.batch_alignment_rotations(ref_j.value, cams if cfg.train.use_extrinsics else None)
        fused = np.einsum("tvkc,tvdc->tkd", ref_j.value, rots) / V
        target = fusion.fused_to_views(fused, rots)
        which = losses.consistency_term(step, w)
        if which == "c2d":
            # cameras are held fixed here: shrinking s would zero the term for free
            terms["c2d"] = losses.l_c2d(ref_j, refined.cam_s.value.reshape(T, V, 1),
                                        refined.cam_t.value.reshape(T, V, 2), rots)
        elif which == "cf":
            terms["cf"] = losses.l_cf(ref_j, target, w.scale_invariant_3d)
        if w.use_d:
            terms["d"] = losses.l_d(dc.reshape(single.joints, (T, V, -1, 3)), target, w.scale_invariant_3d)
    total, logged = losses.total_loss(terms, phase, step, w, ramp)
    return total, logged, which


def evaluate(params, data, cfg: ExperimentConfig, view_mask=None):
    """Held-out NMPJPE (mm) for single/refined/fused outputs and 2D pixel errors."""
    cams = data.cams if cfg.train.use_extrinsics else None
    pred = model.predict(params, data.labels, data.conf, cfg.model, cams, view_mask=view_mask)
    gt = data.gt_camera_frame()
    views = np.arange(data.num_views) if view_mask is None else np.flatnonzero(view_mask)
    ref = views[0]
    return {
        "single_nmpjpe": metrics.batch_nmpjpe(pred.single[:, views].reshape(-1, 21, 3), gt[:, views].reshape(-1, 21, 3)),
        "refined_nmpjpe": metrics.batch_nmpjpe(pred.refined[:, views].reshape(-1, 21, 3), gt[:, views].reshape(-1, 21, 3)),
        "fused_nmpjpe": metrics.batch_nmpjpe(pred.fused, gt[:, ref]),
        "single_px": metrics.pixel_error(pred.single2d[:, views], data.gt2d[:, views]),
        "refined_px": metrics.pixel_error(pred.refined2d[:, views], data.gt2d[:, views]),
        "label_px": metrics.pixel_error(data.labels[:, views], data.gt2d[:, views]),
    }


def _schedule(tc, first_round=True):
    phases = []
    if first_round:
        phases += [losses.WARMUP] * tc.warmup_epochs
    main = losses.WARMUP if tc.warmup_only else losses.FULL
    phases += [main] * tc.main_epochs
    if first_round:
        phases += ["finetune"] * tc.view_mask_finetune_epochs
    return phases


def _grads(leaves):
    return {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in leaves.items()}


@dataclass
class TrainState:
    """Everything a schedule needs to resume: parameters, optimizer moments, batch RNG and logs."""
    params: object
    opt: AdamW
    rng: np.random.Generator
    result: TrainResult
    round_index: int = 1
    epoch: int = 0


def new_state(cfg: ExperimentConfig, params=None, result=None, round_index=1):
    tc = cfg.train
    if params is None:
        params = model.new_params(cfg.model, tc.seed)
    result = result or TrainResult(params)
    result.params = params
    return TrainState(params, AdamW(tc.lr, tc.betas, tc.eps, tc.weight_decay),
                      np.random.default_rng([tc.seed, round_index]), result, round_index)


def branch(state: TrainState):
    """Independent deep copy, so one warmup can feed several continuations."""
    return copy.deepcopy(state)


def run_epochs(state: TrainState, cfg: ExperimentConfig, train_data, phases, eval_data=None):
    """Advance ``state`` through the given per-epoch phases."""
    tc = cfg.train
    params, opt, rng, result = state.params, state.opt, state.rng, state.result
    V = train_data.num_views
    cams = train_data.cams
    n = len(train_data)
    for phase in phases:
        epoch = state.epoch
        order = rng.permutation(n)
        for s in range(0, n, tc.batch_timesteps):
            idx = np.sort(order[s:s + tc.batch_timesteps])
            view_mask = None
            loss_phase = phase
            if phase == "finetune":
                loss_phase = losses.WARMUP if tc.warmup_only else losses.FULL
                view_mask = _random_view_mask(rng, V)
            ramp = 1.0
            if loss_phase == losses.FULL:
                ramp = min(1.0, (result.full_steps + 1) / tc.collab_ramp_steps) if tc.collab_ramp_steps else 1.0
                result.full_steps += 1
            leaves = params.leaves()
            total, logged, which = compute_losses(leaves, train_data.labels[idx], train_data.conf[idx], cfg,
                                                  loss_phase, result.steps, cams, view_mask, ramp)
            if not np.isfinite(total.value):
                raise DivergenceError(result.steps)
            dc.backward(total)
            grads = _grads(leaves)
            gnorm = clip_global_norm(grads, tc.clip_norm)
            opt.step(params.arrays, grads)
            row = {"step": result.steps, "epoch": epoch, "phase": phase, "consistency": which or "",
                   "total": float(total.value), "grad_norm": gnorm}
            row.update(logged)
            result.step_log.append(row)
            result.steps += 1
        if eval_data is not None and len(eval_data):
            m = evaluate(params, eval_data, cfg)
            row = {"round": state.round_index, "epoch": epoch, "phase": phase, "steps": result.steps, **m}
            result.metric_log.append(row)
            log.info("round %d epoch %d (%s): single %.2f refined %.2f fused %.2f mm", state.round_index, epoch,
                     phase, m["single_nmpjpe"], m["refined_nmpjpe"], m["fused_nmpjpe"])
        state.epoch += 1
    return state


def warmup_phases(cfg: ExperimentConfig):
    return [losses.WARMUP] * cfg.train.warmup_epochs


def main_phases(cfg: ExperimentConfig, first_round=True):
    return _schedule(cfg.train, first_round)[cfg.train.warmup_epochs if first_round else 0:]


def train(cfg: ExperimentConfig, train_data, params=None, eval_data=None, result=None, round_index=1,
          first_round=True):
    """Run the configured schedule; appends to ``result`` if given (used by self-training rounds)."""
    state = new_state(cfg, params, result, round_index)
    run_epochs(state, cfg, train_data, _schedule(cfg.train, first_round), eval_data)
    return state.result


def _random_view_mask(rng, V):
    """Uniform over the non-empty subsets of V views."""
    code = int(rng.integers(1, 2 ** V))
    return np.array([(code >> v) & 1 for v in range(V)], dtype=bool)


def self_training_round(params, data, cfg: ExperimentConfig):
    """Replace labels with the model's refined 2D projections (confidence 1)."""
    cams = data.cams if cfg.train.use_extrinsics else None
    pred = model.predict(params, data.labels, data.conf, cfg.model, cams)
    return data.with_labels(pred.refined2d, np.ones(data.conf.shape))


def split(cfg: ExperimentConfig, data):
    tr_idx, te_idx = data.split(cfg.data.holdout_fraction)
    return data.subset(tr_idx), data.subset(te_idx)


def self_train(cfg: ExperimentConfig, result, train_data, test_data):
    """Rounds 2.. of iterative self-training on top of a finished first round."""
    for r in range(2, cfg.train.self_training_iterations + 1):
        train_data = self_training_round(result.params, train_data, cfg)
        train(cfg, train_data, result.params, test_data, result, round_index=r, first_round=False)
    return result


def run(cfg: ExperimentConfig, data):
    """Split, train, and run the configured number of self-training rounds."""
    train_data, test_data = split(cfg, data)
    result = train(cfg, train_data, eval_data=test_data)
    return self_train(cfg, result, train_data, test_data), test_data


def write_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v
