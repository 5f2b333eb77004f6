"""Pose evaluation metrics. 3D inputs are in meters, reported errors in millimeters."""
import numpy as np

from .align import (DegenerateError, align_translation_scale, apply, batch_align_translation_scale,
                    batch_procrustes_align, procrustes)

M_TO_MM = 1000.0


def mpjpe(pred, gt):
    return float(np.mean(np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=-1)) * M_TO_MM)


def nmpjpe(pred, gt):
    T = align_translation_scale(pred, gt)
    return mpjpe(apply(T, pred), gt)


def pa_mpjpe(pred, gt):
    T = procrustes(pred, gt, mode="similarity")
    return mpjpe(apply(T, pred), gt)


def per_joint_errors(pred, gt):
    """Euclidean error per joint in millimeters."""
    return np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=-1) * M_TO_MM


def f_score(pred, gt, threshold_mm):
    """Harmonic mean of precision and recall on index-corresponded joints."""
    if threshold_mm <= 0:
        raise ValueError("threshold must be positive")
    d = per_joint_errors(pred, gt)
    # with index correspondence precision and recall are the same fraction
    precision = recall = float(np.mean(d <= threshold_mm))
    if precision == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def pck_curve(errors, max_threshold, steps):
    """(thresholds, PCK) with ``steps`` evenly spaced thresholds in [0, max_threshold]."""
    if steps < 2:
        raise ValueError("need at least 2 threshold steps")
    errors = np.ravel(errors)
    taus = np.linspace(0.0, max_threshold, steps)
    pck = np.array([np.mean(errors <= t) for t in taus])
    return taus, pck


def auc_from_curve(taus, pck):
    return float(np.trapezoid(pck, taus) / (taus[-1] - taus[0]))


def pck_auc(pred_set, gt_set, max_threshold_mm=50.0, steps=100):
    """Normalised area under the PCK curve for stacks of 3D skeletons (meters)."""
    errors = per_joint_errors(pred_set, gt_set)
    return auc_from_curve(*pck_curve(errors, max_threshold_mm, steps))


def pck_auc_2d(pred2d, gt2d, max_threshold_px=30.0, steps=100):
    errors = np.linalg.norm(np.asarray(pred2d) - np.asarray(gt2d), axis=-1)
    return auc_from_curve(*pck_curve(errors, max_threshold_px, steps))


def pixel_error(pred2d, gt2d):
    return float(np.mean(np.linalg.norm(np.asarray(pred2d) - np.asarray(gt2d), axis=-1)))


# batched versions over (N, k, 3) stacks; means over samples


def batch_mpjpe(pred, gt):
    return float(np.mean(per_joint_errors(pred, gt)))


def batch_nmpjpe(pred, gt):
    return batch_mpjpe(batch_align_translation_scale(pred, gt), gt)


def batch_pa_mpjpe(pred, gt):
    return batch_mpjpe(batch_procrustes_align(pred, gt), gt)


def summarize(pred, gt, f_thresholds=(5.0, 15.0)):
    """Metric dict for (N, k, 3) predictions vs ground truth (meters)."""
    pred = np.asarray(pred).reshape(-1, gt.shape[-2], 3)
    gt = np.asarray(gt).reshape(pred.shape)
    out = {
        "mpjpe": batch_mpjpe(pred, gt),
        "nmpjpe": batch_nmpjpe(pred, gt),
        "pa_mpjpe": batch_pa_mpjpe(pred, gt),
        "auc": pck_auc(pred, gt),
    }
    for t in f_thresholds:
        out[f"f@{t:g}mm"] = float(np.mean([f_score(p, g, t) for p, g in zip(pred, gt)]))
    return out


__all__ = ["DegenerateError", "mpjpe", "nmpjpe", "pa_mpjpe", "f_score", "pck_curve", "pck_auc",
           "pck_auc_2d", "pixel_error", "batch_mpjpe", "batch_nmpjpe", "batch_pa_mpjpe", "summarize"]
