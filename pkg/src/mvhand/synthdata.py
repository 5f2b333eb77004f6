"""Synthetic multi-view hand dataset with OpenPose-like corrupted 2D labels.

File format: JSON lines. Line 1 is a header holding the rig, the generator
configs and the seed; every following line is one timestep with all views.
"""
import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import handmodel
from .camera import PinholeCam, ProjectionError, look_at, project_pinhole, rig_from_dict, rig_to_dict
from .config import NoiseModel, RigConfig

FORMAT_VERSION = 1
MAX_RETRIES = 100
MIN_DEPTH = 0.05
DECIMALS = 9


class GenerationError(RuntimeError):
    pass


def make_rig(rig: RigConfig):
    """Cameras at evenly spaced azimuths, alternating above/below the equator, aimed at the origin."""
    cams = []
    for i in range(rig.num_views):
        az = 2 * np.pi * i / rig.num_views
        el = np.deg2rad(rig.elevation_deg) * (1 if i % 2 == 0 else -1)
        pos = rig.radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        R, t = look_at(pos)
        cams.append(PinholeCam.from_intrinsics(rig.fx, rig.fy, rig.cx, rig.cy, R, t,
                                               (rig.image_size, rig.image_size)))
    return cams


def sample_pose(rng, tree=None):
    tree = tree or handmodel.default_tree()
    lo, hi = tree.pose_ranges[..., 0], tree.pose_ranges[..., 1]
    theta = rng.uniform(lo, hi)
    beta = np.clip(rng.normal(0.0, 0.3, size=handmodel.NUM_SHAPE), -2.0, 2.0)
    return handmodel.HandParams(theta, beta)


def corrupt(gt2d, noise: NoiseModel, rng, image_size):
    """Pseudo labels and confidences for (V, k, 2) exact projections."""
    shape = gt2d.shape[:-1]
    labels = gt2d + rng.normal(0.0, 1.0, size=gt2d.shape) * noise.gaussian_sigma_px
    conf = rng.uniform(*noise.inlier_conf, size=shape)
    outlier = rng.random(shape) < noise.outlier_prob
    ang = rng.uniform(0.0, 2 * np.pi, size=shape)
    rad = rng.uniform(0.5, 1.0, size=shape) * noise.outlier_radius_px
    shift = np.stack([np.cos(ang), np.sin(ang)], axis=-1) * rad[..., None]
    labels = np.where(outlier[..., None], labels + shift, labels)
    conf = np.where(outlier, rng.uniform(*noise.outlier_conf, size=shape), conf)
    dropped = rng.random(shape) < noise.drop_prob
    conf = np.where(dropped, 0.0, conf)
    labels = np.clip(labels, 0.0, image_size - 1.0)
    return labels, conf, outlier, dropped


@dataclass
class Dataset:
    cams: list
    theta: np.ndarray    # (N, 16, 3)
    beta: np.ndarray     # (N, 10)
    gt3d: np.ndarray     # (N, 21, 3) world frame
    gt2d: np.ndarray     # (N, V, 21, 2)
    labels: np.ndarray   # (N, V, 21, 2)
    conf: np.ndarray     # (N, V, 21)
    seed: int = 0
    meta: dict = None

    def __len__(self):
        return self.gt3d.shape[0]

    @property
    def num_views(self):
        return len(self.cams)

    def gt_camera_frame(self, idx=None):
        """Root-relative ground truth in every camera frame: (n, V, 21, 3)."""
        X = self.gt3d if idx is None else self.gt3d[idx]
        rel = X - X[:, :1]
        Rs = np.stack([c.R for c in self.cams])
        return np.einsum("nkc,vdc->nvkd", rel, Rs)

    def split(self, holdout_fraction=0.1):
        """Seed-stable (train_idx, test_idx) by hashing each timestep index."""
        keys = np.array([int(hashlib.sha256(f"{self.seed}:{i}".encode()).hexdigest()[:8], 16) % 1000
                         for i in range(len(self))])
        test = keys < int(round(holdout_fraction * 1000))
        return np.flatnonzero(~test), np.flatnonzero(test)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.cams, self.theta[idx], self.beta[idx], self.gt3d[idx], self.gt2d[idx],
                       self.labels[idx], self.conf[idx], self.seed, self.meta)

    def select_views(self, views):
        views = list(views)
        return Dataset([self.cams[v] for v in views], self.theta, self.beta, self.gt3d,
                       self.gt2d[:, views], self.labels[:, views], self.conf[:, views], self.seed, self.meta)

    def with_labels(self, labels, conf):
        return Dataset(self.cams, self.theta, self.beta, self.gt3d, self.gt2d,
                       np.asarray(labels, dtype=np.float64), np.asarray(conf, dtype=np.float64),
                       self.seed, self.meta)


def generate_dataset(rig: RigConfig, noise: NoiseModel, num_samples, seed, tree=None):
    rig.validate()
    noise.validate()
    tree = tree or handmodel.default_tree()
    cams = make_rig(rig)
    rng = np.random.default_rng(seed)
    thetas, betas, gt3d, gt2d, labels, conf = [], [], [], [], [], []
    for _ in range(num_samples):
        for attempt in range(MAX_RETRIES):
            params = sample_pose(rng, tree)
            joints = handmodel.skeleton(params, tree)
            X = joints - joints.mean(0) + rng.uniform(-0.02, 0.02, size=3)
            try:
                if any(np.min(c.to_camera(X)[:, 2]) < MIN_DEPTH for c in cams):
                    raise ProjectionError("joint too close to a camera")
                uv = np.stack([project_pinhole(X, c) for c in cams])
            except ProjectionError:
                continue
            break
        else:
            raise GenerationError(f"no valid sample after {MAX_RETRIES} retries")
        lab, cf, _, _ = corrupt(uv, noise, rng, rig.image_size)
        thetas.append(params.theta)
        betas.append(params.beta)
        gt3d.append(X)
        gt2d.append(uv)
        labels.append(lab)
        conf.append(cf)
    meta = {"rig": asdict(rig), "noise": asdict(noise), "num_samples": num_samples}
    # rounded to the file precision so in-memory and reloaded datasets are identical
    arrs = [np.round(np.array(a), DECIMALS) for a in (thetas, betas, gt3d, gt2d, labels, conf)]
    return Dataset(cams, *arrs, seed, meta)


def _r(a):
    return np.round(np.asarray(a, dtype=np.float64), DECIMALS).tolist()


def save_dataset(ds: Dataset, path):
    with open(path, "w") as fh:
        header = {"type": "header", "version": FORMAT_VERSION, "seed": ds.seed,
                  "rig": rig_to_dict(ds.cams), "meta": ds.meta or {}, "num_samples": len(ds)}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(ds)):
            row = {"t": i, "theta": _r(ds.theta[i]), "beta": _r(ds.beta[i]), "gt3d": _r(ds.gt3d[i]),
                   "gt2d": _r(ds.gt2d[i]), "labels": _r(ds.labels[i]), "conf": _r(ds.conf[i])}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("type") != "header" or header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{FORMAT_VERSION} dataset file")
        rows = [json.loads(line) for line in fh if line.strip()]
    cams = rig_from_dict(header["rig"])
    arr = {k: np.array([r[k] for r in rows], dtype=np.float64)
           for k in ("theta", "beta", "gt3d", "gt2d", "labels", "conf")}
    return Dataset(cams, arr["theta"], arr["beta"], arr["gt3d"], arr["gt2d"], arr["labels"],
                   arr["conf"], int(header["seed"]), header.get("meta"))
