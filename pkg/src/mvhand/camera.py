"""Weak-perspective and pinhole cameras, rig serialization.

Image convention: pixel (0, 0) top-left, x right, y down. Camera frames use
x right, y down, z forward so weak-perspective and pinhole projections agree
on axis directions.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc

IMAGE_SIZE = 256


class ProjectionError(ValueError):
    """A point lies on or behind the camera plane."""


@dataclass
class WeakPerspCam:
    s: float
    t: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(2)
        if not self.s > 0:
            raise ValueError(f"weak-perspective scale must be positive, got {self.s}")


def project_weak(P, s, t):
    """s * P[..., :2] + t.

    ``P`` is (..., k, 3); ``s`` is (..., 1) and ``t`` is (..., 2). Accepts
    nodes or arrays and returns a node of shape (..., k, 2).
    """
    P, s, t = dc.as_node(P), dc.as_node(s), dc.as_node(t)
    lead, k = P.shape[:-2], P.shape[-2]
    xy = dc.take(P, [0, 1], axis=-1)
    full = lead + (k, 2)
    s_b = dc.broadcast_repeat(dc.reshape(s, lead + (1, 1)), full)
    t_b = dc.broadcast_repeat(dc.reshape(t, lead + (1, 2)), full)
    return s_b * xy + t_b


def project_weak_cam(P, cam):
    return project_weak(P, np.array([cam.s]), cam.t).value


@dataclass
class PinholeCam:
    K: np.ndarray
    R: np.ndarray
    tvec: np.ndarray
    image_size: tuple = field(default=(IMAGE_SIZE, IMAGE_SIZE))

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.tvec = np.asarray(self.tvec, dtype=np.float64).reshape(3)
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(self.R) - 1) > 1e-9:
            raise ValueError("camera rotation must be a proper rotation")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if abs(self.K[0, 1]) > 0:
            raise ValueError("non-zero skew is not supported")

    @classmethod
    def from_intrinsics(cls, fx, fy, cx, cy, R=np.eye(3), tvec=np.zeros(3), image_size=(IMAGE_SIZE, IMAGE_SIZE)):
        K = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])
        return cls(K, R, tvec, tuple(image_size))

    @property
    def center(self):
        return -self.R.T @ self.tvec

    @property
    def P(self):
        """3x4 projection matrix K [R | t]."""
        return self.K @ np.hstack([self.R, self.tvec[:, None]])

    def to_camera(self, X):
        return np.asarray(X) @ self.R.T + self.tvec

    def to_dict(self):
        return {"K": self.K.tolist(), "R": self.R.tolist(), "tvec": self.tvec.tolist()}


def project_pinhole(X_world, cam):
    """Perspective projection of (..., 3) world points to (..., 2) pixels."""
    Xc = cam.to_camera(X_world)
    z = Xc[..., 2]
    bad = np.flatnonzero(np.ravel(z) <= 0)
    if bad.size:
        raise ProjectionError(f"joint {int(bad[0])} has non-positive depth {float(np.ravel(z)[bad[0]]):.4g}")
    uv = Xc[..., :2] / z[..., None]
    return uv * np.diag(cam.K)[:2] + cam.K[:2, 2]


def relative_rotation(cam_i, cam_j):
    """Rotation taking camera-j frame directions to camera-i frame: R_i R_j^T."""
    return cam_i.R @ cam_j.R.T


def look_at(position, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """World-to-camera (R, tvec) for a camera at ``position`` looking at ``target``.

    Camera axes: z toward the target, y pointing "down" relative to ``up``.
    """
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return R, -R @ position


def save_rig(cams, path):
    with open(path, "w") as fh:
        json.dump(rig_to_dict(cams), fh, indent=1)


def rig_to_dict(cams):
    size = cams[0].image_size if cams else (IMAGE_SIZE, IMAGE_SIZE)
    return {"image_size": list(size), "cameras": [c.to_dict() for c in cams]}


def rig_from_dict(d):
    size = tuple(d.get("image_size", (IMAGE_SIZE, IMAGE_SIZE)))
    return [PinholeCam(c["K"], c["R"], c["tvec"], size) for c in d["cameras"]]


def load_rig(path):
    with open(path) as fh:
        return rig_from_dict(json.load(fh))
