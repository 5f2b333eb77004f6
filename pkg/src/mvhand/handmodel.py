"""Skeletal hand model: 16 axis-angle rotations + 10 shape coefficients -> 21 joints.

Stands in for MANO with the same parameter interface. Shape coefficients act
linearly on per-bone length multipliers; pose rows rotate finger segments
through forward kinematics, and row 0 is the global rotation applied last.
"""
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import diffcore as dc

NUM_JOINTS = 21
NUM_BONES = 20
NUM_POSE_ROWS = 16
NUM_SHAPE = 10


@dataclass(frozen=True)
class KinematicTree:
    joint_names: tuple
    parent: np.ndarray          # (21,), root = -1
    rest_joints: np.ndarray     # (21, 3)
    rest_offsets: np.ndarray    # (20, 3), bone b ends at joint b + 1
    rotation_joint: np.ndarray  # (15,), joint rotated by theta row i + 1
    shape_basis: np.ndarray     # (20, 10)
    multiplier_bounds: tuple
    pose_ranges: np.ndarray     # (16, 3, 2)

    def validate(self):
        parent = self.parent
        if parent.shape != (NUM_JOINTS,) or np.sum(parent < 0) != 1 or parent[0] != -1:
            raise ValueError("tree must have exactly one root at index 0")
        for j in range(1, NUM_JOINTS):
            seen, p = set(), j
            while p != -1:
                if p in seen:
                    raise ValueError(f"cycle through joint {j}")
                seen.add(p)
                p = parent[p]
        return self

    @property
    def depth(self):
        d = np.zeros(NUM_JOINTS, dtype=np.int64)
        for j in range(1, NUM_JOINTS):
            p, n = j, 0
            while self.parent[p] != -1:
                p, n = self.parent[p], n + 1
            d[j] = n
        return d

    def to_json(self):
        return json.dumps({
            "version": 1,
            "units": "meters",
            "joint_names": list(self.joint_names),
            "parent": self.parent.tolist(),
            "rest_joints": self.rest_joints.tolist(),
            "rest_offsets": self.rest_offsets.tolist(),
            "rotation_joint": self.rotation_joint.tolist(),
            "shape_basis": self.shape_basis.tolist(),
            "multiplier_bounds": list(self.multiplier_bounds),
            "pose_ranges": self.pose_ranges.tolist(),
        }, indent=1)

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != 1:
            raise ValueError(f"unsupported hand tree version {d.get('version')!r}")
        return cls(
            joint_names=tuple(d["joint_names"]),
            parent=np.asarray(d["parent"], dtype=np.int64),
            rest_joints=np.asarray(d["rest_joints"], dtype=np.float64),
            rest_offsets=np.asarray(d["rest_offsets"], dtype=np.float64),
            rotation_joint=np.asarray(d["rotation_joint"], dtype=np.int64),
            shape_basis=np.asarray(d["shape_basis"], dtype=np.float64),
            multiplier_bounds=tuple(d["multiplier_bounds"]),
            pose_ranges=np.asarray(d["pose_ranges"], dtype=np.float64),
        ).validate()


@lru_cache(maxsize=None)
def default_tree():
    text = resources.files("mvhand").joinpath("data/hand_tree.json").read_text()
    return KinematicTree.from_dict(json.loads(text))


@dataclass
class HandParams:
    theta: np.ndarray  # (16, 3) axis-angle, radians
    beta: np.ndarray   # (10,)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(NUM_POSE_ROWS, 3)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(NUM_SHAPE)
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.beta))):
            raise ValueError("hand parameters must be finite")


_SKEW = np.zeros((3, 9))
# K = [[0, -z, y], [z, 0, -x], [-y, x, 0]] flattened row-major
_SKEW[2, 1], _SKEW[1, 2] = -1.0, 1.0
_SKEW[2, 3], _SKEW[0, 5] = 1.0, -1.0
_SKEW[1, 6], _SKEW[0, 7] = -1.0, 1.0


def axis_angle_to_matrix(r):
    """Rodrigues map for a node of shape (..., 3) -> (..., 3, 3)."""
    r = dc.as_node(r)
    lead = r.shape[:-1]
    u = dc.reduce_sum(dc.square(r), axis=-1, keepdims=True)
    a = dc.reshape(dc.rodrigues_a(u), lead + (1, 1))
    b = dc.reshape(dc.rodrigues_b(u), lead + (1, 1))
    flat = dc.reshape(r, (-1, 3))
    k = dc.reshape(dc.matmul(flat, dc.constant(_SKEW)), lead + (3, 3))
    k2 = dc.matmul(k, k)
    eye = dc.constant(np.broadcast_to(np.eye(3), lead + (3, 3)))
    full = lead + (3, 3)
    return eye + dc.broadcast_repeat(a, full) * k + dc.broadcast_repeat(b, full) * k2


def rotation_matrix(r):
    """Plain-numpy Rodrigues for arrays of shape (..., 3)."""
    return axis_angle_to_matrix(dc.constant(np.asarray(r, dtype=np.float64))).value


def bone_multipliers(beta, tree=None):
    """(B, 10) node -> (B, 20) clamped bone-length multipliers."""
    tree = tree or default_tree()
    beta = dc.as_node(beta)
    lin = dc.matmul(beta, dc.constant(tree.shape_basis.T))
    lo, hi = tree.multiplier_bounds
    return dc.clip(dc.shift(lin, 1.0), lo, hi)


@lru_cache(maxsize=None)
def _levels(tree_id):
    tree = _TREES[tree_id]
    depth = tree.depth
    row_of = np.full(NUM_JOINTS, NUM_POSE_ROWS, dtype=np.int64)  # sentinel -> identity
    for i, j in enumerate(tree.rotation_joint):
        row_of[j] = i + 1
    levels = []
    prev = np.array([0])
    for d in range(1, depth.max() + 1):
        joints = np.flatnonzero(depth == d)
        parents = tree.parent[joints]
        parent_slot = np.array([np.flatnonzero(prev == p)[0] for p in parents])
        levels.append((joints, parent_slot, row_of[parents], joints - 1))
        prev = joints
    order = np.concatenate([[0]] + [lv[0] for lv in levels])
    return levels, np.argsort(order)


_TREES = {}


def forward_kinematics(theta, beta, tree=None):
    """Joints (B, 21, 3) from theta (B, 16, 3) and beta (B, 10); unbatched inputs allowed.

    Root-relative: the wrist sits at the origin.
    """
    tree = tree or default_tree()
    _TREES[id(tree)] = tree
    theta, beta = dc.as_node(theta), dc.as_node(beta)
    single = theta.ndim == 2
    if single:
        theta = dc.reshape(theta, (1,) + theta.shape)
        beta = dc.reshape(beta, (1,) + beta.shape)
    B = theta.shape[0]
    if theta.shape[1:] != (NUM_POSE_ROWS, 3) or beta.shape != (B, NUM_SHAPE):
        raise dc.ShapeError(f"forward_kinematics: bad shapes {theta.shape}, {beta.shape}")

    mult = bone_multipliers(beta, tree)
    offsets = dc.broadcast_repeat(dc.reshape(mult, (B, NUM_BONES, 1)), (B, NUM_BONES, 3)) \
        * dc.constant(np.broadcast_to(tree.rest_offsets, (B, NUM_BONES, 3)))

    rots = axis_angle_to_matrix(theta)  # (B, 16, 3, 3)
    eye = dc.constant(np.broadcast_to(np.eye(3), (B, 1, 3, 3)))
    local_rots = dc.concat([rots, eye], axis=1)  # row 16 = identity

    levels, unorder = _levels(id(tree))
    root = dc.constant(np.zeros((B, 1, 3)))
    positions = [root]
    prev_pos, prev_chain = root, None
    for joints, parent_slot, parent_row, bones in levels:
        n = len(joints)
        off = dc.take(offsets, bones, axis=1)
        own = dc.take(local_rots, parent_row, axis=1)
        chain = own if prev_chain is None else dc.matmul(dc.take(prev_chain, parent_slot, axis=1), own)
        step = dc.reshape(dc.matmul(chain, dc.reshape(off, (B, n, 3, 1))), (B, n, 3))
        pos = dc.take(prev_pos, parent_slot, axis=1) + step
        positions.append(pos)
        prev_pos, prev_chain = pos, chain
    local = dc.take(dc.concat(positions, axis=1), unorder, axis=1)

    glob = dc.take(rots, [0], axis=1)  # (B, 1, 3, 3)
    glob_t = dc.swap_last(dc.reshape(glob, (B, 3, 3)))
    joints = dc.matmul(local, glob_t)
    return dc.reshape(joints, (NUM_JOINTS, 3)) if single else joints


def skeleton(params, tree=None):
    """Numpy joints (21, 3) for a :class:`HandParams`."""
    return forward_kinematics(dc.constant(params.theta), dc.constant(params.beta), tree).value


def bone_lengths(joints, tree=None):
    """Length of each parent -> child bone; ``joints`` is (..., 21, 3)."""
    tree = tree or default_tree()
    joints = np.asarray(joints)
    child = np.arange(1, NUM_JOINTS)
    return np.linalg.norm(joints[..., child, :] - joints[..., tree.parent[child], :], axis=-1)
