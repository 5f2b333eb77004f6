"""Regenerate src/mvhand/data/hand_tree.json (rest skeleton, tree, shape basis, pose ranges)."""
import json
from pathlib import Path

import numpy as np

NAMES = ["wrist",
         "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
         "index_mcp", "index_pip", "index_dip", "index_tip",
         "middle_mcp", "middle_pip", "middle_dip", "middle_tip",
         "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
         "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip"]

REST = np.array([
    [0.000, 0.000, 0.0],
    [0.025, 0.025, 0.0], [0.045, 0.055, 0.0], [0.060, 0.085, 0.0], [0.072, 0.108, 0.0],
    [0.025, 0.090, 0.0], [0.027, 0.130, 0.0], [0.028, 0.155, 0.0], [0.029, 0.175, 0.0],
    [0.003, 0.094, 0.0], [0.003, 0.138, 0.0], [0.003, 0.166, 0.0], [0.003, 0.188, 0.0],
    [-0.017, 0.088, 0.0], [-0.019, 0.128, 0.0], [-0.020, 0.154, 0.0], [-0.021, 0.174, 0.0],
    [-0.035, 0.078, 0.0], [-0.040, 0.108, 0.0], [-0.043, 0.126, 0.0], [-0.045, 0.143, 0.0],
])

PARENT = [-1] + [p for f in range(5) for p in (0, 1 + 4 * f, 2 + 4 * f, 3 + 4 * f)]

# theta row 1 + 3f + l rotates at joint 1 + 4f + l
ROTATION_JOINT = [1 + 4 * f + l for f in range(5) for l in range(3)]

# bone b connects PARENT[b + 1] -> b + 1
offsets = np.array([REST[c] - REST[PARENT[c]] for c in range(1, 21)])

basis = np.zeros((20, 10))
basis[:, 0] = 0.1                       # global size
for f in range(5):                      # per finger
    basis[[4 * f + 1, 4 * f + 2, 4 * f + 3], 1 + f] = 0.05
for level in range(3):                  # proximal / middle / distal phalanges
    basis[[4 * f + 1 + level for f in range(5)], 6 + level] = 0.05
basis[[4 * f for f in range(5)], 9] = 0.05   # palm bones

root_range = [[-3.14159, 3.14159]] * 3
finger = [
    [[0.0, 1.2], [-0.1, 0.1], [-0.25, 0.25]],
    [[0.0, 1.4], [-0.05, 0.05], [-0.05, 0.05]],
    [[0.0, 1.0], [-0.05, 0.05], [-0.05, 0.05]],
]
thumb = [
    [[-0.2, 0.8], [-0.4, 0.4], [-0.4, 0.4]],
    [[0.0, 0.8], [-0.1, 0.1], [-0.1, 0.1]],
    [[0.0, 1.0], [-0.05, 0.05], [-0.05, 0.05]],
]
ranges = [root_range] + thumb + finger * 4

data = {
    "version": 1,
    "units": "meters",
    "joint_names": NAMES,
    "parent": PARENT,
    "rest_joints": REST.round(6).tolist(),
    "rest_offsets": offsets.round(6).tolist(),
    "rotation_joint": ROTATION_JOINT,
    "shape_basis": basis.tolist(),
    "multiplier_bounds": [0.2, 5.0],
    "pose_ranges": ranges,
}

out = Path(__file__).resolve().parents[1] / "src" / "mvhand" / "data" / "hand_tree.json"
out.write_text(json.dumps(data, indent=1) + "\n")
print(out)
