"""
Dynamic maps around a target agent
==================================

Each observed step gets a grid centred on the target. Cells hold the
orientation, normalised speed and presence of the neighbours that land there.
"""

import numpy as np

from dcenet import data
from dcenet.dynmap import MapConfig, build_map, build_stack, cell_index

# a neighbour 3 m ahead and 2 m to the side, moving +x at 1 m/step
print("cell of (3, 2) moving (1, 0):", cell_index((0, 0), (0, 0), (3, 2), (1, 0)))

target = (0.0, 0.0, 1.0, 0.0)  # x, y, dx, dy
neighbors = np.array([[3.0, 2.0, 1.0, 0.0], [-4.0, 1.0, 0.0, 3.0]])
m = build_map(target, neighbors, MapConfig(width=12, height=12))
print(m.to_csv())

# a whole window: one map per observed step, flattened for the encoder
w = data.extract_windows(data.synth_scene("crossing", 2, 0))[0]
stack = build_stack(w)
print("stack:", stack.as_array().shape, "flattened:", stack.flatten().shape)
print("occupied cells per step:", (stack.as_array()[..., 2] > 0).sum(axis=(1, 2)))
