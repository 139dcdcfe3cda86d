"""Render the synthetic RGB-D camera from a few viewpoints.

Builds the six-brick arena, renders a forward travel view, a nadir view
over a stack and a view of the wall pattern, and writes PPM/PGM files
next to this script.
"""

import math
import os

import numpy as np

from wallsim.experiments import full_mission_scenario
from wallsim.geometry import base_to_map, camera_to_base
from wallsim.render import render_rgbd, write_pgm16, write_ppm

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

scenario = full_mission_scenario()
world = scenario.build_world()
k = scenario.camera

views = {
    # (camera position in the map, pitch down from horizontal, yaw)
    "travel": ((0.5, 0.0, 0.7), 0.25, math.radians(20)),
    "stack_nadir": ((6.4, 0.7, 2.0), math.pi / 2, 0.0),
    "pattern": ((2.2, 2.6, 0.9), 0.45, math.radians(60)),
}

for name, (pos, pitch, yaw) in views.items():
    cam = camera_to_base(np.array(pos), pitch, yaw)
    cam = base_to_map(world.robot.replace(x=0, y=0, yaw=0)) @ cam
    labels, depth = render_rgbd(world, cam, k)
    write_ppm(labels, os.path.join(out_dir, f"{name}.ppm"))
    write_pgm16(depth, os.path.join(out_dir, f"{name}.pgm"))
    finite = depth[depth > 0]
    print(f"{name:12s} labels={np.unique(labels).tolist()} "
          f"depth {finite.min():.2f}..{finite.max():.2f} m")

print(f"wrote {len(views)} PPM/PGM pairs to {out_dir}")
