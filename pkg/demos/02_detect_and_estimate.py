"""Walk the detection pipeline once, step by step.

Renders a view of a green stack, runs stack detection, patch candidate
extraction, scoring, and finally the metric pose estimate, comparing it
with the ground-truth patch pose.
"""

import math

import numpy as np

from wallsim.geometry import base_to_map, camera_to_base
from wallsim.render import cloud_from_depth, render_rgbd
from wallsim.scenario import Scenario, StackSpec
from wallsim.vision import (ScoringWeights, detect_stacks, estimate_patch_pose,
                            extract_patch_candidates, score)

scenario = Scenario()
scenario.stacks = [StackSpec("green", 1.7, 0.1, math.radians(35), layers=1,
                             columns=2)]
world = scenario.build_world()
k = scenario.camera

cam_b = camera_to_base(np.array([0.25, 0.0, 1.05]), 0.5, 0.0)
labels, depth = render_rgbd(world, base_to_map(world.robot) @ cam_b, k)
cloud = cloud_from_depth(depth, k, cam_b)

stacks = detect_stacks(labels, "green", 400, k)
print(f"{len(stacks)} green stack observation(s)")
best = stacks[0]
print(f"  largest: area={best.area} px^2, centered at "
      f"({best.x_b:.1f}, {best.y_b:.1f}) px, hull has {len(best.hull)} vertices")

cands = extract_patch_candidates(labels, best.hull, k, rect_min=0.55)
weights = ScoringWeights()
print(f"{len(cands)} patch candidate(s):")
for cand in cands:
    print(f"  at ({cand.x_p:7.1f}, {cand.y_p:7.1f}) px  area={cand.area:5d}  "
          f"angle={math.degrees(cand.rect.angle):6.1f} deg  "
          f"score={score(cand, weights):8.2f}")

chosen = max(cands, key=lambda c: score(c, weights))
pose, layers = estimate_patch_pose(chosen, cam_b, k, cloud, 0.2)
truth = world.stacks[0].patch_pose(0, 1)
# candidate/column pairing depends on the view; report against the nearer one
truth = min((world.stacks[0].patch_pose(0, c) for c in range(2)),
            key=lambda p: math.hypot(p.x - pose.x, p.y - pose.y))

print(f"\nestimated patch pose in L_B: x={pose.x:.3f} y={pose.y:.3f} "
      f"z={pose.z:.2f} yaw={math.degrees(pose.yaw):.1f} deg ({layers} layer)")
print(f"ground truth:                x={truth.x:.3f} y={truth.y:.3f} "
      f"z={truth.z:.2f} yaw={math.degrees(truth.yaw):.1f} deg")
print(f"position error: {1000 * math.hypot(pose.x - truth.x, pose.y - truth.y):.1f} mm")
