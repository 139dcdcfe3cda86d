"""Costmap building, arc planning and the switch-suppression gate.

Builds a height-filtered costmap from simulated scans of the arena,
plans around the stacks with the minimum-turning-radius planner, shows
the ratio-preserving velocity clamp, and scripts the gate against an
oscillating plan.
"""

import math
import os

import numpy as np

from wallsim.experiments import full_mission_scenario
from wallsim.geometry import RigidPose
from wallsim.nav import (GateState, MotionPlan, PlanSegment, build_costmap,
                         clamp_velocity, gate_plan, plan_path, rollout)
from wallsim.render import grid_to_pgm
from wallsim.sim import simulate_scan

scenario = full_mission_scenario()
world = scenario.build_world()
nav = scenario.nav

# thirty scans from a few poses, like the recency-windowed submaps
points = []
for x in np.linspace(0.0, 5.0, 30):
    points.append(simulate_scan(world, nav, RigidPose(x, 1.0, yaw=0.0)))
points = np.vstack(points)
grid = build_costmap(points, nav.z_low, nav.z_high, nav.resolution,
                     scenario.arena_width, scenario.arena_height,
                     *scenario.arena_origin)
occupied = int((grid.data == 1).sum())
print(f"costmap {grid.data.shape[1]}x{grid.data.shape[0]} cells, "
      f"{occupied} occupied from {len(points)} scan points")

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)
grid_to_pgm(grid.data, os.path.join(out_dir, "costmap.pgm"))

start = RigidPose(0.0, 0.0, yaw=0.0)
goal = RigidPose(6.3, -0.5, yaw=math.radians(90.0))  # beside the red stack
plan = plan_path(grid, start, goal, nav.limits, nav.planner)
states = rollout(plan.segments, start)
print(f"plan: {len(plan.segments)} segments, {plan.total_duration:.1f} s, "
      f"{plan.switch_count} forward-backward switches")
for seg in plan.segments:
    kind = "straight" if seg.w == 0 else f"arc r={seg.v / seg.w:+.2f} m"
    print(f"  v={seg.v:+.2f} m/s  {kind:16s} for {seg.duration:5.2f} s")
end = states[-1]
print(f"rollout ends at ({end[0]:.2f}, {end[1]:.2f}, {math.degrees(end[2]):.0f} deg), "
      f"goal ({goal.x}, {goal.y}, {math.degrees(goal.yaw):.0f} deg)")

v, w = clamp_velocity(2.4, 1.6, nav.limits)
print(f"\nclamp: planned (2.40, 1.60) -> ({v:.2f}, {w:.2f}); "
      f"radius kept: {2.4 / 1.6:.3f} vs {v / w:.3f} m")

print("\ngate against an oscillating plan (5 -> 4 -> 1 switches):")
gate = GateState(max_switches=nav.max_switches, timeout=nav.gate_timeout)
for switches in (5, 4, 1):
    segs = [PlanSegment(0.5, 0.0, 1.0)]
    for i in range(switches):
        segs.append(PlanSegment(0.5 if i % 2 else -0.3, 0.0, 0.5))
    cmd = gate_plan(MotionPlan(segs, goal), gate, 0.1)
    print(f"  plan with {switches} switches -> command {cmd}")
