"""The whole wall-building mission: two red, two green, two blue bricks.

Runs the six-brick scenario end to end and summarizes what the robot
did: task sequence, mission transitions, per-brick placement quality and
timing.  Takes about a minute.
"""

import time

from wallsim.experiments import full_mission_scenario
from wallsim.mission import plan_sequence
from wallsim.sim import Simulator

scenario = full_mission_scenario()
costs = {c: s.slot_cost for c, s in scenario.brick_specs.items()}
tasks = plan_sequence(scenario.footprint.blueprint, costs,
                      scenario.basket_capacity)
print("task sequence:", " ".join(t.short() for t in tasks))

t0 = time.time()
sim = Simulator(scenario, seed=1)
result = sim.run()
wall = time.time() - t0

print(f"\ncompleted={result.completed}  sim time={result.sim_time / 60.0:.1f} min"
      f"  wall clock={wall:.1f} s")
print(f"bricks placed: {result.bricks_placed}, census {result.census}")
for p in result.placements:
    print(f"  {p['color']:6s} inside={p['inside_fraction']:.3f}  "
          f"yaw error={p['yaw_error_deg']:+.2f} deg  "
          f"at ({p['x']:.2f}, {p['y']:.2f}, {p['z']:.2f})")

print("\ntransitions:")
for row in result.trace:
    print(f"  t={row['t']:7.2f}  {row['state']}/{row['sub_state']:16s} <- {row['event']}")
