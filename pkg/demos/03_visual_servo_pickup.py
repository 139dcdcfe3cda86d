"""One complete brick pickup, watching the servo stages progress.

Runs the closed loop for a single loading task and prints the mission
transitions, the four servo stages with their image-space errors, and
the final grasp record.
"""

import math

from wallsim.experiments import loading_scenario
from wallsim.scenario import NOISE_PRESETS
from wallsim.sim import PickupDirective, Simulator

scenario = loading_scenario(seed=11, noise=NOISE_PRESETS["off"],
                            rel_orientation=math.radians(-120.0))
sim = Simulator(scenario, seed=11)

last_stage = None
while not sim.mission_done and sim.t < 200.0:
    sim.tick()
    d = sim.directive
    if isinstance(d, PickupDirective) and d.phase == "servo":
        stage = d.supervisor.stage.value
        if stage != last_stage:
            eff = sim.world.effector
            print(f"t={sim.t:6.2f}s  stage={stage:10s}  "
                  f"effector=({eff.x:.2f}, {eff.y:.2f}, {eff.z:.2f})  "
                  f"pitch={math.degrees(eff.pitch):.1f} deg")
            last_stage = stage

print("\nmission trace:")
for row in sim.trace:
    print(f"  t={row['t']:7.2f}  {row['state']}/{row['sub_state']:16s} <- {row['event']}")

print("\npickup record:")
for rec in sim.probes["pickups"]:
    print(f"  success={rec['success']}  grasp_offset={rec.get('grasp_offset', 0) * 1000:.1f} mm  "
          f"yaw_err={rec.get('grasp_yaw_err_deg', 0):.2f} deg  "
          f"perpendicularity_err={rec.get('perp_err_deg'):.2f} deg")
print(f"basket contents: {sim.world.basket.colors()}")
