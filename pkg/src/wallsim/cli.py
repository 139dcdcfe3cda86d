"""Command line entry point: mission runs, experiment campaigns, snapshots.

Commands:
  run        full mission from a scenario file
  exp-load   seeded brick-loading campaign
  exp-unload seeded brick-unloading campaign
  snapshot   render one camera view of a scenario to PPM/PGM
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

from .experiments import (experiment_load, experiment_unload,
                          recompute_aggregates)
from .geometry import RigidPose, base_to_map, camera_to_base
from .render import render_rgbd, write_pgm16, write_ppm
from .scenario import NOISE_PRESETS, ConfigError, load_scenario
from .sim import Simulator


class IoError(Exception):
    pass


def _ensure_out(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create output directory {path}: {e}")
    return path


def _write_json(obj, path: str):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trace(trace: list, path: str):
    with open(path, "w") as fh:
        for row in trace:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def _write_metrics_csv(rows: list, path: str):
    if not rows:
        return
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def _apply_noise_flag(scenario, flag: str | None):
    if flag is None:
        return scenario
    if flag not in NOISE_PRESETS:
        raise ConfigError("--noise", f"unknown preset {flag!r}; "
                                     f"choose from {sorted(NOISE_PRESETS)}")
    return scenario.with_noise(NOISE_PRESETS[flag])


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if scenario.footprint is None and scenario.tasks_override is None:
        raise ConfigError("footprint", "missing footprint: a mission scenario "
                                       "needs a wall footprint and blueprint")
    scenario = _apply_noise_flag(scenario, args.noise)
    if args.max_sim_time is not None:
        from dataclasses import replace
        scenario.timing = replace(scenario.timing, max_sim_time=args.max_sim_time)
    out = _ensure_out(args.out)
    sim = Simulator(scenario, seed=args.seed)
    if args.dump_frames:
        frames_dir = _ensure_out(os.path.join(out, "frames"))
        counter = {"i": 0}

        def dumper(s, frame):
            i = counter["i"]
            counter["i"] += 1
            write_ppm(frame.labels, os.path.join(frames_dir, f"{i:05d}.ppm"))
            write_pgm16(frame.depth, os.path.join(frames_dir, f"{i:05d}.pgm"))

        sim.frame_dumper = dumper
    result = sim.run()
    report = dict(
        scenario=scenario.name,
        seed=args.seed,
        completed=result.completed,
        sim_time=result.sim_time,
        bricks_placed=result.bricks_placed,
        placements=result.placements,
        census=result.census,
        conserved=result.conserved,
        skipped=result.skipped,
        probes=result.probes,
    )
    _write_json(report, os.path.join(out, "report.json"))
    write_trace(result.trace, os.path.join(out, "trace.jsonl"))
    _write_metrics_csv(result.placements, os.path.join(out, "metrics.csv"))
    ok = result.completed and all(p["inside_fraction"] >= 0.5
                                  for p in result.placements)
    print(f"completed={result.completed} bricks_placed={result.bricks_placed} "
          f"sim_time={result.sim_time:.1f}s")
    return 0 if ok else 1


def _run_experiment(args, fn) -> int:
    noise = NOISE_PRESETS.get(args.noise or "off")
    if noise is None:
        raise ConfigError("--noise", f"unknown preset {args.noise!r}")
    report = fn(args.runs, seed=args.seed, noise=noise, workers=args.workers)
    out = _ensure_out(args.out)
    _write_json(report, os.path.join(out, "report.json"))
    _write_metrics_csv(report["runs"], os.path.join(out, "metrics.csv"))
    agg = report["aggregates"]
    print(f"{report['experiment']}: {args.runs} runs, "
          f"success rate {agg['success_rate']:.2f}")
    for key, val in sorted(agg.items()):
        if val is not None and key != "success_rate":
            print(f"  {key}: {val:.4f}" if isinstance(val, float) else f"  {key}: {val}")
    return 0 if agg["success_rate"] == 1.0 else 1


def cmd_exp_load(args) -> int:
    return _run_experiment(args, experiment_load)


def cmd_exp_unload(args) -> int:
    return _run_experiment(args, experiment_unload)


def cmd_snapshot(args) -> int:
    scenario = load_scenario(args.scenario)
    world = scenario.build_world()
    x, y, z, pitch_deg, yaw_deg = args.pose
    cam_b = camera_to_base((0.0, 0.0, 0.0), math.radians(pitch_deg),
                           math.radians(yaw_deg))
    cam_m = base_to_map(RigidPose(x, y, 0.0)) @ cam_b
    # lift the camera to the requested height
    m = cam_m.matrix.copy()
    m[2, 3] = z
    from .geometry import FrameTransform
    cam_m = FrameTransform(m, source="camera", target="map")
    labels, depth = render_rgbd(world, cam_m, scenario.camera)
    out = _ensure_out(args.out)
    try:
        write_ppm(labels, os.path.join(out, "labels.ppm"))
        write_pgm16(depth, os.path.join(out, "depth.pgm"))
    except OSError as e:
        raise IoError(str(e))
    print(f"wrote {out}/labels.ppm and {out}/depth.pgm")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wallsim",
                                description="UGV wall-building simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a full mission scenario")
    run.add_argument("--scenario", required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--noise", default=None, help="noise preset override")
    run.add_argument("--out", default="out")
    run.add_argument("--max-sim-time", type=float, default=None)
    run.add_argument("--dump-frames", action="store_true")
    run.set_defaults(fn=cmd_run)

    for name, fn in (("exp-load", cmd_exp_load), ("exp-unload", cmd_exp_unload)):
        ex = sub.add_parser(name, help=f"{name} experiment campaign")
        ex.add_argument("--runs", type=int, default=7)
        ex.add_argument("--seed", type=int, default=0)
        ex.add_argument("--noise", default="off")
        ex.add_argument("--out", default="out")
        ex.add_argument("--workers", type=int, default=None)
        ex.set_defaults(fn=fn)

    snap = sub.add_parser("snapshot", help="render one camera view")
    snap.add_argument("--scenario", required=True)
    snap.add_argument("--pose", type=float, nargs=5, required=True,
                      metavar=("X", "Y", "Z", "PITCH_DEG", "YAW_DEG"))
    snap.add_argument("--out", default="out")
    snap.set_defaults(fn=cmd_snapshot)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except IoError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
