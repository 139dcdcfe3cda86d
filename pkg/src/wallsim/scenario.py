"""Scenario files: arena layout, noise, gains and timing, with validation.

A scenario is a JSON document (schema version 1) from which fresh world
state and a mission plan can be built any number of times; two runs from
the same scenario and seed are bitwise identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .control import ApproachGains, ServoGains
from .geometry import CameraIntrinsics, RigidPose
from .mission import BrickTask, MissionConfig, MissionStateMachine, TaskKind, plan_sequence
from .nav import PlannerParams, VelocityLimits
from .vision import ScoringWeights, VisionConfig
from .world import (BRICK_HEIGHT, COLORS, DEFAULT_BRICKS, Basket, BrickSpec,
                    BrickStack, WallFootprint, WorldState)


class ConfigError(Exception):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path


@dataclass(frozen=True)
class NoiseParams:
    sigma_px: float = 0.0
    depth_a: float = 0.0          # depth variance coefficient, var = a * d^2
    loc_sigma_xy: float = 0.0
    loc_sigma_yaw: float = 0.0    # radians

    def is_off(self) -> bool:
        return (self.sigma_px == 0 and self.depth_a == 0
                and self.loc_sigma_xy == 0 and self.loc_sigma_yaw == 0)


NOISE_PRESETS = {
    "off": NoiseParams(),
    "paper-like": NoiseParams(sigma_px=2.0, depth_a=4.0e-4,
                              loc_sigma_xy=0.05, loc_sigma_yaw=math.radians(1.0)),
}


@dataclass(frozen=True)
class SimTiming:
    dt: float = 0.05
    camera_period: float = 0.2
    max_sim_time: float = 1500.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        ratio = self.camera_period / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("camera period must be a multiple of dt")

    @property
    def camera_every(self) -> int:
        return int(round(self.camera_period / self.dt))


@dataclass(frozen=True)
class EffectorLimits:
    max_step: float = 0.02        # m per tick, each axis
    max_rot: float = 0.05         # rad per tick, pitch and yaw
    r_min: float = 0.30           # closest graspable planar range
    r_max: float = 1.46
    fold_min: float = 0.12        # arm may fold this close to the mount in transit
    mount: tuple = (0.0, 0.0, 0.35)
    cam_offset_y: float = 0.08    # camera center offset along the gripper y


@dataclass(frozen=True)
class NavConfig:
    limits: VelocityLimits = field(default_factory=VelocityLimits)
    planner: PlannerParams = field(default_factory=PlannerParams)
    resolution: float = 0.1
    z_low: float = 0.15
    z_high: float = 1.0
    xy_tol: float = 0.10
    yaw_tol: float = math.radians(5.0)
    max_switches: int = 2
    gate_timeout: float = 5.0
    replan_period: float = 1.0
    scans_kept: int = 30
    scan_beams: int = 120
    scan_range: float = 9.0
    scan_height: float = 0.18


@dataclass(frozen=True)
class ControlConfig:
    approach: ApproachGains = field(default_factory=ApproachGains)
    servo: ServoGains = field(default_factory=ServoGains)
    kalman_q: float = 0.5
    kalman_r: float = 0.01
    servo_standoff: float = 0.95   # camera height above the patch during servo
    servo_back_off: float = 0.25   # start the pitch ramp this far behind the patch
    perp_tol: float = math.radians(26.0)


@dataclass
class StackSpec:
    color: str
    x: float
    y: float
    yaw: float
    layers: int = 1
    columns: int = 2


@dataclass
class Scenario:
    """Everything needed to build a reproducible run."""

    name: str = "scenario"
    arena_width: float = 12.0
    arena_height: float = 9.0
    arena_origin: tuple = (-2.0, -2.0)
    robot_start: RigidPose = field(default_factory=RigidPose)
    stacks: list = field(default_factory=list)          # [StackSpec]
    footprint: WallFootprint | None = None
    basket_capacity: int = 4
    basket_preload: list = field(default_factory=list)  # colors
    slot_poses: list = field(default_factory=lambda: [
        (-0.10, 0.50, 0.55), (-0.10, -0.50, 0.55),
        (-0.40, 0.50, 0.55), (-0.40, -0.50, 0.55)])
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    noise: NoiseParams = field(default_factory=NoiseParams)
    timing: SimTiming = field(default_factory=SimTiming)
    effector: EffectorLimits = field(default_factory=EffectorLimits)
    nav: NavConfig = field(default_factory=NavConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    vision: VisionConfig = field(default_factory=VisionConfig)
    mission_cfg: MissionConfig = field(default_factory=MissionConfig)
    brick_specs: dict = field(default_factory=lambda: dict(DEFAULT_BRICKS))
    tasks_override: list | None = None                  # [BrickTask]

    def build_world(self) -> WorldState:
        stacks = [BrickStack(s.color, s.x, s.y, s.yaw, s.layers, s.columns,
                             spec=self.brick_specs[s.color])
                  for s in self.stacks]
        fp = None
        if self.footprint is not None:
            fp = WallFootprint(self.footprint.x, self.footprint.y,
                               self.footprint.yaw, self.footprint.length,
                               self.footprint.width,
                               [list(r) for r in self.footprint.blueprint])
        world = WorldState(stacks=stacks, footprint=fp,
                           robot=self.robot_start,
                           basket=Basket(capacity=self.basket_capacity),
                           brick_specs=dict(self.brick_specs))
        for color in self.basket_preload:
            world.basket.store(color, self.brick_specs[color].slot_cost)
        world.initial_bricks = sum(world.brick_census().values())
        return world

    def build_mission(self) -> MissionStateMachine:
        blueprint = self.footprint.blueprint if self.footprint else []
        costs = {c: s.slot_cost for c, s in self.brick_specs.items()}
        if self.tasks_override is not None:
            tasks = list(self.tasks_override)
        else:
            tasks = plan_sequence(blueprint, costs, self.basket_capacity)
        # builds with preloaded bricks need no load task; honor overrides as-is
        stack_areas = {}
        for s in self.stacks:
            stack_areas.setdefault(s.color, (s.x, s.y))
        fp_area = (0.0, 0.0)
        if self.footprint is not None:
            c = self.footprint.center()
            fp_area = (float(c[0]), float(c[1]))
        lengths = {c: s.length for c, s in self.brick_specs.items()}
        return MissionStateMachine(blueprint, tasks, stack_areas, fp_area,
                                   lengths, BRICK_HEIGHT, self.mission_cfg)

    def with_noise(self, noise: NoiseParams) -> "Scenario":
        return replace(self, noise=noise)


# ---------------------------------------------------------------------------
# JSON parsing


def _need(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return obj[key]


def _color(value, path: str) -> str:
    if value not in COLORS:
        raise ConfigError(path, f"unknown color {value!r}, expected one of {COLORS}")
    return value


def parse_scenario(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("$", "scenario must be a JSON object")
    if doc.get("schema") != 1:
        raise ConfigError("schema", f"unsupported schema {doc.get('schema')!r}, expected 1")
    sc = Scenario(name=doc.get("name", name))

    if "arena" in doc:
        a = doc["arena"]
        sc.arena_width = float(a.get("width", sc.arena_width))
        sc.arena_height = float(a.get("height", sc.arena_height))
        if "origin" in a:
            sc.arena_origin = (float(a["origin"][0]), float(a["origin"][1]))

    if "robot" in doc:
        r = doc["robot"]
        start = _need(r, "start", "robot")
        sc.robot_start = RigidPose(float(start[0]), float(start[1]), 0.0,
                                   0.0, 0.0, math.radians(float(r.get("yaw_deg", 0.0))))

    if "bricks" in doc:
        for color, bd in doc["bricks"].items():
            _color(color, f"bricks.{color}")
            base = sc.brick_specs[color]
            sc.brick_specs[color] = BrickSpec(
                color,
                float(bd.get("length", base.length)),
                float(bd.get("width", base.width)),
                float(bd.get("height", base.height)),
                float(bd.get("patch_length", base.patch_length)),
                float(bd.get("patch_width", base.patch_width)),
                int(bd.get("slot_cost", base.slot_cost)))

    for i, s in enumerate(doc.get("stacks", [])):
        path = f"stacks[{i}]"
        color = _color(_need(s, "color", path), f"{path}.color")
        pos = _need(s, "pos", path)
        sc.stacks.append(StackSpec(color, float(pos[0]), float(pos[1]),
                                   math.radians(float(s.get("yaw_deg", 0.0))),
                                   int(s.get("layers", 1)),
                                   int(s.get("columns", 2))))

    if "footprint" in doc and doc["footprint"] is not None:
        f = doc["footprint"]
        corner = _need(f, "corner", "footprint")
        blueprint = []
        for j, row in enumerate(f.get("blueprint", [])):
            blueprint.append([_color(c, f"footprint.blueprint[{j}]") for c in row])
        sc.footprint = WallFootprint(float(corner[0]), float(corner[1]),
                                     math.radians(float(f.get("yaw_deg", 0.0))),
                                     float(_need(f, "length", "footprint")),
                                     float(_need(f, "width", "footprint")),
                                     blueprint)
        for j, row in enumerate(blueprint):
            row_len = sum(sc.brick_specs[c].length for c in row)
            if row_len > sc.footprint.length + 1e-6:
                raise ConfigError(f"footprint.blueprint[{j}]",
                                  f"row length {row_len:.2f} exceeds footprint "
                                  f"length {sc.footprint.length:.2f}")

    if "basket" in doc:
        b = doc["basket"]
        sc.basket_capacity = int(b.get("capacity", sc.basket_capacity))
        sc.basket_preload = [_color(c, "basket.preload") for c in b.get("preload", [])]

    if "camera" in doc:
        c = doc["camera"]
        sc.camera = CameraIntrinsics(width=int(c.get("width", 640)),
                                     height=int(c.get("height", 480)),
                                     focal_px=float(c.get("focal_px", 460.0)),
                                     focal_mm=float(c.get("focal_mm", 1.93)))
        if "offset_y" in c:
            sc.effector = replace(sc.effector, cam_offset_y=float(c["offset_y"]))

    if "noise" in doc:
        n = doc["noise"]
        if isinstance(n, str):
            if n not in NOISE_PRESETS:
                raise ConfigError("noise", f"unknown preset {n!r}")
            sc.noise = NOISE_PRESETS[n]
        else:
            sc.noise = NoiseParams(
                sigma_px=float(n.get("sigma_px", 0.0)),
                depth_a=float(n.get("depth_a", 0.0)),
                loc_sigma_xy=float(n.get("loc_sigma_xy", 0.0)),
                loc_sigma_yaw=math.radians(float(n.get("loc_sigma_yaw_deg", 0.0))))

    if "timing" in doc:
        t = doc["timing"]
        try:
            sc.timing = SimTiming(dt=float(t.get("dt", 0.05)),
                                  camera_period=float(t.get("camera_period", 0.2)),
                                  max_sim_time=float(t.get("max_sim_time", 1500.0)))
        except ValueError as e:
            raise ConfigError("timing", str(e))

    if "gains" in doc:
        g = doc["gains"]
        ap = {k: float(v) for k, v in g.get("approach", {}).items()}
        sv = {k: float(v) for k, v in g.get("servo", {}).items()}
        try:
            sc.control = replace(sc.control,
                                 approach=replace(sc.control.approach, **ap),
                                 servo=replace(sc.control.servo, **sv))
        except TypeError as e:
            raise ConfigError("gains", str(e))

    if "nav" in doc:
        n = doc["nav"]
        lim = {k: float(v) for k, v in n.get("limits", {}).items()}
        nav_fields = {}
        for key in ("resolution", "z_low", "z_high", "xy_tol", "replan_period",
                    "gate_timeout"):
            if key in n:
                nav_fields[key] = float(n[key])
        if "yaw_tol_deg" in n:
            nav_fields["yaw_tol"] = math.radians(float(n["yaw_tol_deg"]))
        if "max_switches" in n:
            nav_fields["max_switches"] = int(n["max_switches"])
        try:
            sc.nav = replace(sc.nav, limits=replace(sc.nav.limits, **lim),
                             **nav_fields)
        except TypeError as e:
            raise ConfigError("nav", str(e))

    if "mission" in doc:
        m = {k: (int(v) if k == "retry_max" else float(v))
             for k, v in doc["mission"].items()}
        try:
            sc.mission_cfg = replace(MissionConfig(), **m)
        except TypeError as e:
            raise ConfigError("mission", str(e))

    if doc.get("tasks_override"):
        tasks = []
        for i, t in enumerate(doc["tasks_override"]):
            kind, _, color = t.partition(":")
            if kind not in ("load", "build"):
                raise ConfigError(f"tasks_override[{i}]", f"bad task kind {kind!r}")
            tasks.append(BrickTask(TaskKind(kind), _color(color, f"tasks_override[{i}]")))
        sc.tasks_override = tasks

    return sc


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON: {e}")
    except OSError as e:
        raise ConfigError("$", f"cannot read scenario: {e}")
    return parse_scenario(doc, name=path)
