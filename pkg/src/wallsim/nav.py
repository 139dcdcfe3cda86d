"""Map navigation: height-filtered costmap, arc planner, velocity clamp and gate.

The planner stands in for an online trajectory optimizer: it searches a
lattice of forward/backward arcs (radius >= r_min) and straights, and
tries an analytic constant-radius connection to the goal from every
expanded node.  What carries over verbatim from the control design are
the ratio-preserving velocity clamp and the switch-count command gate.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import RigidPose, unicycle_step, wrap_angle

FREE, OCCUPIED, UNKNOWN = 0, 1, 2


class NoPath(Exception):
    """Planner could not produce a feasible plan."""


@dataclass(frozen=True)
class VelocityLimits:
    v_min: float = -0.3
    v_max: float = 1.0
    w_max: float = 1.0
    r_min: float = 0.5

    def __post_init__(self):
        if not (self.v_min <= 0.0 <= self.v_max):
            raise ValueError("v_min <= 0 <= v_max required")
        if self.w_max <= 0 or self.r_min < 0:
            raise ValueError("w_max > 0 and r_min >= 0 required")


@dataclass
class OccupancyGrid:
    resolution: float
    origin_x: float
    origin_y: float
    data: np.ndarray  # uint8 [rows, cols], row-major over y

    @classmethod
    def empty(cls, width_m: float, height_m: float, resolution: float,
              origin_x: float = 0.0, origin_y: float = 0.0) -> "OccupancyGrid":
        rows = int(math.ceil(height_m / resolution))
        cols = int(math.ceil(width_m / resolution))
        return cls(resolution, origin_x, origin_y,
                   np.full((rows, cols), FREE, dtype=np.uint8))

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((y - self.origin_y) / self.resolution)),
                int(math.floor((x - self.origin_x) / self.resolution)))

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.data.shape[0] and 0 <= col < self.data.shape[1]

    def is_occupied(self, x: float, y: float) -> bool:
        row, col = self.cell_of(x, y)
        if not self.in_bounds(row, col):
            return False  # open world outside the mapped area
        return self.data[row, col] == OCCUPIED

    def inflate(self, radius: float) -> "OccupancyGrid":
        cells = int(math.ceil(radius / self.resolution))
        if cells <= 0:
            return OccupancyGrid(self.resolution, self.origin_x, self.origin_y,
                                 self.data.copy())
        yy, xx = np.mgrid[-cells:cells + 1, -cells:cells + 1]
        disk = (xx ** 2 + yy ** 2) * self.resolution ** 2 <= radius ** 2
        occ = ndimage.binary_dilation(self.data == OCCUPIED, structure=disk)
        out = np.where(occ, OCCUPIED, FREE).astype(np.uint8)
        out[(self.data == UNKNOWN) & ~occ] = UNKNOWN
        return OccupancyGrid(self.resolution, self.origin_x, self.origin_y, out)


def build_costmap(points: np.ndarray, z_low: float, z_high: float,
                  resolution: float, width_m: float, height_m: float,
                  origin_x: float = 0.0, origin_y: float = 0.0) -> OccupancyGrid:
    """Occupancy grid from a point cloud, keeping only the height band.

    A cell is occupied iff it contains at least one point with
    z_low <= z <= z_high; points outside the band never mark cells.
    """
    if z_low >= z_high:
        raise ValueError("z_low must be below z_high")
    grid = OccupancyGrid.empty(width_m, height_m, resolution, origin_x, origin_y)
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return grid
    pts = np.atleast_2d(pts)
    band = (pts[:, 2] >= z_low) & (pts[:, 2] <= z_high)
    pts = pts[band]
    if len(pts) == 0:
        return grid
    cols = np.floor((pts[:, 0] - origin_x) / resolution).astype(int)
    rows = np.floor((pts[:, 1] - origin_y) / resolution).astype(int)
    ok = (rows >= 0) & (rows < grid.data.shape[0]) & (cols >= 0) & (cols < grid.data.shape[1])
    grid.data[rows[ok], cols[ok]] = OCCUPIED
    return grid


def clamp_velocity(v, w, limits: VelocityLimits):
    """Scale (v, w) into the limit box while keeping v/w exactly.

    Works elementwise on arrays as well as on scalars.  The common scale
    factor is the tightest violated limit; (0, 0) passes through.
    """
    v_arr = np.asarray(v, dtype=float)
    w_arr = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_hi = np.where(v_arr > limits.v_max, limits.v_max / v_arr, 1.0)
        s_lo = np.where(v_arr < limits.v_min, limits.v_min / v_arr, 1.0)
        s_w = np.where(np.abs(w_arr) > limits.w_max,
                       limits.w_max / np.abs(w_arr), 1.0)
    s = np.minimum(np.minimum(s_hi, s_lo), s_w)
    v_out = np.clip(v_arr * s, limits.v_min, limits.v_max)
    w_out = np.clip(w_arr * s, -limits.w_max, limits.w_max)
    if np.isscalar(v) or (hasattr(v, "ndim") and getattr(v, "ndim", 1) == 0):
        return float(v_out), float(w_out)
    return v_out, w_out


@dataclass(frozen=True)
class PlanSegment:
    v: float
    w: float
    duration: float

    @property
    def length(self) -> float:
        return abs(self.v) * self.duration


@dataclass
class MotionPlan:
    segments: list
    goal: RigidPose
    switch_count: int = field(default=-1)

    def __post_init__(self):
        if self.switch_count < 0:
            self.switch_count = count_switches(self.segments)

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def command_at(self, t: float):
        acc = 0.0
        for seg in self.segments:
            acc += seg.duration
            if t < acc:
                return seg.v, seg.w
        return 0.0, 0.0

    def done_at(self, t: float) -> bool:
        return t >= self.total_duration


def count_switches(segments) -> int:
    signs = [math.copysign(1.0, s.v) for s in segments if abs(s.v) > 1e-12]
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def segments_end(segments, start: RigidPose):
    """Exact end state of a segment chain (one arc step per segment)."""
    x, y, yaw = start.x, start.y, start.yaw
    for seg in segments:
        x, y, yaw = unicycle_step(x, y, yaw, seg.v, seg.w, seg.duration)
    return x, y, yaw


def rollout(segments, start: RigidPose, step: float = 0.02) -> np.ndarray:
    """Sampled (x, y, yaw) states along a segment chain, vectorized per arc."""
    x, y, yaw = start.x, start.y, start.yaw
    chunks = [np.array([[x, y, yaw]])]
    for seg in segments:
        n = max(1, int(math.ceil(seg.duration / step)))
        ts = np.linspace(seg.duration / n, seg.duration, n)
        if abs(seg.w) < 1e-12:
            xs = x + seg.v * ts * math.cos(yaw)
            ys = y + seg.v * ts * math.sin(yaw)
            yaws = np.full(n, yaw)
        else:
            r = seg.v / seg.w
            yaws = yaw + seg.w * ts
            xs = x + r * (np.sin(yaws) - math.sin(yaw))
            ys = y - r * (np.cos(yaws) - math.cos(yaw))
        chunks.append(np.column_stack([xs, ys, yaws]))
        x, y, yaw = unicycle_step(x, y, yaw, seg.v, seg.w, seg.duration)
    return np.concatenate(chunks)


@dataclass
class GateState:
    """Suppresses motion while the current plan shakes back and forth."""

    max_switches: int = 2
    timeout: float = 5.0
    elapsed: float = 0.0

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def gate_plan(plan: MotionPlan, gate: GateState, dt: float,
              t_in_plan: float = 0.0):
    """Head command of the plan, or (0, 0) while the gate suppresses it.

    Suppression holds while the plan exceeds the switch budget and the
    accumulated suppression time has not reached the timeout.
    """
    if plan.switch_count > gate.max_switches and gate.elapsed < gate.timeout:
        gate.elapsed += dt
        return 0.0, 0.0
    return plan.command_at(t_in_plan)


def goal_reached(pose: RigidPose, goal: RigidPose, xy_tol: float,
                 yaw_tol: float) -> bool:
    if math.hypot(pose.x - goal.x, pose.y - goal.y) > xy_tol:
        return False
    return abs(wrap_angle(pose.yaw - goal.yaw)) <= yaw_tol


# ---------------------------------------------------------------------------
# Planner


@dataclass(frozen=True)
class PlannerParams:
    robot_radius: float = 0.40
    v_cruise: float = 0.6
    step_length: float = 0.25
    xy_key: float = 0.12
    yaw_bins: int = 24
    max_pops: int = 4000
    switch_penalty: float = 0.6
    reverse_factor: float = 1.4
    collision_step: float = 0.06
    xy_tol: float = 0.10
    yaw_tol: float = math.radians(5.0)


def _mod2pi(a: float) -> float:
    a = math.fmod(a, 2.0 * math.pi)
    return a + 2.0 * math.pi if a < 0 else a


def _dubins_words(alpha: float, beta: float, d: float):
    """Candidate (t, p, q, word) tuples for the four CSC Dubins words."""
    sa, sb = math.sin(alpha), math.sin(beta)
    ca, cb = math.cos(alpha), math.cos(beta)
    c_ab = math.cos(alpha - beta)
    out = []

    p_sq = 2 + d * d - 2 * c_ab + 2 * d * (sa - sb)
    if p_sq >= 0:
        tmp = math.atan2(cb - ca, d + sa - sb)
        out.append((_mod2pi(-alpha + tmp), math.sqrt(p_sq),
                    _mod2pi(beta - tmp), "LSL"))
    p_sq = 2 + d * d - 2 * c_ab + 2 * d * (sb - sa)
    if p_sq >= 0:
        tmp = math.atan2(ca - cb, d - sa + sb)
        out.append((_mod2pi(alpha - tmp), math.sqrt(p_sq),
                    _mod2pi(-beta + tmp), "RSR"))
    p_sq = -2 + d * d + 2 * c_ab + 2 * d * (sa + sb)
    if p_sq >= 0:
        p = math.sqrt(p_sq)
        tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
        out.append((_mod2pi(-alpha + tmp), p, _mod2pi(-_mod2pi(beta) + tmp), "LSR"))
    p_sq = d * d - 2 + 2 * c_ab - 2 * d * (sa + sb)
    if p_sq >= 0:
        p = math.sqrt(p_sq)
        tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
        out.append((_mod2pi(alpha - tmp), p, _mod2pi(_mod2pi(beta) - tmp), "RSL"))
    return out


def _dubins_segments(start: RigidPose, goal: RigidPose, r: float,
                     v: float):
    """Shortest forward CSC connections start->goal, as PlanSegment lists.

    Candidates are returned cheapest first; each is endpoint-verified by
    rollout before being trusted.
    """
    dx, dy = goal.x - start.x, goal.y - start.y
    dist = math.hypot(dx, dy)
    phi = math.atan2(dy, dx) if dist > 1e-12 else start.yaw
    alpha = _mod2pi(start.yaw - phi)
    beta = _mod2pi(goal.yaw - phi)
    d = dist / r
    cands = []
    for t, p, q, word in _dubins_words(alpha, beta, d):
        length = (t + q) * r + p * r
        cands.append((length, t, p, q, word))
    cands.sort(key=lambda c: c[0])
    results = []
    for length, t, p, q, word in cands:
        segs = []
        for amount, kind in ((t, word[0]), (p, word[1]), (q, word[2])):
            if amount < 1e-9:
                continue
            if kind == "S":
                segs.append(PlanSegment(v, 0.0, amount * r / v))
            else:
                w = v / r if kind == "L" else -v / r
                segs.append(PlanSegment(v, w, amount * r / v))
        # endpoint verification guards against numerically bad words
        ex, ey, eyaw = segments_end(segs, start)
        if (math.hypot(ex - goal.x, ey - goal.y) < 0.01
                and abs(wrap_angle(eyaw - goal.yaw)) < 0.01):
            results.append((length, segs))
    return results


def _segments_collide(segs, start: RigidPose, inflated: OccupancyGrid,
                      step: float) -> bool:
    states = rollout(segs, start, step=step)
    rows = np.floor((states[:, 1] - inflated.origin_y) / inflated.resolution).astype(int)
    cols = np.floor((states[:, 0] - inflated.origin_x) / inflated.resolution).astype(int)
    h, w = inflated.data.shape
    inb = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    return bool(np.any(inflated.data[rows[inb], cols[inb]] == OCCUPIED))


def plan_path(grid: OccupancyGrid, start: RigidPose, goal: RigidPose,
              limits: VelocityLimits, params: PlannerParams | None = None) -> MotionPlan:
    """Collision-free motion plan over arc primitives.

    Tries the analytic constant-radius connection first, then falls back
    to lattice search with reverse arcs; raises NoPath when the goal is
    unreachable within the expansion budget.
    """
    params = params or PlannerParams()
    inflated = grid.inflate(params.robot_radius)
    if inflated.is_occupied(goal.x, goal.y):
        raise NoPath("goal inside inflated obstacle")

    v = min(params.v_cruise, limits.v_max)
    r = limits.r_min if limits.r_min > 1e-6 else 0.5
    col_step = params.collision_step / max(v, 0.1)

    if goal_reached(start, goal, params.xy_tol, params.yaw_tol):
        return MotionPlan([], goal)

    for _, segs in _dubins_segments(start, goal, r, v):
        if not _segments_collide(segs, start, inflated, col_step):
            return MotionPlan(_merge(segs), goal)

    return _lattice_search(inflated, start, goal, limits, params, v, r, col_step)


def _merge(segs):
    out = []
    for seg in segs:
        if out and abs(out[-1].v - seg.v) < 1e-12 and abs(out[-1].w - seg.w) < 1e-12:
            out[-1] = PlanSegment(seg.v, seg.w, out[-1].duration + seg.duration)
        else:
            out.append(seg)
    return out


def _lattice_search(inflated, start, goal, limits, params, v, r, col_step):
    v_rev = abs(limits.v_min) if limits.v_min < -1e-6 else 0.0
    prims = []
    for direction in (1.0, -1.0):
        speed = v if direction > 0 else v_rev
        if speed <= 0:
            continue
        for curv in (0.0, 1.0 / r, -1.0 / r):
            prims.append((direction * speed, direction * speed * curv))

    def key(x, y, yaw, last_dir):
        return (int(round(x / params.xy_key)), int(round(y / params.xy_key)),
                int(round(yaw / (2 * math.pi / params.yaw_bins))) % params.yaw_bins,
                last_dir)

    def heur(x, y):
        return math.hypot(goal.x - x, goal.y - y)

    start_state = (start.x, start.y, start.yaw)
    counter = 0
    open_heap = [(heur(start.x, start.y), counter, 0.0, start_state, 1, [])]
    best_g: dict = {key(*start_state, 1): 0.0}
    pops = 0

    while open_heap:
        _, _, g, (x, y, yaw), last_dir, segs = heapq.heappop(open_heap)
        pops += 1
        if pops > params.max_pops:
            break
        pose = RigidPose(x, y, 0.0, 0.0, 0.0, yaw)

        # analytic connection to the goal; throttled while far away
        if heur(x, y) < 2.5 or pops % 5 == 0:
            for length, tail in _dubins_segments(pose, goal, r, v):
                if not _segments_collide(tail, pose, inflated, col_step):
                    return MotionPlan(_merge(segs + tail), goal)

        for pv, pw in prims:
            duration = params.step_length / abs(pv)
            seg = PlanSegment(pv, pw, duration)
            if _segments_collide([seg], pose, inflated, col_step):
                continue
            nx, ny, nyaw = unicycle_step(x, y, yaw, pv, pw, duration)
            ndir = 1 if pv > 0 else -1
            cost = params.step_length
            if ndir < 0:
                cost *= params.reverse_factor
            if ndir != last_dir:
                cost += params.switch_penalty
            ng = g + cost
            k = key(nx, ny, nyaw, ndir)
            if ng >= best_g.get(k, math.inf):
                continue
            best_g[k] = ng
            counter += 1
            heapq.heappush(open_heap, (ng + heur(nx, ny), counter, ng,
                                       (nx, ny, nyaw), ndir, segs + [seg]))

    raise NoPath(f"no feasible plan after {pops} expansions")
