"""Hierarchical mission state machine and capacity-constrained task sequencing.

Top-level states walk the robot between the brick stacks and the wall;
the Load/Unload blocks cycle through the two-stage approach sub-states.
The wall pattern's pose is estimated once, memorized in the map frame,
and every later unload skips straight to Alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import RigidPose, wrap_angle


class InvalidEvent(Exception):
    """Event not legal in the current state; orchestration bug."""


class InfeasibleBrick(Exception):
    """A single brick's slot cost exceeds basket capacity."""


class MissingWallPose(Exception):
    pass


class TaskKind(Enum):
    LOAD = "load"
    BUILD = "build"


@dataclass(frozen=True)
class BrickTask:
    kind: TaskKind
    color: str

    def short(self) -> str:
        return ("L" if self.kind == TaskKind.LOAD else "B") + self.color[0].upper()


def plan_sequence(blueprint: list[list[str]], slot_costs: dict[str, int],
                  capacity: int) -> list[BrickTask]:
    """Greedy batching: load until the next brick would overflow the basket,
    then build the batch in wall order (bottom row first, left to right)."""
    cells = [color for row in blueprint for color in row]
    tasks: list[BrickTask] = []
    batch: list[str] = []
    used = 0
    for color in cells:
        cost = slot_costs[color]
        if cost > capacity:
            raise InfeasibleBrick(f"{color} costs {cost} > capacity {capacity}")
        if used + cost > capacity:
            tasks.extend(BrickTask(TaskKind.BUILD, c) for c in batch)
            batch, used = [], 0
        tasks.append(BrickTask(TaskKind.LOAD, color))
        batch.append(color)
        used += cost
    tasks.extend(BrickTask(TaskKind.BUILD, c) for c in batch)
    return tasks


def alignment_goal(obj_pose: RigidPose, d_align: float,
                   robot_pose: RigidPose) -> RigidPose:
    """Navigation goal at a fixed stand-off, perpendicular to the object axis.

    The stand-off direction is the object's minor axis on the robot's
    side; the goal yaw faces the object.
    """
    minor = np.array([-math.sin(obj_pose.yaw), math.cos(obj_pose.yaw)])
    to_robot = np.array([robot_pose.x - obj_pose.x, robot_pose.y - obj_pose.y])
    if float(to_robot @ minor) < 0:
        minor = -minor
    gx = obj_pose.x + d_align * minor[0]
    gy = obj_pose.y + d_align * minor[1]
    yaw = math.atan2(obj_pose.y - gy, obj_pose.x - gx)
    return RigidPose(gx, gy, 0.0, 0.0, 0.0, yaw)


def drop_target(blueprint: list[list[str]], cell_index: int,
                wall_pose: RigidPose | None, brick_lengths: dict[str, float],
                h_b: float) -> RigidPose:
    """Pose of a blueprint cell, offset from the memorized rightmost corner.

    Cells are indexed in wall order; the offset along the wall axis is
    the cumulative length of earlier bricks in the row, the z offset is
    the row height.
    """
    if wall_pose is None:
        raise MissingWallPose("wall pose not memorized yet")
    flat = []
    for row_idx, row in enumerate(blueprint):
        for col_idx, color in enumerate(row):
            flat.append((row_idx, col_idx, color))
    if cell_index >= len(flat):
        raise IndexError("cell index beyond blueprint")
    row_idx, col_idx, color = flat[cell_index]
    row = blueprint[row_idx]
    offset = sum(brick_lengths[c] for c in row[:col_idx])
    offset += brick_lengths[color] / 2.0
    ax = math.cos(wall_pose.yaw)
    ay = math.sin(wall_pose.yaw)
    return RigidPose(wall_pose.x + ax * offset, wall_pose.y + ay * offset,
                     row_idx * h_b, 0.0, 0.0, wall_pose.yaw)


class TopState(Enum):
    GO_TO_STACKS = "GoToStacks"
    LOAD_BRICKS = "LoadBricks"
    GO_TO_WALL = "GoToWall"
    UNLOAD_BRICKS = "UnloadBricks"
    DONE = "Done"


class SubState(Enum):
    IDLE = "Idle"
    INITIAL_APPROACH = "InitialApproach"
    POSE_DETECTION = "PoseDetection"
    ALIGNMENT = "Alignment"
    FINAL_APPROACH = "FinalApproach"
    BRICK_PICKUP = "BrickPickup"
    BRICK_DROP = "BrickDrop"


@dataclass
class Event:
    name: str
    pose: RigidPose | None = None
    data: dict = field(default_factory=dict)


@dataclass
class Action:
    name: str
    data: dict = field(default_factory=dict)


EVENT_NAMES = {
    "GoalReached", "ObjectDetected", "PoseEstimated", "AlignmentReached",
    "WithinReach", "PickupDone", "PickupFailed", "DropDone", "BasketFull",
    "BasketEmpty", "TaskQueueEmpty", "PatchLost", "Timeout",
}

# informational events that never drive a transition by themselves
_HINTS = {"ObjectDetected", "BasketFull", "BasketEmpty"}


@dataclass
class MissionConfig:
    d_align: float = 1.2
    d_goto: float = 2.5
    retry_max: int = 2
    approach_stack: float = 1.6
    approach_footprint: float = 1.3
    final_stack: float = 0.80
    final_cell: float = 0.85


class MissionStateMachine:
    """Deterministic transition table driving one wall-building mission.

    Consumes events from the simulator, returns the actions that configure
    the active behavior.  Owns the task queue, retry counters, build cell
    pointer and the memorized wall pose.
    """

    def __init__(self, blueprint: list[list[str]], tasks: list[BrickTask],
                 stack_areas: dict[str, tuple], footprint_area: tuple,
                 brick_lengths: dict[str, float], h_b: float,
                 config: MissionConfig | None = None):
        self.blueprint = blueprint
        self.queue = list(tasks)
        self.index = 0
        self.stack_areas = dict(stack_areas)
        self.footprint_area = footprint_area
        self.brick_lengths = brick_lengths
        self.h_b = h_b
        self.cfg = config or MissionConfig()
        self.top = TopState.GO_TO_STACKS
        self.sub = SubState.IDLE
        self.wall_pose: RigidPose | None = None
        self.last_object_pose: RigidPose | None = None
        self.retries = 0
        self.cell_index = 0
        self.skipped: list[tuple] = []

    # -- helpers ---------------------------------------------------------

    def current_task(self) -> BrickTask | None:
        return self.queue[self.index] if self.index < len(self.queue) else None

    def _advance_task(self):
        self.index += 1
        self.retries = 0

    def _goto_goal(self, target_xy, robot_pose: RigidPose) -> RigidPose:
        tx, ty = target_xy
        dx, dy = robot_pose.x - tx, robot_pose.y - ty
        dist = math.hypot(dx, dy)
        if dist < 1e-6:
            dx, dy, dist = 1.0, 0.0, 1.0
        s = self.cfg.d_goto / dist
        gx, gy = tx + dx * s, ty + dy * s
        return RigidPose(gx, gy, 0.0, 0.0, 0.0, math.atan2(ty - gy, tx - gx))

    def _start_load_cycle(self) -> list[Action]:
        task = self.current_task()
        self.sub = SubState.INITIAL_APPROACH
        return [Action("local_approach", dict(kind="stack", color=task.color,
                                              d_r=self.cfg.approach_stack,
                                              final=False))]

    def _start_unload_cycle(self, robot_pose: RigidPose) -> list[Action]:
        if self.wall_pose is None:
            self.sub = SubState.INITIAL_APPROACH
            return [Action("local_approach", dict(kind="footprint", color=None,
                                                  d_r=self.cfg.approach_footprint,
                                                  final=False))]
        # memorized pattern pose: skip straight to Alignment
        return self._cell_alignment(robot_pose)

    def _cell_alignment(self, robot_pose: RigidPose) -> list[Action]:
        cell = drop_target(self.blueprint, self.cell_index, self.wall_pose,
                           self.brick_lengths, self.h_b)
        self.sub = SubState.ALIGNMENT
        goal = alignment_goal(cell, self.cfg.d_align, robot_pose)
        return [Action("nav_goal", dict(pose=goal, purpose="alignment"))]

    def _current_cell(self) -> RigidPose:
        return drop_target(self.blueprint, self.cell_index, self.wall_pose,
                           self.brick_lengths, self.h_b)

    def _retry_or_skip(self, top_is_load: bool) -> list[Action]:
        self.retries += 1
        if self.retries <= self.cfg.retry_max:
            if top_is_load:
                return self._start_load_cycle()
            return self._start_unload_cycle_retry()
        # exhausted: skip this task, and its matching build if it was a load
        task = self.current_task()
        self.skipped.append((task.short(), "retries_exhausted"))
        if task.kind == TaskKind.LOAD:
            for j in range(self.index + 1, len(self.queue)):
                cand = self.queue[j]
                if cand.kind == TaskKind.BUILD and cand.color == task.color:
                    self.skipped.append((cand.short(), "load_skipped"))
                    del self.queue[j]
                    break
        else:
            self.cell_index += 1
        self._advance_task()
        return [Action("skip_task", dict(task=task.short()))] + \
            self._after_task_advance_nav_pending()

    def _start_unload_cycle_retry(self) -> list[Action]:
        if self.wall_pose is None:
            self.sub = SubState.INITIAL_APPROACH
            return [Action("local_approach", dict(kind="footprint", color=None,
                                                  d_r=self.cfg.approach_footprint,
                                                  final=False))]
        self.sub = SubState.IDLE
        return [Action("need_robot_pose", {})]

    def _after_task_advance_nav_pending(self) -> list[Action]:
        # placeholder resolved by the caller via continue_after_advance
        return [Action("advance", {})]

    def continue_after_advance(self, robot_pose: RigidPose) -> list[Action]:
        """Pick the next behavior after the task pointer moved."""
        task = self.current_task()
        if task is None:
            self.top = TopState.DONE
            self.sub = SubState.IDLE
            return [Action("mission_done", {})]
        if task.kind == TaskKind.LOAD:
            area = self.stack_areas[task.color]
            near = math.hypot(robot_pose.x - area[0],
                              robot_pose.y - area[1]) <= self.cfg.d_goto + 1.2
            if near and self.top in (TopState.LOAD_BRICKS, TopState.GO_TO_STACKS):
                self.top = TopState.LOAD_BRICKS
                return self._start_load_cycle()
            self.top = TopState.GO_TO_STACKS
            self.sub = SubState.IDLE
            return [Action("nav_goal", dict(pose=self._goto_goal(area, robot_pose),
                                            purpose="stacks"))]
        # BUILD task
        if self.top == TopState.UNLOAD_BRICKS:
            return self._start_unload_cycle(robot_pose)
        self.top = TopState.GO_TO_WALL
        self.sub = SubState.IDLE
        return [Action("nav_goal", dict(pose=self._goto_goal(self.footprint_area,
                                                             robot_pose),
                                        purpose="wall"))]

    def start(self, robot_pose: RigidPose) -> list[Action]:
        """Kick off the mission: navigate to the first target area."""
        task = self.current_task()
        if task is None:
            self.top = TopState.DONE
            return [Action("mission_done", {})]
        if task.kind == TaskKind.LOAD:
            self.top = TopState.GO_TO_STACKS
            area = self.stack_areas[task.color]
            return [Action("nav_goal", dict(pose=self._goto_goal(area, robot_pose),
                                            purpose="stacks"))]
        self.top = TopState.GO_TO_WALL
        return [Action("nav_goal",
                       dict(pose=self._goto_goal(self.footprint_area, robot_pose),
                            purpose="wall"))]

    # -- the transition table ---------------------------------------------

    def step(self, event: Event, robot_pose: RigidPose) -> list[Action]:
        if event.name not in EVENT_NAMES:
            raise InvalidEvent(f"unknown event {event.name}")
        if self.top == TopState.DONE:
            raise InvalidEvent(f"{event.name} after mission done")
        if event.name in _HINTS:
            return []
        if event.name == "TaskQueueEmpty":
            self.top = TopState.DONE
            self.sub = SubState.IDLE
            return [Action("mission_done", {})]

        handler = {
            TopState.GO_TO_STACKS: self._step_goto_stacks,
            TopState.GO_TO_WALL: self._step_goto_wall,
            TopState.LOAD_BRICKS: self._step_load,
            TopState.UNLOAD_BRICKS: self._step_unload,
        }[self.top]
        actions = handler(event, robot_pose)
        # resolve deferred task-advance continuations
        out = []
        for a in actions:
            if a.name == "advance":
                out.extend(self.continue_after_advance(robot_pose))
            elif a.name == "need_robot_pose":
                out.extend(self._cell_alignment(robot_pose))
            else:
                out.append(a)
        return out

    def _step_goto_stacks(self, event: Event, robot_pose: RigidPose):
        if event.name == "GoalReached":
            self.top = TopState.LOAD_BRICKS
            return self._start_load_cycle()
        if event.name == "Timeout":
            task = self.current_task()
            area = self.stack_areas[task.color]
            return [Action("nav_goal", dict(pose=self._goto_goal(area, robot_pose),
                                            purpose="stacks"))]
        raise InvalidEvent(f"{event.name} in GoToStacks")

    def _step_goto_wall(self, event: Event, robot_pose: RigidPose):
        if event.name == "GoalReached":
            self.top = TopState.UNLOAD_BRICKS
            return self._start_unload_cycle(robot_pose)
        if event.name == "Timeout":
            return [Action("nav_goal",
                           dict(pose=self._goto_goal(self.footprint_area, robot_pose),
                                purpose="wall"))]
        raise InvalidEvent(f"{event.name} in GoToWall")

    def _step_load(self, event: Event, robot_pose: RigidPose):
        task = self.current_task()
        sub = self.sub
        if event.name in ("PatchLost", "Timeout", "PickupFailed"):
            return self._retry_or_skip(top_is_load=True)

        if sub == SubState.INITIAL_APPROACH and event.name == "GoalReached":
            self.sub = SubState.POSE_DETECTION
            return [Action("pose_detect", dict(kind="patch", color=task.color))]
        if sub == SubState.POSE_DETECTION and event.name == "PoseEstimated":
            self.last_object_pose = event.pose
            self.sub = SubState.ALIGNMENT
            goal = alignment_goal(event.pose, self.cfg.d_align, robot_pose)
            return [Action("nav_goal", dict(pose=goal, purpose="alignment"))]
        if sub == SubState.ALIGNMENT and event.name == "AlignmentReached":
            self.sub = SubState.FINAL_APPROACH
            return [Action("local_approach", dict(kind="stack", color=task.color,
                                                  d_r=self.cfg.final_stack,
                                                  final=True))]
        if sub == SubState.FINAL_APPROACH and event.name == "WithinReach":
            self.sub = SubState.BRICK_PICKUP
            return [Action("pickup", dict(color=task.color))]
        if sub == SubState.BRICK_PICKUP and event.name == "PickupDone":
            self._advance_task()
            return self._after_task_advance_nav_pending()
        raise InvalidEvent(f"{event.name} in LoadBricks/{sub.value}")

    def _step_unload(self, event: Event, robot_pose: RigidPose):
        task = self.current_task()
        sub = self.sub
        if event.name in ("PatchLost", "Timeout"):
            return self._retry_or_skip(top_is_load=False)

        if sub == SubState.INITIAL_APPROACH and event.name == "GoalReached":
            self.sub = SubState.POSE_DETECTION
            return [Action("pose_detect", dict(kind="footprint", color=None))]
        if sub == SubState.POSE_DETECTION and event.name == "PoseEstimated":
            if self.wall_pose is None:  # memorized exactly once, never cleared
                self.wall_pose = event.pose
            return self._cell_alignment(robot_pose)
        if sub == SubState.ALIGNMENT and event.name == "AlignmentReached":
            self.sub = SubState.FINAL_APPROACH
            cell = self._current_cell()
            return [Action("local_approach", dict(kind="cell", color=task.color,
                                                  d_r=self.cfg.final_cell,
                                                  final=True,
                                                  cell=cell))]
        if sub == SubState.FINAL_APPROACH and event.name == "WithinReach":
            self.sub = SubState.BRICK_DROP
            cell = self._current_cell()
            row = self.cell_index_row()
            return [Action("drop", dict(color=task.color, cell=cell,
                                        support_z=row * self.h_b))]
        if sub == SubState.BRICK_DROP and event.name == "DropDone":
            self.cell_index += 1
            self._advance_task()
            return self._after_task_advance_nav_pending()
        raise InvalidEvent(f"{event.name} in UnloadBricks/{sub.value}")

    def cell_index_row(self) -> int:
        count = 0
        for row_idx, row in enumerate(self.blueprint):
            if self.cell_index < count + len(row):
                return row_idx
            count += len(row)
        return max(0, len(self.blueprint) - 1)

    def snapshot(self) -> dict:
        task = self.current_task()
        return {
            "state": self.top.value,
            "sub_state": self.sub.value,
            "task": task.short() if task else None,
            "task_index": self.index,
            "cell_index": self.cell_index,
            "wall_pose_set": self.wall_pose is not None,
        }
