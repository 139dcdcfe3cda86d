import math

import pytest

from wallsim.geometry import RigidPose
from wallsim.mission import (Action, BrickTask, Event, InfeasibleBrick,
                             InvalidEvent, MissionConfig, MissionStateMachine,
                             SubState, TaskKind, TopState, alignment_goal,
                             drop_target, plan_sequence)

COSTS = {"red": 1, "green": 2, "blue": 4, "orange": 4}
LENGTHS = {"red": 0.3, "green": 0.6, "blue": 1.2, "orange": 1.8}


def short(tasks):
    return [t.short() for t in tasks]


class TestPlanSequence:
    def test_two_reds_one_batch(self):
        tasks = plan_sequence([["red", "red"]], COSTS, 4)
        assert short(tasks) == ["LR", "LR", "BR", "BR"]

    def test_blue_one_per_trip(self):
        tasks = plan_sequence([["blue", "blue"]], COSTS, 4)
        assert short(tasks) == ["LB", "BB", "LB", "BB"]

    def test_greedy_batching_hand_simulated(self):
        # hand-simulated greedy batching oracle for [R, G, B], capacity 4:
        # R(1)+G(2) fit; B(4) overflows -> build R, G; then load B, build B
        tasks = plan_sequence([["red", "green", "blue"]], COSTS, 4)
        assert short(tasks) == ["LR", "LG", "BR", "BG", "LB", "BB"]

    def test_infeasible(self):
        with pytest.raises(InfeasibleBrick):
            plan_sequence([["orange"]], COSTS, 3)

    def test_build_order_is_wall_order(self):
        tasks = plan_sequence([["green", "red"]], COSTS, 4)
        builds = [t for t in tasks if t.kind == TaskKind.BUILD]
        assert [t.color for t in builds] == ["green", "red"]

    def test_rows_bottom_up(self):
        tasks = plan_sequence([["red"], ["green"]], COSTS, 4)
        loads = [t.color for t in tasks if t.kind == TaskKind.LOAD]
        assert loads == ["red", "green"]


class TestAlignmentGoal:
    def test_robot_south(self):
        goal = alignment_goal(RigidPose(5, 5, yaw=0.0), 1.2,
                              RigidPose(5, 0, yaw=0.0))
        assert goal.x == pytest.approx(5.0)
        assert goal.y == pytest.approx(5.0 - 1.2)
        assert goal.yaw == pytest.approx(math.pi / 2)

    def test_robot_north(self):
        goal = alignment_goal(RigidPose(5, 5, yaw=0.0), 1.2,
                              RigidPose(5, 10, yaw=0.0))
        assert goal.y == pytest.approx(5.0 + 1.2)
        assert goal.yaw == pytest.approx(-math.pi / 2)

    def test_goal_perpendicular_to_axis(self):
        obj = RigidPose(2, 3, yaw=math.radians(40))
        goal = alignment_goal(obj, 1.0, RigidPose(0, 0))
        to_obj = math.atan2(obj.y - goal.y, obj.x - goal.x)
        assert abs(math.sin(to_obj - obj.yaw)) == pytest.approx(1.0, abs=1e-9)


class TestDropTarget:
    POSE = RigidPose(10.0, 2.0, yaw=0.0)

    def test_first_cell_abuts_corner(self):
        cell = drop_target([["red", "red"]], 0, self.POSE, LENGTHS, 0.2)
        assert cell.x == pytest.approx(10.0 + 0.15)
        assert cell.z == 0.0

    def test_cumulative_offset(self):
        cell = drop_target([["red", "red"]], 1, self.POSE, LENGTHS, 0.2)
        assert cell.x == pytest.approx(10.0 + 0.3 + 0.15)

    def test_second_row_height(self):
        cell = drop_target([["red"], ["red"]], 1, self.POSE, LENGTHS, 0.2)
        assert cell.z == pytest.approx(0.2)
        assert cell.x == pytest.approx(10.15)

    def test_missing_wall_pose(self):
        from wallsim.mission import MissingWallPose
        with pytest.raises(MissingWallPose):
            drop_target([["red"]], 0, None, LENGTHS, 0.2)


def machine(tasks=None, blueprint=None):
    blueprint = blueprint if blueprint is not None else [["green", "red"]]
    if tasks is None:
        tasks = plan_sequence(blueprint, COSTS, 4)
    return MissionStateMachine(
        blueprint, tasks,
        stack_areas={"red": (6.0, 0.0), "green": (6.0, 2.0), "blue": (6.0, -2.0)},
        footprint_area=(1.0, 5.0),
        brick_lengths=LENGTHS, h_b=0.2, config=MissionConfig())


ROBOT = RigidPose(0.0, 0.0, yaw=0.0)


class TestStateMachine:
    def test_start_goes_to_stacks(self):
        m = machine()
        acts = m.start(ROBOT)
        assert acts[0].name == "nav_goal"
        assert acts[0].data["purpose"] == "stacks"
        assert m.top == TopState.GO_TO_STACKS

    def test_load_cycle_transitions(self):
        m = machine()
        m.start(ROBOT)
        acts = m.step(Event("GoalReached"), ROBOT)
        assert m.top == TopState.LOAD_BRICKS
        assert m.sub == SubState.INITIAL_APPROACH
        assert acts[0].name == "local_approach"
        acts = m.step(Event("GoalReached"), ROBOT)
        assert m.sub == SubState.POSE_DETECTION
        assert acts[0].name == "pose_detect"
        pose = RigidPose(5.5, 1.8, yaw=0.3)
        acts = m.step(Event("PoseEstimated", pose=pose), ROBOT)
        assert m.sub == SubState.ALIGNMENT
        assert acts[0].name == "nav_goal"
        assert acts[0].data["purpose"] == "alignment"
        acts = m.step(Event("AlignmentReached"), ROBOT)
        assert m.sub == SubState.FINAL_APPROACH
        acts = m.step(Event("WithinReach"), ROBOT)
        assert m.sub == SubState.BRICK_PICKUP
        assert acts[0].name == "pickup"

    def run_to_pickup(self, m):
        m.start(ROBOT)
        m.step(Event("GoalReached"), ROBOT)
        m.step(Event("GoalReached"), ROBOT)
        m.step(Event("PoseEstimated", pose=RigidPose(5.5, 1.8)), ROBOT)
        m.step(Event("AlignmentReached"), ROBOT)
        m.step(Event("WithinReach"), ROBOT)

    def test_pickup_done_batch_continues(self):
        m = machine(blueprint=[["green", "red"]])
        self.run_to_pickup(m)
        acts = m.step(Event("PickupDone"), ROBOT)
        # next task is LR, stacks area near the robot? robot far -> nav
        assert m.current_task().short() == "LR"
        assert acts[0].name in ("nav_goal", "local_approach")

    def test_batch_done_goes_to_wall(self):
        m = machine(blueprint=[["green"]])
        self.run_to_pickup(m)
        acts = m.step(Event("PickupDone"), ROBOT)
        assert m.top == TopState.GO_TO_WALL
        assert acts[0].data["purpose"] == "wall"

    def test_unload_first_time_runs_detection(self):
        m = machine(blueprint=[["green"]])
        self.run_to_pickup(m)
        m.step(Event("PickupDone"), ROBOT)
        acts = m.step(Event("GoalReached"), ROBOT)
        assert m.top == TopState.UNLOAD_BRICKS
        assert m.sub == SubState.INITIAL_APPROACH
        assert acts[0].data["kind"] == "footprint"

    def test_unload_memorized_pose_skips_to_alignment(self):
        # the defining shortcut: with a memorized wall pose the whole
        # two-stage approach collapses to Alignment directly
        m = machine(blueprint=[["green", "red"]],
                    tasks=[BrickTask(TaskKind.BUILD, "green"),
                           BrickTask(TaskKind.BUILD, "red")])
        m.wall_pose = RigidPose(1.0, 5.0, yaw=0.1)
        acts = m.start(ROBOT)
        assert m.top == TopState.GO_TO_WALL
        acts = m.step(Event("GoalReached"), ROBOT)
        assert m.top == TopState.UNLOAD_BRICKS
        assert m.sub == SubState.ALIGNMENT
        assert acts[0].name == "nav_goal"

    def test_wall_pose_written_once(self):
        m = machine(blueprint=[["green"]],
                    tasks=[BrickTask(TaskKind.BUILD, "green")])
        m.start(ROBOT)
        m.step(Event("GoalReached"), ROBOT)
        m.step(Event("GoalReached"), ROBOT)
        first = RigidPose(1.0, 5.0, yaw=0.05)
        m.step(Event("PoseEstimated", pose=first), ROBOT)
        assert m.wall_pose is first
        # a later estimate must not overwrite it
        m.sub = SubState.POSE_DETECTION
        m.step(Event("PoseEstimated", pose=RigidPose(9, 9, yaw=1.0)), ROBOT)
        assert m.wall_pose is first

    def test_retry_then_skip_removes_matching_build(self):
        m = machine(blueprint=[["green"]])
        m.start(ROBOT)
        m.step(Event("GoalReached"), ROBOT)
        for _ in range(3):  # retry_max = 2, third failure skips
            m.step(Event("PatchLost"), ROBOT)
        assert m.top == TopState.DONE
        shorts = [s[0] for s in m.skipped]
        assert "LG" in shorts and "BG" in shorts

    def test_invalid_event_raises(self):
        m = machine()
        m.start(ROBOT)
        with pytest.raises(InvalidEvent):
            m.step(Event("DropDone"), ROBOT)

    def test_unknown_event_rejected(self):
        m = machine()
        m.start(ROBOT)
        with pytest.raises(InvalidEvent):
            m.step(Event("Bogus"), ROBOT)

    def test_task_queue_empty_terminates(self):
        m = machine()
        m.start(ROBOT)
        m.step(Event("TaskQueueEmpty"), ROBOT)
        assert m.top == TopState.DONE

    def test_hints_are_no_ops(self):
        m = machine()
        m.start(ROBOT)
        assert m.step(Event("ObjectDetected"), ROBOT) == []
        assert m.step(Event("BasketFull"), ROBOT) == []

    def test_drop_cycle(self):
        m = machine(blueprint=[["green", "red"]],
                    tasks=[BrickTask(TaskKind.BUILD, "green"),
                           BrickTask(TaskKind.BUILD, "red")])
        m.wall_pose = RigidPose(1.0, 5.0, yaw=0.0)
        m.start(ROBOT)
        m.step(Event("GoalReached"), ROBOT)
        assert m.sub == SubState.ALIGNMENT
        acts = m.step(Event("AlignmentReached"), ROBOT)
        assert m.sub == SubState.FINAL_APPROACH
        assert acts[0].data["kind"] == "cell"
        acts = m.step(Event("WithinReach"), ROBOT)
        assert m.sub == SubState.BRICK_DROP
        assert acts[0].name == "drop"
        assert acts[0].data["support_z"] == 0.0
        acts = m.step(Event("DropDone"), ROBOT)
        # second build with memorized pose goes straight back to Alignment
        assert m.sub == SubState.ALIGNMENT
        assert m.cell_index == 1

    def test_liveness_event_driven(self):
        # the machine reaches Done in a bounded number of events for a
        # normal two-color mission when every behavior succeeds
        m = machine(blueprint=[["green", "red"]])
        m.start(ROBOT)
        guard = 0
        pose = RigidPose(5.5, 1.8, yaw=0.2)
        while m.top != TopState.DONE:
            guard += 1
            assert guard < 60, "machine did not terminate"
            if m.top in (TopState.GO_TO_STACKS, TopState.GO_TO_WALL):
                m.step(Event("GoalReached"), ROBOT)
            elif m.sub == SubState.INITIAL_APPROACH:
                m.step(Event("GoalReached"), ROBOT)
            elif m.sub == SubState.POSE_DETECTION:
                m.step(Event("PoseEstimated", pose=pose), ROBOT)
            elif m.sub == SubState.ALIGNMENT:
                m.step(Event("AlignmentReached"), ROBOT)
            elif m.sub == SubState.FINAL_APPROACH:
                m.step(Event("WithinReach"), ROBOT)
            elif m.sub == SubState.BRICK_PICKUP:
                m.step(Event("PickupDone"), ROBOT)
            elif m.sub == SubState.BRICK_DROP:
                m.step(Event("DropDone"), ROBOT)
            else:
                raise AssertionError(f"unexpected state {m.top}/{m.sub}")
        assert m.cell_index == 2
