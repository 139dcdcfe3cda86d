"""Ground-truth arena model: bricks, stacks, wall footprint, robot state.

Everything here is kinematic.  Bricks have no mass; grasping and contact
are geometric predicates with configurable tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import RigidPose, axis_difference, wrap_angle

COLORS = ("red", "green", "blue", "orange")


class AlreadyPicked(Exception):
    pass


class GraspFailed(Exception):
    def __init__(self, offset: float, yaw_err: float):
        super().__init__(f"grasp misaligned: offset {offset:.3f} m, yaw {math.degrees(yaw_err):.1f} deg")
        self.offset = offset
        self.yaw_err = yaw_err


class NoBrickAttached(Exception):
    pass


class BasketFull(Exception):
    pass


class BrickUnavailable(Exception):
    pass


@dataclass(frozen=True)
class BrickSpec:
    """Dimensions of one brick type and the ferromagnetic patch on top."""

    color: str
    length: float
    width: float
    height: float
    patch_length: float
    patch_width: float
    slot_cost: int

    def __post_init__(self):
        if self.patch_length > self.length or self.patch_width > self.width:
            raise ValueError("patch must fit on the brick top face")
        if self.height <= 0:
            raise ValueError("brick height must be positive")


# Desk-scale defaults in the MBZIRC style; every field can be overridden
# from the scenario file.  The red patch is kept narrower than its length
# so the major axis stays well defined.
BRICK_HEIGHT = 0.20

DEFAULT_BRICKS: dict[str, BrickSpec] = {
    "red": BrickSpec("red", 0.30, 0.20, BRICK_HEIGHT, 0.15, 0.10, 1),
    "green": BrickSpec("green", 0.60, 0.20, BRICK_HEIGHT, 0.30, 0.15, 2),
    "blue": BrickSpec("blue", 1.20, 0.20, BRICK_HEIGHT, 0.60, 0.15, 4),
    "orange": BrickSpec("orange", 1.80, 0.20, BRICK_HEIGHT, 0.90, 0.15, 4),
}


def rect_corners(cx: float, cy: float, length: float, width: float, yaw: float) -> np.ndarray:
    """CCW corners of a rectangle centered at (cx, cy), long side along yaw."""
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of `subject` by convex CCW `clip`."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = (b[0] - a[0], b[1] - a[1])
        inputs, output = output, []
        if not inputs:
            break

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0

        prev = inputs[-1]
        prev_in = inside(prev)
        for cur in inputs:
            cur_in = inside(cur)
            if cur_in != prev_in:
                # intersection of segment prev-cur with the clip edge line
                dx, dy = cur[0] - prev[0], cur[1] - prev[1]
                denom = edge[0] * dy - edge[1] * dx
                t = (edge[0] * (a[1] - prev[1]) - edge[1] * (a[0] - prev[0])) / denom
                output.append((prev[0] + t * dx, prev[1] + t * dy))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output) if output else np.zeros((0, 2))


def rect_overlap_fraction(inner: np.ndarray, outer: np.ndarray) -> float:
    """Fraction of polygon `inner`'s area lying within convex `outer`."""
    a = polygon_area(inner)
    if a <= 0:
        return 0.0
    clipped = clip_polygon(inner, outer)
    if len(clipped) < 3:
        return 0.0
    return float(polygon_area(clipped) / a)


def point_in_rect(p, cx, cy, length, width, yaw) -> bool:
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = p[0] - cx, p[1] - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return abs(u) <= length / 2.0 and abs(v) <= width / 2.0


@dataclass
class BrickStack:
    """A stack of same-colored bricks: `layers` high, `columns` side by side.

    Bricks lie with their long axis along the stack yaw; columns are
    spaced along the perpendicular direction.
    """

    color: str
    x: float
    y: float
    yaw: float
    layers: int = 1
    columns: int = 1
    gap: float = 0.02
    picked: np.ndarray = field(default=None)  # bool [layers, columns]
    spec: BrickSpec = None

    def __post_init__(self):
        if self.spec is None:
            self.spec = DEFAULT_BRICKS[self.color]
        if self.picked is None:
            self.picked = np.zeros((self.layers, self.columns), dtype=bool)

    def brick_center(self, layer: int, col: int) -> np.ndarray:
        off = (col - (self.columns - 1) / 2.0) * (self.spec.width + self.gap)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([self.x - s * off, self.y + c * off,
                         (layer + 0.5) * self.spec.height])

    def brick_top(self, layer: int) -> float:
        return (layer + 1) * self.spec.height

    def top_unpicked(self, col: int) -> int | None:
        for layer in range(self.layers - 1, -1, -1):
            if not self.picked[layer, col]:
                return layer
        return None

    def exposed_bricks(self):
        """(layer, col) of every brick whose patch is currently visible."""
        out = []
        for col in range(self.columns):
            layer = self.top_unpicked(col)
            if layer is not None:
                out.append((layer, col))
        return out

    def remaining(self) -> int:
        return int((~self.picked).sum())

    def patch_pose(self, layer: int, col: int) -> RigidPose:
        center = self.brick_center(layer, col)
        return RigidPose(center[0], center[1], self.brick_top(layer),
                         0.0, 0.0, self.yaw)


def ground_truth_patch_pose(stack: BrickStack, layer: int, col: int) -> RigidPose:
    """Oracle pose of the patch atop a specific brick, in L_M."""
    if stack.picked[layer, col]:
        raise AlreadyPicked(f"brick ({layer},{col}) of {stack.color} stack already picked")
    return stack.patch_pose(layer, col)


@dataclass
class WallFootprint:
    """Ground pattern marking the wall site.

    The pose is that of the rightmost corner as seen from the approach
    side: the pattern extends from (x, y) along the yaw direction for
    `length` meters, centered across `width`.
    """

    x: float
    y: float
    yaw: float
    length: float
    width: float
    blueprint: list[list[str]] = field(default_factory=list)

    def axis(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw)])

    def normal(self) -> np.ndarray:
        return np.array([-math.sin(self.yaw), math.cos(self.yaw)])

    def center(self) -> np.ndarray:
        return np.array([self.x, self.y]) + self.axis() * (self.length / 2.0)

    def corners(self) -> np.ndarray:
        c = self.center()
        return rect_corners(c[0], c[1], self.length, self.width, self.yaw)

    def to_local(self, p) -> np.ndarray:
        """Pattern frame: u along the wall axis from the corner, v lateral."""
        d = np.array([p[0] - self.x, p[1] - self.y])
        return np.array([float(d @ self.axis()), float(d @ self.normal())])


@dataclass
class EffectorState:
    """End-effector (gripper center) pose in L_B plus camera pitch/yaw."""

    x: float = 0.30
    y: float = 0.0
    z: float = 0.60
    pitch: float = 0.6  # camera pitch from horizontal
    yaw: float = 0.0

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def gripper_axis_yaw(self) -> float:
        """World-less yaw of the gripper long axis within L_B.

        The gripper's long side runs along the effector y axis, so a
        zero effector yaw grips a brick lying across the robot.
        """
        return self.yaw + math.pi / 2.0


@dataclass
class AttachedBrick:
    spec: BrickSpec
    # grasp offset, stored in the gripper frame so misalignment at pickup
    # carries through to placement
    du: float = 0.0
    dv: float = 0.0
    dyaw: float = 0.0


@dataclass
class PlacedBrick:
    spec: BrickSpec
    pose: RigidPose
    inside_fraction: float = 0.0
    yaw_error: float = 0.0


@dataclass
class Basket:
    """Brick containers on the platform; capacity counted in slot units."""

    capacity: int = 4
    contents: list = field(default_factory=list)  # (color, start_slot, cost), LIFO

    def used(self) -> int:
        return sum(c[2] for c in self.contents)

    def free(self) -> int:
        return self.capacity - self.used()

    def store(self, color: str, cost: int) -> int:
        if cost > self.free():
            raise BasketFull(f"{color} needs {cost} slots, {self.free()} free")
        slot = self.used()
        self.contents.append((color, slot, cost))
        return slot

    def next_for(self, color: str) -> int:
        for entry in reversed(self.contents):
            if entry[0] == color:
                return entry[1]
        raise BrickUnavailable(f"no {color} brick in basket")

    def remove(self, slot: int) -> str:
        for i in range(len(self.contents) - 1, -1, -1):
            if self.contents[i][1] == slot:
                return self.contents.pop(i)[0]
        raise BrickUnavailable(f"no brick at slot {slot}")

    def colors(self) -> list[str]:
        return [c[0] for c in self.contents]


@dataclass
class WorldState:
    """Complete mutable simulation state, owned by the simulation loop."""

    stacks: list[BrickStack] = field(default_factory=list)
    footprint: WallFootprint | None = None
    robot: RigidPose = field(default_factory=RigidPose)
    effector: EffectorState = field(default_factory=EffectorState)
    basket: Basket = field(default_factory=Basket)
    attached: AttachedBrick | None = None
    magnet_on: bool = False
    placed: list[PlacedBrick] = field(default_factory=list)
    clock: float = 0.0
    brick_specs: dict = field(default_factory=lambda: dict(DEFAULT_BRICKS))
    grasp_radius: float = 0.05
    eps_contact: float = 0.002
    initial_bricks: int = field(default=-1)

    def __post_init__(self):
        if self.initial_bricks < 0:
            self.initial_bricks = sum(s.remaining() for s in self.stacks)

    # -- frames -------------------------------------------------------

    def gripper_point_map(self) -> np.ndarray:
        """Gripper center in L_M (planar) plus its face height."""
        c, s = math.cos(self.robot.yaw), math.sin(self.robot.yaw)
        ex, ey = self.effector.x, self.effector.y
        return np.array([self.robot.x + c * ex - s * ey,
                         self.robot.y + s * ex + c * ey,
                         self.effector.z])

    def gripper_axis_yaw_map(self) -> float:
        return wrap_angle(self.robot.yaw + self.effector.gripper_axis_yaw())

    # -- surface queries ----------------------------------------------

    def support_below(self, x: float, y: float, include_ground: bool = False):
        """Highest surface under (x, y): (z, kind, payload) or None.

        Surfaces are exposed stack patches and placed bricks; bare ground
        only counts when include_ground is set (brick drops).
        """
        best = None
        for stack in self.stacks:
            for layer, col in stack.exposed_bricks():
                center = stack.brick_center(layer, col)
                if point_in_rect((x, y), center[0], center[1],
                                 stack.spec.length, stack.spec.width, stack.yaw):
                    z = stack.brick_top(layer)
                    if best is None or z > best[0]:
                        best = (z, "stack", (stack, layer, col))
        for pb in self.placed:
            if point_in_rect((x, y), pb.pose.x, pb.pose.y,
                             pb.spec.length, pb.spec.width, pb.pose.yaw):
                z = pb.pose.z + pb.spec.height
                if best is None or z > best[0]:
                    best = (z, "placed", pb)
        if best is None and include_ground:
            best = (0.0, "ground", None)
        return best

    def contact_triggered(self) -> bool:
        """Microswitch on the gripper face: touching the surface beneath."""
        g = self.gripper_point_map()
        face_z = g[2]
        if self.attached is not None:
            face_z -= self.attached.spec.height
        support = self.support_below(g[0], g[1], include_ground=self.attached is not None)
        if support is None:
            return False
        return face_z - support[0] <= self.eps_contact

    # -- grasp / release ----------------------------------------------

    def attach_brick(self) -> tuple:
        """Grab the brick under the gripper; raises GraspFailed on misalignment.

        Returns (stack, layer, col) of the brick taken.
        """
        if not self.magnet_on:
            raise GraspFailed(float("inf"), 0.0)
        if not self.contact_triggered():
            raise GraspFailed(float("inf"), 0.0)
        g = self.gripper_point_map()
        support = self.support_below(g[0], g[1])
        if support is None or support[1] != "stack":
            raise GraspFailed(float("inf"), 0.0)
        stack, layer, col = support[2]
        patch = stack.patch_pose(layer, col)
        offset = math.hypot(g[0] - patch.x, g[1] - patch.y)
        yaw_err = axis_difference(self.gripper_axis_yaw_map(), patch.yaw)
        if offset > self.grasp_radius or abs(yaw_err) > math.radians(10.0):
            raise GraspFailed(offset, yaw_err)
        # grasp offset in the gripper frame (u along gripper long axis)
        ga = self.gripper_axis_yaw_map()
        c, s = math.cos(ga), math.sin(ga)
        dx, dy = patch.x - g[0], patch.y - g[1]
        stack.picked[layer, col] = True
        self.attached = AttachedBrick(stack.spec,
                                      du=c * dx + s * dy,
                                      dv=-s * dx + c * dy,
                                      dyaw=-yaw_err)
        return stack, layer, col

    def attached_brick_pose(self) -> RigidPose:
        """Current pose of the carried brick (center), in L_M."""
        if self.attached is None:
            raise NoBrickAttached()
        g = self.gripper_point_map()
        ga = self.gripper_axis_yaw_map()
        c, s = math.cos(ga), math.sin(ga)
        bx = g[0] + c * self.attached.du - s * self.attached.dv
        by = g[1] + s * self.attached.du + c * self.attached.dv
        return RigidPose(bx, by, g[2] - self.attached.spec.height / 2.0,
                         0.0, 0.0, wrap_angle(ga + self.attached.dyaw))

    def place_brick(self, release_pose: RigidPose | None = None) -> PlacedBrick:
        """Release the carried brick; it settles on whatever is beneath.

        Returns the placement record with the fraction of the brick
        footprint inside the wall pattern and the yaw error against the
        pattern axis.
        """
        if self.attached is None:
            raise NoBrickAttached()
        spec = self.attached.spec
        pose = release_pose if release_pose is not None else self.attached_brick_pose()
        support = self.support_below(pose.x, pose.y, include_ground=True)
        base_z = support[0] if support else 0.0
        settled = RigidPose(pose.x, pose.y, base_z, 0.0, 0.0, pose.yaw)
        inside = 0.0
        yaw_err = 0.0
        if self.footprint is not None:
            brick_poly = rect_corners(pose.x, pose.y, spec.length, spec.width, pose.yaw)
            inside = rect_overlap_fraction(brick_poly, self.footprint.corners())
            yaw_err = axis_difference(pose.yaw, self.footprint.yaw)
        record = PlacedBrick(spec, settled, inside_fraction=inside, yaw_error=yaw_err)
        self.placed.append(record)
        self.attached = None
        self.magnet_on = False
        return record

    def stash_attached(self) -> int:
        """Move the carried brick into a basket slot."""
        if self.attached is None:
            raise NoBrickAttached()
        slot = self.basket.store(self.attached.spec.color, self.attached.spec.slot_cost)
        self.attached = None
        self.magnet_on = False
        return slot

    def fetch_from_basket(self, color: str) -> int:
        """Re-attach the most recently stored brick of a color."""
        slot = self.basket.next_for(color)
        self.basket.remove(slot)
        self.attached = AttachedBrick(self.brick_specs[color])
        self.magnet_on = True
        return slot

    # -- bookkeeping ----------------------------------------------------

    def brick_census(self) -> dict:
        return {
            "in_stack": sum(s.remaining() for s in self.stacks),
            "in_basket": len(self.basket.contents),
            "attached": 1 if self.attached is not None else 0,
            "placed": len(self.placed),
        }

    def conserved(self) -> bool:
        return sum(self.brick_census().values()) == self.initial_bricks


def stack_for_color(world: WorldState, color: str) -> BrickStack | None:
    for stack in world.stacks:
        if stack.color == color and stack.remaining() > 0:
            return stack
    return None
