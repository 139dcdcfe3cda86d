"""Frames, rigid transforms and the pinhole projection primitives.

Coordinate conventions used throughout the package:

  Map frame L_M (world): right-handed, z up, ground plane z = 0.
  Base frame L_B (robot): x forward, y left, z up; origin on the ground
    under the center of the platform.
  Camera frame L_C: computer-vision convention, x right in the image,
    y down in the image, z along the optical axis.

  Image coordinates are SIGNED pixels with origin at the principal
  point: x right, y down.  A pixel at (row r, col c) has center
  (c + 0.5 - cx, r + 0.5 - cy).

  The camera is carried by the end effector.  Pitch theta is measured
  from horizontal: theta = 0 looks forward, theta = pi/2 looks straight
  down (nadir).

All angles are radians internally; degrees appear only at CLI and
scenario-file boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class FrameMismatch(Exception):
    """Transform applied to data tagged with a different frame."""


class DegenerateRay(Exception):
    """Ray parallel to the horizontal plane; no unique intersection."""


class DegenerateAxis(Exception):
    """Axis endpoints coincide; direction undefined."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a > math.pi:
        a -= TWO_PI
    elif a <= -math.pi:
        a += TWO_PI
    return a


def wrap_axis(a: float) -> float:
    """Normalize the direction of an undirected axis to (-pi/2, pi/2].

    An axis has 180 degree symmetry, so angles that differ by pi are
    the same axis.
    """
    a = math.fmod(a, math.pi)
    if a > math.pi / 2.0:
        a -= math.pi
    elif a <= -math.pi / 2.0:
        a += math.pi
    return a


def axis_difference(a: float, b: float) -> float:
    """Smallest signed angle between two undirected axes, in (-pi/2, pi/2]."""
    return wrap_axis(a - b)


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class RigidPose:
    """Pose of a rigid body: position in meters, z-y-x Euler angles in radians."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "roll", wrap_angle(self.roll))
        object.__setattr__(self, "pitch", wrap_angle(self.pitch))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        return rot_z(self.yaw) @ rot_y(self.pitch) @ rot_x(self.roll)

    def planar_distance(self, other: "RigidPose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def replace(self, **kwargs) -> "RigidPose":
        vals = dict(x=self.x, y=self.y, z=self.z,
                    roll=self.roll, pitch=self.pitch, yaw=self.yaw)
        vals.update(kwargs)
        return RigidPose(**vals)


_ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class FrameTransform:
    """Rigid transform mapping points from `source` frame to `target` frame.

    Stored as a 4x4 homogeneous matrix.  Frame tags are checked on
    composition and application so that transform chains cannot be
    assembled in the wrong order silently.
    """

    matrix: np.ndarray
    source: str
    target: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("transform matrix must be 4x4")
        r = m[:3, :3]
        err = np.linalg.norm(r.T @ r - np.eye(3))
        if err > 1e-6:
            raise ValueError(f"rotation block not orthonormal (residual {err:.2e})")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, frame: str) -> "FrameTransform":
        return cls(np.eye(4), source=frame, target=frame)

    @classmethod
    def from_pose(cls, pose: RigidPose, source: str, target: str) -> "FrameTransform":
        """Transform taking source-frame points into the target frame,
        where `pose` is the pose of the source frame expressed in target."""
        m = np.eye(4)
        m[:3, :3] = pose.rotation()
        m[:3, 3] = pose.position
        return cls(m, source=source, target=target)

    @classmethod
    def from_rotation_translation(cls, r: np.ndarray, t: np.ndarray,
                                  source: str, target: str) -> "FrameTransform":
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = t
        return cls(m, source=source, target=target)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "FrameTransform":
        r = self.matrix[:3, :3].T
        t = -r @ self.matrix[:3, 3]
        return FrameTransform.from_rotation_translation(
            r, t, source=self.target, target=self.source)

    def compose(self, inner: "FrameTransform") -> "FrameTransform":
        """self o inner: first apply `inner`, then `self`."""
        if inner.target != self.source:
            raise FrameMismatch(
                f"cannot compose {self.source}->{self.target} after "
                f"{inner.source}->{inner.target}")
        return FrameTransform(self.matrix @ inner.matrix,
                              source=inner.source, target=self.target)

    def __matmul__(self, inner: "FrameTransform") -> "FrameTransform":
        return self.compose(inner)

    def apply(self, points: np.ndarray, frame: str | None = None) -> np.ndarray:
        """Transform one point (3,) or many (N, 3) into the target frame."""
        if frame is not None and frame != self.source:
            raise FrameMismatch(f"points tagged {frame!r}, transform expects {self.source!r}")
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        out = p @ self.matrix[:3, :3].T + self.matrix[:3, 3]
        return out[0] if single else out

    def apply_pose(self, pose: RigidPose) -> RigidPose:
        """Transform a planar pose (position + yaw about vertical)."""
        p = self.apply(pose.position)
        # yaw of the transformed x-axis direction, valid for transforms
        # whose rotation keeps the vertical axis vertical
        d = self.matrix[:3, :3] @ np.array([math.cos(pose.yaw), math.sin(pose.yaw), 0.0])
        return RigidPose(p[0], p[1], p[2], pose.roll, pose.pitch,
                         math.atan2(d[1], d[0]))


def transform_point(t: FrameTransform, p: np.ndarray, frame: str | None = None) -> np.ndarray:
    return t.apply(p, frame=frame)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model parameters.

    focal_px is the focal length expressed in pixels, focal_mm the same
    physical length in millimeters; their ratio converts signed pixel
    coordinates to metric image-plane coordinates.
    """

    width: int = 640
    height: int = 480
    focal_px: float = 460.0
    focal_mm: float = 1.93
    cx: float = field(default=-1.0)
    cy: float = field(default=-1.0)

    def __post_init__(self):
        if self.cx < 0:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy < 0:
            object.__setattr__(self, "cy", self.height / 2.0)
        if self.focal_px <= 0 or self.focal_mm <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Same field of view at a different resolution."""
        return CameraIntrinsics(width=int(round(self.width * factor)),
                                height=int(round(self.height * factor)),
                                focal_px=self.focal_px * factor,
                                focal_mm=self.focal_mm)


def pixel_to_metric(p: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Signed pixel position -> metric point on the image plane z = focal_mm.

    Total function: x_mm = x_px * z_mm / z_px, same for y.  Output is in
    millimeters, in the camera frame.
    """
    p = np.asarray(p, dtype=float)
    scale = k.focal_mm / k.focal_px
    return np.array([p[0] * scale, p[1] * scale, k.focal_mm])


def ray_height_intersect(cam: np.ndarray, proj: np.ndarray, h: float) -> np.ndarray:
    """Intersect the line through `cam` and `proj` with the plane z = h.

    Both points are in the same frame (normally L_B).  Raises
    DegenerateRay when the ray is parallel to the plane.
    """
    cam = np.asarray(cam, dtype=float)
    proj = np.asarray(proj, dtype=float)
    dz = cam[2] - proj[2]
    if abs(dz) < 1e-9:
        raise DegenerateRay(f"ray parallel to horizontal plane (dz={dz:.3e})")
    t = (cam[2] - h) / dz
    return np.array([cam[0] + t * (proj[0] - cam[0]),
                     cam[1] + t * (proj[1] - cam[1]),
                     h])


def patch_pose_from_endpoints(p1: np.ndarray, p2: np.ndarray) -> RigidPose:
    """Planar pose of an undirected axis from its two endpoints.

    Center is the midpoint, yaw the axis direction canonicalized to
    (-pi/2, pi/2].  Swapping the endpoints yields the identical pose.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    d = p2[:2] - p1[:2]
    if float(np.hypot(d[0], d[1])) <= 1e-6:
        raise DegenerateAxis("endpoints coincide")
    yaw = wrap_axis(math.atan2(d[1], d[0]))
    mid = (p1 + p2) / 2.0
    z = mid[2] if p1.shape[0] > 2 else 0.0
    return RigidPose(mid[0], mid[1], z, 0.0, 0.0, yaw)


# Camera mounting: rotation of the camera frame for a camera looking
# forward (theta = 0), columns are the camera axes in base coordinates:
# image right = -y_B, image down = -z_B, optical axis = +x_B.
_CAM_ALIGN = np.array([[0.0, 0.0, 1.0],
                       [-1.0, 0.0, 0.0],
                       [0.0, -1.0, 0.0]])


def camera_to_base(position: np.ndarray, pitch: float, yaw: float) -> FrameTransform:
    """Transform from camera frame L_C to base frame L_B.

    `position` is the optical center in L_B; pitch from horizontal
    (pi/2 = nadir), yaw about vertical.
    """
    r = rot_z(yaw) @ rot_y(pitch) @ _CAM_ALIGN
    return FrameTransform.from_rotation_translation(
        r, np.asarray(position, dtype=float), source="camera", target="base")


def base_to_map(base_pose: RigidPose) -> FrameTransform:
    """Transform from base frame L_B to map frame L_M for a ground robot pose."""
    return FrameTransform.from_pose(
        RigidPose(base_pose.x, base_pose.y, 0.0, 0.0, 0.0, base_pose.yaw),
        source="base", target="map")


def unicycle_step(x: float, y: float, yaw: float, v: float, w: float,
                  dt: float) -> tuple[float, float, float]:
    """Exact arc integration of unicycle kinematics over one interval."""
    if abs(w) < 1e-12:
        return (x + v * dt * math.cos(yaw),
                y + v * dt * math.sin(yaw),
                yaw)
    r = v / w
    yaw_new = yaw + w * dt
    return (x + r * (math.sin(yaw_new) - math.sin(yaw)),
            y - r * (math.cos(yaw_new) - math.cos(yaw)),
            wrap_angle(yaw_new))
