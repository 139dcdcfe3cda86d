"""Detection pipeline: stacks, wall pattern, patch candidates, selection, pose.

Image positions throughout are signed pixels with the origin at the
principal point (x right, y down), matching what the controllers expect:
they drive these coordinates to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import (CameraIntrinsics, FrameTransform, RigidPose,
                       patch_pose_from_endpoints, pixel_to_metric,
                       ray_height_intersect, wrap_axis)
from .render import COLOR_LABELS, MAGENTA, PATCH, YELLOW


class NotVisible(Exception):
    """No pattern pixels in view; caller should rotate the camera."""


class NoDepth(Exception):
    """Candidate region has no valid cloud points."""


class DegenerateHull(Exception):
    pass


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass
class Region:
    rows: np.ndarray
    cols: np.ndarray

    @property
    def area(self) -> int:
        return len(self.rows)

    def centroid_signed(self, k: CameraIntrinsics) -> tuple[float, float]:
        x = float(self.cols.mean()) + 0.5 - k.cx
        y = float(self.rows.mean()) + 0.5 - k.cy
        return x, y

    def corner_points_signed(self, k: CameraIntrinsics) -> np.ndarray:
        """Corners of the row-extreme pixels, in signed coordinates.

        The convex hull of a pixel set equals the hull of each row's
        leftmost and rightmost pixels, so only those corners are emitted;
        fitted rectangles still cover full pixel extents.
        """
        rr, cc = row_extremes(self.rows, self.cols)
        x = cc + 0.5 - k.cx
        y = rr + 0.5 - k.cy
        n = len(rr)
        pts = np.empty((4 * n, 2))
        for i, (dx, dy) in enumerate(((-0.5, -0.5), (0.5, -0.5),
                                      (0.5, 0.5), (-0.5, 0.5))):
            pts[i::4, 0] = x + dx
            pts[i::4, 1] = y + dy
        return pts


def row_extremes(rows: np.ndarray, cols: np.ndarray):
    """Leftmost and rightmost pixel of every row of a region."""
    order = np.lexsort((cols, rows))
    r = rows[order]
    c = cols[order]
    new_row = np.r_[True, r[1:] != r[:-1]]
    first = np.nonzero(new_row)[0]
    last = np.r_[first[1:], len(r)] - 1
    return np.r_[r[first], r[last]], np.r_[c[first], c[last]]


def connected_components(mask: np.ndarray) -> list[Region]:
    """4-connected regions of a boolean mask."""
    labeled, n = ndimage.label(mask, structure=_FOUR_CONN)
    if n == 0:
        return []
    out = []
    objs = ndimage.find_objects(labeled)
    for idx, sl in enumerate(objs, start=1):
        rr, cc = np.nonzero(labeled[sl] == idx)
        out.append(Region(rr + sl[0].start, cc + sl[1].start))
    return out


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, CCW in (x, y); collinear inputs give
    a 2-point hull."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def build(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2:
                ax, ay = chain[-2]
                bx, by = chain[-1]
                if (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) <= 0:
                    chain.pop()
                else:
                    break
            chain.append((p[0], p[1]))
        return chain

    lower = build(pts)
    upper = build(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:
        hull = [tuple(pts[0]), tuple(pts[-1])]
    return np.array(hull)


@dataclass(frozen=True)
class RotatedRect:
    cx: float
    cy: float
    width: float   # short side
    length: float  # long side
    angle: float   # direction of the long side, in (-pi/2, pi/2]

    @property
    def area(self) -> float:
        return self.width * self.length


def min_area_rect(hull: np.ndarray) -> RotatedRect:
    """Minimum-area enclosing rectangle of a convex hull.

    The optimum has one side flush with a hull edge, so only edge
    directions are examined.
    """
    pts = np.asarray(hull, dtype=float)
    if len(pts) < 3:
        raise DegenerateHull(f"hull with {len(pts)} points")
    edges = np.roll(pts, -1, axis=0) - pts
    lens = np.hypot(edges[:, 0], edges[:, 1])
    if np.all(lens < 1e-12):
        raise DegenerateHull("zero-length hull")
    best = None
    for dx, dy, ln in zip(edges[:, 0], edges[:, 1], lens):
        if ln < 1e-12:
            continue
        c, s = dx / ln, dy / ln
        xs = pts[:, 0] * c + pts[:, 1] * s
        ys = -pts[:, 0] * s + pts[:, 1] * c
        w = xs.max() - xs.min()
        h = ys.max() - ys.min()
        area = w * h
        if best is None or area < best[0] - 1e-15:
            mx = (xs.max() + xs.min()) / 2.0
            my = (ys.max() + ys.min()) / 2.0
            best = (area, c * mx - s * my, s * mx + c * my, w, h,
                    math.atan2(dy, dx))
    area, cx, cy, w, h, theta = best
    if w >= h:
        long_side, short_side, angle = w, h, theta
    else:
        long_side, short_side, angle = h, w, theta + math.pi / 2.0
    if abs(long_side - short_side) < 1e-9:
        # square: break the axis tie toward the image x axis
        a0 = wrap_axis(angle)
        a1 = wrap_axis(angle + math.pi / 2.0)
        angle = a0 if abs(a0) <= abs(a1) else a1
    return RotatedRect(cx, cy, short_side, long_side, wrap_axis(angle))


def point_in_hull(p, hull: np.ndarray, tol: float = 1e-9) -> bool:
    if len(hull) < 3:
        return False
    for i in range(len(hull)):
        a = hull[i]
        b = hull[(i + 1) % len(hull)]
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) < -tol:
            return False
    return True


# ---------------------------------------------------------------------------
# Detections


@dataclass
class StackObservation:
    color: str
    x_b: float
    y_b: float
    area: int
    hull: np.ndarray
    region: Region


@dataclass
class PatchCandidate:
    x_p: float
    y_p: float
    area: int
    rect: RotatedRect
    p1: np.ndarray
    p2: np.ndarray
    region: Region
    id: int = -1


@dataclass(frozen=True)
class ScoringWeights:
    """Weights of the candidate desirability score plus hysteresis margin.

    The margin is relative: a challenger must beat the incumbent by
    margin * |incumbent score| to displace it.
    """

    w_x: float = 0.5
    w_y: float = 1.0
    w_A: float = 0.01
    margin: float = 0.10

    def __post_init__(self):
        if min(self.w_x, self.w_y, self.w_A) < 0:
            raise ValueError("weights must be non-negative")


def score(candidate: PatchCandidate, w: ScoringWeights) -> float:
    """Desirability of a patch candidate: centered in x, low in the image,
    large area."""
    return -w.w_x * abs(candidate.x_p) + w.w_y * candidate.y_p + w.w_A * candidate.area


def detect_stacks(labels: np.ndarray, color: str, min_area: int,
                  k: CameraIntrinsics) -> list[StackObservation]:
    """Brick-stack observations for one color, largest area first."""
    mask = labels == COLOR_LABELS[color]
    obs = []
    for region in connected_components(mask):
        if region.area < min_area:
            continue
        x_b, y_b = region.centroid_signed(k)
        hull = convex_hull(region.corner_points_signed(k))
        obs.append(StackObservation(color, x_b, y_b, region.area, hull, region))
    obs.sort(key=lambda o: -o.area)
    return obs


def pattern_mask(labels: np.ndarray) -> np.ndarray:
    return (labels == YELLOW) | (labels == MAGENTA)


def detect_footprint(labels: np.ndarray, k: CameraIntrinsics) -> tuple[float, float]:
    """Rightmost pattern pixel (max image x, ties to the smaller y)."""
    rows, cols = np.nonzero(pattern_mask(labels))
    if len(rows) == 0:
        raise NotVisible("no pattern pixels in view")
    cmax = cols.max()
    at = rows[cols == cmax]
    return (float(cmax) + 0.5 - k.cx, float(at.min()) + 0.5 - k.cy)


def extract_patch_candidates(labels: np.ndarray, stack_hull: np.ndarray,
                             k: CameraIntrinsics,
                             rect_min: float = 0.85) -> list[PatchCandidate]:
    """Rectangle-like patch regions inside the stack's convex hull."""
    out = []
    for region in connected_components(labels == PATCH):
        if region.area < 9:
            continue
        x_p, y_p = region.centroid_signed(k)
        if not point_in_hull((x_p, y_p), stack_hull):
            continue
        hull = convex_hull(region.corner_points_signed(k))
        try:
            rect = min_area_rect(hull)
        except DegenerateHull:
            continue
        if rect.area <= 0 or region.area / rect.area < rect_min:
            continue
        d = np.array([math.cos(rect.angle), math.sin(rect.angle)])
        c = np.array([rect.cx, rect.cy])
        half = rect.length / 2.0
        out.append(PatchCandidate(x_p, y_p, region.area, rect,
                                  c - d * half, c + d * half, region))
    return out


# ---------------------------------------------------------------------------
# Tracking with hysteresis


@dataclass
class Track:
    x: float
    y: float
    area: int
    score: float
    age: int = 0


@dataclass
class TrackerState:
    """Frame-to-frame patch identities plus the hysteresis selection."""

    gate_radius: float = 30.0
    max_age: int = 3
    tracks: dict = field(default_factory=dict)
    selected_id: int = -1
    next_id: int = 0
    switches: int = 0

    def reset(self):
        self.tracks.clear()
        self.selected_id = -1


def track_and_select(tracker: TrackerState, detections: list[PatchCandidate],
                     weights: ScoringWeights) -> PatchCandidate | None:
    """Update identities and the selected candidate; returns the selected
    detection of THIS frame, or None if the incumbent is momentarily unseen.

    New candidates displace the incumbent only when their score exceeds
    it by the hysteresis margin; an incumbent missing for more than
    max_age frames is dropped and the best current candidate takes over.
    """
    # nearest-neighbor matching, greedy over ascending distance
    pairs = []
    for tid, tr in tracker.tracks.items():
        for j, det in enumerate(detections):
            d = math.hypot(det.x_p - tr.x, det.y_p - tr.y)
            if d <= tracker.gate_radius:
                pairs.append((d, tid, j))
    pairs.sort(key=lambda p: p[0])
    matched_t, matched_d = set(), set()
    assign = {}
    for d, tid, j in pairs:
        if tid in matched_t or j in matched_d:
            continue
        matched_t.add(tid)
        matched_d.add(j)
        assign[j] = tid

    for j, det in enumerate(detections):
        if j in assign:
            tid = assign[j]
            tr = tracker.tracks[tid]
            tr.x, tr.y, tr.area, tr.age = det.x_p, det.y_p, det.area, 0
            tr.score = score(det, weights)
        else:
            tid = tracker.next_id
            tracker.next_id += 1
            tracker.tracks[tid] = Track(det.x_p, det.y_p, det.area,
                                        score(det, weights))
            assign[j] = tid
        det.id = assign[j]

    updated = set(assign.values())
    for tid in list(tracker.tracks):
        if tid not in updated:
            tracker.tracks[tid].age += 1
            if tracker.tracks[tid].age > tracker.max_age:
                del tracker.tracks[tid]

    by_id = {det.id: det for det in detections}

    if tracker.selected_id not in tracker.tracks:
        tracker.selected_id = -1
    if tracker.selected_id < 0:
        if detections:
            best = max(detections, key=lambda d: score(d, weights))
            if tracker.selected_id != best.id:
                tracker.selected_id = best.id
            return best
        return None

    incumbent = tracker.tracks[tracker.selected_id]
    challengers = [d for d in detections if d.id != tracker.selected_id]
    if challengers:
        best = max(challengers, key=lambda d: score(d, weights))
        margin = weights.margin * abs(incumbent.score)
        if score(best, weights) > incumbent.score + margin:
            tracker.selected_id = best.id
            tracker.switches += 1
            return best
    return by_id.get(tracker.selected_id)


# ---------------------------------------------------------------------------
# Metric pose estimation


def estimate_patch_pose(candidate: PatchCandidate, cam_to_base: FrameTransform,
                        k: CameraIntrinsics, cloud: np.ndarray,
                        h_b: float) -> tuple[RigidPose, int]:
    """Planar patch pose in L_B from camera rays and the cloud height.

    The stack height is the median cloud z over the candidate's pixels,
    snapped to the nearest positive multiple of the brick height.  Every
    candidate pixel is cast from the camera center onto that plane and
    the enclosing rectangle is fitted to the metric points; its major
    axis endpoints give the pose.  Fitting in the metric plane instead
    of image space keeps the axis observable under foreshortening, which
    flips the apparent major axis of near-face-on patches.
    """
    zs = cloud[candidate.region.rows, candidate.region.cols, 2]
    zs = zs[np.isfinite(zs)]
    if len(zs) == 0:
        raise NoDepth("candidate region has no valid cloud points")
    n = max(1, round(float(np.median(zs)) / h_b))
    height = n * h_b

    rr, cc = row_extremes(candidate.region.rows, candidate.region.cols)
    pts = ground_points(rr, cc, cam_to_base, k, height=height)
    if len(pts) < 3:
        raise NoDepth("candidate rays do not reach the patch plane")
    rect = min_area_rect(convex_hull(pts))
    d = np.array([math.cos(rect.angle), math.sin(rect.angle)])
    c = np.array([rect.cx, rect.cy, height])
    half = rect.length / 2.0
    e1 = c - np.array([d[0], d[1], 0.0]) * half
    e2 = c + np.array([d[0], d[1], 0.0]) * half
    pose = patch_pose_from_endpoints(e1, e2)
    return pose, n


def ground_points(rows: np.ndarray, cols: np.ndarray,
                  cam_to_base: FrameTransform, k: CameraIntrinsics,
                  height: float = 0.0) -> np.ndarray:
    """Rays through the given pixels intersected with the plane z = height."""
    d_c = np.column_stack([(cols + 0.5 - k.cx) / k.focal_px,
                           (rows + 0.5 - k.cy) / k.focal_px,
                           np.ones(len(rows))])
    dirs = d_c @ cam_to_base.rotation_matrix.T
    origin = cam_to_base.translation
    dz = dirs[:, 2]
    keep = dz < -1e-9
    t = (origin[2] - height) / -dz[keep]
    return origin[:2] + dirs[keep, :2] * t[:, None]


def estimate_footprint_pose(labels: np.ndarray, cam_to_base: FrameTransform,
                            k: CameraIntrinsics) -> RigidPose:
    """Pose of the pattern's rightmost corner in L_B.

    Every pattern pixel is cast from the camera center onto the ground
    plane; the enclosing rectangle is fitted to the ground points, which
    removes the perspective distortion a purely image-space fit keeps.
    Yaw points from the corner along the pattern, so the wall extends in
    the +yaw direction.
    """
    rows, cols = np.nonzero(pattern_mask(labels))
    if len(rows) == 0:
        raise NotVisible("no pattern pixels in view")
    # the pixel-to-ground map is projective on the ground plane, so hull
    # vertices can only come from row-extreme pixels
    rows, cols = row_extremes(rows, cols)
    pts = ground_points(rows, cols, cam_to_base, k)
    if len(pts) < 3:
        raise NotVisible("pattern pixels do not hit the ground")
    rect = min_area_rect(convex_hull(pts))
    d = np.array([math.cos(rect.angle), math.sin(rect.angle)])
    c = np.array([rect.cx, rect.cy])
    ends = [c - d * rect.length / 2.0, c + d * rect.length / 2.0]
    # the corner the robot servos to is the one on its right (-y in L_B)
    ends.sort(key=lambda p: p[1])
    corner, far = ends[0], ends[1]
    yaw = math.atan2(far[1] - corner[1], far[0] - corner[0])
    return RigidPose(corner[0], corner[1], 0.0, 0.0, 0.0, yaw)


def to_map_frame(pose: RigidPose, t_m_l: FrameTransform) -> RigidPose:
    """Express an L_B pose in the map frame via the localization estimate."""
    return t_m_l.apply_pose(pose)


def object_distance(region: Region, cloud: np.ndarray) -> float | None:
    """Closest forward distance over the region's cloud points."""
    xs = cloud[region.rows, region.cols, 0]
    xs = xs[np.isfinite(xs)]
    if len(xs) == 0:
        return None
    return float(xs.min())


@dataclass(frozen=True)
class VisionConfig:
    # rect_min gates on contour_area / fitted_rect_area; projected patch
    # rectangles shear below 0.7 at oblique viewpoints, so the gate sits
    # well under the face-on value of ~0.95
    min_stack_area: int = 400      # px^2 at 640x480, scaled by area ratio
    rect_min: float = 0.55
    gate_radius: float = 30.0
    max_age: int = 3
    weights: ScoringWeights = field(default_factory=ScoringWeights)

    def stack_area_for(self, k: CameraIntrinsics) -> int:
        return max(9, int(self.min_stack_area * (k.width * k.height) / (640 * 480)))
