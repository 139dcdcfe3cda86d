"""Synthetic pinhole RGB-D camera over the arena model.

Rasterizes the ground plane, brick boxes (top and visible side faces),
magnetic patch rectangles and the wall pattern tiles into a label image
plus a depth image, using a z-buffer on optical-axis depth.  Color
classification downstream is exact label matching; real-world HSV
calibration is out of scope, its failure modes are emulated by the
boundary-jitter noise model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, FrameTransform
from .world import WorldState, rect_corners

BACKGROUND = 0
GROUND = 1
RED = 2
GREEN = 3
BLUE = 4
ORANGE = 5
PATCH = 6
YELLOW = 7
MAGENTA = 8

COLOR_LABELS = {"red": RED, "green": GREEN, "blue": BLUE, "orange": ORANGE}

LABEL_RGB = np.array([
    [30, 30, 30],      # background
    [120, 110, 95],    # ground
    [200, 40, 40],     # red brick
    [40, 170, 60],     # green brick
    [40, 70, 200],     # blue brick
    [235, 140, 30],    # orange brick
    [160, 160, 160],   # patch gray
    [230, 220, 40],    # pattern yellow
    [210, 40, 190],    # pattern magenta
], dtype=np.uint8)

DEPTH_SENTINEL = 0.0  # no return

# coplanar-priority pull toward the camera, only for z-buffer comparison
_DECAL_BIAS = 1e-4

_dir_cache: dict = {}


def pixel_directions(k: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ray directions in the camera frame, z component 1."""
    key = (k.width, k.height, k.focal_px, k.cx, k.cy)
    if key not in _dir_cache:
        cols = (np.arange(k.width) + 0.5 - k.cx) / k.focal_px
        rows = (np.arange(k.height) + 0.5 - k.cy) / k.focal_px
        d = np.empty((k.height, k.width, 3), dtype=np.float64)
        d[..., 0] = cols[None, :]
        d[..., 1] = rows[:, None]
        d[..., 2] = 1.0
        _dir_cache[key] = d
    return _dir_cache[key]


@dataclass
class Face:
    label: int
    corners: np.ndarray  # 4x3, rectangle, CCW seen from outside
    bias: float = 0.0


def box_faces(cx: float, cy: float, z0: float, z1: float,
              length: float, width: float, yaw: float, label: int) -> list:
    """Top face plus the four side faces of an upright box."""
    base = rect_corners(cx, cy, length, width, yaw)
    lo = np.column_stack([base, np.full(4, z0)])
    hi = np.column_stack([base, np.full(4, z1)])
    faces = [Face(label, hi[[0, 1, 2, 3]])]
    for i in range(4):
        j = (i + 1) % 4
        faces.append(Face(label, np.array([lo[i], lo[j], hi[j], hi[i]])))
    return faces


def patch_face(cx: float, cy: float, z: float, plen: float, pwid: float,
               yaw: float) -> Face:
    c = rect_corners(cx, cy, plen, pwid, yaw)
    quad = np.column_stack([c, np.full(4, z)])
    return Face(PATCH, quad, bias=_DECAL_BIAS)


def world_faces(world: WorldState) -> list:
    """All renderable rectangles of the current world state."""
    faces = []
    for stack in world.stacks:
        for layer in range(stack.layers):
            for col in range(stack.columns):
                if stack.picked[layer, col]:
                    continue
                c = stack.brick_center(layer, col)
                z0 = layer * stack.spec.height
                z1 = stack.brick_top(layer)
                faces.extend(box_faces(c[0], c[1], z0, z1, stack.spec.length,
                                       stack.spec.width, stack.yaw,
                                       COLOR_LABELS[stack.color]))
                faces.append(patch_face(c[0], c[1], z1, stack.spec.patch_length,
                                        stack.spec.patch_width, stack.yaw))
    for pb in world.placed:
        z0 = pb.pose.z
        z1 = z0 + pb.spec.height
        faces.extend(box_faces(pb.pose.x, pb.pose.y, z0, z1, pb.spec.length,
                               pb.spec.width, pb.pose.yaw,
                               COLOR_LABELS[pb.spec.color]))
        faces.append(patch_face(pb.pose.x, pb.pose.y, z1, pb.spec.patch_length,
                                pb.spec.patch_width, pb.pose.yaw))
    if world.attached is not None:
        bp = world.attached_brick_pose()
        spec = world.attached.spec
        z0 = bp.z - spec.height / 2.0
        faces.extend(box_faces(bp.x, bp.y, z0, z0 + spec.height, spec.length,
                               spec.width, bp.yaw, COLOR_LABELS[spec.color]))
    # bricks inside the cargo baskets are hidden by the container walls
    if world.footprint is not None:
        fp = world.footprint
        n_tiles = max(1, int(math.ceil(fp.length / 0.25)))
        tile = fp.length / n_tiles
        axis = fp.axis()
        for i in range(n_tiles):
            ux = fp.x + axis[0] * (i + 0.5) * tile
            uy = fp.y + axis[1] * (i + 0.5) * tile
            c = rect_corners(ux, uy, tile, fp.width, fp.yaw)
            quad = np.column_stack([c, np.zeros(4)])
            faces.append(Face(YELLOW if i % 2 == 0 else MAGENTA, quad,
                              bias=_DECAL_BIAS))
    return faces


def render_rgbd(world: WorldState, cam_to_map: FrameTransform,
                k: CameraIntrinsics):
    """Rasterize the world into (label image, depth image).

    Depth is along the optical axis in meters; pixels with no return
    hold DEPTH_SENTINEL.  Deterministic for fixed inputs.
    """
    h, w = k.height, k.width
    cam = cam_to_map.translation
    r_wc = cam_to_map.rotation_matrix
    dirs = pixel_directions(k) @ r_wc.T  # world-frame, z-scale 1 on axis

    labels = np.full((h, w), BACKGROUND, dtype=np.uint8)
    depth = np.full((h, w), np.inf)
    zcmp = np.full((h, w), np.inf)

    # ground plane z=0
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dz < -1e-12, -cam[2] / dz, np.inf)
    hit = np.isfinite(t_ground)
    depth[hit] = t_ground[hit]
    zcmp[hit] = t_ground[hit]
    labels[hit] = GROUND

    r_cw = r_wc.T
    f = k.focal_px
    for face in world_faces(world):
        q = face.corners
        e1 = q[1] - q[0]
        e2 = q[3] - q[0]
        n = np.cross(e1, e2)
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            continue
        n = n / nn
        # backface cull: camera must be on the outward side
        if n @ (cam - q[0]) <= 1e-9:
            continue
        # projected bounding box of the corners
        pc = (q - cam) @ r_cw.T
        if np.all(pc[:, 2] <= 1e-6):
            continue
        if np.any(pc[:, 2] <= 1e-6):
            r0, r1, c0, c1 = 0, h, 0, w
        else:
            px = f * pc[:, 0] / pc[:, 2] + k.cx
            py = f * pc[:, 1] / pc[:, 2] + k.cy
            c0 = max(0, int(math.floor(px.min())) - 1)
            c1 = min(w, int(math.ceil(px.max())) + 1)
            r0 = max(0, int(math.floor(py.min())) - 1)
            r1 = min(h, int(math.ceil(py.max())) + 1)
            if c0 >= c1 or r0 >= r1:
                continue
        sub = dirs[r0:r1, c0:c1]
        denom = sub @ n
        num = n @ (q[0] - cam)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        valid = t > 1e-6
        if not valid.any():
            continue
        p = cam + sub * t[..., None]
        rel = p - q[0]
        u = rel @ e1 / (e1 @ e1)
        v = rel @ e2 / (e2 @ e2)
        inside = valid & (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
        tb = t - face.bias
        win = inside & (tb < zcmp[r0:r1, c0:c1])
        if not win.any():
            continue
        zs = zcmp[r0:r1, c0:c1]
        ds = depth[r0:r1, c0:c1]
        ls = labels[r0:r1, c0:c1]
        zs[win] = tb[win]
        ds[win] = t[win]
        ls[win] = face.label

    no_return = ~np.isfinite(depth)
    depth[no_return] = DEPTH_SENTINEL
    return labels, depth


def cloud_from_depth(depth: np.ndarray, k: CameraIntrinsics,
                     cam_to_base: FrameTransform) -> np.ndarray:
    """Organized point cloud in L_B; invalid pixels become NaN points."""
    dirs = pixel_directions(k)
    pts_c = dirs * depth[..., None]
    flat = pts_c.reshape(-1, 3)
    out = cam_to_base.apply(flat).reshape(depth.shape + (3,))
    out[depth <= 0.0] = np.nan
    return out


def apply_sensor_noise(labels: np.ndarray, depth: np.ndarray,
                       rng: np.random.Generator, sigma_px: float = 0.0,
                       depth_a: float = 0.0):
    """Boundary jitter on labels plus range-dependent depth noise.

    Labels and depth are resampled at pixel positions jittered by a
    ~N(0, sigma_px) offset field, which dilates/erodes region boundaries;
    depth is then perturbed with zero-mean noise of variance depth_a*d^2.
    Deterministic for a given generator state.
    """
    if sigma_px < 0 or depth_a < 0:
        raise ValueError("noise parameters must be non-negative")
    labels_out = labels.copy()
    depth_out = depth.copy()
    h, w = labels.shape
    if sigma_px > 0:
        lim = int(math.ceil(3 * sigma_px))
        dr = np.clip(np.rint(rng.normal(0.0, sigma_px, (h, w))), -lim, lim).astype(int)
        dc = np.clip(np.rint(rng.normal(0.0, sigma_px, (h, w))), -lim, lim).astype(int)
        rows = np.clip(np.arange(h)[:, None] + dr, 0, h - 1)
        cols = np.clip(np.arange(w)[None, :] + dc, 0, w - 1)
        labels_out = labels_out[rows, cols]
        depth_out = depth_out[rows, cols]
    if depth_a > 0:
        valid = depth_out > 0
        sigma = math.sqrt(depth_a) * depth_out
        noisy = depth_out + rng.normal(0.0, 1.0, (h, w)) * sigma
        depth_out = np.where(valid, np.maximum(noisy, 1e-3), depth_out)
    return labels_out, depth_out


# ---------------------------------------------------------------------------
# Snapshot files


def write_ppm(labels: np.ndarray, path: str) -> None:
    """Binary PPM (P6) of the label image through the RGB palette."""
    rgb = LABEL_RGB[labels]
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def write_pgm16(depth: np.ndarray, path: str) -> None:
    """Binary 16-bit PGM (P5) of depth in millimeters, big-endian."""
    mm = np.clip(depth * 1000.0, 0, 65535).astype(">u2")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(mm.tobytes())


def write_pgm8(gray: np.ndarray, path: str) -> None:
    """Binary 8-bit PGM (P5); used for occupancy grid dumps."""
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(gray, dtype=np.uint8).tobytes())


def grid_to_pgm(grid_data: np.ndarray, path: str) -> None:
    """free=255, occupied=0, unknown=128."""
    img = np.full(grid_data.shape, 255, dtype=np.uint8)
    img[grid_data == 1] = 0
    img[grid_data == 2] = 128
    write_pgm8(img, path)
