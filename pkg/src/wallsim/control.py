"""Local approach control, visual-servo pickup stages and distance filtering.

All control laws are proportional and operate on per-frame displacements
(the arm executes displacement setpoints, rate-limited by the simulator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import RigidPose, axis_difference


class PatchLost(Exception):
    """Visual target left the image for longer than the tracker tolerates."""


@dataclass(frozen=True)
class ApproachGains:
    """Gains for the local object approach (drive + camera pitch)."""

    k_dx: float = 0.5        # 1/s, forward velocity vs distance error
    k_ximg: float = 0.004    # rad/s per pixel, yaw rate vs image x
    k_yimg: float = 0.002    # rad per pixel, camera pitch step vs image y
    d_r: float = 1.6         # m, desired stand-off distance

    def __post_init__(self):
        if min(self.k_dx, self.k_ximg, self.k_yimg) <= 0 or self.d_r <= 0:
            raise ValueError("approach gains and stand-off must be positive")


@dataclass(frozen=True)
class ServoGains:
    """Gains and tolerances for the four-stage visual servo."""

    k_theta: float = 0.5     # pitch step per rad of pitch error
    k_yp: float = 0.001      # m per pixel, x step vs image y
    k_xp: float = 0.002      # m per pixel, y step vs image x
    k_psi: float = 0.5       # yaw step per rad of patch angle
    k_dz: float = 0.25       # descent step per m of snapped distance
    theta_d: float = math.pi / 2.0
    eps_y: float = 5.0       # px
    eps_x: float = 5.0       # px
    eps_psi: float = math.radians(2.0)
    eps_theta: float = math.radians(0.5)

    def __post_init__(self):
        if min(self.k_theta, self.k_yp, self.k_xp, self.k_psi, self.k_dz) <= 0:
            raise ValueError("servo gains must be positive")


def approach_command(x_img: float, y_img: float, d_hat: float,
                     g: ApproachGains) -> tuple[float, float, float]:
    """(v_x, omega_z, dtheta) driving toward the object while centering it."""
    v_x = -g.k_dx * (g.d_r - d_hat)
    omega_z = -g.k_ximg * x_img
    dtheta = g.k_yimg * y_img
    return v_x, omega_z, dtheta


def servo_x_pitch(theta: float, y_p: float, g: ServoGains):
    """Stage 1: rotate the camera to nadir while keeping the patch centered.

    Returns (dtheta, dx, done).
    """
    dtheta = g.k_theta * (g.theta_d - theta)
    dx = -g.k_yp * y_p
    done = abs(g.theta_d - theta) <= g.eps_theta and abs(y_p) <= g.eps_y
    return dtheta, dx, done


def servo_y_yaw(x_p: float, psi_p: float, g: ServoGains):
    """Stages 2 and 3: lateral centering then axis alignment.

    Returns (dy, dpsi, done); the supervisor sequences the two sub-stages.
    """
    dy = -g.k_xp * x_p
    dpsi = -g.k_psi * psi_p
    done = abs(x_p) <= g.eps_x and abs(psi_p) <= g.eps_psi
    return dy, dpsi, done


def z_snap(d_meas: float, h_b: float) -> float:
    """Snap a measured vertical distance to the nearest positive multiple of h_b."""
    if d_meas <= 0 or h_b <= 0:
        raise ValueError("distance and brick height must be positive")
    n = max(1, round(d_meas / h_b))
    return n * h_b


def z_approach(d_z: float, contact: bool, g: ServoGains):
    """Stage 4: proportional descent; terminates on the contact sensor.

    Returns (dz, done) with dz the downward displacement.
    """
    if contact:
        return 0.0, True
    return g.k_dz * d_z, False


def check_reachability(pose_in_base: RigidPose, r_min: float, r_max: float,
                       perp_tol: float = math.radians(26.0)) -> bool:
    """Is the patch graspable from the current base placement?

    Requires planar range within the arm envelope and the approach
    direction perpendicular to the patch major axis within tolerance.
    """
    rng = math.hypot(pose_in_base.x, pose_in_base.y)
    if not (r_min <= rng <= r_max):
        return False
    perp_err = abs(axis_difference(pose_in_base.yaw + math.pi / 2.0, 0.0))
    return perp_err <= perp_tol


class DistanceFilter:
    """Constant-velocity Kalman filter on the object distance.

    State is (d, d_dot); missing measurements run the prediction only.
    """

    def __init__(self, d0: float = 0.0, q: float = 0.5, r: float = 0.01):
        self.x = np.array([d0, 0.0])
        self.P = np.diag([1.0, 1.0])
        self.q = q
        self.r = r

    @property
    def d(self) -> float:
        return float(self.x[0])

    def step(self, dt: float, measurement: float | None = None) -> float:
        if dt <= 0:
            raise ValueError("dt must be positive")
        f = np.array([[1.0, dt], [0.0, 1.0]])
        qm = self.q * np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0],
                                [dt ** 2 / 2.0, dt]])
        self.x = f @ self.x
        self.P = f @ self.P @ f.T + qm
        if measurement is not None:
            h = np.array([[1.0, 0.0]])
            s = float(self.P[0, 0] + self.r)
            s = max(s, 1e-12)
            k = self.P @ h.T / s
            innov = measurement - self.x[0]
            self.x = self.x + (k * innov).ravel()
            ikh = np.eye(2) - k @ h
            self.P = ikh @ self.P @ ikh.T + k @ k.T * self.r
        self.P = (self.P + self.P.T) / 2.0
        return float(self.x[0])


class ApproachController:
    """Drives the base toward a tracked object at a desired stand-off."""

    def __init__(self, gains: ApproachGains, d0: float = 3.0,
                 q: float = 0.5, r: float = 0.01,
                 done_tol: float = 0.08, done_x_tol: float = 40.0):
        self.gains = gains
        self.filter = DistanceFilter(d0=d0, q=q, r=r)
        self.done_tol = done_tol
        self.done_x_tol = done_x_tol

    def update(self, x_img: float, y_img: float, d_meas: float | None, dt: float):
        """Per-frame update: returns (v_x, omega_z, dtheta, done)."""
        d_hat = self.filter.step(dt, d_meas)
        v, w, dth = approach_command(x_img, y_img, d_hat, self.gains)
        done = (abs(d_hat - self.gains.d_r) <= self.done_tol
                and abs(x_img) <= self.done_x_tol)
        return v, w, dth, done


class ServoStage(Enum):
    X_PITCH = "x_pitch"
    Y_SERVO = "y_servo"
    YAW_SERVO = "yaw_servo"
    Z_APPROACH = "z_approach"
    DONE = "done"


@dataclass
class EffectorCommand:
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dpitch: float = 0.0
    dyaw: float = 0.0

    def is_zero(self) -> bool:
        return (self.dx == 0.0 and self.dy == 0.0 and self.dz == 0.0
                and self.dpitch == 0.0 and self.dyaw == 0.0)


@dataclass
class ServoObservation:
    """Per-frame feedback for the pickup/drop supervisor.

    patch is (x_p, y_p, psi_p, d_meas) in signed pixels / radians /
    meters, or None when the target is not visible this frame.
    """

    patch: tuple | None
    theta: float
    contact: bool
    effector_z: float
    effector_yaw: float = 0.0


@dataclass
class SupervisorResult:
    command: EffectorCommand
    stage: ServoStage
    done: bool = False
    failed: bool = False
    reason: str = ""


class PickupSupervisor:
    """Sequences the four visual-servo stages for one pickup or drop.

    Stage progression is monotone; a lost patch aborts to the mission
    layer except during the final descent, where the last snapped
    distance is decayed by the executed motion instead.
    """

    def __init__(self, gains: ServoGains, h_b: float,
                 cam_offset_y: float = 0.0, max_missing: int = 3,
                 floor_z: float = 0.0):
        self.g = gains
        self.h_b = h_b
        self.cam_offset_y = cam_offset_y
        self.max_missing = max_missing
        self.floor_z = floor_z  # abort if the gripper descends past this
        self.stage = ServoStage.X_PITCH
        self.missing = 0
        self.offset_applied = False
        self.fallback_dz: float | None = None

    def _lost(self) -> SupervisorResult:
        return SupervisorResult(EffectorCommand(), self.stage,
                                failed=True, reason="patch_lost")

    def step(self, obs: ServoObservation) -> SupervisorResult:
        if self.stage == ServoStage.DONE:
            return SupervisorResult(EffectorCommand(), self.stage, done=True)

        if self.stage == ServoStage.Z_APPROACH:
            return self._step_z(obs)

        if obs.patch is None:
            self.missing += 1
            if self.missing > self.max_missing:
                return self._lost()
            return SupervisorResult(EffectorCommand(), self.stage)
        self.missing = 0
        x_p, y_p, psi_p, _ = obs.patch

        # completed stages still emit their last proportional step, which
        # halves the residual left by the tolerance deadband
        if self.stage == ServoStage.X_PITCH:
            dtheta, dx, done = servo_x_pitch(obs.theta, y_p, self.g)
            if done:
                self.stage = ServoStage.Y_SERVO
            return SupervisorResult(EffectorCommand(dx=dx, dpitch=dtheta), self.stage)

        if self.stage == ServoStage.Y_SERVO:
            dy, _, _ = servo_y_yaw(x_p, psi_p, self.g)
            if abs(x_p) <= self.g.eps_x:
                self.stage = ServoStage.YAW_SERVO
            return SupervisorResult(EffectorCommand(dy=dy), self.stage)

        # YAW_SERVO
        _, dpsi, _ = servo_y_yaw(x_p, psi_p, self.g)
        cmd = EffectorCommand(dyaw=dpsi)
        if abs(psi_p) <= self.g.eps_psi:
            self.stage = ServoStage.Z_APPROACH
            if not self.offset_applied:
                # one-time shift: center the gripper where the camera was;
                # the offset lives in the effector frame, commands in L_B
                c = math.cos(obs.effector_yaw)
                s = math.sin(obs.effector_yaw)
                cmd = EffectorCommand(dx=-s * self.cam_offset_y,
                                      dy=c * self.cam_offset_y,
                                      dyaw=dpsi)
            self.offset_applied = True
        return SupervisorResult(cmd, self.stage)

    def _step_z(self, obs: ServoObservation) -> SupervisorResult:
        if obs.contact:
            self.stage = ServoStage.DONE
            return SupervisorResult(EffectorCommand(), self.stage, done=True)
        if obs.effector_z < self.floor_z:
            return SupervisorResult(EffectorCommand(), self.stage,
                                    failed=True, reason="no_contact")
        if obs.patch is not None and obs.patch[3] is not None and obs.patch[3] > 0:
            d_z = z_snap(obs.patch[3], self.h_b)
            self.fallback_dz = d_z
        elif self.fallback_dz is not None:
            d_z = max(self.fallback_dz, self.h_b)  # keep descending on depth loss
        else:
            d_z = self.h_b
        dz, _ = z_approach(d_z, False, self.g)
        if self.fallback_dz is not None:
            self.fallback_dz = max(self.fallback_dz - dz, self.h_b)
        return SupervisorResult(EffectorCommand(dz=-dz), self.stage)
