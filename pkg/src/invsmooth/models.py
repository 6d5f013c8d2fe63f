"""Concrete systems: a planar wheeled robot on SE(2) and unbiased inertial
navigation on SE_2(3), both with position (GPS) measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import lie
from .dynamics import GroupAffineStep
from .lie import GroupElement, GroupId
from .smoother import DegeneratePrior, MeasurementFactor

GRAVITY = (0.0, 0.0, -9.81)


def se2(theta: float, x) -> GroupElement:
    m = np.eye(3)
    m[:2, :2] = lie.rot2(theta)
    m[:2, 2] = x
    return GroupElement(GroupId.SE2, m)


def se23(rot, v, x) -> GroupElement:
    m = np.eye(5)
    m[:3, :3] = rot
    m[:3, 3] = v
    m[:3, 4] = x
    return GroupElement(GroupId.SE23, m)


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(rot: np.ndarray) -> float:
    return math.atan2(rot[1, 0], rot[0, 0])


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# --------------------------------------------------------------------------
# measurements
# --------------------------------------------------------------------------


def gps_measurement(group: GroupId, est: GroupElement) -> tuple[np.ndarray, np.ndarray]:
    """Predicted position and its Jacobian under ``est @ exp(xi)``."""
    if group is GroupId.SE2:
        h = np.zeros((2, 3))
        h[:, :2] = est.rot
        return est.translation.copy(), h
    if group is GroupId.SE23:
        h = np.zeros((3, 9))
        h[:, 6:9] = est.rot
        return est.position.copy(), h
    raise ValueError(f"no position on {group.value}")


def gps_factor(index: int, group: GroupId, y, cov) -> MeasurementFactor:
    return MeasurementFactor(index, y, cov, partial(gps_measurement, group))


# --------------------------------------------------------------------------
# planar robot
# --------------------------------------------------------------------------


@dataclass
class Robot2dConfig:
    speed: float = 7.0
    dt: float = 1.0
    n_steps: int = 10
    gps_sigma: float = 1.0
    heading_error: float = -3.0 * math.pi / 4.0
    heading: float = 0.0
    start: tuple[float, float] = (0.0, 0.0)
    prior_sigma: float = 3.0 * math.pi / 4.0

    @property
    def gps_cov(self) -> np.ndarray:
        return self.gps_sigma**2 * np.eye(2)

    def prior(self) -> DegeneratePrior:
        """Known position, heading believed off by ``heading_error``."""
        mean = se2(self.heading + self.heading_error, self.start)
        return DegeneratePrior(mean, np.array([[0.0], [0.0], [1.0]]), [[self.prior_sigma**2]])


def robot2d_step(cfg: Robot2dConfig) -> GroupAffineStep:
    """Constant-velocity straight-line odometry, exactly known."""
    e = GroupElement.identity(GroupId.SE2)
    u = se2(0.0, (cfg.speed * cfg.dt, 0.0))
    return GroupAffineStep(e, lie.Identity(), u, np.zeros((3, 3)), cfg.dt)


# --------------------------------------------------------------------------
# inertial navigation
# --------------------------------------------------------------------------


def imu_process_cov(dt: float, sigma_g: float, sigma_a: float) -> np.ndarray:
    """Per-step covariance on (phi, nu, rho); sigmas are densities in SI units."""
    return np.diag([sigma_g**2] * 3 + [sigma_a**2] * 3 + [0.0] * 3) * dt


def ins_step(omega, a, dt: float, sigma_g: float = 0.0, sigma_a: float = 0.0,
             gravity=GRAVITY) -> GroupAffineStep:
    """One Euler step of strapdown navigation as a group-affine transition.

    ``omega`` [rad/s] and ``a`` [m/s^2] are body-frame gyro and accelerometer
    readings; ``sigma_g`` [rad/s] and ``sigma_a`` [m/s^2] their noise levels.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega = np.asarray(omega, dtype=float)
    a = np.asarray(a, dtype=float)
    gamma = se23(np.eye(3), dt * np.asarray(gravity, dtype=float), np.zeros(3))
    upsilon = se23(lie.so3_exp(dt * omega), dt * a, np.zeros(3))
    return GroupAffineStep(gamma, lie.PositionShift(dt), upsilon,
                           imu_process_cov(dt, sigma_g, sigma_a), dt)


@dataclass
class InsConfig:
    """Alignment scenario. Angles in degrees, everything else SI."""

    imu_rate: float = 200.0
    gps_rate: float = 1.0
    gravity: tuple[float, float, float] = GRAVITY
    sigma_g_deg: float = 2.7e-4
    sigma_a: float = 1.5e-3
    sigma_n: float = 3.0
    sigma_p0: float = 0.0
    sigma_v0: float = 10.0
    sigma_r0_deg: float = 100.0
    sigma_rp0_deg: float = 1.0
    heading_error_deg: float = 80.0
    heading_deg: float = 0.0
    still_time: float = 15.0
    move_time: float = 25.0
    cruise_speed: float = 10.0
    window: int = 50
    zero_noise: bool = False
    methods: list[str] = field(default_factory=lambda: ["invariant", "gtsam", "forster"])

    def __post_init__(self):
        ratio = self.imu_rate / self.gps_rate
        if self.imu_rate <= 0 or self.gps_rate <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("imu_rate must be a positive multiple of gps_rate")

    @property
    def imu_dt(self) -> float:
        return 1.0 / self.imu_rate

    @property
    def gps_dt(self) -> float:
        return 1.0 / self.gps_rate

    @property
    def imu_per_gps(self) -> int:
        return int(round(self.imu_rate / self.gps_rate))

    @property
    def sigma_g(self) -> float:
        return math.radians(self.sigma_g_deg)

    @property
    def duration(self) -> float:
        return self.still_time + self.move_time

    @property
    def gps_cov(self) -> np.ndarray:
        return self.sigma_n**2 * np.eye(3)

    def prior(self, truth0: GroupElement) -> DegeneratePrior:
        """Known position, level attitude, heading off by ``heading_error_deg``.

        The support is attitude and velocity (plus position when
        ``sigma_p0 > 0``); both choices are Lie subalgebras.
        """
        yaw = yaw_of(truth0.rot) + math.radians(self.heading_error_deg)
        # keep the true roll/pitch: rotate the truth about the world vertical
        rot = rot_z(yaw - yaw_of(truth0.rot)) @ truth0.rot
        mean = se23(rot, np.zeros(3), truth0.position)
        rp = math.radians(self.sigma_rp0_deg) ** 2
        sig = [rp, rp, math.radians(self.sigma_r0_deg) ** 2] + [self.sigma_v0**2] * 3
        cols = 6
        if self.sigma_p0 > 0:
            sig += [self.sigma_p0**2] * 3
            cols = 9
        basis = np.eye(9)[:, :cols]
        return DegeneratePrior(mean, basis, np.diag(sig))
