"""Ground truth, sensor simulation and Monte Carlo metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dynamics, models
from .dynamics import GroupAffineStep
from .lie import GroupElement
from .models import InsConfig, Robot2dConfig
from .smoother import (
    FactorChainProblem,
    GaussNewtonOptions,
    RetractionKind,
    SlidingWindowSmoother,
    TrajectoryEstimate,
    gauss_newton,
    project_onto_dynamics,
)


@dataclass
class ScenarioTruth:
    """True states and the noise-free steps that connect them.

    For the INS scenario ``steps`` are the high-rate IMU steps and
    ``gps_indices`` index into ``states`` at every GPS epoch.
    """

    states: list[GroupElement]
    steps: list[GroupAffineStep]
    times: np.ndarray
    gps_indices: list[int]

    @property
    def gps_times(self) -> np.ndarray:
        return self.times[self.gps_indices]

    @property
    def gps_positions(self) -> np.ndarray:
        return np.array([self.states[i].position for i in self.gps_indices])


# --------------------------------------------------------------------------
# planar robot
# --------------------------------------------------------------------------


def make_robot2d_truth(cfg: Robot2dConfig) -> ScenarioTruth:
    x0 = models.se2(cfg.heading, cfg.start)
    s = models.robot2d_step(cfg)
    steps = [s] * cfg.n_steps
    states = project_onto_dynamics(steps, x0)
    times = cfg.dt * np.arange(cfg.n_steps + 1)
    return ScenarioTruth(states, steps, times, list(range(1, cfg.n_steps + 1)))


def robot2d_problem(cfg: Robot2dConfig, truth: ScenarioTruth, rng: np.random.Generator) -> FactorChainProblem:
    noise = cfg.gps_sigma * rng.standard_normal((len(truth.gps_indices), 2))
    meas = [
        models.gps_factor(i, truth.states[i].group, truth.states[i].translation + e, cfg.gps_cov)
        for i, e in zip(truth.gps_indices, noise)
    ]
    return FactorChainProblem(cfg.prior(), truth.steps, meas)


def run_robot2d(cfg: Robot2dConfig, kinds: Sequence[RetractionKind], seed: int = 0,
                max_iters: int = 50) -> dict[RetractionKind, TrajectoryEstimate]:
    """Batch smoothing from the dead-reckoned trajectory of the prior mean."""
    truth = make_robot2d_truth(cfg)
    problem = robot2d_problem(cfg, truth, np.random.default_rng(seed))
    init = project_onto_dynamics(problem.steps, problem.prior.mean)
    opts = GaussNewtonOptions(max_iters=max_iters)
    return {k: gauss_newton(problem, init, k, opts) for k in kinds}


# --------------------------------------------------------------------------
# inertial alignment
# --------------------------------------------------------------------------


def _velocity_profile(cfg: InsConfig, t: float) -> float:
    """Forward speed: still, then a linear ramp over one GPS interval, then cruise."""
    if t <= cfg.still_time:
        return 0.0
    ramp = cfg.gps_dt
    return cfg.cruise_speed * min(1.0, (t - cfg.still_time) / ramp)


def make_ins_truth(cfg: InsConfig) -> ScenarioTruth:
    """Level vehicle driving straight along its heading.

    Accelerometer samples are chosen so that one Euler step lands exactly on
    the target velocity; re-integrating the truth reproduces it.
    """
    dt = cfg.imu_dt
    n = int(round(cfg.duration * cfg.imu_rate))
    rot = models.rot_z(math.radians(cfg.heading_deg))
    forward = rot[:, 0]
    g = np.asarray(cfg.gravity, dtype=float)
    x0 = models.se23(rot, np.zeros(3), np.zeros(3))
    states = [x0]
    steps = []
    times = dt * np.arange(n + 1)
    for k in range(n):
        v_now = states[-1].velocity
        v_next = _velocity_profile(cfg, times[k + 1]) * forward
        a = rot.T @ ((v_next - v_now) / dt - g)
        s = models.ins_step(np.zeros(3), a, dt, cfg.sigma_g, cfg.sigma_a, g)
        steps.append(s)
        states.append(dynamics.step(s, states[-1]))
    gps = list(range(cfg.imu_per_gps, n + 1, cfg.imu_per_gps))
    return ScenarioTruth(states, steps, times, gps)


@dataclass
class InsRun:
    """Sensor realisation of one run: preintegrated steps and GPS fixes."""

    steps: list[GroupAffineStep]
    gps: list[np.ndarray]
    times: np.ndarray
    truth_states: list[GroupElement]


def simulate_ins_run(cfg: InsConfig, truth: ScenarioTruth, rng: np.random.Generator) -> InsRun:
    per = cfg.imu_per_gps
    pre = []
    for j in range(len(truth.gps_indices)):
        chunk = truth.steps[j * per:(j + 1) * per]
        if not cfg.zero_noise:
            # the smoother still needs the model covariance of each reading
            chunk = [replace(dynamics.sample_noisy_step(s, rng), q_cov=s.q_cov) for s in chunk]
        pre.append(dynamics.preintegrate(chunk, check=False))
    noise = np.zeros((len(truth.gps_indices), 3))
    if not cfg.zero_noise:
        noise = cfg.sigma_n * rng.standard_normal(noise.shape)
    gps = [truth.states[i].position + e for i, e in zip(truth.gps_indices, noise)]
    times = np.concatenate([[0.0], truth.gps_times])
    states = [truth.states[0]] + [truth.states[i] for i in truth.gps_indices]
    return InsRun(pre, gps, times, states)


@dataclass
class AlignmentTrace:
    times: np.ndarray
    yaw_err_deg: np.ndarray
    sigma3_deg: np.ndarray


def yaw_sigma(rot: np.ndarray, cov: np.ndarray) -> float:
    """Std of the world-frame yaw under a right attitude perturbation."""
    row = rot[2, :]
    return math.sqrt(max(float(row @ cov[:3, :3] @ row), 0.0))


def run_alignment(cfg: InsConfig, run: InsRun, kind: RetractionKind, window: int | None = None) -> AlignmentTrace:
    truth0 = run.truth_states[0]
    prior = cfg.prior(truth0)
    sw = SlidingWindowSmoother(prior, kind, window or cfg.window, max_iters=1)
    errs = [models.wrap_angle(models.yaw_of(prior.mean.rot) - models.yaw_of(truth0.rot))]
    sig = [3.0 * yaw_sigma(prior.mean.rot, prior.cov)]
    for j, s in enumerate(run.steps):
        fix = models.gps_factor(0, s.group, run.gps[j], cfg.gps_cov)
        est = sw.push(s, [fix])
        errs.append(models.wrap_angle(models.yaw_of(est.rot) - models.yaw_of(run.truth_states[j + 1].rot)))
        cov = sw.last_covariance
        sig.append(3.0 * yaw_sigma(est.rot, cov) if cov is not None else math.nan)
    return AlignmentTrace(run.times.copy(), np.degrees(errs), np.degrees(sig))


@dataclass
class RunMetrics:
    """Per-method yaw errors of shape ``(runs, epochs)`` and their summaries."""

    times: np.ndarray
    yaw_err_deg: dict[str, np.ndarray] = field(default_factory=dict)
    sigma3_deg: dict[str, np.ndarray] = field(default_factory=dict)
    motion_start: float = 0.0

    @property
    def methods(self) -> list[str]:
        return list(self.yaw_err_deg)

    def rmse(self, method: str) -> np.ndarray:
        e = self.yaw_err_deg[method]
        return np.sqrt(np.mean(e**2, axis=0))

    def final_rmse(self, method: str) -> float:
        return float(self.rmse(method)[-1])

    def within_3sigma(self, method: str) -> np.ndarray:
        """Per-run flag: final yaw error inside the final 3-sigma bound."""
        e = np.abs(self.yaw_err_deg[method][:, -1])
        return e <= self.sigma3_deg[method][:, -1]

    def pct_within_3sigma(self, method: str) -> float:
        return 100.0 * float(np.mean(self.within_3sigma(method)))

    def peak_after_motion(self, method: str) -> np.ndarray:
        """Per-run largest absolute yaw error once the vehicle is moving."""
        sel = self.times > self.motion_start
        return np.abs(self.yaw_err_deg[method][:, sel]).max(axis=1)

    def mean_peak(self, method: str) -> float:
        return float(self.peak_after_motion(method).mean())


def parse_kind(name: str) -> RetractionKind:
    try:
        return RetractionKind(name.lower())
    except ValueError:
        raise ValueError(f"unknown retraction {name!r}; expected one of "
                         f"{[k.value for k in RetractionKind]}") from None


def run_monte_carlo(cfg: InsConfig, methods: Sequence[str] | None = None, n_runs: int = 10,
                    seed: int = 0, window: int | None = None) -> RunMetrics:
    """Independent runs sharing one truth; run ``r`` uses child stream ``r`` of ``seed``."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    methods = list(methods or cfg.methods)
    kinds = [parse_kind(m) for m in methods]
    truth = make_ins_truth(cfg)
    streams = np.random.SeedSequence(seed).spawn(n_runs)
    errs = {k.value: [] for k in kinds}
    sigs = {k.value: [] for k in kinds}
    times = None
    for ss in streams:
        run = simulate_ins_run(cfg, truth, np.random.default_rng(ss))
        for k in kinds:
            tr = run_alignment(cfg, run, k, window)
            errs[k.value].append(tr.yaw_err_deg)
            sigs[k.value].append(tr.sigma3_deg)
            times = tr.times
    return RunMetrics(
        times,
        {m: np.array(v) for m, v in errs.items()},
        {m: np.array(v) for m, v in sigs.items()},
        motion_start=cfg.still_time,
    )


def gps_noise_samples(cfg: InsConfig, n_runs: int, seed: int = 0) -> np.ndarray:
    """GPS errors (fix minus truth) from ``n_runs`` simulated runs, stacked."""
    truth = make_ins_truth(cfg)
    out = []
    for ss in np.random.SeedSequence(seed).spawn(n_runs):
        run = simulate_ins_run(cfg, truth, np.random.default_rng(ss))
        out.append(np.array(run.gps) - truth.gps_positions)
    return np.concatenate(out)
