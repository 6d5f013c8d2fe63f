import math

import numpy as np
import pytest

from invsmooth import dynamics, lie, models, sim
from invsmooth.models import InsConfig, Robot2dConfig
from invsmooth.smoother import RetractionKind, trajectory_length

FAST = dict(imu_rate=20.0)


# --------------------------------------------------------------------------
# planar robot
# --------------------------------------------------------------------------


def test_robot_truth_default():
    truth = sim.make_robot2d_truth(Robot2dConfig())
    assert len(truth.states) == 11
    assert np.allclose(truth.states[-1].translation, [70.0, 0.0], atol=1e-12)
    assert trajectory_length(truth.states) == pytest.approx(70.0, abs=1e-12)
    assert truth.gps_indices == list(range(1, 11))


@pytest.mark.parametrize("n, speed, dt", [(1, 2.0, 0.5), (7, 3.0, 1.0), (25, 0.4, 0.1)])
def test_robot_truth_length(n, speed, dt):
    truth = sim.make_robot2d_truth(Robot2dConfig(n_steps=n, speed=speed, dt=dt, heading=0.7))
    assert trajectory_length(truth.states) == pytest.approx(n * speed * dt, rel=1e-12)
    assert truth.times[-1] == pytest.approx(n * dt)


def test_robot_truth_no_steps():
    truth = sim.make_robot2d_truth(Robot2dConfig(n_steps=0))
    assert len(truth.states) == 1 and truth.gps_indices == []
    assert sim.robot2d_problem(Robot2dConfig(n_steps=0), truth, np.random.default_rng(0)).measurements == ()


def test_robot_problem_is_seeded():
    cfg = Robot2dConfig()
    truth = sim.make_robot2d_truth(cfg)
    a = sim.robot2d_problem(cfg, truth, np.random.default_rng(4))
    b = sim.robot2d_problem(cfg, truth, np.random.default_rng(4))
    assert all(np.array_equal(m.value, n.value) for m, n in zip(a.measurements, b.measurements))


# --------------------------------------------------------------------------
# inertial truth
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ins_truth():
    return sim.make_ins_truth(InsConfig())


def test_ins_truth_size(ins_truth):
    assert len(ins_truth.states) == 8001
    assert len(ins_truth.gps_indices) == 40
    assert ins_truth.gps_indices[-1] == 8000


def test_stationary_accelerometer_cancels_gravity(ins_truth):
    cfg = InsConfig()
    g = np.asarray(cfg.gravity)
    n_still = int(cfg.still_time * cfg.imu_rate)
    for s, x in zip(ins_truth.steps[:n_still:97], ins_truth.states[:n_still:97]):
        a = s.upsilon.velocity / cfg.imu_dt
        assert np.allclose(a, -x.rot.T @ g, atol=1e-12)
        assert np.allclose(s.upsilon.rot, np.eye(3))


def test_ins_truth_profile(ins_truth):
    cfg = InsConfig()
    speed = [np.linalg.norm(x.velocity) for x in ins_truth.states]
    t = ins_truth.times
    assert max(s for s, tt in zip(speed, t) if tt <= cfg.still_time) < 1e-12
    assert speed[-1] == pytest.approx(cfg.cruise_speed, rel=1e-12)
    assert all(np.allclose(x.rot, ins_truth.states[0].rot) for x in ins_truth.states[::400])


def test_ins_truth_reintegrates(ins_truth):
    x = ins_truth.states[0]
    for s in ins_truth.steps:
        x = dynamics.step(s, x)
    ref = ins_truth.states[-1]
    assert np.abs(x.mat - ref.mat).max() < 1e-9


def test_preintegrated_run_matches_truth_without_noise():
    cfg = InsConfig(zero_noise=True, **FAST)
    truth = sim.make_ins_truth(cfg)
    run = sim.simulate_ins_run(cfg, truth, np.random.default_rng(0))
    x = run.truth_states[0]
    for s, ref, fix in zip(run.steps, run.truth_states[1:], run.gps):
        x = dynamics.step(s, x)
        assert np.abs(x.mat - ref.mat).max() < 1e-8
        assert np.array_equal(fix, ref.position)


def test_gps_noise_statistics():
    cfg = InsConfig(**FAST)
    e = sim.gps_noise_samples(cfg, 40, seed=1)
    assert e.shape == (1600, 3)
    assert np.allclose(e.std(axis=0), cfg.sigma_n, rtol=0.1)
    assert np.abs(e.mean(axis=0)).max() < 0.5


def test_yaw_sigma_isolates_world_yaw():
    rot = models.rot_z(0.4)
    cov = np.diag([9.0, 9.0, 0.25, 1, 1, 1, 1, 1, 1])
    assert sim.yaw_sigma(rot, cov) == pytest.approx(0.5)


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------


def test_monte_carlo_rejects_zero_runs():
    with pytest.raises(ValueError):
        sim.run_monte_carlo(InsConfig(**FAST), ["invariant"], n_runs=0)


def test_parse_kind():
    assert sim.parse_kind("GTSAM") is RetractionKind.GTSAM
    with pytest.raises(ValueError, match="unknown retraction"):
        sim.parse_kind("euler")


def test_zero_noise_without_heading_error_stays_aligned():
    cfg = InsConfig(zero_noise=True, heading_error_deg=0.0, **FAST)
    m = sim.run_monte_carlo(cfg, ["invariant", "gtsam"], n_runs=1, window=5)
    for meth in m.methods:
        assert np.abs(m.yaw_err_deg[meth]).max() < 1e-6


def test_monte_carlo_is_deterministic():
    cfg = InsConfig(**FAST)
    a = sim.run_monte_carlo(cfg, ["invariant"], n_runs=2, seed=9, window=5)
    b = sim.run_monte_carlo(cfg, ["invariant"], n_runs=2, seed=9, window=5)
    assert np.array_equal(a.yaw_err_deg["invariant"], b.yaw_err_deg["invariant"])
    assert np.array_equal(a.sigma3_deg["invariant"], b.sigma3_deg["invariant"], equal_nan=True)
    c = sim.run_monte_carlo(cfg, ["invariant"], n_runs=2, seed=10, window=5)
    assert not np.array_equal(a.yaw_err_deg["invariant"], c.yaw_err_deg["invariant"])


def test_metrics_are_recomputable():
    cfg = InsConfig(**FAST)
    m = sim.run_monte_carlo(cfg, ["invariant"], n_runs=3, seed=2, window=5)
    e = m.yaw_err_deg["invariant"]
    assert e.shape == (3, 41)
    assert m.times[0] == 0.0 and m.times[-1] == pytest.approx(40.0)
    assert m.final_rmse("invariant") == pytest.approx(math.sqrt(np.mean(e[:, -1] ** 2)))
    assert e[0, 0] == pytest.approx(cfg.heading_error_deg)
    manual = np.array([max(abs(v) for t, v in zip(m.times, row) if t > cfg.still_time) for row in e])
    assert np.array_equal(m.peak_after_motion("invariant"), manual)
    assert 0.0 <= m.pct_within_3sigma("invariant") <= 100.0


def test_heading_converges_after_motion():
    cfg = InsConfig(**FAST)
    m = sim.run_monte_carlo(cfg, ["invariant"], n_runs=2, seed=0, window=10)
    assert m.final_rmse("invariant") < cfg.heading_error_deg / 10
    # while still, the heading is unobservable and stays near the prior
    still = m.times <= cfg.still_time
    assert np.abs(m.yaw_err_deg["invariant"][:, still]).min() > 30.0


def test_alignment_sigma_shrinks():
    cfg = InsConfig(**FAST)
    truth = sim.make_ins_truth(cfg)
    run = sim.simulate_ins_run(cfg, truth, np.random.default_rng(1))
    tr = sim.run_alignment(cfg, run, RetractionKind.INVARIANT, window=10)
    assert tr.sigma3_deg[0] == pytest.approx(3 * cfg.sigma_r0_deg, rel=1e-9)
    assert tr.sigma3_deg[-1] < 10.0
    assert lie.GroupId.SE23.dof == run.steps[0].q_cov.shape[0]
