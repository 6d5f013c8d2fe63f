"""Invariant suite run by ``invsmooth selftest`` and reused by the tests.

Every check returns a :class:`CheckResult`; ``tol_scale`` multiplies all
thresholds, so values below one tighten them.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import dynamics, lie, models, smoother
from .dynamics import GroupAffineStep
from .lie import GroupElement, GroupId
from .smoother import (
    DegeneratePrior,
    FactorChainProblem,
    LinearizedSystem,
    RetractionKind,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    threshold: float
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<28s} worst={self.worst:.3e}  threshold={self.threshold:.1e}  ({self.seconds:.2f}s)"


# --------------------------------------------------------------------------
# random instances
# --------------------------------------------------------------------------


def _random_automorphism(group: GroupId, rng: np.random.Generator, dt: float) -> lie.Automorphism:
    choices = ["identity", "conjugation"]
    if group is GroupId.SE23:
        choices.append("shift")
    pick = choices[rng.integers(len(choices))]
    if pick == "identity":
        return lie.Identity()
    if pick == "shift":
        return lie.PositionShift(dt)
    return lie.Conjugation(lie.random_element(group, rng, 0.5))


def random_step(group: GroupId, rng: np.random.Generator, scale: float = 0.5,
                dt: float = 0.1, phi: lie.Automorphism | None = None) -> GroupAffineStep:
    """A noise-free group-affine step with random ``gamma``, ``phi`` and ``upsilon``."""
    if phi is None:
        phi = _random_automorphism(group, rng, dt)
    gamma = lie.random_element(group, rng, scale)
    upsilon = lie.random_element(group, rng, scale)
    return GroupAffineStep(gamma, phi, upsilon, None, dt)


def base_subalgebras(group: GroupId) -> list[np.ndarray]:
    """Coordinate subalgebras used to build priors."""
    eye = np.eye(group.dof)
    if group is GroupId.SE2:
        return [eye[:, [2]], eye[:, [0, 1]], eye[:, [0]]]
    if group is GroupId.SE23:
        return [
            eye[:, [2]],                     # yaw
            eye[:, [2, 3, 4, 5]],            # yaw and velocity
            eye[:, :6],                      # attitude and velocity
            eye[:, 3:9],                     # translations (abelian)
            eye[:, [0, 1, 2, 6, 7, 8]],      # attitude and position
            eye[:, :3],                      # attitude
        ]
    raise ValueError(f"no prior family on {group.value}")


def random_subalgebra_prior(group: GroupId, rng: np.random.Generator, sigma: float = 0.2) -> DegeneratePrior:
    """Rank-deficient prior whose support is an Ad-conjugated coordinate subalgebra."""
    bases = base_subalgebras(group)
    base = bases[rng.integers(len(bases))]
    g = lie.random_element(group, rng, 0.5)
    basis = lie.adjoint(g) @ base
    p = basis.shape[1]
    a = rng.standard_normal((p, p))
    coeff = sigma**2 * (a @ a.T / p + 0.5 * np.eye(p))
    mean = lie.random_element(group, rng, 1.0)
    return DegeneratePrior(mean, basis, coeff)


def random_chain_problem(group: GroupId, rng: np.random.Generator, n_steps: int,
                         gps_sigma: float = 0.05) -> tuple[FactorChainProblem, list[GroupElement]]:
    """Zero-noise chain with GPS fixes drawn around a reachable truth.

    Returns the problem and a dynamics-consistent initial guess starting at
    the prior mean.
    """
    prior = random_subalgebra_prior(group, rng)
    steps = [random_step(group, rng) for _ in range(n_steps)]
    alpha = np.linalg.cholesky(prior.coeff_cov) @ rng.standard_normal(prior.basis.shape[1])
    truth = smoother.project_onto_dynamics(steps, prior.mean @ lie.exp(group, prior.basis @ alpha))
    r = 2 if group is GroupId.SE2 else 3
    cov = gps_sigma**2 * np.eye(r)
    meas = []
    for i in range(n_steps + 1):
        if i == 0 or rng.random() < 0.7:
            pos = truth[i].translation + gps_sigma * rng.standard_normal(r)
            meas.append(models.gps_factor(i, group, pos, cov))
    problem = FactorChainProblem(prior, tuple(steps), tuple(meas))
    init = smoother.project_onto_dynamics(steps, prior.mean)
    return problem, init


# --------------------------------------------------------------------------
# property evaluators
# --------------------------------------------------------------------------


def log_linearity_error(s: GroupAffineStep, x: GroupElement, xi: np.ndarray) -> float:
    """``|log(f(x exp(xi))^-1 f(x) exp(F xi))|``; zero for group-affine steps."""
    f = dynamics.log_linear_matrix(s)
    lhs = dynamics.step(s, x @ lie.exp(s.group, xi))
    rhs = dynamics.step(s, x) @ lie.exp(s.group, f @ xi)
    return float(np.linalg.norm(lie.log(lhs.inv() @ rhs)))


@dataclass
class ChainReport:
    iterations: int
    dyn_residual: float
    xi0_offspan: float
    xi_propagation: float


def chain_report(problem: FactorChainProblem, init: Sequence[GroupElement],
                    max_iters: int = 10, tol: float = 1e-10) -> ChainReport:
    """Run invariant Gauss-Newton and record the worst violation of both claims.

    (i) every iterate satisfies the dynamics; (ii) each correction has
    ``xi_0`` in the span of ``J0^-1 E`` and ``xi_{i+1} = F_i xi_i``.
    """
    states = list(init)
    worst_dyn = float(smoother.dynamics_residuals(problem.steps, states).max(initial=0.0))
    worst_span = 0.0
    worst_prop = 0.0
    k = 0
    for k in range(1, max_iters + 1):
        sys_ = smoother.linearize(problem, states, RetractionKind.INVARIANT)
        xi = smoother.solve_degenerate_chain(sys_)
        scale = max(1.0, float(np.abs(xi).max()))
        if sys_.prior_basis.shape[1] < problem.group.dof:
            worst_span = max(worst_span, smoother.span_residual(sys_.prior_basis, xi[0][:, None]) / scale)
        for i in range(len(problem.steps)):
            gap = xi[i + 1] - sys_.transitions[i] @ xi[i]
            worst_prop = max(worst_prop, float(np.linalg.norm(gap)) / scale)
        states = [smoother.apply_retraction(RetractionKind.INVARIANT, x, d) for x, d in zip(states, xi)]
        worst_dyn = max(worst_dyn, float(smoother.dynamics_residuals(problem.steps, states).max(initial=0.0)))
        if np.abs(xi).max() < tol:
            break
    return ChainReport(k, worst_dyn, worst_span, worst_prop)


def scalar_chain_system(p0: float = 0.0, a0: float = 0.0, prior_var: float = 1.0,
                        q: float = 0.0, y: float = 1.0, noise: float = 1.0) -> LinearizedSystem:
    """Two-state chain on the real line with one observation of the second state."""
    return LinearizedSystem(
        prior_residual=np.array([p0]),
        prior_basis=np.eye(1),
        prior_coeff_cov=np.array([[prior_var]]),
        transitions=np.ones((1, 1, 1)),
        residuals=np.array([[a0]]),
        process_covs=np.array([[[q]]]),
        meas_index=[1],
        meas_jac=[np.eye(1)],
        meas_residual=[np.array([y])],
        meas_cov=[np.array([[noise]])],
    )


def random_linear_system(rng: np.random.Generator, q: int, n_steps: int, prior_rank: int,
                         eps: float = 0.0) -> LinearizedSystem:
    """Random linearised chain; ``Q_i = eps * I`` and a rank-``prior_rank`` prior."""
    basis = rng.standard_normal((q, prior_rank))
    coeff = np.eye(prior_rank)
    meas_index, jac, res, cov = [], [], [], []
    for i in range(n_steps + 1):
        if i == n_steps or rng.random() < 0.6:
            r = int(rng.integers(1, q + 1))
            meas_index.append(i)
            jac.append(rng.standard_normal((r, q)))
            res.append(rng.standard_normal(r))
            cov.append(0.5 * np.eye(r))
    return LinearizedSystem(
        prior_residual=rng.standard_normal(q),
        prior_basis=basis,
        prior_coeff_cov=coeff,
        transitions=np.eye(q) + 0.3 * rng.standard_normal((n_steps, q, q)),
        residuals=rng.standard_normal((n_steps, q)),
        process_covs=np.broadcast_to(eps * np.eye(q), (n_steps, q, q)).copy(),
        meas_index=meas_index,
        meas_jac=jac,
        meas_residual=res,
        meas_cov=cov,
    )


def dense_solve(sys_: LinearizedSystem, extra_prior: float = 0.0) -> np.ndarray:
    """Whitened least squares on the full stacked system (needs invertible blocks).

    Residual rows: ``p + xi_0`` under ``P0~ + extra_prior I``,
    ``a_i - F_i xi_i + xi_{i+1}`` under ``Q_i`` and ``n_k - H_k xi`` under ``N_k``.
    """
    n1, q = sys_.n_states, sys_.dof
    rows, rhs = [], []

    def add(block_row, target, cov):
        w, v = np.linalg.eigh(cov)
        white = (v / np.sqrt(w)).T
        rows.append(white @ block_row)
        rhs.append(white @ target)

    r0 = np.zeros((q, n1 * q))
    r0[:, :q] = np.eye(q)
    add(r0, -sys_.prior_residual, sys_.prior_cov + extra_prior * np.eye(q))
    for i in range(n1 - 1):
        r = np.zeros((q, n1 * q))
        r[:, i * q:(i + 1) * q] = -sys_.transitions[i]
        r[:, (i + 1) * q:(i + 2) * q] = np.eye(q)
        add(r, -sys_.residuals[i], sys_.process_covs[i])
    for idx, h, res, cov in zip(sys_.meas_index, sys_.meas_jac, sys_.meas_residual, sys_.meas_cov):
        r = np.zeros((h.shape[0], n1 * q))
        r[:, idx * q:(idx + 1) * q] = h
        add(r, res, cov)
    sol, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return sol.reshape(n1, q)


def fd_ratio(fn: Callable[[float], float], eps: float = 1e-2) -> float:
    """Error ratio at ``eps`` and ``eps / 2``; about 4 for quadratic shrinkage."""
    return fn(eps) / fn(eps / 2)


# --------------------------------------------------------------------------
# the checks
# --------------------------------------------------------------------------


def _timed(name: str, threshold: float, body: Callable[[], float], invert: bool = False) -> CheckResult:
    t = time.perf_counter()
    try:
        worst = float(body())
        ok = math.isfinite(worst) and worst <= threshold
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        worst, ok = math.inf, False
    return CheckResult(name, ok, worst, threshold, time.perf_counter() - t)


def check_lie_identities(rng: np.random.Generator, tol_scale: float = 1.0, n: int = 200) -> list[CheckResult]:
    out = []

    def roundtrip():
        worst = 0.0
        for g in (GroupId.SO2, GroupId.SE2, GroupId.SO3, GroupId.SE23):
            for _ in range(n):
                v = rng.standard_normal(g.dof)
                v *= rng.uniform(0.0, 2.0) / max(np.linalg.norm(v), 1e-300)
                worst = max(worst, float(np.linalg.norm(lie.log(lie.exp(g, v)) - v)))
        return worst

    def adjoint_identity():
        worst = 0.0
        for g in (GroupId.SE2, GroupId.SO3, GroupId.SE23):
            for _ in range(n):
                x = lie.random_element(g, rng, 1.0)
                v = 0.5 * rng.standard_normal(g.dof)
                lhs = (x @ lie.exp(g, v) @ x.inv()).mat
                worst = max(worst, float(np.abs(lhs - lie.exp(g, lie.adjoint(x) @ v).mat).max()))
        return worst

    def adjoint_homomorphism():
        worst = 0.0
        for g in (GroupId.SE2, GroupId.SO3, GroupId.SE23):
            for _ in range(n):
                a, b = lie.random_element(g, rng), lie.random_element(g, rng)
                worst = max(worst, float(np.abs(lie.adjoint(a @ b) - lie.adjoint(a) @ lie.adjoint(b)).max()))
        return worst

    def automorphisms():
        worst = 0.0
        for g in (GroupId.SE2, GroupId.SE23):
            phis = [lie.Identity(), lie.Conjugation(lie.random_element(g, rng))]
            if g is GroupId.SE23:
                phis.append(lie.PositionShift(0.005))
            for phi in phis:
                m = lie.automorphism_matrix(phi, g)
                for _ in range(n // 4):
                    x = lie.random_element(g, rng)
                    v = 0.5 * rng.standard_normal(g.dof)
                    lhs = phi.apply(x @ lie.exp(g, v)).mat
                    rhs = (phi.apply(x) @ lie.exp(g, m @ v)).mat
                    worst = max(worst, float(np.abs(lhs - rhs).max()))
        return worst

    def right_jacobian_order():
        # distance of the finite-difference error ratio from 4
        worst = 0.0
        for g in (GroupId.SE2, GroupId.SO3, GroupId.SE23):
            for _ in range(5):
                v = rng.standard_normal(g.dof)
                v *= rng.uniform(0.2, 2.0) / np.linalg.norm(v)
                d = rng.standard_normal(g.dof)
                d /= np.linalg.norm(d)
                j = lie.right_jacobian(g, v)
                xv = lie.exp(g, v)

                def err(e):
                    return float(np.linalg.norm(lie.log(xv @ lie.exp(g, e * d)) - v - e * j @ d))

                worst = max(worst, abs(fd_ratio(err) - 4.0))
        return worst

    out.append(_timed("lie: log(exp(v)) = v", 1e-9 * tol_scale, roundtrip))
    out.append(_timed("lie: adjoint conjugation", 1e-9 * tol_scale, adjoint_identity))
    out.append(_timed("lie: adjoint homomorphism", 1e-9 * tol_scale, adjoint_homomorphism))
    out.append(_timed("lie: automorphism matrix", 1e-9 * tol_scale, automorphisms))
    out.append(_timed("lie: right jacobian order", 0.5 * tol_scale, right_jacobian_order))
    return out


def model_steps(rng: np.random.Generator) -> list[GroupAffineStep]:
    """A robot step and a random strapdown step."""
    robot = models.robot2d_step(models.Robot2dConfig(speed=rng.uniform(0.5, 10.0)))
    ins = models.ins_step(rng.standard_normal(3), 5.0 * rng.standard_normal(3), 0.005, 1e-4, 1e-3)
    return [robot, ins]


def check_log_linearity(rng: np.random.Generator, tol_scale: float = 1.0, n: int = 1000) -> CheckResult:
    def body():
        worst = 0.0
        for _ in range(n):
            for s in model_steps(rng) + [random_step(GroupId.SE23, rng), random_step(GroupId.SE2, rng)]:
                x = lie.random_element(s.group, rng, 1.0)
                xi = rng.standard_normal(s.group.dof)
                xi *= rng.uniform(0.0, 1.0) / np.linalg.norm(xi)
                worst = max(worst, log_linearity_error(s, x, xi))
        return worst

    return _timed("dynamics: log-linearity", 1e-10 * tol_scale, body)


def check_noise_free_chains(rng: np.random.Generator, tol_scale: float = 1.0, n_chains: int = 20,
                   max_steps: int = 20) -> list[CheckResult]:
    reports = []

    def run():
        for c in range(n_chains):
            group = (GroupId.SE2, GroupId.SE23)[c % 2]
            problem, init = random_chain_problem(group, rng, int(rng.integers(1, max_steps + 1)))
            reports.append(chain_report(problem, init))
        return max(r.dyn_residual for r in reports)

    first = _timed("chains: dynamics kept", 1e-8 * tol_scale, run)
    span = max((r.xi0_offspan for r in reports), default=math.inf)
    prop = max((r.xi_propagation for r in reports), default=math.inf)
    thr = 1e-8 * tol_scale
    return [
        first,
        CheckResult("chains: xi0 in prior span", span <= thr, span, thr),
        CheckResult("chains: xi_{i+1} = F xi_i", prop <= thr, prop, thr),
    ]


def check_solver(rng: np.random.Generator, tol_scale: float = 1.0) -> list[CheckResult]:
    def scalar():
        sol = smoother.solve_chain(scalar_chain_system(), covariance=True)
        err = np.abs(sol.xi.ravel() - 0.5).max()
        return max(float(err), abs(sol.covariances[1][0, 0] - 0.5))

    def dense():
        worst = 0.0
        for _ in range(20):
            q = int(rng.integers(1, 5))
            sys_ = random_linear_system(rng, q, int(rng.integers(1, 6)), q, eps=0.3)
            got = smoother.solve_degenerate_chain(sys_)
            worst = max(worst, float(np.abs(got - dense_solve(sys_)).max()))
        return worst

    def order():
        sys0 = random_linear_system(rng, 3, 5, 1, eps=0.0)
        ref = smoother.solve_degenerate_chain(sys0)
        errs = []
        for eps in (1e-4, 1e-6, 1e-8):
            sys_ = LinearizedSystem(**{**sys0.__dict__, "process_covs": sys0.process_covs + eps * np.eye(3)})
            errs.append(float(np.abs(dense_solve(sys_, extra_prior=eps) - ref).max()))
        slopes = np.diff(np.log10(errs)) / -2.0
        return max(0.0, 0.9 - float(slopes.min()))

    thr = 1e-12 * tol_scale
    return [
        _timed("solver: scalar chain", thr, scalar),
        _timed("solver: dense oracle", 1e-9 * tol_scale, dense),
        _timed("solver: eps -> 0 order", 0.0, order),
    ]


def run_all(seed: int = 0, tol_scale: float = 1.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    results += check_lie_identities(rng, tol_scale)
    results.append(check_log_linearity(rng, tol_scale, n=250))
    results += check_noise_free_chains(rng, tol_scale)
    results += check_solver(rng, tol_scale)
    return results


def main(seed: int = 0, tol_scale: float = 1.0, stream=None) -> int:
    stream = stream or sys.stdout
    results = run_all(seed, tol_scale)
    for r in results:
        print(r.line(), file=stream)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed", file=stream)
    return 1 if failed else 0
