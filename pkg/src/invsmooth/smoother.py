"""Gauss-Newton smoothing on chains of group-affine transitions.

The linearised cost around the estimates ``x_i`` (with ``x_i <- R(x_i, xi_i)``
for the chosen retraction ``R``) is

    |p + xi_0|^2_{P0~} + sum_i |a_i - F_i xi_i + xi_{i+1}|^2_{Q_i}
                       + sum_k |n_k - H_k xi|^2_{N_k}

and is solved in covariance form, which tolerates ``Q_i = 0`` and a
rank-deficient prior: with ``A`` the unit lower block-bidiagonal matrix of
the dynamics rows, ``b = -[p; a_0; ...]``, ``L = H A^-1`` and
``Pi = diag(P0~, Q_0, ...)``,

    xi* = A^-1 (b + K (n - L b)),   K = Pi L^T (L Pi L^T + N)^-1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from . import dynamics, lie
from .dynamics import GroupAffineStep
from .lie import GroupElement, GroupId

MAX_INNOVATION_COND = 1e12


class LinearizationFailure(ArithmeticError):
    pass


class SingularInnovation(np.linalg.LinAlgError):
    pass


class RetractionKind(enum.Enum):
    INVARIANT = "invariant"
    FORSTER = "forster"
    GTSAM = "gtsam"


# --------------------------------------------------------------------------
# problem description
# --------------------------------------------------------------------------


def _orthonormal(basis: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(basis)
    keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
    return q[:, keep]


def span_residual(basis: np.ndarray, vectors: np.ndarray) -> float:
    """Largest norm of the part of ``vectors`` (columns) outside ``span(basis)``."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float).T).T
    if vectors.size == 0:
        return 0.0
    u = _orthonormal(basis)
    off = vectors - u @ (u.T @ vectors)
    return float(np.linalg.norm(off, axis=0).max())


def subalgebra_residual(group: GroupId, basis: np.ndarray) -> float:
    """Relative size of the brackets ``[e_i, e_j]`` that leave ``span(basis)``."""
    basis = np.asarray(basis, dtype=float)
    worst = 0.0
    u = _orthonormal(basis)
    cols = [u[:, i] for i in range(u.shape[1])]
    for i, a in enumerate(cols):
        for b in cols[i + 1:]:
            br = lie.bracket(group, a, b)
            worst = max(worst, span_residual(u, br[:, None]))
    return worst


@dataclass(frozen=True, eq=False)
class DegeneratePrior:
    """Left-invariant Gaussian ``mean @ exp(basis @ alpha)``, ``alpha ~ N(0, coeff_cov)``.

    The tangent covariance ``basis @ coeff_cov @ basis.T`` may be rank
    deficient. When ``require_subalgebra`` is set, ``span(basis)`` must be
    closed under the Lie bracket.
    """

    mean: GroupElement
    basis: np.ndarray
    coeff_cov: np.ndarray
    require_subalgebra: bool = True

    def __post_init__(self):
        q = self.mean.group.dof
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim == 1:
            basis = basis[:, None]
        coeff = np.atleast_2d(np.asarray(self.coeff_cov, dtype=float))
        p = basis.shape[1]
        if basis.shape[0] != q:
            raise ValueError(f"basis must have {q} rows")
        if coeff.shape != (p, p):
            raise ValueError(f"coeff_cov must be {p}x{p}")
        if dynamics.numerical_rank(basis) < p:
            raise ValueError("prior basis must have full column rank")
        if not np.allclose(coeff, coeff.T, atol=1e-12 * max(1.0, np.abs(coeff).max())):
            raise ValueError("coeff_cov must be symmetric")
        if p and np.linalg.eigvalsh(coeff).min() <= 0.0:
            raise ValueError("coeff_cov must be positive definite")
        if self.require_subalgebra and p:
            res = subalgebra_residual(self.mean.group, basis)
            if res > 1e-9:
                raise ValueError(f"prior basis is not a Lie subalgebra (residual {res:.3g})")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "coeff_cov", coeff)

    @property
    def group(self) -> GroupId:
        return self.mean.group

    @property
    def cov(self) -> np.ndarray:
        return self.basis @ self.coeff_cov @ self.basis.T

    @classmethod
    def from_covariance(cls, mean: GroupElement, cov: np.ndarray, rtol: float = 1e-12,
                        require_subalgebra: bool = False) -> "DegeneratePrior":
        """Factor a PSD tangent covariance over the eigenvectors of its range."""
        cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
        w, v = np.linalg.eigh(cov)
        top = max(w.max(), 0.0)
        keep = w > rtol * top if top > 0 else np.zeros_like(w, dtype=bool)
        return cls(mean, v[:, keep], np.diag(w[keep]), require_subalgebra)


@dataclass(frozen=True, eq=False)
class MeasurementFactor:
    """Unary observation ``y = h(x_index) + n``, ``n ~ N(0, noise_cov)``.

    ``model(x)`` returns the prediction and its Jacobian with respect to a
    right perturbation ``x exp(xi)``.
    """

    index: int
    value: np.ndarray
    noise_cov: np.ndarray
    model: Callable[[GroupElement], tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.value, dtype=float))
        n = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        if n.shape != (y.size, y.size):
            raise ValueError("noise_cov does not match the measurement size")
        if np.linalg.eigvalsh(0.5 * (n + n.T)).min() <= 0.0:
            raise ValueError("noise_cov must be positive definite")
        object.__setattr__(self, "value", y)
        object.__setattr__(self, "noise_cov", n)

    def shifted(self, offset: int) -> "MeasurementFactor":
        return MeasurementFactor(self.index + offset, self.value, self.noise_cov, self.model)


@dataclass(frozen=True, eq=False)
class FactorChainProblem:
    prior: DegeneratePrior
    steps: tuple[GroupAffineStep, ...]
    measurements: tuple[MeasurementFactor, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "measurements", tuple(self.measurements))
        g = self.prior.group
        for s in self.steps:
            if s.group is not g:
                raise ValueError("all steps must live on the prior's group")
        for m in self.measurements:
            if not 0 <= m.index <= len(self.steps):
                raise ValueError(f"measurement index {m.index} outside the chain")

    @property
    def group(self) -> GroupId:
        return self.prior.group

    @property
    def n_states(self) -> int:
        return len(self.steps) + 1


@dataclass
class IterationRecord:
    iteration: int
    length: float
    max_dyn_residual: float
    subspace_residual: float
    cost: float = math.nan
    step_norm: float = math.nan
    xi: np.ndarray | None = None
    states: list[GroupElement] | None = None


@dataclass
class TrajectoryEstimate:
    states: list[GroupElement]
    iteration_log: list[IterationRecord] = field(default_factory=list)
    covariances: list[np.ndarray] | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return len(self.states)


# --------------------------------------------------------------------------
# retractions
# --------------------------------------------------------------------------


def tangent_map(kind: RetractionKind, x: GroupElement) -> np.ndarray:
    """``D`` with ``R(x, d) = x exp(D d + O(|d|^2))``."""
    q = x.group.dof
    out = np.eye(q)
    if kind is RetractionKind.FORSTER and x.group is GroupId.SE23:
        out[3:6, 3:6] = x.rot.T
    return out


def tangent_map_inv(kind: RetractionKind, x: GroupElement) -> np.ndarray:
    q = x.group.dof
    out = np.eye(q)
    if kind is RetractionKind.FORSTER and x.group is GroupId.SE23:
        out[3:6, 3:6] = x.rot
    return out


def apply_retraction(kind: RetractionKind, x: GroupElement, xi) -> GroupElement:
    xi = np.asarray(xi, dtype=float)
    group = x.group
    if kind is RetractionKind.INVARIANT or group in (GroupId.SO2, GroupId.SO3):
        return x @ lie.exp(group, xi)
    m = x.mat.copy()
    if group is GroupId.SE2:
        rot = m[:2, :2]
        m[:2, 2] = m[:2, 2] + rot @ xi[:2]
        m[:2, :2] = rot @ lie.rot2(xi[2])
        return GroupElement(group, m)
    rot = m[:3, :3]
    dv = xi[3:6] if kind is RetractionKind.FORSTER else rot @ xi[3:6]
    m[:3, 3] = m[:3, 3] + dv
    m[:3, 4] = m[:3, 4] + rot @ xi[6:9]
    m[:3, :3] = rot @ lie.so3_exp(xi[:3])
    return GroupElement(group, m)


def estimated_increment(s: GroupAffineStep, est_i: GroupElement, est_i1: GroupElement) -> GroupElement:
    """The increment the two estimates imply: ``phi(x_i)^-1 gamma^-1 x_{i+1}``."""
    return s.phi.apply(est_i).inv() @ s.gamma.inv() @ est_i1


def increment_residual(kind: RetractionKind, delta: GroupElement, what: str = "residual") -> np.ndarray:
    """Tangent coordinates of a dynamics mismatch.

    The invariant smoother uses the group logarithm. The other two use the
    decoupled preintegration residual: rotation log plus raw translation
    parts.
    """
    if kind is RetractionKind.INVARIANT or delta.group in (GroupId.SO2, GroupId.SO3):
        return _log(delta, what)
    if delta.group is GroupId.SE2:
        return np.array([delta.mat[0, 2], delta.mat[1, 2], math.atan2(delta.mat[1, 0], delta.mat[0, 0])])
    try:
        phi = lie.so3_log(delta.rot)
    except lie.AngleAtCut as exc:
        raise LinearizationFailure(f"{what}: {exc}") from exc
    return np.concatenate([phi, delta.velocity, delta.position])


def retraction_jacobian(kind: RetractionKind, s: GroupAffineStep,
                        est_i: GroupElement, est_i1: GroupElement) -> np.ndarray:
    """Transition matrix of the linearised dynamics row for ``kind``."""
    if kind is RetractionKind.INVARIANT:
        return dynamics.log_linear_matrix(s)
    m = lie.automorphism_matrix(s.phi, s.group)
    f_hat = lie.adjoint(estimated_increment(s, est_i, est_i1).inv()) @ m
    if kind is RetractionKind.GTSAM:
        return f_hat
    return tangent_map_inv(kind, est_i1) @ f_hat @ tangent_map(kind, est_i)


# --------------------------------------------------------------------------
# linearisation
# --------------------------------------------------------------------------


@dataclass
class LinearizedSystem:
    """Blocks of the quadratic cost, already in unit-diagonal form."""

    prior_residual: np.ndarray
    prior_basis: np.ndarray
    prior_coeff_cov: np.ndarray
    transitions: np.ndarray  # (n, q, q)
    residuals: np.ndarray  # (n, q)
    process_covs: np.ndarray  # (n, q, q)
    meas_index: list[int] = field(default_factory=list)
    meas_jac: list[np.ndarray] = field(default_factory=list)
    meas_residual: list[np.ndarray] = field(default_factory=list)
    meas_cov: list[np.ndarray] = field(default_factory=list)
    subalgebra_residual: float = 0.0

    @property
    def dof(self) -> int:
        return self.prior_residual.shape[0]

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0] + 1

    @property
    def prior_cov(self) -> np.ndarray:
        e = self.prior_basis
        return e @ self.prior_coeff_cov @ e.T


def _log(g: GroupElement, what: str) -> np.ndarray:
    try:
        return lie.log(g)
    except lie.AngleAtCut as exc:
        raise LinearizationFailure(f"{what}: {exc}") from exc


def linearize(problem: FactorChainProblem, est: TrajectoryEstimate | Sequence[GroupElement],
              kind: RetractionKind = RetractionKind.INVARIANT) -> LinearizedSystem:
    states = est.states if isinstance(est, TrajectoryEstimate) else list(est)
    if len(states) != problem.n_states:
        raise ValueError("estimate length does not match the chain")
    group = problem.group
    q = group.dof
    n = len(problem.steps)
    d = [tangent_map(kind, x) for x in states]
    dinv = [tangent_map_inv(kind, x) for x in states]

    prior = problem.prior
    p0 = _log(prior.mean.inv() @ states[0], "prior residual")
    jac = lie.right_jacobian(group, p0)
    e_tilde = np.linalg.solve(jac, prior.basis)
    sub_res = 0.0
    if prior.require_subalgebra and prior.basis.shape[1]:
        scale = max(1.0, np.abs(e_tilde).max())
        sub_res = span_residual(prior.basis, e_tilde) / scale
        if sub_res > 1e-9:
            raise LinearizationFailure(
                f"J0^-1 E left the prior subalgebra (residual {sub_res:.3g})")

    trans = np.empty((n, q, q))
    res = np.empty((n, q))
    covs = np.empty((n, q, q))
    for i, s in enumerate(problem.steps):
        delta = dynamics.step(s, states[i]).inv() @ states[i + 1]
        a = increment_residual(kind, delta, f"dynamics residual {i}")
        trans[i] = retraction_jacobian(kind, s, states[i], states[i + 1])
        res[i] = dinv[i + 1] @ a
        covs[i] = dinv[i + 1] @ s.q_cov @ dinv[i + 1].T

    sys = LinearizedSystem(dinv[0] @ p0, dinv[0] @ e_tilde, prior.coeff_cov,
                           trans, res, covs, subalgebra_residual=sub_res)
    for m in problem.measurements:
        pred, h = m.model(states[m.index])
        sys.meas_index.append(m.index)
        sys.meas_jac.append(np.atleast_2d(h) @ d[m.index])
        sys.meas_residual.append(m.value - pred)
        sys.meas_cov.append(m.noise_cov)
    return sys


# --------------------------------------------------------------------------
# the degenerate chain solver
# --------------------------------------------------------------------------


class ChainSolution(NamedTuple):
    xi: np.ndarray  # (n+1, q)
    cost: float
    gain: np.ndarray  # (n+1, q, m): block rows of K
    covariances: list[np.ndarray] | None


def _stack_rhs(sys: LinearizedSystem) -> np.ndarray:
    b = np.empty((sys.n_states, sys.dof))
    b[0] = -sys.prior_residual
    b[1:] = -sys.residuals
    return b


def solve_chain(sys: LinearizedSystem, covariance: bool | Sequence[int] = False) -> ChainSolution:
    """Covariance-form solution of the linearised chain.

    ``covariance`` selects posterior marginals: ``True`` for every state or
    a sequence of state indices.
    """
    n1, q = sys.n_states, sys.dof
    f = sys.transitions
    b = _stack_rhs(sys)
    pi = np.empty((n1, q, q))
    pi[0] = sys.prior_cov
    pi[1:] = sys.process_covs

    rows = [np.atleast_1d(r).size for r in sys.meas_residual]
    m = int(sum(rows))
    # w[i] = i-th block column of L^T = A^-T H^T, by backward substitution
    w = np.zeros((n1, q, m))
    offsets = np.cumsum([0] + rows)
    for j, idx in enumerate(sys.meas_index):
        w[idx, :, offsets[j]:offsets[j + 1]] += sys.meas_jac[j].T
    for i in range(n1 - 2, -1, -1):
        w[i] += f[i].T @ w[i + 1]

    g = pi @ w  # Pi L^T, block rows
    z = b.copy()
    sigma = None
    y = np.zeros(m)
    cost = 0.0
    if m:
        noise = scipy.linalg.block_diag(*sys.meas_cov)
        sigma = np.einsum("iqm,iqk->mk", w, g) + noise
        sigma = 0.5 * (sigma + sigma.T)
        cond = np.linalg.cond(sigma)
        if not np.isfinite(cond) or cond > MAX_INNOVATION_COND:
            raise SingularInnovation(f"innovation covariance condition number {cond:.3g}")
        innov = np.concatenate([np.atleast_1d(r) for r in sys.meas_residual])
        innov = innov - np.einsum("iqm,iq->m", w, b)
        chol = scipy.linalg.cho_factor(sigma)
        y = scipy.linalg.cho_solve(chol, innov)
        z += g @ y
        cost = float(innov @ y)
        gain = g @ scipy.linalg.cho_solve(chol, np.eye(m))
    else:
        gain = np.zeros((n1, q, 0))

    xi = np.empty_like(z)
    xi[0] = z[0]
    for i in range(n1 - 1):
        xi[i + 1] = z[i + 1] + f[i] @ xi[i]

    covs = None
    if covariance is not False:
        wanted = set(range(n1)) if covariance is True else set(covariance)
        covs = [None] * n1
        prop = pi[0].copy()
        u = g[0].copy()
        for i in range(n1):
            if i:
                prop = f[i - 1] @ prop @ f[i - 1].T + pi[i]
                u = f[i - 1] @ u + g[i]
            if i in wanted:
                c = prop - (u @ scipy.linalg.cho_solve(chol, u.T) if m else 0.0)
                covs[i] = 0.5 * (c + c.T)
    return ChainSolution(xi, cost, gain, covs)


def solve_degenerate_chain(sys: LinearizedSystem) -> np.ndarray:
    """Optimal tangent corrections, one row per state."""
    return solve_chain(sys).xi


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------


def trajectory_length(states: Sequence[GroupElement]) -> float:
    if not states or states[0].group not in (GroupId.SE2, GroupId.SE23):
        return math.nan
    pos = np.array([x.translation for x in states])
    return float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum())


def dynamics_residuals(steps: Sequence[GroupAffineStep], states: Sequence[GroupElement]) -> np.ndarray:
    out = np.empty(len(steps))
    for i, s in enumerate(steps):
        try:
            out[i] = np.linalg.norm(lie.log(dynamics.step(s, states[i]).inv() @ states[i + 1]))
        except lie.AngleAtCut:
            out[i] = math.inf
    return out


def reachable_sets(problem: FactorChainProblem) -> list[tuple[GroupElement, np.ndarray]]:
    """Noise-free anchor and orthonormal tangent basis of every state."""
    anchor = problem.prior.mean
    basis = problem.prior.basis
    out = [(anchor, _orthonormal(basis))]
    for s in problem.steps:
        anchor = dynamics.step(s, anchor)
        basis = dynamics.log_linear_matrix(s) @ basis
        out.append((anchor, _orthonormal(basis)))
    return out


def subspace_residual(sets, states: Sequence[GroupElement]) -> float:
    worst = 0.0
    for (anchor, u), x in zip(sets, states):
        try:
            v = lie.log(anchor.inv() @ x)
        except lie.AngleAtCut:
            return math.nan
        worst = max(worst, float(np.linalg.norm(v - u @ (u.T @ v))))
    return worst


# --------------------------------------------------------------------------
# Gauss-Newton
# --------------------------------------------------------------------------


@dataclass
class GaussNewtonOptions:
    tol: float = 1e-10
    max_iters: int = 50
    project_init: bool = False
    covariance: bool | Sequence[int] = False
    keep_xi: bool = True
    keep_states: bool = False


def project_onto_dynamics(steps: Sequence[GroupAffineStep], x0: GroupElement) -> list[GroupElement]:
    states = [x0]
    for s in steps:
        states.append(dynamics.step(s, states[-1]))
    return states


def gauss_newton(problem: FactorChainProblem, init: TrajectoryEstimate | Sequence[GroupElement],
                 kind: RetractionKind = RetractionKind.INVARIANT,
                 opts: GaussNewtonOptions | None = None) -> TrajectoryEstimate:
    """Relinearise and solve until the correction falls below ``opts.tol``.

    Every iterate is logged; the record of iterate ``k`` carries the cost and
    correction computed at that iterate. A final iterate produced by the last
    allowed update is logged without a cost.
    """
    opts = opts or GaussNewtonOptions()
    states = list(init.states if isinstance(init, TrajectoryEstimate) else init)
    if opts.project_init:
        states = project_onto_dynamics(problem.steps, states[0])
    sets = reachable_sets(problem)
    out = TrajectoryEstimate(states)

    def record(k, cost=math.nan, xi=None):
        rec = IterationRecord(
            iteration=k,
            length=trajectory_length(states),
            max_dyn_residual=float(dynamics_residuals(problem.steps, states).max(initial=0.0)),
            subspace_residual=subspace_residual(sets, states),
            cost=cost,
            step_norm=math.nan if xi is None else float(np.abs(xi).max(initial=0.0)),
            xi=xi if opts.keep_xi else None,
            states=list(states) if opts.keep_states else None,
        )
        out.iteration_log.append(rec)

    converged = False
    for k in range(opts.max_iters):
        sys = linearize(problem, states, kind)
        sol = solve_chain(sys, opts.covariance)
        record(k, sol.cost, sol.xi)
        if sol.covariances is not None:
            out.covariances = sol.covariances
        costs = [r.cost for r in out.iteration_log]
        if len(costs) >= 3 and costs[-1] > costs[-2] * (1 + 1e-9) and costs[-2] > costs[-3] * (1 + 1e-9):
            if "NonDecreasingCost" not in out.warnings:
                out.warnings.append("NonDecreasingCost")
        if np.abs(sol.xi).max(initial=0.0) < opts.tol:
            converged = True
            break
        states = [apply_retraction(kind, x, d) for x, d in zip(states, sol.xi)]
    if not converged:
        record(opts.max_iters)
    out.states = states
    return out


# --------------------------------------------------------------------------
# marginalisation and sliding window
# --------------------------------------------------------------------------


def marginalize_oldest(problem: FactorChainProblem, est: TrajectoryEstimate | Sequence[GroupElement],
                       kind: RetractionKind = RetractionKind.INVARIANT
                       ) -> tuple[FactorChainProblem, TrajectoryEstimate]:
    """Drop state 0 and install an equivalent prior on state 1."""
    states = list(est.states if isinstance(est, TrajectoryEstimate) else est)
    if problem.n_states < 2:
        raise ValueError("chain too short to marginalise")
    s0 = problem.steps[0]
    on_first = [m for m in problem.measurements if m.index == 0]
    rest = tuple(m.shifted(-1) for m in problem.measurements if m.index != 0)
    prior = problem.prior

    if not on_first:
        f0 = dynamics.log_linear_matrix(s0)
        mean = dynamics.step(s0, prior.mean)
        if s0.noise_free:
            new_prior = DegeneratePrior(mean, f0 @ prior.basis, prior.coeff_cov,
                                        prior.require_subalgebra)
        else:
            cov = f0 @ prior.cov @ f0.T + s0.q_cov
            new_prior = DegeneratePrior.from_covariance(mean, cov)
    else:
        local = FactorChainProblem(prior, (s0,), tuple(on_first))
        sol = solve_chain(linearize(local, states[:2], kind), covariance=[1])
        d1 = tangent_map(kind, states[1])
        mean = apply_retraction(kind, states[1], sol.xi[1])
        cov = d1 @ sol.covariances[1] @ d1.T
        if kind is RetractionKind.INVARIANT:
            # re-express the covariance at the updated mean
            j = lie.right_jacobian_inv(problem.group, sol.xi[1])
            cov = j @ cov @ j.T
        new_prior = DegeneratePrior.from_covariance(mean, cov)

    new_problem = FactorChainProblem(new_prior, problem.steps[1:], rest)
    return new_problem, TrajectoryEstimate(states[1:])


class SlidingWindowSmoother:
    """Fixed-size window; the oldest state is marginalised once the window is full."""

    def __init__(self, prior: DegeneratePrior, kind: RetractionKind = RetractionKind.INVARIANT,
                 window: int = 10, max_iters: int = 1, init: GroupElement | None = None):
        if window < 2:
            raise ValueError("window must hold at least two states")
        self.kind = kind
        self.window = window
        self.max_iters = max_iters
        self.problem = FactorChainProblem(prior, ())
        self.states = [init if init is not None else prior.mean]
        self.offset = 0  # absolute index of the oldest state in the window
        self.last_covariance: np.ndarray | None = None

    @property
    def newest(self) -> GroupElement:
        return self.states[-1]

    def push(self, s: GroupAffineStep, measurements: Sequence[MeasurementFactor] = ()) -> GroupElement:
        """Append a state predicted through ``s``, attach its measurements, update."""
        self.states.append(dynamics.step(s, self.states[-1]))
        local = len(self.states) - 1
        meas = list(self.problem.measurements)
        meas.extend(MeasurementFactor(local, m.value, m.noise_cov, m.model) for m in measurements)
        self.problem = FactorChainProblem(self.problem.prior, self.problem.steps + (s,), meas)
        if len(self.states) > self.window:
            self.problem, est = marginalize_oldest(self.problem, self.states, self.kind)
            self.states = est.states
            self.offset += 1
        opts = GaussNewtonOptions(max_iters=self.max_iters, covariance=[len(self.states) - 1],
                                  keep_xi=False)
        est = gauss_newton(self.problem, self.states, self.kind, opts)
        self.states = est.states
        cov = est.covariances[-1] if est.covariances else None
        if cov is not None:
            d = tangent_map(self.kind, self.states[-1])
            cov = d @ cov @ d.T
        self.last_covariance = cov
        return self.newest
