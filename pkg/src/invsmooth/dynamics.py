"""Group-affine transitions ``x -> gamma @ phi(x) @ upsilon``."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from . import lie
from .lie import GroupElement, GroupId


class EmptyWindow(ValueError):
    pass


class NonComposable(ValueError):
    pass


class RankCollapse(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class GroupAffineStep:
    """One transition with its process noise.

    ``q_cov`` lives on the tangent at ``upsilon``: the true increment is
    ``upsilon @ exp(w)`` with ``w ~ N(0, q_cov)``.
    """

    gamma: GroupElement
    phi: lie.Automorphism
    upsilon: GroupElement
    q_cov: np.ndarray | None = None
    dt: float = 0.0

    def __post_init__(self):
        g = self.gamma.group
        if self.upsilon.group is not g:
            raise ValueError("gamma and upsilon live on different groups")
        q = g.dof
        cov = np.zeros((q, q)) if self.q_cov is None else np.asarray(self.q_cov, dtype=float)
        if cov.shape != (q, q):
            raise ValueError(f"q_cov must be {q}x{q}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("q_cov must be symmetric")
        if np.any(cov) and np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ValueError("q_cov must be positive semi-definite")
        object.__setattr__(self, "q_cov", cov)

    @property
    def group(self) -> GroupId:
        return self.gamma.group

    @property
    def noise_free(self) -> bool:
        return not np.any(self.q_cov)

    def __call__(self, x: GroupElement) -> GroupElement:
        return step(self, x)


def identity_step(group: GroupId, dt: float = 0.0) -> GroupAffineStep:
    e = GroupElement.identity(group)
    return GroupAffineStep(e, lie.Identity(), e, None, dt)


def step(s: GroupAffineStep, x: GroupElement) -> GroupElement:
    if x.group is not s.group:
        raise ValueError(f"group mismatch: step on {s.group.value}, state on {x.group.value}")
    return s.gamma @ s.phi.apply(x) @ s.upsilon


def log_linear_matrix(s: GroupAffineStep) -> np.ndarray:
    """``F`` with ``f(x exp(xi)) = f(x) exp(F xi)``, exactly."""
    return lie.adjoint(s.upsilon.inv()) @ lie.automorphism_matrix(s.phi, s.group)


def propagate_noise(s: GroupAffineStep, p_in: np.ndarray) -> np.ndarray:
    f = log_linear_matrix(s)
    out = f @ p_in @ f.T + s.q_cov
    return 0.5 * (out + out.T)


def _compose_pair(first: GroupAffineStep, second: GroupAffineStep) -> GroupAffineStep:
    try:
        phi = lie.compose_automorphisms(second.phi, first.phi)
    except lie.UnsupportedAutomorphism as exc:
        raise NonComposable(str(exc)) from exc
    gamma = second.gamma @ second.phi.apply(first.gamma)
    upsilon = second.phi.apply(first.upsilon) @ second.upsilon
    f2 = log_linear_matrix(second)
    cov = f2 @ first.q_cov @ f2.T + second.q_cov
    return GroupAffineStep(gamma, phi, upsilon, 0.5 * (cov + cov.T), first.dt + second.dt)


def _probe(group: GroupId) -> GroupElement:
    xi = np.linspace(0.3, -0.7, group.dof)
    return lie.exp(group, xi)


def preintegrate(steps: Sequence[GroupAffineStep], check: bool = True) -> GroupAffineStep:
    """Fold a window of steps into a single equivalent step.

    The mean composition is exact; the covariance is composed pairwise as
    ``Q_12 = F_2 Q_1 F_2^T + Q_2``.
    """
    if not steps:
        raise EmptyWindow("cannot preintegrate an empty window")
    out = steps[0]
    for s in steps[1:]:
        if s.group is not out.group:
            raise NonComposable("steps live on different groups")
        out = _compose_pair(out, s)
    if check and len(steps) > 1:
        x = _probe(out.group)
        seq = x
        for s in steps:
            seq = step(s, seq)
        got = step(out, x).mat
        scale = max(1.0, np.abs(seq.mat).max())
        if np.abs(got - seq.mat).max() > 1e-9 * scale:
            raise NonComposable("composed step does not reproduce sequential stepping")
    return out


@dataclass(frozen=True, eq=False)
class ReachableSubspace:
    """States ``anchor @ exp(basis @ alpha)`` reachable without noise."""

    anchor: GroupElement
    basis: np.ndarray

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if basis.shape[0] != self.anchor.group.dof:
            basis = basis.T
        if basis.shape[0] != self.anchor.group.dof:
            raise ValueError("basis rows must match the tangent dimension")
        object.__setattr__(self, "basis", basis)

    def point(self, alpha) -> GroupElement:
        return self.anchor @ lie.exp(self.anchor.group, self.basis @ np.atleast_1d(alpha))


def numerical_rank(basis: np.ndarray, rtol: float = 1e-10) -> int:
    """Rank from a column-pivoted QR, threshold ``rtol * |basis|``."""
    basis = np.asarray(basis, dtype=float)
    if basis.size == 0:
        return 0
    _, r, _ = scipy.linalg.qr(basis, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    norm = np.linalg.norm(basis, 2)
    if norm == 0.0:
        return 0
    return int(np.sum(diag > rtol * norm))


def propagate_subspace(s: GroupAffineStep, r: ReachableSubspace) -> ReachableSubspace:
    basis = log_linear_matrix(s) @ r.basis
    p = r.basis.shape[1]
    if numerical_rank(basis) < p:
        raise RankCollapse(f"propagated basis lost rank (expected {p})")
    return ReachableSubspace(step(s, r.anchor), basis)


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Factor ``L`` with ``L @ L.T == cov`` for a PSD (possibly singular) matrix."""
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_noisy_step(s: GroupAffineStep, rng: np.random.Generator) -> GroupAffineStep:
    """Draw one realisation ``upsilon @ exp(w)``; the result has zero noise."""
    zero = np.zeros_like(s.q_cov)
    if s.noise_free:
        return replace(s, q_cov=zero)
    w = psd_sqrt(s.q_cov) @ rng.standard_normal(s.group.dof)
    return replace(s, upsilon=s.upsilon @ lie.exp(s.group, w), q_cov=zero)
