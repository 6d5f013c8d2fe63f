"""Matrix Lie group kernel for SO(2), SE(2), SO(3) and SE_2(3).

Tangent vectors are plain 1-D ``numpy`` arrays with a fixed ordering:

* ``SO2``  -> ``(theta,)``
* ``SE2``  -> ``(nu_1, nu_2, theta)``
* ``SO3``  -> ``(phi_x, phi_y, phi_z)``
* ``SE23`` -> ``(phi, nu, rho)``: attitude, velocity, position (9 entries)

The adjoint follows the convention ``g exp(xi) g^-1 = exp(Ad_g xi)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# Below this angle the closed forms switch to Taylor series (three terms are
# exact to double precision here).
SMALL_ANGLE = 1e-2
# Distance from pi at which log() refuses to pick a branch.
CUT_TOLERANCE = 1e-7


class AngleAtCut(ValueError):
    """Rotation angle too close to pi for log() to be unique."""


class UnsupportedAutomorphism(ValueError):
    """Automorphism not defined on the requested group."""


class GroupId(enum.Enum):
    SO2 = "SO2"
    SE2 = "SE2"
    SO3 = "SO3"
    SE23 = "SE23"

    @property
    def dof(self) -> int:
        """Tangent dimension q."""
        return _DOF[self]

    @property
    def size(self) -> int:
        """Side length n of the matrix representation."""
        return _SIZE[self]

    @property
    def rot_dim(self) -> int:
        return 2 if self in (GroupId.SO2, GroupId.SE2) else 3


_DOF = {GroupId.SO2: 1, GroupId.SE2: 3, GroupId.SO3: 3, GroupId.SE23: 9}
_SIZE = {GroupId.SO2: 2, GroupId.SE2: 3, GroupId.SO3: 3, GroupId.SE23: 5}


@dataclass(frozen=True, eq=False)
class GroupElement:
    """Homogeneous-matrix group element.

    Construction only checks the shape; call :meth:`validate` to check the
    rotation block and the fixed bottom rows.
    """

    group: GroupId
    mat: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=float)
        n = self.group.size
        if mat.shape != (n, n):
            raise ValueError(f"{self.group.value} needs a {n}x{n} matrix, got {mat.shape}")
        object.__setattr__(self, "mat", mat)

    @classmethod
    def identity(cls, group: GroupId) -> "GroupElement":
        return cls(group, np.eye(group.size))

    @property
    def rot(self) -> np.ndarray:
        d = self.group.rot_dim
        return self.mat[:d, :d]

    @property
    def translation(self) -> np.ndarray:
        """Position column (SE2) or position column (SE23)."""
        if self.group is GroupId.SE2:
            return self.mat[:2, 2]
        if self.group is GroupId.SE23:
            return self.mat[:3, 4]
        raise AttributeError(f"{self.group.value} has no translation")

    position = translation

    @property
    def velocity(self) -> np.ndarray:
        if self.group is not GroupId.SE23:
            raise AttributeError(f"{self.group.value} has no velocity")
        return self.mat[:3, 3]

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        if other.group is not self.group:
            raise ValueError(f"group mismatch: {self.group.value} vs {other.group.value}")
        return GroupElement(self.group, self.mat @ other.mat)

    def inv(self) -> "GroupElement":
        g = self.group
        d = g.rot_dim
        out = np.eye(g.size)
        rt = self.mat[:d, :d].T
        out[:d, :d] = rt
        if g.size > d:
            out[:d, d:] = -rt @ self.mat[:d, d:]
        return GroupElement(g, out)

    def validate(self, tol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless the matrix is a member of its group."""
        g = self.group
        d = g.rot_dim
        rot = self.mat[:d, :d]
        if np.abs(rot @ rot.T - np.eye(d)).max() > tol:
            raise ValueError("rotation block is not orthogonal")
        if abs(np.linalg.det(rot) - 1.0) > tol:
            raise ValueError("rotation block has determinant != 1")
        tail = self.mat[d:, :]
        expected = np.zeros_like(tail)
        expected[:, d:] = np.eye(g.size - d)
        if not np.array_equal(tail, expected):
            raise ValueError("bottom rows are not [0 | I]")

    def is_valid(self, tol: float = 1e-9) -> bool:
        try:
            self.validate(tol)
        except ValueError:
            return False
        return True

    def __repr__(self) -> str:
        return f"GroupElement({self.group.value}, {self.mat.tolist()})"


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


# --------------------------------------------------------------------------
# hat / vee / ad
# --------------------------------------------------------------------------


def hat(group: GroupId, xi) -> np.ndarray:
    """Lie algebra matrix of a tangent vector."""
    xi = np.asarray(xi, dtype=float)
    n = group.size
    out = np.zeros((n, n))
    if group is GroupId.SO2:
        out[:] = xi[0] * _J2
    elif group is GroupId.SE2:
        out[:2, :2] = xi[2] * _J2
        out[:2, 2] = xi[:2]
    elif group is GroupId.SO3:
        out[:] = skew(xi)
    else:
        out[:3, :3] = skew(xi[:3])
        out[:3, 3] = xi[3:6]
        out[:3, 4] = xi[6:9]
    return out


def vee(group: GroupId, mat) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if group is GroupId.SO2:
        return np.array([mat[1, 0]])
    if group is GroupId.SE2:
        return np.array([mat[0, 2], mat[1, 2], mat[1, 0]])
    w = np.array([mat[2, 1], mat[0, 2], mat[1, 0]])
    if group is GroupId.SO3:
        return w
    return np.concatenate([w, mat[:3, 3], mat[:3, 4]])


def ad(group: GroupId, xi) -> np.ndarray:
    """Matrix of ``eta -> [xi, eta]``."""
    xi = np.asarray(xi, dtype=float)
    if group is GroupId.SO2:
        return np.zeros((1, 1))
    if group is GroupId.SE2:
        out = np.zeros((3, 3))
        out[:2, :2] = xi[2] * _J2
        out[:2, 2] = -_J2 @ xi[:2]
        return out
    if group is GroupId.SO3:
        return skew(xi)
    out = np.zeros((9, 9))
    phi = skew(xi[:3])
    out[:3, :3] = phi
    out[3:6, 3:6] = phi
    out[6:9, 6:9] = phi
    out[3:6, :3] = skew(xi[3:6])
    out[6:9, :3] = skew(xi[6:9])
    return out


def bracket(group: GroupId, a, b) -> np.ndarray:
    return ad(group, a) @ np.asarray(b, dtype=float)


# --------------------------------------------------------------------------
# SO(3) helpers
# --------------------------------------------------------------------------


def _so3_coeffs(theta: float):
    """Return (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)."""
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = math.sin(theta) / theta
        b = 2.0 * math.sin(theta / 2.0) ** 2 / t2
        c = (theta - math.sin(theta)) / (t2 * theta)
    return a, b, c


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    a, b, _ = _so3_coeffs(theta)
    k = skew(phi)
    return np.eye(3) + a * k + b * (k @ k)


def so3_angle(rot) -> float:
    rot = np.asarray(rot, dtype=float)
    w = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return math.atan2(0.5 * np.linalg.norm(w), 0.5 * (np.trace(rot) - 1.0))


def so3_log(rot) -> np.ndarray:
    rot = np.asarray(rot, dtype=float)
    theta = so3_angle(rot)
    if theta > math.pi - CUT_TOLERANCE:
        raise AngleAtCut(f"rotation angle {theta!r} is at the cut locus")
    w = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    if theta < SMALL_ANGLE:
        # w = 2 sin(t) axis
        t2 = theta * theta
        return 0.5 * w / (1.0 - t2 / 6.0 + t2 * t2 / 120.0)
    if theta < math.pi - 1e-3:
        return theta / (2.0 * math.sin(theta)) * w
    # Close to pi: recover the axis from the symmetric part for accuracy.
    sym = (rot + rot.T) / 2.0 - math.cos(theta) * np.eye(3)
    col = int(np.argmax(np.diag(sym)))
    axis = sym[:, col] / math.sqrt(sym[col, col] * (1.0 - math.cos(theta)))
    axis /= np.linalg.norm(axis)
    if axis @ w < 0:
        axis = -axis
    return theta * axis


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    _, b, c = _so3_coeffs(theta)
    k = skew(phi)
    return np.eye(3) + b * k + c * (k @ k)


def so3_left_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = math.sqrt(float(phi @ phi))
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        half = theta / 2.0
        d = (1.0 - half / math.tan(half)) / (theta * theta)
    k = skew(phi)
    return np.eye(3) - 0.5 * k + d * (k @ k)


def _so3_q_matrix(phi, rho) -> np.ndarray:
    """Coupling block of the SE_2(3) / SE(3) left Jacobian."""
    theta = math.sqrt(float(phi @ phi))
    t2 = theta * theta
    if theta < 1e-2:
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0 + t2 * t2 / 120960.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        c1 = (theta - s) / (t2 * theta)
        c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta)
    p = skew(phi)
    r = skew(rho)
    pr = p @ r
    rp = r @ p
    prp = pr @ p
    return (
        0.5 * r
        + c1 * (pr + rp + prp)
        + c2 * (p @ pr + rp @ p - 3.0 * prp)
        + c3 * (prp @ p + p @ prp)
    )


# --------------------------------------------------------------------------
# SE(2) helpers
# --------------------------------------------------------------------------


def _se2_v(theta: float) -> np.ndarray:
    """Translation part of the SE(2) exponential: t = V(theta) nu."""
    if abs(theta) < SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = theta / 2.0 - theta * t2 / 24.0 + theta * t2 * t2 / 720.0
    else:
        a = math.sin(theta) / theta
        b = 2.0 * math.sin(theta / 2.0) ** 2 / theta
    return np.array([[a, -b], [b, a]])


def _se2_left_jacobian(xi) -> np.ndarray:
    nu1, nu2, theta = xi
    out = np.eye(3)
    out[:2, :2] = _se2_v(theta)
    if abs(theta) < SMALL_ANGLE:
        t2 = theta * theta
        # Taylor of (theta - sin)/theta^2 and (1 - cos)/theta^2
        f = theta / 6.0 - theta * t2 / 120.0 + theta * t2 * t2 / 5040.0
        g = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        f = (theta - math.sin(theta)) / (theta * theta)
        g = 2.0 * math.sin(theta / 2.0) ** 2 / (theta * theta)
    out[0, 2] = nu1 * f + nu2 * g
    out[1, 2] = -nu1 * g + nu2 * f
    return out


# --------------------------------------------------------------------------
# exp / log
# --------------------------------------------------------------------------


def exp(group: GroupId, xi) -> GroupElement:
    """Closed-form exponential map."""
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.shape[0] != group.dof:
        raise ValueError(f"{group.value} tangent must have {group.dof} entries")
    if group is GroupId.SO2:
        return GroupElement(group, rot2(xi[0]))
    if group is GroupId.SE2:
        out = np.eye(3)
        out[:2, :2] = rot2(xi[2])
        out[:2, 2] = _se2_v(xi[2]) @ xi[:2]
        return GroupElement(group, out)
    if group is GroupId.SO3:
        return GroupElement(group, so3_exp(xi))
    phi = xi[:3]
    jl = so3_left_jacobian(phi)
    out = np.eye(5)
    out[:3, :3] = so3_exp(phi)
    out[:3, 3] = jl @ xi[3:6]
    out[:3, 4] = jl @ xi[6:9]
    return GroupElement(group, out)


def _angle2(rot) -> float:
    theta = math.atan2(rot[1, 0], rot[0, 0])
    if abs(theta) > math.pi - CUT_TOLERANCE:
        raise AngleAtCut(f"rotation angle {theta!r} is at the cut locus")
    return theta


def log(g: GroupElement) -> np.ndarray:
    """Inverse of :func:`exp` on rotation angles strictly inside (-pi, pi)."""
    group = g.group
    m = g.mat
    if group is GroupId.SO2:
        return np.array([_angle2(m)])
    if group is GroupId.SE2:
        theta = _angle2(m[:2, :2])
        nu = np.linalg.solve(_se2_v(theta), m[:2, 2])
        return np.array([nu[0], nu[1], theta])
    phi = so3_log(m[:3, :3])
    if group is GroupId.SO3:
        return phi
    jinv = so3_left_jacobian_inv(phi)
    return np.concatenate([phi, jinv @ m[:3, 3], jinv @ m[:3, 4]])


def rotation_angle(g: GroupElement) -> float:
    if g.group.rot_dim == 2:
        return abs(math.atan2(g.mat[1, 0], g.mat[0, 0]))
    return so3_angle(g.mat[:3, :3])


# --------------------------------------------------------------------------
# adjoint and Jacobians
# --------------------------------------------------------------------------


def adjoint(g: GroupElement) -> np.ndarray:
    """Adjoint matrix: ``g exp(xi) g^-1 = exp(adjoint(g) @ xi)``."""
    group = g.group
    m = g.mat
    if group is GroupId.SO2:
        return np.eye(1)
    if group is GroupId.SE2:
        out = np.eye(3)
        out[:2, :2] = m[:2, :2]
        out[:2, 2] = -_J2 @ m[:2, 2]
        return out
    rot = m[:3, :3]
    if group is GroupId.SO3:
        return rot.copy()
    out = np.zeros((9, 9))
    out[:3, :3] = rot
    out[3:6, 3:6] = rot
    out[6:9, 6:9] = rot
    out[3:6, :3] = skew(m[:3, 3]) @ rot
    out[6:9, :3] = skew(m[:3, 4]) @ rot
    return out


def left_jacobian(group: GroupId, xi) -> np.ndarray:
    """Standard left Jacobian: ``exp(xi + d) ~ exp(J_l d) exp(xi)``."""
    xi = np.asarray(xi, dtype=float)
    if group is GroupId.SO2:
        return np.eye(1)
    if group is GroupId.SE2:
        return _se2_left_jacobian(xi)
    phi = xi[:3]
    jl = so3_left_jacobian(phi)
    if group is GroupId.SO3:
        return jl
    out = np.zeros((9, 9))
    out[:3, :3] = jl
    out[3:6, 3:6] = jl
    out[6:9, 6:9] = jl
    out[3:6, :3] = _so3_q_matrix(phi, xi[3:6])
    out[6:9, :3] = _so3_q_matrix(phi, xi[6:9])
    return out


def left_jacobian_inv(group: GroupId, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if group is GroupId.SO2:
        return np.eye(1)
    if group is GroupId.SE2:
        return np.linalg.inv(_se2_left_jacobian(xi))
    phi = xi[:3]
    jinv = so3_left_jacobian_inv(phi)
    if group is GroupId.SO3:
        return jinv
    out = np.zeros((9, 9))
    out[:3, :3] = jinv
    out[3:6, 3:6] = jinv
    out[6:9, 6:9] = jinv
    out[3:6, :3] = -jinv @ _so3_q_matrix(phi, xi[3:6]) @ jinv
    out[6:9, :3] = -jinv @ _so3_q_matrix(phi, xi[6:9]) @ jinv
    return out


def right_jacobian(group: GroupId, xi) -> np.ndarray:
    """Derivative of the BCH product at ``xi``.

    Returns ``J`` such that ``log(exp(xi) exp(d)) = xi + J d + O(|d|^2)``.
    This is the inverse of what Barfoot calls the right Jacobian.
    """
    return left_jacobian_inv(group, -np.asarray(xi, dtype=float))


def right_jacobian_inv(group: GroupId, xi) -> np.ndarray:
    """Inverse of :func:`right_jacobian`, i.e. ``exp(xi + d) ~ exp(xi) exp(J d)``."""
    return left_jacobian(group, -np.asarray(xi, dtype=float))


# --------------------------------------------------------------------------
# automorphisms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Identity:
    def apply(self, x: GroupElement) -> GroupElement:
        return x


@dataclass(frozen=True, eq=False)
class Conjugation:
    """``x -> g^-1 x g``."""

    g: GroupElement

    def apply(self, x: GroupElement) -> GroupElement:
        return self.g.inv() @ x @ self.g


@dataclass(frozen=True)
class PositionShift:
    """SE_2(3) map ``(R, v, x) -> (R, v, x + dt v)``."""

    dt: float

    def apply(self, x: GroupElement) -> GroupElement:
        if x.group is not GroupId.SE23:
            raise UnsupportedAutomorphism("PositionShift is only defined on SE23")
        out = x.mat.copy()
        out[:3, 4] += self.dt * out[:3, 3]
        return GroupElement(x.group, out)


Automorphism = Identity | Conjugation | PositionShift


def automorphism_matrix(phi: Automorphism, group: GroupId) -> np.ndarray:
    """Matrix ``M`` with ``phi(x exp(xi)) = phi(x) exp(M xi)``."""
    if isinstance(phi, Identity):
        return np.eye(group.dof)
    if isinstance(phi, Conjugation):
        if phi.g.group is not group:
            raise UnsupportedAutomorphism("conjugating element lives on another group")
        return adjoint(phi.g.inv())
    if isinstance(phi, PositionShift):
        if group is not GroupId.SE23:
            raise UnsupportedAutomorphism("PositionShift is only defined on SE23")
        out = np.eye(9)
        out[6:9, 3:6] = phi.dt * np.eye(3)
        return out
    raise UnsupportedAutomorphism(f"unknown automorphism {phi!r}")


def compose_automorphisms(outer: Automorphism, inner: Automorphism) -> Automorphism:
    """Return ``outer o inner`` when it stays inside the supported family."""
    if isinstance(inner, Identity):
        return outer
    if isinstance(outer, Identity):
        return inner
    if isinstance(outer, PositionShift) and isinstance(inner, PositionShift):
        return PositionShift(outer.dt + inner.dt)
    if isinstance(outer, Conjugation) and isinstance(inner, Conjugation):
        return Conjugation(inner.g @ outer.g)
    raise UnsupportedAutomorphism(f"cannot compose {outer!r} with {inner!r}")


def random_element(group: GroupId, rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
    """Random element with rotation angle below pi - 0.1 (away from the cut)."""
    xi = rng.normal(size=group.dof) * scale
    d = 1 if group.rot_dim == 2 else 3
    rot_slice = slice(2, 3) if group is GroupId.SE2 else slice(0, d)
    ang = np.linalg.norm(xi[rot_slice])
    limit = math.pi - 0.1
    if ang > limit:
        xi[rot_slice] *= limit / ang
    return exp(group, xi)
