import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from invsmooth import lie
from invsmooth.lie import GroupElement, GroupId

GROUPS = [GroupId.SO2, GroupId.SE2, GroupId.SO3, GroupId.SE23]
AFFINE = [GroupId.SE2, GroupId.SE23]


def vectors(dof, bound=2.0):
    return st.lists(st.floats(-bound, bound, allow_nan=False), min_size=dof, max_size=dof).map(np.array)


def expm_oracle(group, xi):
    return scipy.linalg.expm(lie.hat(group, xi))


def test_dimensions():
    assert [g.dof for g in GROUPS] == [1, 3, 3, 9]
    assert [g.size for g in GROUPS] == [2, 3, 3, 5]


@pytest.mark.parametrize("group", GROUPS)
def test_exp_zero_is_identity(group):
    assert np.array_equal(lie.exp(group, np.zeros(group.dof)).mat, np.eye(group.size))


def test_se2_pure_rotation():
    g = lie.exp(GroupId.SE2, [0.0, 0.0, math.pi / 2])
    assert np.allclose(g.rot, [[0, -1], [1, 0]], atol=1e-15)
    assert np.allclose(g.translation, 0.0, atol=1e-15)


def test_se2_half_turn_translation():
    # frozen from a 30-term matrix power series of the algebra element
    g = lie.exp(GroupId.SE2, [1.0, 0.0, math.pi])
    assert np.allclose(g.translation, [0.0, 0.6366197723675814], atol=1e-14)
    assert np.allclose(g.rot, -np.eye(2), atol=1e-15)
    series = sum(np.linalg.matrix_power(lie.hat(GroupId.SE2, [1.0, 0.0, math.pi]), k) / math.factorial(k)
                 for k in range(30))
    assert np.allclose(g.mat, series, atol=1e-12)


@pytest.mark.parametrize("group", GROUPS)
@pytest.mark.parametrize("scale", [1.0, 1e-2, 1.5e-2, 1e-4, 1e-9])
def test_exp_matches_expm(group, scale, rng):
    for _ in range(20):
        xi = scale * rng.standard_normal(group.dof)
        assert np.allclose(lie.exp(group, xi).mat, expm_oracle(group, xi), rtol=0, atol=1e-13)


@pytest.mark.parametrize("group", GROUPS)
def test_exp_closure(group, rng):
    for _ in range(1000):
        xi = 3.0 * rng.standard_normal(group.dof)
        assert lie.exp(group, xi).is_valid()


@settings(max_examples=60, deadline=None)
@given(data=st.data(), group=st.sampled_from(GROUPS))
def test_log_exp_roundtrip(data, group):
    xi = data.draw(vectors(group.dof))
    rot = xi[2:3] if group is GroupId.SE2 else xi[: min(3, group.dof)]
    if np.linalg.norm(rot) >= math.pi - 1e-3:
        return
    assert np.allclose(lie.log(lie.exp(group, xi)), xi, atol=1e-9)


@pytest.mark.parametrize("group", GROUPS)
def test_exp_log_on_elements(group, rng):
    for _ in range(50):
        g = lie.random_element(group, rng, 1.0)
        assert np.allclose(lie.exp(group, lie.log(g)).mat, g.mat, atol=1e-9)


def test_log_identity():
    assert np.array_equal(lie.log(GroupElement.identity(GroupId.SE23)), np.zeros(9))


def test_log_pure_velocity():
    m = np.eye(5)
    m[:3, 3] = [1.0, 2.0, 3.0]
    out = lie.log(GroupElement(GroupId.SE23, m))
    assert np.allclose(out, [0, 0, 0, 1, 2, 3, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("group", GROUPS)
def test_log_at_cut_raises(group):
    xi = np.zeros(group.dof)
    xi[2 if group is GroupId.SE2 else 0] = math.pi
    with pytest.raises(lie.AngleAtCut):
        lie.log(lie.exp(group, xi))


def test_log_near_cut_succeeds():
    g = lie.exp(GroupId.SO3, [math.pi - 1e-5, 0.0, 0.0])
    assert np.allclose(lie.log(g), [math.pi - 1e-5, 0, 0], atol=1e-8)


def test_element_validation():
    with pytest.raises(ValueError):
        GroupElement(GroupId.SE2, np.eye(4))
    bad = np.eye(3)
    bad[0, 0] = 2.0
    assert not GroupElement(GroupId.SE2, bad).is_valid()


def test_adjoint_identity():
    assert np.array_equal(lie.adjoint(GroupElement.identity(GroupId.SE23)), np.eye(9))


def test_adjoint_printed_block():
    m = np.eye(5)
    m[:3, 4] = [1.0, 0.0, 0.0]
    ad = lie.adjoint(GroupElement(GroupId.SE23, m))
    assert np.allclose(ad[6:9, 0:3], lie.skew([1.0, 0.0, 0.0]))
    assert np.allclose(ad[3:6, 0:3], 0.0)
    assert np.allclose(ad[0:3, 3:9], 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), group=st.sampled_from([GroupId.SE2, GroupId.SO3, GroupId.SE23]))
def test_adjoint_conjugation(seed, group):
    rng = np.random.default_rng(seed)
    g = lie.random_element(group, rng, 1.0)
    v = 0.7 * rng.standard_normal(group.dof)
    direct = lie.log(g @ lie.exp(group, v) @ g.inv())
    assert np.allclose(direct, lie.adjoint(g) @ v, atol=1e-9)


@pytest.mark.parametrize("group", [GroupId.SE2, GroupId.SO3, GroupId.SE23])
def test_adjoint_homomorphism(group, rng):
    for _ in range(50):
        a, b = lie.random_element(group, rng), lie.random_element(group, rng)
        assert np.allclose(lie.adjoint(a @ b), lie.adjoint(a) @ lie.adjoint(b), atol=1e-9)


@pytest.mark.parametrize("group", GROUPS)
def test_right_jacobian_at_zero(group):
    assert np.allclose(lie.right_jacobian(group, np.zeros(group.dof)), np.eye(group.dof))


def _bch_fd(group, v, eps=1e-6):
    out = np.empty((group.dof, group.dof))
    for k in range(group.dof):
        d = np.zeros(group.dof)
        d[k] = eps
        xv = lie.exp(group, v)
        out[:, k] = (lie.log(xv @ lie.exp(group, d)) - lie.log(xv @ lie.exp(group, -d))) / (2 * eps)
    return out


def test_so3_right_jacobian_quarter_turn():
    v = np.array([math.pi / 2, 0.0, 0.0])
    assert np.allclose(lie.right_jacobian(GroupId.SO3, v), _bch_fd(GroupId.SO3, v), atol=1e-8)


@pytest.mark.parametrize("group", [GroupId.SE2, GroupId.SE23])
def test_right_jacobian_matches_fd(group, rng):
    for _ in range(10):
        v = 0.8 * rng.standard_normal(group.dof)
        v[:3] *= 2.5 / max(np.linalg.norm(v[:3]), 2.5)
        assert np.allclose(lie.right_jacobian(group, v), _bch_fd(group, v), atol=1e-8)


@pytest.mark.parametrize("group", GROUPS)
@pytest.mark.parametrize("scale", [1.0, 1e-2, 1e-5])
def test_right_jacobian_inverse(group, scale, rng):
    v = scale * rng.standard_normal(group.dof)
    j = lie.right_jacobian(group, v)
    assert np.allclose(j @ lie.right_jacobian_inv(group, v), np.eye(group.dof), atol=1e-12)


@pytest.mark.parametrize("group", [GroupId.SE2, GroupId.SO3, GroupId.SE23])
def test_right_jacobian_quadratic_shrinkage(group, rng):
    for _ in range(5):
        v = rng.standard_normal(group.dof)
        d = rng.standard_normal(group.dof)
        d /= np.linalg.norm(d)
        j = lie.right_jacobian(group, v)

        def err(e):
            return np.linalg.norm(lie.log(lie.exp(group, v) @ lie.exp(group, e * d)) - v - e * j @ d)

        assert 3.5 <= err(1e-2) / err(5e-3) <= 4.5


@pytest.mark.parametrize("group", [GroupId.SE2, GroupId.SE23])
def test_left_jacobian_is_series_oracle(group, rng):
    # J_l(v) = sum ad_v^k / (k+1)!
    v = rng.standard_normal(group.dof)
    adv = lie.ad(group, v)
    series = sum(np.linalg.matrix_power(adv, k) / math.factorial(k + 1) for k in range(40))
    assert np.allclose(lie.left_jacobian(group, v), series, atol=1e-12)


def test_automorphism_identity_matrix():
    assert np.array_equal(lie.automorphism_matrix(lie.Identity(), GroupId.SE23), np.eye(9))


def test_position_shift_block():
    m = lie.automorphism_matrix(lie.PositionShift(0.005), GroupId.SE23)
    assert np.allclose(m[6:9, 3:6], 0.005 * np.eye(3))
    assert np.allclose(m - np.eye(9) - np.pad(0.005 * np.eye(3), ((6, 0), (3, 3))), 0.0)


@pytest.mark.parametrize("group", AFFINE)
def test_automorphism_identity_holds(group, rng):
    phis = [lie.Identity(), lie.Conjugation(lie.random_element(group, rng))]
    if group is GroupId.SE23:
        phis.append(lie.PositionShift(0.3))
    for phi in phis:
        m = lie.automorphism_matrix(phi, group)
        for _ in range(30):
            x = lie.random_element(group, rng)
            v = 0.5 * rng.standard_normal(group.dof)
            lhs = phi.apply(x @ lie.exp(group, v)).mat
            assert np.allclose(lhs, (phi.apply(x) @ lie.exp(group, m @ v)).mat, atol=1e-9)


def test_position_shift_rejected_on_se2():
    with pytest.raises(lie.UnsupportedAutomorphism):
        lie.automorphism_matrix(lie.PositionShift(1.0), GroupId.SE2)
    with pytest.raises(lie.UnsupportedAutomorphism):
        lie.PositionShift(1.0).apply(GroupElement.identity(GroupId.SE2))


def test_compose_automorphisms(rng):
    g, h = lie.random_element(GroupId.SE2, rng), lie.random_element(GroupId.SE2, rng)
    x = lie.random_element(GroupId.SE2, rng)
    both = lie.compose_automorphisms(lie.Conjugation(g), lie.Conjugation(h))
    assert np.allclose(both.apply(x).mat, lie.Conjugation(g).apply(lie.Conjugation(h).apply(x)).mat)
    s = lie.compose_automorphisms(lie.PositionShift(0.1), lie.PositionShift(0.2))
    assert s.dt == pytest.approx(0.3)
    with pytest.raises(lie.UnsupportedAutomorphism):
        lie.compose_automorphisms(lie.PositionShift(0.1), lie.Conjugation(lie.random_element(GroupId.SE23, rng)))
