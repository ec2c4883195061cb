import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpmanifold.calculus import AffineMap, CallableMap, identity_map
from rpmanifold.errors import DomainError, ShapeError, ValidationError
from rpmanifold.lip import (BoxCutoff, LipJet, composition_constant, grid_points, jet_from_map, jet_order,
                            lip_compose, lip_extend_blend, lip_extend_closure, lip_norm_estimate,
                            lip_validate, local_to_global_bound, smooth_step, verify_local_to_global)

UNIT = grid_points([0.0], [1.0], 0.01)


def poly_map(coeffs):
    """Scalar polynomial on R with its first two derivatives, written out by hand."""
    c = np.asarray(coeffs, dtype=float)
    d1 = np.polynomial.polynomial.polyder(c)
    d2 = np.polynomial.polynomial.polyder(c, 2)
    ev = np.polynomial.polynomial.polyval
    return CallableMap(1, 1, lambda x: ev(x[:, 0], c)[:, None],
                       lambda x: ev(x[:, 0], d1)[:, None, None],
                       lambda x: ev(x[:, 0], d2)[:, None, None, None])


SIN = CallableMap(1, 1, lambda x: np.sin(x), lambda x: np.cos(x)[:, :, None],
                  lambda x: -np.sin(x)[:, :, None, None])


def _brute_remainders(x, f, gamma):
    # direct double loop over sample pairs for scalar jets on R
    k = jet_order(gamma)
    out = np.zeros(k + 1)
    for a in range(len(x)):
        for b in range(len(x)):
            if a == b:
                continue
            h = x[b] - x[a]
            for j in range(k + 1):
                taylor = sum(f[j + l][a] * h ** l / math.factorial(l) for l in range(k - j + 1))
                out[j] = max(out[j], abs(f[j][b] - taylor) / abs(h) ** (gamma - j))
    return out


def test_jet_order_convention():
    assert [jet_order(g) for g in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)] == [0, 0, 1, 1, 2, 2]
    with pytest.raises(ValidationError):
        jet_order(0.0)


def test_constant_jet(backend):
    jet = jet_from_map(AffineMap(np.zeros((1, 1)), [-3.5]), UNIT, 2.0)
    rep = lip_norm_estimate(jet)
    assert rep.estimate == 3.5
    assert np.all(rep.remainder == 0.0)


@pytest.mark.parametrize("gamma", [1.25, 1.5, 2.0])
def test_linear_jet(backend, gamma):
    assert lip_norm_estimate(jet_from_map(identity_map(1), UNIT, gamma)).estimate == pytest.approx(1.0, abs=1e-12)


def test_square_jet(backend):
    rep = lip_norm_estimate(jet_from_map(poly_map([0, 0, 1]), UNIT, 2.0))
    assert rep.estimate == pytest.approx(2.0, abs=1e-12)
    # |R_0(x, y)| = |x - y|^2, so the order-zero ratio is exactly one
    assert rep.remainder[0] == pytest.approx(1.0, abs=1e-12)


@given(coeffs=st.lists(st.floats(-2, 2), min_size=1, max_size=4),
       gamma=st.sampled_from([1.5, 2.0, 2.5, 3.0]))
def test_remainders_match_brute_force(coeffs, gamma):
    x = np.linspace(-1, 1, 17)[:, None]
    jet = jet_from_map(poly_map(coeffs), x, gamma)
    f = [c.reshape(-1) for c in jet.comps]
    np.testing.assert_allclose(lip_norm_estimate(jet).remainder, _brute_remainders(x[:, 0], f, gamma),
                               rtol=1e-10, atol=1e-12)


def test_validate_reports_violation():
    jet = jet_from_map(poly_map([0, 0, 1]), UNIT, 2.0)
    assert lip_validate(jet, 2.0)["ok"]
    bad = lip_validate(jet, 1.5)
    assert not bad["ok"] and bad["estimate"] == pytest.approx(2.0)
    with pytest.raises(ValidationError):
        lip_norm_estimate(LipJet(2.0, np.zeros((0, 1)), [np.zeros((0, 1, 1)), np.zeros((0, 1, 1))]))


def test_finite_differences_match_jet():
    # on a convex domain the derivative component is the derivative of f^0
    x = grid_points([0.0], [1.0], 1e-3)
    jet = jet_from_map(SIN, x, 2.5)
    f0, f1 = jet.comps[0][:, 0, 0], jet.comps[1][:, 0, 0]
    fd = np.diff(f0) / np.diff(x[:, 0])
    assert np.abs(fd - f1[:-1]).max() <= 1e-3


# -------------------------------------------------------------- composition

def test_compose_with_identity(backend):
    f = jet_from_map(poly_map([0.5, -1.0, 2.0]), UNIT, 2.0)
    comp, rep = lip_compose(identity_map(1), f)
    for a, b in zip(comp.comps, f.comps):
        np.testing.assert_allclose(a, b, atol=0)
    assert rep["estimate"] == pytest.approx(lip_norm_estimate(f).estimate, rel=1e-14)


@pytest.mark.parametrize("gamma", [2.0, 3.0])
def test_square_after_shift(gamma):
    f = jet_from_map(poly_map([1, 1]), UNIT, gamma)
    comp, _ = lip_compose(poly_map([0, 0, 1]), f)
    x = UNIT[:, 0]
    np.testing.assert_allclose(comp.comps[0][:, 0, 0], (x + 1) ** 2, atol=1e-12)
    np.testing.assert_allclose(comp.comps[1][:, 0, 0], 2 * (x + 1), atol=1e-12)
    if gamma > 2:
        np.testing.assert_allclose(comp.comps[2][:, 0, 0], 2.0, atol=1e-12)


def test_sin_of_sin():
    f = jet_from_map(SIN, UNIT, 2.0)
    comp, rep = lip_compose(SIN, f)
    assert lip_validate(comp, rep["estimate"])["ok"]
    assert rep["estimate"] <= rep["bound"]
    np.testing.assert_allclose(comp.comps[1][:, 0, 0], np.cos(np.sin(UNIT[:, 0])) * np.cos(UNIT[:, 0]),
                               atol=1e-14)


def test_compose_with_sampled_outer_jet():
    g = jet_from_map(SIN, grid_points([0.0], [1.0], 1 / 256), 2.0)
    f = jet_from_map(poly_map([0.1, 0.5]), UNIT, 2.0)
    comp, _ = lip_compose(g, f)
    np.testing.assert_allclose(comp.comps[0][:, 0, 0], np.sin(0.1 + 0.5 * UNIT[:, 0]), atol=1e-5)
    far = jet_from_map(poly_map([3.0, 1.0]), UNIT, 2.0)
    with pytest.raises(DomainError):
        lip_compose(g, far)


def test_composition_constant_table():
    assert composition_constant(1.5) == pytest.approx(2 ** 1.5 + 1)
    assert composition_constant(2.0) == 5.0
    assert composition_constant(2.5) == pytest.approx(2.5 ** 2.5 + 2.5 ** 1.5 + 2.5 ** 0.5 + 8)
    with pytest.raises(ValidationError):
        composition_constant(3.5)


@pytest.mark.parametrize("gamma", [1.5, 2.0, 2.5])
def test_composition_inequality_on_random_polynomials(gamma):
    rng = np.random.default_rng(int(gamma * 10))
    for _ in range(100):
        f = jet_from_map(poly_map(rng.normal(size=4)), UNIT, gamma)
        _, rep = lip_compose(poly_map(rng.normal(size=4)), f)
        assert rep["estimate"] <= rep["bound"]


# ---------------------------------------------------------------- closure

def test_closure_of_identity():
    inner = grid_points([0.01], [0.99], 0.01)
    ext, _ = lip_extend_closure(jet_from_map(identity_map(1), inner, 2.0), [[0.0], [1.0]])
    np.testing.assert_allclose(ext.comps[0][-2:, 0, 0], [0.0, 1.0], atol=1e-15)


def test_closure_of_square_root():
    sq = CallableMap(1, 1, lambda x: np.sqrt(x + 0.01), lambda x: (0.5 / np.sqrt(x + 0.01))[:, :, None])
    inner = grid_points([0.01], [0.99], 0.01)
    jet = jet_from_map(sq, inner, 2.0)
    before = lip_norm_estimate(jet).estimate
    ext, info = lip_extend_closure(jet, [[1.0]])
    value = ext.comps[0][-1, 0, 0]
    # the finer-grid limit of the samples is the value of the function itself
    fine = jet_from_map(sq, grid_points([0.99], [1.0], 1e-5), 2.0).comps[0][-1, 0, 0]
    assert abs(value - fine) <= info["error_bounds"][0]
    assert abs(value - math.sqrt(1.01)) <= 2e-5
    assert abs(lip_norm_estimate(ext).estimate - before) <= 1e-8 * max(1.0, before)


def test_closure_rejects_far_points():
    jet = jet_from_map(identity_map(1), grid_points([0.01], [0.99], 0.01), 2.0)
    with pytest.raises(ValidationError):
        lip_extend_closure(jet, [[1.5]])
    with pytest.raises(ShapeError):
        lip_extend_closure(jet, [[1.0, 1.0]])


# ---------------------------------------------------------- local to global

def test_local_to_global_values():
    assert local_to_global_bound(1.0, 1.0, 1.5) == 2.0
    assert local_to_global_bound(1.0, 1.0, 2.5) == 2.0
    assert local_to_global_bound(3.0, 0.5, 1.5) == pytest.approx(8.485281374238571, rel=1e-15)
    assert local_to_global_bound(2.0, 0.25, 2.0) == 16.0


def test_local_to_global_on_square():
    rep = verify_local_to_global(jet_from_map(poly_map([0, 0, 1]), UNIT, 2.0), 0.25)
    assert rep["ok"] and rep["local"] <= 2.0 + 1e-12
    assert rep["estimate"] == pytest.approx(2.0) and rep["estimate"] <= rep["bound"]
    with pytest.raises(DomainError):
        verify_local_to_global(jet_from_map(identity_map(1), UNIT, 2.0), 0.25, convex=False)


# ---------------------------------------------------------------- blending

def test_smooth_step_shape():
    t = np.linspace(-0.5, 1.5, 2001)
    v, d1, _ = smooth_step(t)
    assert v.min() == 0.0 and v.max() == 1.0
    assert np.all(np.diff(v) >= 0) and np.all(d1 >= 0)
    fd = np.diff(v) / np.diff(t)
    assert np.abs(fd - 0.5 * (d1[1:] + d1[:-1])).max() <= 1e-4


def test_bump_from_blend():
    one = AffineMap(np.zeros((1, 1)), [1.0])
    zero = AffineMap(np.zeros((1, 1)))
    B, K = lip_extend_blend([([-0.5], [0.5], one), ([1.5], [2.0], zero)], 2.0)
    x = grid_points([-3.0], [3.0], 1e-3)
    v = B(x)[:, 0]
    assert v.min() >= 0.0 and v.max() <= 1.0
    inside = np.abs(x[:, 0]) <= 0.5
    assert np.all(v[inside] == 1.0)
    assert np.all(v[np.abs(x[:, 0]) >= 0.5 + B.margin] == 0.0)
    assert K > 1.0


def test_blend_restricts_to_input():
    P = CallableMap(2, 1, lambda x: (x ** 2).sum(axis=1, keepdims=True), lambda x: 2 * x[:, None, :])
    Q = AffineMap([[1.0, -1.0]], [0.5])
    B, _ = lip_extend_blend([([0, 0], [1, 1], P), ([2, 2], [3, 3], Q)], 1.5)
    xa = grid_points([0, 0], [1, 1], 0.1)
    xb = grid_points([2, 2], [3, 3], 0.1)
    np.testing.assert_array_equal(B(xa), P(xa))
    np.testing.assert_array_equal(B(xb), Q(xb))


def test_blend_needs_separation():
    one = AffineMap(np.zeros((1, 1)), [1.0])
    with pytest.raises(ValidationError):
        lip_extend_blend([([0], [1], one), ([1], [2], one)], 2.0)


def test_scaled_identity_bounds_do_not_grow():
    # f_u(x) = u f_1(x / u) with f_1 the identity on [-1, 1], cut off beyond 1.5
    cut = BoxCutoff([-1.0], [1.0], 0.5)

    def f_u(u):
        def jets(x):
            y = x / u
            c = cut.jet(y, 2)
            return c, y
        return CallableMap(1, 1, lambda x: u * jets(x)[0][0] * jets(x)[1],
                           lambda x: (jets(x)[0][1][:, 0, 0] * jets(x)[1][:, 0] + jets(x)[0][0][:, 0])[:, None, None],
                           lambda x: ((jets(x)[0][2][:, 0, 0, 0] * jets(x)[1][:, 0]
                                       + 2 * jets(x)[0][1][:, 0, 0]) / u)[:, None, None, None])

    def bounds(u):
        x = grid_points([-2 * u], [2 * u], u / 500)
        J = f_u(u).jet(x, 2)
        return np.abs(J[1]).max(), np.abs(J[2]).max()

    b1 = bounds(1.0)
    for u in (2.0, 5.0, 40.0):
        bu = bounds(u)
        assert bu[0] <= b1[0] * (1 + 1e-12) and bu[1] <= b1[1] * (1 + 1e-12)
    # identity on the scaled box
    x = grid_points([-3.0], [3.0], 0.01)
    np.testing.assert_allclose(f_u(3.0)(x), x, atol=1e-15)


def test_jet_json_round_trip():
    jet = jet_from_map(SIN, UNIT, 2.5)
    back = LipJet.from_json(jet.to_json())
    for a, b in zip(jet.comps, back.comps):
        np.testing.assert_array_equal(a, b)
    assert back.gamma == 2.5
