import io
import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpmanifold.errors import ParseError, ShapeError, ValidationError
from rpmanifold.lift import (ClassicalRoughPath, ControlEstimate, SampledPath, beta_constant, concat,
                             dp_distance, extend, format_float, load_path_csv, p_variation, signature,
                             write_path_csv)
from rpmanifold.tensor import TruncatedTensor, tensor_exp, tensor_mul

L_PATH = SampledPath([0.0, 1.0, 2.0], [[0, 0], [1, 0], [1, 1]])


def _polyline(rng, d, m, scale=1.0):
    times = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, m - 1)), [1.0]])
    times = np.unique(times)
    pts = np.cumsum(rng.normal(scale=scale, size=(times.size, d)), axis=0)
    return SampledPath(times, pts)


polylines = st.builds(lambda seed, d, m: _polyline(np.random.default_rng(seed), d, m),
                      st.integers(0, 2 ** 32 - 1), st.integers(1, 3), st.integers(2, 12))


# ---------------------------------------------------------------- signatures

def test_straight_line_signature(backend):
    X = signature(SampledPath([0, 1], [[0, 0], [1, 1]]), 2)
    S = X.total()
    np.testing.assert_allclose(S.grade(1), [1, 1], atol=0)
    np.testing.assert_allclose(S.grade(2), [[0.5, 0.5], [0.5, 0.5]], atol=0)


def test_l_path_signature(backend):
    S = signature(L_PATH, 2).total()
    np.testing.assert_allclose(S.grade(2), [[0.5, 1.0], [0.0, 0.5]], atol=1e-12)


def test_l_path_against_riemann_sums():
    # iterated sums of a fine parametrisation approach the exact level-2 term
    t = np.linspace(0, 2, 20001)
    x = np.c_[np.clip(t, 0, 1), np.clip(t - 1, 0, 1)]
    dx = np.diff(x, axis=0)
    mid = 0.5 * (x[1:] + x[:-1])
    S2 = mid.T @ dx
    np.testing.assert_allclose(signature(L_PATH, 2).total().grade(2), S2, atol=1e-4)


def test_circle_area(backend):
    t = np.linspace(0, 1, 10_001)
    S = signature(SampledPath(t, np.c_[np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)]), 2).total()
    assert np.abs(S.grade(1)).max() <= 1e-6
    area = 0.5 * (S.grade(2)[0, 1] - S.grade(2)[1, 0])
    # inscribed polygon area, the exact value for the polyline
    assert area == pytest.approx(0.5 * 10_000 * math.sin(2 * math.pi / 10_000), abs=1e-12)
    assert abs(area - math.pi) <= 1e-5


@given(path=polylines)
def test_shuffle_identity(path):
    S = signature(path, 2).total()
    x = S.grade(1)
    np.testing.assert_allclose(np.outer(x, x), S.grade(2) + S.grade(2).T, atol=1e-10 * (1 + np.abs(x).max()) ** 2)


@given(path=polylines, level=st.integers(1, 3))
def test_chen_on_grid_triples(path, level):
    X = signature(path, level)
    for a, b, c in itertools.combinations(range(X.m + 1), 3):
        lhs = tensor_mul(X.increment(a, b), X.increment(b, c))
        rhs = X.increment(a, c)
        assert np.abs(lhs.coeffs - rhs.coeffs).max() <= 1e-12 * (1 + np.abs(rhs.coeffs).max())


@given(path=polylines)
def test_reparametrisation_invariance(path):
    t = path.times
    warped = SampledPath(t ** 3 + 2 * t, path.points)
    np.testing.assert_allclose(signature(path, 3).total().coeffs, signature(warped, 3).total().coeffs,
                               rtol=0, atol=0)


# ---------------------------------------------------------------- extension

def test_extend_constant_path():
    X = signature(SampledPath([0, 1, 2], [[1, 1], [1, 1], [1, 1]]), 2)
    E = extend(X, 4)
    assert np.all(E.total().coeffs[1:] == 0)


def test_extend_linear_path():
    delta = np.array([0.7, -1.3])
    X = signature(SampledPath([0, 1], [[0, 0], delta]), 2)
    g3 = extend(X, 3).total().grade(3)
    np.testing.assert_allclose(g3, np.multiply.outer(np.outer(delta, delta), delta) / 6, atol=1e-9)


def test_extend_l_path():
    diff = extend(signature(L_PATH, 2), 3).total().coeffs - signature(L_PATH, 3).total().coeffs
    assert np.abs(diff).max() <= 1e-8


@given(path=polylines)
def test_extension_matches_direct_signature(path):
    E = extend(signature(path, 2), 3)
    np.testing.assert_allclose(E.total().coeffs, signature(path, 3).total().coeffs, atol=1e-8)


def test_extension_rejects_lower_level():
    with pytest.raises(ShapeError):
        extend(signature(L_PATH, 3), 2)


# ------------------------------------------------------- restrict / concat

@given(path=polylines, u=st.floats(0.05, 0.95))
def test_restrict_concat_round_trip(path, u):
    X = signature(path, 2, p=2.5)
    Y = concat(X.restrict(0.0, u), X.restrict(u, 1.0))
    assert dp_distance(X, Y) <= 1e-10
    np.testing.assert_allclose(Y.total().coeffs, X.total().coeffs, atol=1e-12)


def test_restrict_full_interval_is_identity():
    X = signature(L_PATH, 2)
    R = X.restrict(X.t0, X.T)
    assert np.array_equal(R.segs, X.segs) and np.array_equal(R.times, X.times)


def test_concat_of_linear_pieces_is_joined_signature():
    a = signature(SampledPath([0, 1], [[0, 0], [1, 2]]), 3)
    b = signature(SampledPath([1, 3], [[1, 2], [-1, 0.5]]), 3)
    joined = signature(SampledPath([0, 1, 3], [[0, 0], [1, 2], [-1, 0.5]]), 3)
    np.testing.assert_allclose(concat(a, b).total().coeffs, joined.total().coeffs, atol=1e-12)


def test_concat_rejects_gaps():
    a = signature(SampledPath([0, 1], [[0.0], [1.0]]), 1)
    b = signature(SampledPath([1, 2], [[2.0], [3.0]]), 1)
    with pytest.raises(ValidationError):
        concat(a, b)
    with pytest.raises(ValidationError):
        concat(a, signature(SampledPath([1.5, 2], [[1.0], [3.0]]), 1))


# ----------------------------------------------------------- p-variation

def _brute_pvar(points, p):
    # sup over all partitions of the grid of sum |x_{t_{k+1}} - x_{t_k}|^p, level one only
    m = len(points) - 1
    best = 0.0
    for r in range(m):
        for inner in itertools.combinations(range(1, m), r):
            idx = (0, *inner, m)
            s = sum(np.abs(points[b] - points[a]).sum() ** p for a, b in zip(idx, idx[1:]))
            best = max(best, s)
    return best ** (1 / p)


def test_monotone_path_total_increment():
    x = np.array([0.0, 0.1, 0.5, 0.6, 1.2, 1.3, 2.0, 2.5])
    X = signature(SampledPath(np.arange(8.0), x[:, None]), 1, p=1.0)
    assert p_variation(X) == pytest.approx(2.5, abs=1e-14)
    assert _brute_pvar(x[:, None], 1.0) == pytest.approx(2.5, abs=1e-14)


@pytest.mark.parametrize("p", [1.0, 1.5])
def test_level_one_pvar_matches_brute_force(backend, rng, p):
    pts = np.cumsum(rng.normal(size=(8, 2)), axis=0)
    X = signature(SampledPath(np.arange(8.0), pts), 1, p=p)
    assert p_variation(X) == pytest.approx(_brute_pvar(pts, p), rel=1e-12)


def test_straight_line_length():
    X = signature(SampledPath(np.linspace(0, 1, 7), np.linspace([0, 0], [2, -1], 7)), 1, p=1.0)
    assert p_variation(X) == pytest.approx(3.0, abs=1e-14)


@given(path=polylines)
def test_distance_to_self_is_zero(path):
    X = signature(path, 2, p=2.5)
    assert dp_distance(X, X) == 0.0


def test_beta_constants():
    assert beta_constant(1.0) == pytest.approx(1 + 2 * math.pi ** 2 / 3, rel=1e-12)
    ref = 2 * (1 + 2 ** 1.5 * float(mpmath.zeta(1.5)))
    assert beta_constant(2.0) == pytest.approx(ref, rel=1e-12)
    assert beta_constant(2.0) == pytest.approx(16.777826592480643, rel=1e-12)
    b = beta_constant(2.5)
    assert 0 < b < math.inf


@given(path=polylines, p=st.sampled_from([1.0, 2.0, 2.5]))
def test_control_superadditive_and_bounds(path, p):
    X = signature(path, max(1, math.floor(p)), p=p)
    w = ControlEstimate(X)
    W = w.matrix()
    for a, b, c in itertools.combinations(range(X.m + 1), 3):
        assert W[a, b] + W[b, c] <= W[a, c] * (1 + 1e-12) + 1e-14
    for a, b in itertools.combinations(range(X.m + 1), 2):
        assert w.bound_holds(a, b)


# -------------------------------------------------------------- CSV / JSON

def test_csv_round_trip_bit_for_bit(rng):
    t = np.cumsum(rng.uniform(0.1, 1, 20))
    pts = rng.normal(size=(20, 3)) * 10.0 ** rng.integers(-8, 8, size=(20, 3))
    text = write_path_csv(t, pts)
    back = load_path_csv(io.StringIO(text))
    assert np.array_equal(back.times, t) and np.array_equal(back.points, pts)
    assert format_float(0.1) == "0.10000000000000001"


def test_csv_errors(tmp_path):
    with pytest.raises(ParseError):
        load_path_csv(io.StringIO(""))
    with pytest.raises(ParseError, match="line 1"):
        load_path_csv(io.StringIO("time,x1\n0,1\n1,2\n"))
    with pytest.raises(ParseError, match="line 3"):
        load_path_csv(io.StringIO("t,x1\n0,1\n1,abc\n"))
    with pytest.raises(ParseError, match="line 2"):
        load_path_csv(io.StringIO("t,x1,x2\n0,1\n1,2,3\n"))
    with pytest.raises(ValidationError, match="line 3"):
        load_path_csv(io.StringIO("t,x1\n0,1\n0,2\n"))
    with pytest.raises(ParseError):
        load_path_csv(str(tmp_path / "missing.csv"))


def test_three_rows_give_two_segments():
    P = load_path_csv(io.StringIO("t,x1,x2\n0,0,0\n1,1,0\n2,1,1\n"))
    assert signature(P, 2).m == 2


@given(path=polylines)
def test_json_round_trip(path):
    X = signature(path, 2, p=2.5)
    Y = ClassicalRoughPath.from_json(X.to_json()) if hasattr(ClassicalRoughPath, "from_json") else \
        ClassicalRoughPath.from_json_obj(X.to_json_obj())
    assert np.array_equal(X.segs, Y.segs) and Y.p == X.p


def test_level_below_floor_p_rejected():
    with pytest.raises(ValidationError):
        signature(L_PATH, 1, p=2.5)


def test_group_like_increments():
    X = signature(L_PATH, 3)
    for k in range(X.m):
        seg = TruncatedTensor(2, 3, X.segs[k])
        delta = TruncatedTensor.from_vector(seg.grade(1).reshape(-1), 3)
        assert seg.allclose(tensor_exp(delta), 1e-15)
