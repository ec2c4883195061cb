import numpy as np
import pytest
from hypothesis import given, strategies as st

from rpmanifold.errors import CapacityError, DomainError, ShapeError
from rpmanifold.tensor import (TruncatedTensor, tensor_exp, tensor_inverse, tensor_log, tensor_mul,
                               tensor_size)


def _oracle_mul(a: TruncatedTensor, b: TruncatedTensor) -> list:
    # grade by grade with outer products, independent of the flat kernels
    ga, gb = a.grades(), b.grades()
    out = []
    for g in range(a.level + 1):
        acc = np.zeros((a.dim,) * g)
        for i in range(g + 1):
            acc = acc + np.multiply.outer(ga[i], gb[g - i])
        out.append(acc)
    return out


def _random(rng, d, n, scalar=1.0, scale=1.0):
    c = rng.uniform(-scale, scale, tensor_size(d, n))
    c[0] = scalar
    return TruncatedTensor(d, n, c)


dims = st.integers(1, 3)
levels = st.integers(1, 4)
seeds = st.integers(0, 2 ** 32 - 1)


def test_identity_is_neutral(backend, rng):
    b = _random(rng, 2, 3)
    one = TruncatedTensor.one(2, 3)
    assert tensor_mul(one, b).allclose(b, 0.0)
    assert tensor_mul(b, one).allclose(b, 0.0)


def test_product_of_level_one_elements(backend):
    x, y = np.array([0.3, -1.2]), np.array([2.0, 0.5])
    p = tensor_mul(TruncatedTensor.from_grades([1, x, np.zeros((2, 2))]),
                   TruncatedTensor.from_grades([1, y, np.zeros((2, 2))]))
    np.testing.assert_allclose(p.grade(1), x + y, rtol=0, atol=0)
    np.testing.assert_allclose(p.grade(2), np.outer(x, y), rtol=0, atol=0)


def test_one_dimensional_product(backend):
    p = tensor_mul(TruncatedTensor(1, 3, [1, 2, 0, 0]), TruncatedTensor(1, 3, [1, 3, 0, 0]))
    assert p.coeffs.tolist() == [1.0, 5.0, 6.0, 0.0]


@given(d=dims, n=levels, seed=seeds)
def test_product_matches_outer_oracle(d, n, seed):
    rng = np.random.default_rng(seed)
    a, b = _random(rng, d, n, rng.uniform(-1, 1)), _random(rng, d, n, rng.uniform(-1, 1))
    got = tensor_mul(a, b).grades()
    for g, ref in enumerate(_oracle_mul(a, b)):
        np.testing.assert_allclose(got[g], ref, rtol=1e-13, atol=1e-13)


@given(d=dims, n=levels, seed=seeds)
def test_associativity(d, n, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random(rng, d, n) for _ in range(3))
    left = tensor_mul(tensor_mul(a, b), c)
    right = tensor_mul(a, tensor_mul(b, c))
    assert np.abs(left.coeffs - right.coeffs).max() <= 1e-12 * (1 + np.abs(left.coeffs).max())


@given(d=dims, n=levels, seed=seeds)
def test_submultiplicative_grade_norms(d, n, seed):
    rng = np.random.default_rng(seed)
    a, b = _random(rng, d, n), _random(rng, d, n)
    ab = tensor_mul(a, b)
    for g in range(n + 1):
        bound = sum(a.norm(i) * b.norm(g - i) for i in range(g + 1))
        assert ab.norm(g) <= bound * (1 + 1e-12) + 1e-15


def test_exp_examples(backend):
    assert tensor_exp(TruncatedTensor.zeros(2, 3)).allclose(TruncatedTensor.one(2, 3), 0.0)
    assert tensor_exp(TruncatedTensor(1, 2, [0, 2, 0])).coeffs.tolist() == [1.0, 2.0, 2.0]
    with pytest.raises(DomainError):
        tensor_exp(TruncatedTensor(1, 2, [1, 0, 0]))
    with pytest.raises(DomainError):
        tensor_log(TruncatedTensor(1, 2, [2, 0, 0]))


@given(d=dims, n=levels, seed=seeds)
def test_log_exp_round_trip(d, n, seed):
    rng = np.random.default_rng(seed)
    x = _random(rng, d, n, 0.0)
    back = tensor_log(tensor_exp(x))
    assert np.abs(back.coeffs - x.coeffs).max() <= 1e-12


@given(d=dims, n=levels, seed=seeds)
def test_inverse(d, n, seed):
    rng = np.random.default_rng(seed)
    g = _random(rng, d, n)
    assert tensor_mul(g, tensor_inverse(g)).allclose(TruncatedTensor.one(d, n), 1e-12)


def test_exp_of_vector_series():
    # exp(v)^g = v^{(x)g} / g!
    v = np.array([0.5, -2.0, 1.0])
    e = tensor_exp(TruncatedTensor.from_vector(v, 3))
    np.testing.assert_allclose(e.grade(3), np.multiply.outer(np.multiply.outer(v, v), v) / 6, atol=1e-15)


def test_norms():
    assert TruncatedTensor.zeros(2, 2).norm(1) == 0.0
    t = TruncatedTensor.from_grades([1, [3, -4], [[1, -1], [0.5, 0]]])
    assert t.norm(1) == 7.0
    assert t.norm(2) == 2.5


def test_shape_and_capacity_errors():
    with pytest.raises(ShapeError):
        TruncatedTensor(2, 2, np.zeros(5))
    with pytest.raises(ShapeError):
        tensor_mul(TruncatedTensor.one(2, 2), TruncatedTensor.one(3, 2))
    with pytest.raises(CapacityError):
        TruncatedTensor.zeros(9, 2)
    with pytest.raises(CapacityError):
        TruncatedTensor.zeros(2, 7)


@given(d=dims, n=levels, seed=seeds)
def test_json_round_trip(d, n, seed):
    t = _random(np.random.default_rng(seed), d, n)
    assert TruncatedTensor.from_json(t.to_json()).allclose(t, 0.0)


def test_truncate():
    t = TruncatedTensor.from_grades([1, [1, 2], [[1, 2], [3, 4]]])
    assert t.truncate(1).coeffs.tolist() == [1.0, 1.0, 2.0]
    with pytest.raises(ShapeError):
        t.truncate(3)
