import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from rpmanifold.calculus import ExprField
from rpmanifold.errors import NumericError
from rpmanifold.expr import names
from rpmanifold.lift import SampledPath, dp_distance, signature
from rpmanifold.rde import (circle_approximant, fixed_point_residual, pure_area_driver, solve_rde,
                            solve_rde_signal_dep)


def linear_field(mats):
    """g(y) e_i = A_i y as an expression field."""
    e = mats[0].shape[0]
    rows = [[" + ".join(f"({float(A[r, c])!r})*y{c + 1}" for c in range(e)) for A in mats] for r in range(e)]
    return ExprField.parse(rows, names("y", e))


def time_path(n=201, T=1.0, level=2):
    t = np.linspace(0, T, n)
    return signature(SampledPath(t, t[:, None]), level)


def test_zero_field_gives_constant_response(backend):
    X = signature(SampledPath(np.linspace(0, 1, 30), np.random.default_rng(1).normal(size=(30, 2))), 2, p=2.5)
    sol = solve_rde(ExprField.parse([["0", "0"], ["0", "0"]], ["y1", "y2"]), X, [1.5, -2.0])
    assert np.all(sol.trace() == np.array([1.5, -2.0]))
    np.testing.assert_allclose(sol.Z.trace()[:, :2], X.trace(), atol=1e-12)


def test_exponential(backend):
    sol = solve_rde(ExprField.parse([["y1"]], ["y1"]), time_path(), [1.0])
    assert abs(sol.end[0] - math.e) <= 1e-6
    assert fixed_point_residual(ExprField.parse([["y1"]], ["y1"]), sol) <= 1e-9


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_antisymmetric_fields_conserve_norm(seed):
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(2):
        B = rng.normal(size=(3, 3))
        mats.append(B - B.T)
    t = np.linspace(0, 1, 60)
    X = signature(SampledPath(t, np.cumsum(rng.normal(scale=0.05, size=(60, 2)), axis=0)), 2, p=2.5)
    y0 = rng.normal(size=3)
    sol = solve_rde(linear_field(mats), X, y0)
    assert np.abs(np.linalg.norm(sol.trace(), axis=1) - np.linalg.norm(y0)).max() <= 1e-6


def test_pure_area_against_matrix_exponential():
    A1, A2 = np.diag([1.0, -1.0]), np.array([[0.0, 1.0], [1.0, 0.0]])
    a, y0 = 0.5, np.array([1.0, 0.0])
    target = expm(a * (A2 @ A1 - A1 @ A2)) @ y0
    end = solve_rde(linear_field([A1, A2]), pure_area_driver(a, 1.0, 100), y0).end
    assert np.abs(end - target).max() <= 1e-4
    # bounded-variation approximants approach the same limit
    errs = [np.abs(solve_rde(linear_field([A1, A2]), circle_approximant(a, 1.0, L), y0).end - target).max()
            for L in (40, 160)]
    assert errs[1] < errs[0] and errs[1] <= 5e-3


def test_signal_dependent_reduces_to_plain():
    rng = np.random.default_rng(4)
    t = np.linspace(0, 1, 80)
    X = signature(SampledPath(t, 0.2 * np.cumsum(rng.normal(size=(80, 2)), axis=0) / 9), 2, p=2.5)
    g = ExprField.parse([["sin(y1)", "y2"], ["1", "cos(y2)"]], ["y1", "y2"])
    f = ExprField.parse([["sin(y1)", "y2"], ["1", "cos(y2)"]], ["x1", "x2", "y1", "y2"])
    plain = solve_rde(g, X, [0.1, 0.2]).response()
    dep = solve_rde_signal_dep(f, X, [0.1, 0.2]).response()
    assert dp_distance(plain, dep) <= 1e-8


def test_signal_dependent_x_dx():
    sol = solve_rde_signal_dep(ExprField.parse([["x1"]], ["x1", "y1"]), time_path(), [0.0])
    assert abs(sol.end[0] - 0.5) <= 1e-8


def test_time_varying_rotation_conserves_norm():
    f = ExprField.parse([["-x1*y2"], ["x1*y1"]], ["x1", "y1", "y2"])
    sol = solve_rde_signal_dep(f, time_path(401, 2.0), [0.6, 0.8])
    assert np.abs(np.linalg.norm(sol.trace(), axis=1) - 1.0).max() <= 1e-6
    # closed form: rotation by x^2 / 2
    ang = 2.0
    np.testing.assert_allclose(sol.end, [0.6 * math.cos(ang) - 0.8 * math.sin(ang),
                                         0.6 * math.sin(ang) + 0.8 * math.cos(ang)], atol=1e-6)


def test_agrees_with_ode_solver_for_smooth_drivers():
    rng = np.random.default_rng(11)
    t = np.linspace(0, 1, 10_001)
    x = lambda s: np.array([np.sin(2 * s), s ** 2])
    dx = lambda s: np.array([2 * np.cos(2 * s), 2 * s])
    X = signature(SampledPath(t, x(t).T), 2, p=2.5)
    worst = 0.0
    for _ in range(10):
        c = [[float(v) for v in row] for row in rng.normal(scale=0.5, size=(4, 3))]
        rows = [[f"{c[0][0]!r} + {c[0][1]!r}*y1*y2 + {c[0][2]!r}*y2**2", f"{c[1][0]!r}*y1 + {c[1][1]!r}"],
                [f"{c[2][0]!r}*y1**2 + {c[2][1]!r}", f"{c[3][0]!r} + {c[3][1]!r}*y2 + {c[3][2]!r}*y1*y2"]]
        g = ExprField.parse(rows, ["y1", "y2"])

        def rhs(s, y):
            G = g.value(y[None, :])[0]
            return G @ dx(s)

        ref = solve_ivp(rhs, (0, 1), [0.1, -0.2], t_eval=t, rtol=1e-12, atol=1e-12, method="DOP853")
        sol = solve_rde(g, X, [0.1, -0.2])
        worst = max(worst, np.abs(sol.trace() - ref.y.T).max())
    assert worst <= 1e-6


def test_continuity_along_refinement():
    g = ExprField.parse([["sin(y2)", "0.5*y1"], ["cos(y1)", "0.3*y2 + 0.2"]], ["y1", "y2"])
    f = lambda t: 0.5 * np.c_[np.sin(2 * math.pi * t), np.cos(3 * math.pi * t) - 1]
    sols = []
    for n in (64, 128, 256, 512):
        t = np.linspace(0, 1, n + 1)
        sols.append(solve_rde(g, signature(SampledPath(t, f(t)), 2, p=2.5), [0.2, -0.1]).response())
    gaps = [dp_distance(a, b, p=2.5) for a, b in zip(sols, sols[1:])]
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_contracting_problem_raises():
    # a blow-up equation on a long horizon cannot contract on single steps
    t = np.linspace(0, 10, 3)
    X = signature(SampledPath(t, t[:, None]), 2)
    with pytest.raises(NumericError):
        solve_rde(ExprField.parse([["y1**2"]], ["y1"]), X, [1.0], min_window=1)
    sol = solve_rde(ExprField.parse([["y1**2"]], ["y1"]), X, [1.0], existence_only=True)
    assert not sol.unique
