import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rpmanifold.atlas import build_atlas
from rpmanifold.calculus import BlockField, ConstantField, ExprField
from rpmanifold.errors import ParseError, ValidationError
from rpmanifold.lift import SampledPath, dp_distance, signature
from rpmanifold.mpath import from_classical, from_curve
from rpmanifold.mrde import (Connection, alpha_gamma, holonomy_angle, linear_connection,
                             pushforward_connection, solve_manifold_rde, sphere_transport)
from rpmanifold.rde import solve_rde

TH = math.pi / 3


def _latitude(t):
    t = np.asarray(t, dtype=float)
    return np.c_[math.sin(TH) * np.cos(2 * math.pi * t), math.sin(TH) * np.sin(2 * math.pi * t),
                 math.cos(TH) * np.ones_like(t)]


@pytest.fixture(scope="module")
def sph():
    return build_atlas("sphere")


@pytest.fixture(scope="module")
def transport(sph):
    return sphere_transport(sph, sph)


@pytest.fixture(scope="module")
def loop_solution(sph, transport):
    X = from_curve(sph, np.linspace(0, 1, 1001), _latitude)
    return X, solve_manifold_rde(transport, X, [0.0, 1.0, 0.0])


def _ode_transport(t_end=1.0):
    # dY/dt = -(Y . x'(t)) x(t), independent of the rough machinery
    def rhs(t, y):
        x = _latitude([t])[0]
        dx = 2 * math.pi * math.sin(TH) * np.array([-math.sin(2 * math.pi * t), math.cos(2 * math.pi * t), 0.0])
        return -np.dot(y, dx) * x

    out = solve_ivp(rhs, (0.0, t_end), [0.0, 1.0, 0.0], rtol=1e-12, atol=1e-13, method="DOP853")
    return out.y[:, -1]


# ------------------------------------------------------------------- sphere

def test_holonomy_matches_ode(loop_solution):
    X, sol = loop_solution
    y1 = sol.response_end()
    assert np.abs(y1 - _ode_transport()).max() <= 1e-4
    angle = holonomy_angle(X.x0, [0.0, 1.0, 0.0], y1)
    target = 2 * math.pi * (1 - math.cos(TH))
    assert abs(math.remainder(angle - target, 2 * math.pi)) <= 1e-3


def test_response_stays_on_sphere(loop_solution):
    _, sol = loop_solution
    Y = sol.response_trace()
    assert np.abs(np.linalg.norm(Y, axis=1) - 1).max() <= 1e-6
    # transported vectors stay tangent at the signal point
    assert np.abs(np.sum(Y * sol.signal_trace(), axis=1)).max() <= 1e-6


def test_signal_is_followed(loop_solution):
    X, sol = loop_solution
    assert np.allclose(sol.signal_trace()[0], X.x0)
    assert np.allclose(sol.Z.end_point()[:3], X.end_point(), atol=1e-9)


def test_compatibility_on_overlaps(sph, transport):
    n = len(sph.charts)
    worst = 0.0
    for a in [(0, 2), (2, 4), (4, 0)]:
        for b in [(2, 2), (0, 4), (4, 4)]:
            worst = max(worst, transport.compatibility(a, b, n=300))
    assert n == 6 and worst <= 1e-10


def test_horizontal_projection_idempotent(transport):
    H = transport.horizontal(0, 2)
    z = np.random.default_rng(0).uniform(-0.9, 0.9, (50, 4))
    h = H.value(z)
    assert np.abs(np.einsum("nab,nbc->nac", h, h) - h).max() <= 1e-12
    # the signal block of the projection is the identity
    assert np.allclose(h[:, :2, :2], np.eye(2))


def test_alpha_gamma_annihilates_vertical_forms(transport):
    # dy - g dx vanishes on horizontal vectors
    g = transport.rep(0, 2)
    form = BlockField([[-1.0 * g, ConstantField(np.eye(2), 4)]], [2], [2, 2], 4)
    ag = alpha_gamma(lambda pair: form, transport)((0, 2))
    z = np.random.default_rng(1).uniform(-0.9, 0.9, (40, 4))
    assert np.abs(ag.value(z)).max() <= 1e-12
    # a signal form is unchanged
    dx = BlockField([[ConstantField(np.eye(2), 4), None]], [2], [2, 2], 4)
    keep = alpha_gamma(lambda pair: dx, transport)((0, 2))
    assert np.allclose(keep.value(z), dx.value(z))


def test_pushforward_connection_commutes(transport):
    rep = pushforward_connection(transport, 1, 3)
    assert rep["commutation"] == 0.0
    assert rep["field"].rows == 2 and rep["field"].cols == 2


def test_holonomy_angle_sign():
    x0 = np.array([0.0, 0.0, 1.0])
    assert holonomy_angle(x0, [1, 0, 0], [0, 1, 0]) == pytest.approx(math.pi / 2)
    assert holonomy_angle(x0, [1, 0, 0], [0, -1, 0]) == pytest.approx(-math.pi / 2)


# ------------------------------------------------------------- vector space

def test_vector_space_reduction():
    V = build_atlas("vector_space", d=2, region=(-2, 2))
    rng = np.random.default_rng(4)
    pts = np.cumsum(rng.normal(scale=0.015, size=(61, 2)), axis=0)
    X = signature(SampledPath(np.linspace(0, 1, 61), pts - pts[0]), 2, p=2.5)
    g = ExprField.parse([["sin(y2)", "0.5"], ["0.3*y1", "cos(y1)"]], ["y1", "y2"])
    y0 = np.array([0.1, -0.2])
    sol = solve_manifold_rde(linear_connection(V, V, g), from_classical(X, V), y0)
    R = sol.response()
    assert dp_distance(R, solve_rde(g, X.refine_to(R.times), y0).response()) <= 1e-7


# ---------------------------------------------------------------- parsing

def test_connection_json(sph):
    C = build_atlas("circle")
    conn = Connection.from_json('{"reps": [{"chartN": "a0", "chartM": "a1", "expr": [["w1"]]}]}', C, C)
    f = conn.rep(0, 1)
    assert np.allclose(f.value(np.array([[0.1, 0.4]])), 0.4)
    with pytest.raises(ParseError):
        Connection.from_json("{not json", C, C)
    with pytest.raises(ParseError):
        Connection.from_json_obj({"reps": [{"chartN": "a0"}]}, C, C)
    with pytest.raises(ValidationError):
        Connection(C, C)
    with pytest.raises(ValidationError):
        Connection(C, sph, ExprField.parse([["x1"]], ["x1", "x2", "y1", "y2", "y3"]))


def test_declared_constant_enforced(sph):
    conn = sphere_transport(sph, sph)
    conn.C = 1e-3
    with pytest.raises(ValidationError):
        conn.validate(pairs=[(0, 0)], pitch=0.5)
