"""Invariant suite: twelve end-to-end checks with analytic or independent targets.

Each check returns a :class:`Result`; :func:`run` executes a selection and the
``check`` command prints the verdict as JSON. Oracles here avoid the code path
under test: polynomial integrals use Gauss-Legendre quadrature, areas and
exponentials are closed forms, and localisation times are recomputed from
polyline lengths.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .atlas import build_atlas, atlas_equivalence_check, partition_of_unity, product_atlas
from .calculus import ConstantField, ExprField, ScaledField, SumField
from .errors import RoughError
from .expr import names
from .integral import AlmostRoughPath, rough_integrate, sewing_band
from .lift import ControlEstimate, SampledPath, dp_distance, extend, signature
from .lip import BoxCutoff
from .mpath import from_classical, from_curve
from .mrde import (holonomy_angle, linear_connection, solve_manifold_rde, sphere_transport,
                   verify_solution)
from .rde import circle_approximant, pure_area_driver, solve_rde
from .tensor import tensor_size


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    seconds: float
    limit: float | None
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        lim = f" (limit {self.limit:g} s)" if self.limit else ""
        return f"{tag} {self.number:2d} {self.name}: {self.seconds:.2f} s{lim}"

    def to_json_obj(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "limit": self.limit, "details": self.details}


def _random_polyline(rng, d, m, scale=1.0):
    times = np.sort(rng.uniform(0, 1, m + 1))
    times[0], times[-1] = 0.0, 1.0
    while np.any(np.diff(times) <= 1e-9):
        times = np.linspace(0, 1, m + 1)
    pts = np.cumsum(rng.normal(scale=scale, size=(m + 1, d)), axis=0)
    return SampledPath(times, pts)


# ------------------------------------------------------------------ 1 - 5

def chen(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        d, n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 65))
        X = signature(_random_polyline(rng, d, m, 0.5), n)
        # I[a, b] = X_{a, b}
        I = np.zeros((m + 1, m + 1, tensor_size(d, n)))
        I[:, :, 0] = 1.0
        for a in range(m):
            I[a, a:] = K.chen_prefix(X.segs[a:], d, n)
        a, u, b = np.array([(a, u, b) for a in range(m + 1) for u in range(a + 1, m + 1)
                            for b in range(u + 1, m + 1)]).T
        prod = K.batch_mul(I[a, u], I[u, b], d, n)
        res = np.abs(prod - I[a, b]).sum(axis=1) / (1.0 + np.abs(I[a, b]).sum(axis=1))
        worst = max(worst, float(res.max()))
    return {"passed": worst <= 1e-12, "worst": worst}


def signature_truth(seed: int) -> dict:
    L = signature(SampledPath([0.0, 1.0, 2.0], [[0, 0], [1, 0], [1, 1]]), 2)
    lvl2 = L.total().grade(2).reshape(2, 2)
    err_L = float(np.abs(lvl2 - np.array([[0.5, 1.0], [0.0, 0.5]])).max())
    n = 10_000
    th = np.linspace(0, 2 * math.pi, n + 1)
    C = signature(SampledPath(np.linspace(0, 1, n + 1), np.c_[np.cos(th), np.sin(th)]), 2)
    g2 = C.total().grade(2).reshape(2, 2)
    area = 0.5 * (g2[0, 1] - g2[1, 0])
    err_c = abs(area - math.pi)
    return {"passed": err_L <= 1e-12 and err_c <= 1e-5, "l_path": err_L, "levy_area": err_c}


def extension(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(20):
        d, m = int(rng.integers(1, 4)), int(rng.integers(1, 33))
        P = _random_polyline(rng, d, m, 0.5)
        ext = extend(signature(P, 2), 3)
        direct = signature(P, 3)
        worst = max(worst, float(np.abs(ext.prefix - direct.prefix).max()))
    return {"passed": worst <= 1e-8, "worst": worst}


def riemann_stieltjes(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    gx, gw = np.polynomial.legendre.leggauss(4)
    s_nodes, s_weights = 0.5 * (gx + 1), 0.5 * gw
    n = 10_000
    t = np.linspace(0, 1, n + 1)
    worst = 0.0
    var = names("x", 2)
    for _ in range(20):
        c = rng.normal(size=(2, 3))
        pts = np.c_[c[0, 0] * np.sin(2 * math.pi * t) + c[0, 1] * t,
                    c[1, 0] * np.cos(3 * math.pi * t) + c[1, 2] * t ** 2] * 0.5
        X = signature(SampledPath(t, pts), 2)
        coef = rng.normal(size=(2, 4, 4)) * (np.add.outer(np.arange(4), np.arange(4)) <= 3)
        rows = [[" + ".join(f"({float(coef[j, a, b])!r})*x1**{a}*x2**{b}" for a in range(4)
                            for b in range(4) if a + b <= 3) for j in range(2)]]
        alpha = ExprField.parse(rows, var)
        E = rough_integrate(alpha, X, tol=1e-10)
        # quadrature along each linear piece; degree 3 integrands are integrated exactly
        dx = np.diff(pts, axis=0)
        acc = np.zeros(n)
        for sn, sw in zip(s_nodes, s_weights):
            y = pts[:-1] + sn * dx
            vals = [np.polynomial.polynomial.polyval2d(y[:, 0], y[:, 1], coef[j]) for j in range(2)]
            acc += sw * (vals[0] * dx[:, 0] + vals[1] * dx[:, 1])
        rs = np.concatenate([[0.0], np.cumsum(acc)])
        worst = max(worst, float(np.abs(E.trace()[:, 0] - E.start[0] - rs).max()))
    return {"passed": worst <= 1e-6, "worst": worst}


def sewing_uniqueness(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    forms = [[["sin(x2)", "cos(x1)"]], [["x1*x2", "x1**2"]], [["exp(-x1**2)", "x2"]],
             [["cos(x1+x2)", "sin(x1-x2)"]], [["1/(1+x1**2)", "x1*x2**2"]]]
    thetas, ratios = [], []
    for k in range(10):
        c = rng.normal(size=(2, 3))
        t = np.linspace(0, 1, 65)
        pts = np.stack([c[i, 0] * np.sin(2 * math.pi * (t + c[i, 1])) + c[i, 2] * t
                        for i in range(2)], axis=1)
        X = signature(SampledPath(t, pts), 2, p=2.5)
        # omega is p-homogeneous under scaling; keep the total control at 1/2
        lam = (0.5 / ControlEstimate(X).total()) ** (1 / 2.5)
        X = signature(SampledPath(t, lam * pts), 2, p=2.5)
        alpha = ExprField.parse(forms[k % len(forms)], names("x", 2))
        almost = AlmostRoughPath(alpha, X)
        Z = rough_integrate(alpha, X, tol=1e-12)
        band = sewing_band(almost, Z)
        thetas.append(band["theta_measured"])
        ratios.append(band["worst_ratio"])
    ok = min(thetas) > 1.0 and max(ratios) <= 1.0
    return {"passed": ok, "theta_min": min(thetas), "worst_ratio": max(ratios)}


# ------------------------------------------------------------------ 6 - 8

def _linear_field(mats):
    e = mats[0].shape[0]
    y = names("y", e)
    rows = [[" + ".join(f"({float(A[r, c])!r})*{y[c]}" for c in range(e)) for A in mats] for r in range(e)]
    return ExprField.parse(rows, y)


def rde_oracles(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    # dY = Y dX on [0, 1]
    t = np.linspace(0, 1, 201)
    X = signature(SampledPath(t, t[:, None]), 2)
    sol = solve_rde(ExprField.parse([["y1"]], ["y1"]), X, [1.0])
    err_e = abs(float(sol.end[0]) - math.e)
    # antisymmetric fields keep |Y|
    mats = []
    for _ in range(2):
        B = rng.normal(size=(3, 3))
        mats.append(B - B.T)
    P = _random_polyline(rng, 2, 200, 0.05)
    y0 = rng.normal(size=3)
    sol = solve_rde(_linear_field(mats), signature(P, 2), y0)
    err_norm = float(np.abs(np.linalg.norm(sol.trace(), axis=1) - np.linalg.norm(y0)).max())
    # pure area: dY = A_i Y dX^i, A_1 = diag(1, -1), A_2 = [[0, 1], [1, 0]]
    A1, A2 = np.diag([1.0, -1.0]), np.array([[0.0, 1.0], [1.0, 0.0]])
    g = _linear_field([A1, A2])
    a, y0 = 0.5, np.array([1.0, 0.0])
    # the area term contributes a (A_2 A_1 - A_1 A_2) = [[0, -2a], [2a, 0]]: a rotation by 2a
    ang = 2 * a
    target = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]]) @ y0
    pure = solve_rde(g, pure_area_driver(a, 1.0, 100), y0).end
    err_pure = float(np.abs(pure - target).max())
    # circle approximants approach the same limit at rate 1/loops
    ends = {L: solve_rde(g, circle_approximant(a, 1.0, L), y0).end for L in (160, 640)}
    approx = [float(np.abs(ends[L] - target).max()) for L in (160, 640)]
    limit = (4 * ends[640] - ends[160]) / 3
    err_limit = float(np.abs(limit - target).max())
    ok = (err_e <= 1e-6 and err_norm <= 1e-6 and err_pure <= 1e-4 and approx[1] < approx[0]
          and err_limit <= 1e-4)
    return {"passed": ok, "exp": err_e, "norm": err_norm, "pure_area": err_pure,
            "circle_approximants": approx, "circle_limit": err_limit}


def universal_limit(seed: int) -> dict:
    g = ExprField.parse([["sin(y2)", "0.5*y1"], ["cos(y1)", "0.3*y2 + 0.2"]], ["y1", "y2"])
    sols = []
    for k in range(5):
        n = 512 * 2 ** k
        t = np.linspace(0, 1, n + 1)
        pts = 0.5 * np.c_[np.sin(2 * math.pi * t), np.cos(3 * math.pi * t) - 1]
        X = signature(SampledPath(t, pts), 2, p=2.5)
        sols.append(solve_rde(g, X, [0.2, -0.1]).response())
    gaps = [dp_distance(sols[k], sols[k + 1], p=2.5) for k in range(4)]
    ok = all(gaps[k + 1] < gaps[k] for k in range(3)) and gaps[-1] <= 1e-5
    return {"passed": ok, "gaps": gaps}


def bijection(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    V = build_atlas("vector_space", d=2, region=(-2, 2))
    forms = [ExprField.parse(r, names("x", 2)) for r in
             ([["sin(x2)", "x1*x2"]], [["1", "0"]], [["x1**2", "cos(x1)"]],
              [["exp(x1)", "x2**3"]], [["x2", "-x1"]])]
    rt, ev = 0.0, 0.0
    for k in range(20):
        m = int(rng.integers(10, 60))
        P = _random_polyline(rng, 2, m, 0.02)
        P = SampledPath(P.times, P.points - P.points[0] + rng.uniform(-1, 1, 2))
        X = signature(P, 2, p=2.5)
        Z = from_classical(X, V)
        Y = Z.to_classical()
        rt = max(rt, dp_distance(X, Y), float(np.abs(Y.start - X.start).max()))
        if k < 5:
            for a in forms:
                E = Z.evaluate(a)
                # integrate on the same grid: the cuts refine X geodesically
                ev = max(ev, dp_distance(E, rough_integrate(a, X.refine_to(E.times))))
    return {"passed": rt <= 1e-10 and ev <= 1e-9, "round_trip": rt, "evaluate": ev}


# ------------------------------------------------------------------ 9 - 12

def _sphere_curve(rng):
    c = rng.normal(size=3)
    a, b = rng.normal(size=3), rng.normal(size=3)
    c, a, b = 2.0 * c / np.linalg.norm(c), 0.3 * a, 0.3 * b
    k = int(rng.integers(1, 3))

    def curve(t):
        t = np.asarray(t, dtype=float)[:, None]
        v = c + a * np.cos(2 * math.pi * k * t) + b * np.sin(2 * math.pi * k * t)
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    return curve


def _published_t0(A, times, pts) -> float:
    # p = 1: (dphi * beta * length)^1 / beta <= delta / (2 L1)
    length = np.abs(np.diff(pts, axis=0)).sum(axis=1)
    cum = np.concatenate([[0.0], np.cumsum(length)])
    budget = A.delta / (2 * A.L1 * A.dphi)
    if cum[-1] <= budget:
        return float(times[-1] - times[0])
    m = len(times) - 1
    best = math.inf
    for a in range(m):
        b = int(np.searchsorted(cum, cum[a] + budget, side="right") - 1)
        if b < m:
            best = min(best, times[b] - times[a])
    return float(best)


def localisation(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    S = build_atlas("sphere")
    t = np.linspace(0, 1, 1001)
    worst_r, worst_c, counts_ok, t0_ok = 0.0, 0.0, True, True
    for _ in range(10):
        curve = _sphere_curve(rng)
        Z = from_curve(S, t, curve)
        t0 = _published_t0(S, t, curve(t))
        t0_ok &= abs(Z.t0 - t0) <= 1e-12
        counts_ok &= Z.N == math.ceil((t[-1] - t[0]) / t0 - 1e-9)
        worst_r = max(worst_r, float(Z.localisation_radii().max()))
        worst_c = max(worst_c, Z.endpoint_consistency())
    ok = worst_r <= 1 - S.delta / 2 and worst_c <= 1e-8 and counts_ok and t0_ok
    return {"passed": bool(ok), "max_radius": worst_r, "consistency": worst_c,
            "counts": bool(counts_ok), "t0": bool(t0_ok)}


def _box_form(lo, hi, margin, row):
    cut = BoxCutoff(np.asarray(lo, float), np.asarray(hi, float), margin)
    return ScaledField(cut, ConstantField(np.atleast_2d(row), len(lo)))


def concatenation(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    S = build_atlas("sphere")
    t = np.linspace(0, 1, 601)
    Z = from_curve(S, t, _sphere_curve(rng))
    probe = ExprField.parse([["x2", "x1*x3", "sin(x1)"]], names("x", 3))
    cuts = Z.cut_times()
    u1, u2 = cuts[len(cuts) // 3], cuts[2 * len(cuts) // 3]
    A, B, C = Z.restrict(cuts[0], u1), Z.restrict(u1, u2), Z.restrict(u2, cuts[-1])
    left, right = A.concat(B).concat(C), A.concat(B.concat(C))
    el, er = left.evaluate(probe), right.evaluate(probe)
    assoc = bool(np.array_equal(el.segs, er.segs) and np.array_equal(el.start, er.start))
    u = 0.5 * (cuts[0] + cuts[-1])
    u = t[np.argmin(np.abs(t - u))]
    joined = Z.restrict(cuts[0], u).concat(Z.restrict(u, cuts[-1]))
    rc = dp_distance(joined.evaluate(probe), Z.evaluate(probe))
    # union lemma and agreement on a neighbourhood, in a vector space
    V = build_atlas("vector_space", d=2, region=(-2, 2))
    P = _random_polyline(rng, 2, 40, 0.01)
    P = SampledPath(P.times, P.points - P.points[0])
    W = from_classical(signature(P, 2, p=2.5), V)
    supp = W.support()
    aU = _box_form([1.2, 1.2], [1.6, 1.6], 0.2, [1.0, 2.0])
    aV = _box_form([-1.6, 1.2], [-1.2, 1.6], 0.2, [-1.0, 0.5])
    missed = float(np.abs(supp).max()) < 0.95
    # forms supported in either missed box and in their union vanish along W
    outs = [W.evaluate(a) for a in (aU, aV, SumField([aU, aV]))]
    zero = max(float(np.abs(E.trace() - E.start).max()) for E in outs)
    base = ExprField.parse([["sin(x1)*x2", "exp(x2)"]], names("x", 2))
    agree = dp_distance(W.evaluate(base), W.evaluate(SumField([base, aU])))
    ok = assoc and missed and rc <= 1e-10 and zero <= 1e-8 and agree <= 1e-8
    return {"passed": ok, "associative": assoc, "restrict_concat": rc, "union": zero,
            "agreement": agree}


def manifold_rde(seed: int) -> dict:
    S = build_atlas("sphere")
    conn = sphere_transport(S, S)
    t = np.linspace(0, 1, 1001)
    hol, norm, fix, sig = [], 0.0, 0.0, 0.0
    for th0 in (math.pi / 6, math.pi / 4, math.pi / 3):
        def curve(s, th0=th0):
            s = np.asarray(s, dtype=float)
            return np.c_[math.sin(th0) * np.cos(2 * math.pi * s),
                         math.sin(th0) * np.sin(2 * math.pi * s), math.cos(th0) * np.ones_like(s)]
        X = from_curve(S, t, curve)
        x0, y0 = curve(np.array([0.0]))[0], np.array([0.0, 1.0, 0.0])
        sol = solve_manifold_rde(conn, X, y0)
        target = 2 * math.pi * (1 - math.cos(th0))
        diff = holonomy_angle(x0, y0, sol.response_end()) - target
        hol.append(abs(math.remainder(diff, 2 * math.pi)))
        norm = max(norm, float(np.abs(np.linalg.norm(sol.response_trace(), axis=1) - 1).max()))
        rep = verify_solution(sol, X)
        fix, sig = max(fix, rep["fixed_point"]), max(sig, rep["signal"])
    # vector-space reduction
    rng = np.random.default_rng(seed)
    V = build_atlas("vector_space", d=2, region=(-2, 2))
    P = _random_polyline(rng, 2, 60, 0.02)
    X = signature(SampledPath(P.times, P.points - P.points[0]), 2, p=2.5)
    g = ExprField.parse([["sin(y2)", "0.5"], ["0.3*y1", "cos(y1)"]], ["y1", "y2"])
    y0 = np.array([0.1, -0.2])
    red = solve_manifold_rde(linear_connection(V, V, g), from_classical(X, V), y0)
    R = red.response()
    # the localising cuts refine the grid geodesically; solve on the same grid
    vec = dp_distance(R, solve_rde(g, X.refine_to(R.times), y0).response())
    ok = max(hol) <= 1e-3 and norm <= 1e-6 and vec <= 1e-7 and fix <= 1e-6 and sig <= 1e-6
    return {"passed": ok, "holonomy": hol, "norm": norm, "vector_reduction": vec,
            "fixed_point": fix, "signal": sig}


def atlas_laws(seed: int) -> dict:
    C = build_atlas("circle")
    S = build_atlas("sphere")
    T = build_atlas("torus")
    P = product_atlas(C, S)
    prod_ok = (P.delta == min(C.delta, S.delta) and P.L == max(C.L, S.L) and P.R == max(C.R, S.R))
    # the torus constants are measured directly and must match the factor rule
    # L and R are sampled suprema; agreement is up to sampling accuracy
    torus_ok = (T.delta == C.delta and abs(T.L - C.L) <= 1e-6 * max(1.0, C.L)
                and abs(T.R - C.R) <= 1e-6 * max(1.0, C.R))
    V = build_atlas("vector_space", d=2, region=(-1, 1))
    equiv = {}
    for name, A in (("vector_space", V), ("circle", C), ("sphere", S)):
        rep = atlas_equivalence_check(A, A)
        equiv[name] = bool(rep["C"] <= A.L * (1 + 1e-9))
    sums = {}
    for name, A in (("vector_space", V), ("circle", C), ("sphere", S), ("torus", T)):
        x = A.sample(1000, seed)
        total = sum(f(x)[:, 0] for f in partition_of_unity(A))
        sums[name] = float(np.abs(total - 1).max())
    ok = prod_ok and torus_ok and all(equiv.values()) and max(sums.values()) <= 1e-10
    return {"passed": bool(ok), "product": bool(prod_ok), "torus": bool(torus_ok),
            "equivalence": equiv, "partition": sums}


CRITERIA = [
    (1, "chen", chen, 5.0),
    (2, "signature", signature_truth, 1.0),
    (3, "extension", extension, 10.0),
    (4, "riemann_stieltjes", riemann_stieltjes, 30.0),
    (5, "sewing_uniqueness", sewing_uniqueness, None),
    (6, "rde_oracles", rde_oracles, 60.0),
    (7, "universal_limit", universal_limit, None),
    (8, "bijection", bijection, None),
    (9, "localisation", localisation, None),
    (10, "concatenation", concatenation, None),
    (11, "manifold_rde", manifold_rde, 120.0),
    (12, "atlas_laws", atlas_laws, None),
]


def warm_up() -> None:
    """Compile the numba kernels so timings measure computation only."""
    P = SampledPath([0.0, 0.5, 1.0], [[0.0, 0.0], [1.0, 0.5], [0.2, 1.0]])
    for n in (1, 2, 3):
        X = signature(P, n, p=2.5 if n == 2 else float(n))
        X.prefix
        dp_distance(X, X, p=float(max(n, 1)) if n < 2 else 2.5)
    rough_integrate(ExprField.parse([["x1", "x2"]], ["x1", "x2"]), signature(P, 2, p=2.5))


def run_one(number: int, seed: int = 0) -> Result:
    for num, name, fn, limit in CRITERIA:
        if num == number:
            t = time.perf_counter()
            try:
                out = fn(seed)
            except RoughError as exc:
                out = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
            dt = time.perf_counter() - t
            passed = bool(out.pop("passed")) and (limit is None or dt < limit)
            return Result(num, name, passed, dt, limit, _plain(out))
    raise KeyError(number)


def run(numbers=None, seed: int = 0) -> list[Result]:
    warm_up()
    numbers = [c[0] for c in CRITERIA] if numbers is None else list(numbers)
    return [run_one(n, seed) for n in numbers]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj
