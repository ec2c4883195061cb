"""Rough differential equations on manifolds.

A connection on ``E = N x M`` is given by ``g(x, y): T_x N -> T_y M``,
supplied as an ambient matrix field ``G`` acting on ambient tangent vectors
(or chartwise). Its horizontal lift is ``Gamma(v) = (v, g v)``.

The solver follows the localising sequence of the signal: on each segment it
picks the chart pair containing the current point, writes ``g`` in those
coordinates, cuts it off outside the chart ball and solves the classical
equation driven by the coordinate signal. The response coordinates must stay
within ``delta`` of their start; otherwise the segment is halved (up to eight
times). The result is a rough path on the product atlas whose projection to
``N`` is the signal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .atlas import Atlas, Chart, _Guarded, product_atlas
from .calculus import (AffineMap, BlockField, ComposeMap, ComposePoint, ConstantField, ExprField,
                       Field, JacobianField, MatMulField, ProductMap, ScaledField, ScaledMap,
                       projection, pullback)
from .errors import NumericError, ParseError, ValidationError
from .expr import names
from .lift import ClassicalRoughPath, dp_distance
from .lip import BoxCutoff, grid_points, jet_from_field, lip_norm_estimate
from .mpath import ManifoldRoughPath, Segment, _level2, _Square
from .rde import solve_rde_signal_dep

MAX_HALVINGS = 8
PROBE_CORE = 0.5


class Connection:
    """Connection ``g`` between a signal atlas ``N`` and a response atlas ``M``.

    ``G`` is an ambient field on ``R^(aN + aM)`` with values in
    ``L(R^aN, R^aM)``; ``reps`` optionally overrides chart pairs with
    coordinate fields on ``R^(dN + dM)``.
    """

    def __init__(self, N: Atlas, M: Atlas, G: Field | None = None, reps: dict | None = None,
                 gamma: float = 2.0, C: float | None = None):
        if G is None and not reps:
            raise ValidationError("a connection needs an ambient field or chart representations")
        if G is not None and (G.point_dim != N.ambient + M.ambient or G.rows != M.ambient
                              or G.cols != N.ambient):
            raise ValidationError("ambient connection field has the wrong shape")
        self.N, self.M, self.G = N, M, G
        self.reps = dict(reps or {})
        self.gamma, self.C = gamma, C
        self._cache = {}

    # coordinate representations ------------------------------------------------
    def rep(self, i: int, j: int) -> Field:
        """``g_{phi_i, psi_j}(u, w) = Dpsi_j(y) G(x, y) Dphi_i^-1(u)`` with ``x, y`` the points."""
        key = (i, j)
        if key in self._cache:
            return self._cache[key]
        ci, cj = self.N.charts[i], self.M.charts[j]
        if (ci.id, cj.id) in self.reps:
            f = self.reps[(ci.id, cj.id)]
        else:
            dN, dM = ci.dim, cj.dim
            inv = ProductMap([ci.inv, cj.inv])
            pu = projection(dN + dM, range(dN))
            pw = projection(dN + dM, range(dN, dN + dM))
            Dpsi = ComposePoint(JacobianField(cj.phi), ComposeMap(cj.inv, pw))
            Gc = ComposePoint(self.G, inv)
            Dinv = ComposePoint(JacobianField(ci.inv), pu)
            f = MatMulField(MatMulField(Dpsi, Gc), Dinv)
        self._cache[key] = f
        return f

    def horizontal(self, i: int, j: int) -> Field:
        """``Gamma`` in coordinates: ``[[I, 0], [g_ij, 0]]``."""
        f = self.rep(i, j)
        dN, dM = f.cols, f.rows
        D = dN + dM
        return BlockField([[ConstantField(np.eye(dN), D), None], [f, None]], [dN, dM], [dN, dM], D)

    def ambient_horizontal(self) -> Field:
        aN, aM = self.N.ambient, self.M.ambient
        D = aN + aM
        return BlockField([[ConstantField(np.eye(aN), D), None], [self.G, None]], [aN, aM], [aN, aM], D)

    # checks ------------------------------------------------------------------------
    def chart_samples(self, i: int, j: int, pitch: float, radius: float = 1.0) -> np.ndarray:
        ci, cj = self.N.charts[i], self.M.charts[j]
        D = ci.dim + cj.dim
        z = grid_points(-radius * np.ones(D), radius * np.ones(D), pitch)
        return z[K.vec_norm(z, "linf") < radius]

    def lip_norm(self, pairs=None, pitch: float = 0.25) -> float:
        """Largest Lip norm estimate over chart-pair representations."""
        pairs = self._pairs() if pairs is None else pairs
        g = min(self.gamma, 2.0)
        best = 0.0
        for i, j in pairs:
            z = self.chart_samples(i, j, pitch)
            best = max(best, lip_norm_estimate(jet_from_field(self.rep(i, j), z, g, "linf")).estimate)
        return best

    def validate(self, pairs=None, pitch: float = 0.25) -> float:
        L = self.lip_norm(pairs, pitch)
        if self.C is not None and L > self.C * (1 + 1e-9):
            raise ValidationError(f"connection norm {L:.6g} exceeds the declared constant {self.C}")
        return L

    def _pairs(self):
        return [(i, j) for i in range(len(self.N.charts)) for j in range(len(self.M.charts))]

    def compatibility(self, a, b, n: int = 200, seed: int = 0) -> float:
        """``|g_b(T(u, w)) DT_N - DT_M g_a(u, w)|`` on samples of the overlap of pairs ``a, b``."""
        (i, j), (k, l) = a, b
        ci, cj, ck, cl = self.N.charts[i], self.M.charts[j], self.N.charts[k], self.M.charts[l]
        rng = np.random.default_rng(seed)
        u = rng.uniform(-1, 1, (n, ci.dim))
        w = rng.uniform(-1, 1, (n, cj.dim))
        x, y = ci.inv(u), cj.inv(w)
        keep = (ck.radius(x, self.N.norm) < 1) & (cl.radius(y, self.M.norm) < 1)
        if not keep.any():
            return 0.0
        u, w, x, y = u[keep], w[keep], x[keep], y[keep]
        TN = ComposeMap(ck.phi, ci.inv)
        TM = ComposeMap(cl.phi, cj.inv)
        u2, w2 = TN(u), TM(w)
        lhs = np.einsum("nab,nbc->nac", self.rep(k, l).value(np.hstack([u2, w2])), TN.jacobian(u))
        rhs = np.einsum("nab,nbc->nac", TM.jacobian(w), self.rep(i, j).value(np.hstack([u, w])))
        return float(np.abs(lhs - rhs).max())

    # serialisation ---------------------------------------------------------------------
    @classmethod
    def from_json_obj(cls, obj, N: Atlas, M: Atlas) -> "Connection":
        """``{N, M, gamma, C, ambient?, reps: [{chartN, chartM, expr}]}``.

        ``ambient`` is a matrix over ``x1..`` (signal) and ``y1..`` (response);
        chart expressions use ``u1..`` and ``w1..``.
        """
        try:
            G = None
            if "ambient" in obj:
                G = ExprField.parse(obj["ambient"], names("x", N.ambient) + names("y", M.ambient))
            reps = {}
            for r in obj.get("reps", []):
                cN, cM = N.chart(r["chartN"]), M.chart(r["chartM"])
                reps[(cN.id, cM.id)] = ExprField.parse(r["expr"], names("u", cN.dim) + names("w", cM.dim))
            return cls(N, M, G, reps, float(obj.get("gamma", 2.0)), obj.get("C"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad connection object: {exc}") from exc

    @classmethod
    def from_json(cls, text, N, M):
        try:
            return cls.from_json_obj(json.loads(text), N, M)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from exc


ConnectionSpec = Connection


def sphere_transport(N: Atlas, M: Atlas) -> Connection:
    """Levi-Civita transport of unit tangent vectors: ``g(x, y) v = (x x v) x y``."""
    xs, ys = names("x", 3), names("y", 3)
    dot = "+".join(f"{a}*{b}" for a, b in zip(xs, ys))
    rows = [[(f"({dot})" if r == c else "0") + f" - {xs[r]}*{ys[c]}" for c in range(3)] for r in range(3)]
    G = ExprField.parse(rows, xs + ys)
    return Connection(N, M, G, gamma=2.0)


def linear_connection(N: Atlas, M: Atlas, g: Field) -> Connection:
    """Connection of ``dY = g(Y) dX`` on vector spaces (``g`` a field on the response)."""
    aN = N.ambient
    G = ComposePoint(g, projection(aN + M.ambient, range(aN, aN + M.ambient)))
    return Connection(N, M, G, gamma=2.0)


# --------------------------------------------------------------- one-forms

def alpha_gamma(alpha, conn: Connection):
    """``alpha o Gamma o pi_*`` for an ambient form or a chart-pair callable."""
    if isinstance(alpha, Field):
        return MatMulField(alpha, conn.ambient_horizontal())

    def rep(chart_pair):
        i, j = chart_pair
        return MatMulField(alpha((i, j)), conn.horizontal(i, j))

    return rep


def pushforward_connection(conn: Connection, i: int, j: int, n: int = 200, seed: int = 0) -> dict:
    """Coordinate connection on the chart pair ``(i, j)`` with the commutation check.

    For product charts ``xi = (phi_i, psi_j)`` the projection in coordinates is
    the first block; ``pi_xi o xi = phi_i o pi`` is checked on samples.
    """
    ci, cj = conn.N.charts[i], conn.M.charts[j]
    rng = np.random.default_rng(seed)
    x = ci.inv(rng.uniform(-1, 1, (n, ci.dim)))
    y = cj.inv(rng.uniform(-1, 1, (n, cj.dim)))
    xi = np.hstack([ci.phi(x), cj.phi(y)])
    err = float(np.abs(xi[:, :ci.dim] - ci.phi(x)).max())
    back = ci.inv(xi[:, :ci.dim])
    inv_err = float(np.abs(back - x).max())
    if inv_err > 1e-8:
        raise ValidationError(f"chart pair is not invertible on samples (error {inv_err:.3g})")
    return {"field": conn.rep(i, j), "horizontal": conn.horizontal(i, j), "commutation": err}


# ------------------------------------------------------------------- solver

@dataclass
class ManifoldRdeSolution:
    Z: ManifoldRoughPath
    x0: np.ndarray
    y0: np.ndarray
    conn: Connection
    report: dict = field(default_factory=dict)

    @property
    def aN(self) -> int:
        return self.conn.N.ambient

    def pair(self, seg: Segment):
        nM = len(self.conn.M.charts)
        return divmod(seg.chart, nM)

    def response_trace(self) -> np.ndarray:
        return self.Z.support()[:, self.aN:]

    def signal_trace(self) -> np.ndarray:
        return self.Z.support()[:, :self.aN]

    def response_end(self) -> np.ndarray:
        return self.Z.end_point()[self.aN:]

    def response(self, tol: float = 1e-10) -> ClassicalRoughPath:
        """``(pi_M)_* Z`` as a classical path in the ambient space of ``M``."""
        a, b = self.aN, self.conn.M.ambient
        return self.Z.pushforward(projection(a + b, range(a, a + b)), tol)


def _cutoff_field(f: Field, rho: float, D: int) -> Field:
    # equal to f on the max-ball of radius rho, zero outside the unit ball
    margin = (1.0 - rho) / 2.0
    cut = BoxCutoff(-rho * np.ones(D), rho * np.ones(D), margin)
    return ScaledField(cut, f)


def solve_manifold_rde(conn: Connection, X: ManifoldRoughPath, y0, tol: float = 1e-9,
                       sew_tol: float = 1e-10, max_halvings: int = MAX_HALVINGS) -> ManifoldRdeSolution:
    """Solve ``dY = g(X, Y) dX`` with ``Y_0 = y0`` along the manifold signal ``X``."""
    N, M = conn.N, conn.M
    if X.atlas is not N and X.atlas.to_json_obj() != N.to_json_obj():
        raise ValidationError("signal lives on a different atlas")
    y = np.asarray(y0, dtype=float).reshape(-1)
    if y.size != M.ambient:
        raise ValidationError("initial response has the wrong dimension")
    E = product_atlas(N, M)
    nM = len(M.charts)
    delta = min(N.delta, M.delta)
    segs = []
    halvings = 0
    stack = [s for s in reversed(X.segments)]
    depth = {id(s): 0 for s in stack}
    while stack:
        sx = stack.pop()
        i = sx.chart
        ci = N.charts[i]
        j = int(M.best_chart(y[None, :])[0])
        cj = M.charts[j]
        w0 = cj.phi(y[None, :])[0]
        Xn = _level2(sx.Z)
        u0 = Xn.start
        start = np.concatenate([u0, w0])
        r_s = float(K.vec_norm(start[None, :], "linf")[0])
        dN, dM = ci.dim, cj.dim
        f = _cutoff_field(conn.rep(i, j), min(r_s + delta, 1.0 - 1e-3), dN + dM)
        sol = None
        try:
            sol = solve_rde_signal_dep(f, Xn, w0, tol=tol, sew_tol=sew_tol)
        except NumericError:
            sol = None
        ok = False
        if sol is not None:
            tr = sol.Z.trace()
            ok = bool(np.all(K.vec_norm(tr - start[None, :], "linf") < delta))
        if not ok:
            level = depth.get(id(sx), 0)
            if level >= max_halvings or Xn.m < 2 and not _can_split(Xn):
                raise NumericError(f"response left its chart on [{Xn.t0}, {Xn.T}] after "
                                   f"{level} halvings")
            mid = 0.5 * (Xn.t0 + Xn.T)
            first = Segment(i, Xn.restrict(Xn.t0, mid))
            second = Segment(i, Xn.restrict(mid, Xn.T))
            depth[id(first)] = depth[id(second)] = level + 1
            halvings += 1
            stack.append(second)
            stack.append(first)
            continue
        Zc = ClassicalRoughPath(sol.Z.times, sol.Z.segs, dN + dM, 2, start, Xn.p)
        segs.append(Segment(i * nM + j, Zc))
        y = cj.inv(Zc.end[None, dN:])[0]
    x0 = X.x0
    Z = ManifoldRoughPath(E, np.concatenate([x0, np.asarray(y0, dtype=float)]), segs, X.p, X.t0)
    return ManifoldRdeSolution(Z, x0.copy(), np.asarray(y0, dtype=float), conn,
                               {"segments": len(segs), "halvings": halvings})


def _can_split(Xn: ClassicalRoughPath) -> bool:
    return Xn.T - Xn.t0 > 1e-12


# ------------------------------------------------------------- verification

def probe_forms(A: Atlas, chart: int) -> list:
    """Exact forms of bumped coordinates and their squares on one chart.

    The bump equals 1 on the ball of radius ``PROBE_CORE`` and vanishes at
    ``1 - delta/4``; a wide transition keeps the probes' higher derivatives
    moderate.
    """
    c = A.charts[chart]
    r = PROBE_CORE
    cut = BoxCutoff(-r * np.ones(c.dim), r * np.ones(c.dim), 1.0 - A.delta / 4 - r)
    out = []
    for k in range(c.dim):
        e = np.zeros((1, c.dim))
        e[0, k] = 1.0
        out.append(JacobianField(_Guarded(ScaledMap(cut, AffineMap(e)), c)))
        out.append(JacobianField(_Guarded(ScaledMap(cut, _Square(c.dim, k)), c)))
    return out


def _used_charts(Z: ManifoldRoughPath, limit: int):
    seen = []
    for s in Z.segments:
        if s.chart not in seen:
            seen.append(s.chart)
    return seen[:limit]


def _inactive(Z: ManifoldRoughPath, chart: Chart, A: Atlas, sl=None) -> set:
    """Indices of segments that stay clear of the probe support of ``chart``.

    Probes vanish beyond radius ``1 - delta/4``. A segment is cleared when its
    sampled radii exceed that by twice the largest jump between samples, or
    when the chart is undefined along the whole segment and the samples are
    dense.
    """
    edge = 1.0 - A.delta / 4
    out = set()
    for n, seg in enumerate(Z.segments):
        pts = Z.chart_of(seg).inv(seg.Z.trace())
        if sl is not None:
            pts = pts[:, sl]
        r = chart.radius(pts, A.norm)
        fin = np.isfinite(r)
        if fin.all():
            jump = float(np.abs(np.diff(r)).max()) if r.size > 1 else 0.0
            if r.min() > edge + 2 * jump:
                out.add(n)
        elif not fin.any():
            if float(np.abs(np.diff(pts, axis=0)).max()) < 0.05:
                out.add(n)
    return out


def verify_solution(sol: ManifoldRdeSolution, X: ManifoldRoughPath, tol: float = 1e-6,
                    max_charts: int = 3, sew_tol: float = 1e-10) -> dict:
    """Check the three solution conditions on a probe family of one-forms.

    The probes are exact forms of bumped coordinates and their squares on the
    first ``max_charts`` charts visited. Residuals are ``d_p`` distances.
    """
    conn = sol.conn
    N = conn.N
    Z = sol.Z
    E = Z.atlas
    aN, aM = N.ambient, conn.M.ambient
    start_err = float(np.abs(Z.x0 - np.concatenate([X.x0, sol.y0])).max())
    # (2) projection onto N versus the signal
    proj = projection(aN + aM, range(aN))
    sig = 0.0
    for ci in _used_charts(X, max_charts):
        c = N.charts[ci]
        zs, xs = _inactive(Z, c, N, slice(0, aN)), _inactive(X, c, N)
        for a in probe_forms(N, ci):
            lhs = Z.evaluate(pullback(a, proj), sew_tol, skip=zs)
            rhs = X.evaluate(a, sew_tol, skip=xs)
            sig = max(sig, dp_distance(lhs, rhs, p=max(X.p, 1.0)))
    # (3) fixed point Z(alpha) = Z(alpha^Gamma)
    fix = 0.0
    for ci in _used_charts(Z, max_charts):
        zs = _inactive(Z, E.charts[ci], E)
        for a in probe_forms(E, ci):
            lhs = Z.evaluate(a, sew_tol, skip=zs)
            rhs = Z.evaluate(alpha_gamma(a, conn), sew_tol, skip=zs)
            fix = max(fix, dp_distance(lhs, rhs, p=max(Z.p, 1.0)))
    return {"start": start_err, "signal": sig, "fixed_point": fix,
            "ok": bool(start_err <= 1e-12 and sig <= tol and fix <= tol)}


def holonomy_angle(x0, y0, y1) -> float:
    """Signed rotation from ``y0`` to ``y1`` in the tangent plane at ``x0``."""
    x0, y0, y1 = (np.asarray(v, dtype=float) for v in (x0, y0, y1))
    return float(math.atan2(np.dot(x0, np.cross(y0, y1)), np.dot(y0, y1)))
