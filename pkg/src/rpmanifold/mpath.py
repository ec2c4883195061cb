"""Rough paths on manifolds, stored as localising sequences.

A :class:`ManifoldRoughPath` is a start point on the manifold together with
consecutive segments ``(chart, Z^n)`` where ``Z^n`` is a classical rough path
in the coordinates of that chart. Its value on a one-form ``alpha`` is the
concatenation of the rough integrals of the coordinate representations of
``alpha`` against the ``Z^n``.

Cut times are uniform: ``s_k = min(k t0, T)`` with ``t0`` the largest time
for which

    (|d phi| omega(s, s + t0))^(1/p) / (beta (1/p)!) <= delta / (2 L1)

for all ``s``. Here ``|d phi|`` bounds the chart Jacobians and ``L1`` bounds
the first derivatives of the transitions. A segment starts at a point in the
``delta``-shrunk set of its chart and its coordinate trace therefore stays in
``B(0, 1 - delta/2)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .atlas import NORMS, Atlas, Chart, _Guarded, atlas_from_json_obj
from .calculus import (AffineMap, BlockField, ComposeMap, ComposePoint, Field, JacobianField,
                       Map, ScaledField, ScaledMap, StackMap, identity_map, projection, pullback)
from .errors import DomainError, NumericError, ParseError, ValidationError
from .integral import rough_integrate
from .lift import (ClassicalRoughPath, ControlEstimate, SampledPath, beta_constant, concat_many,
                   extend, signature)
from .lip import BoxCutoff, smooth_step
from .tensor import tensor_size

PROBE_TOL = 1e-8


@dataclass
class Segment:
    chart: int
    Z: ClassicalRoughPath

    @property
    def interval(self):
        return (float(self.Z.t0), float(self.Z.T))


def _level2(Z: ClassicalRoughPath) -> ClassicalRoughPath:
    if Z.level < 2:
        return extend(Z, 2)
    if Z.level > 2:
        return Z.truncate(2) if math.floor(Z.p) <= 2 else Z
    return Z


class ManifoldRoughPath:
    def __init__(self, atlas: Atlas, x0, segments: list, p: float = 1.0, t0: float | None = None):
        self.atlas = atlas
        self.x0 = np.asarray(x0, dtype=float).reshape(-1)
        self.segments = list(segments)
        self.p = float(p)
        self.t0 = t0
        if not self.segments:
            raise ValidationError("a manifold rough path needs at least one segment")

    # basic data ------------------------------------------------------------
    @property
    def T(self) -> float:
        return self.segments[-1].Z.T

    @property
    def start_time(self) -> float:
        return self.segments[0].Z.t0

    @property
    def N(self) -> int:
        return len(self.segments)

    def cut_times(self) -> np.ndarray:
        return np.array([self.start_time] + [s.Z.T for s in self.segments])

    def chart_of(self, seg: Segment) -> Chart:
        return self.atlas.charts[seg.chart]

    def segment_start(self, n: int) -> np.ndarray:
        seg = self.segments[n]
        return self.chart_of(seg).inv(seg.Z.start[None, :])[0]

    def end_point(self) -> np.ndarray:
        seg = self.segments[-1]
        return self.chart_of(seg).inv(seg.Z.end[None, :])[0]

    # evaluation ----------------------------------------------------------------
    def chart_form(self, alpha, seg: Segment) -> Field:
        c = self.chart_of(seg)
        if isinstance(alpha, Field):
            if alpha.point_dim != self.atlas.ambient or not alpha.is_one_form:
                raise DomainError("ambient one-form has the wrong dimension")
            return pullback(alpha, c.inv)
        if isinstance(alpha, dict):
            if c.id not in alpha:
                raise DomainError(f"one-form has no representation on chart {c.id}")
            return alpha[c.id]
        if callable(alpha):
            return alpha(c)
        raise DomainError("cannot resolve the one-form on a chart")

    def evaluate(self, alpha, tol: float = 1e-10, start=None, segments=None,
                 skip=()) -> ClassicalRoughPath:
        """``Z(alpha)`` as a classical rough path (level 2).

        Segment indices in ``skip`` are known to lie where ``alpha`` vanishes;
        they contribute constant stretches without integration.
        """
        pieces = []
        pos = None
        segs = self.segments if segments is None else segments
        forms = {}
        # consecutive segments on one chart join continuously and are sewn together
        runs, n = [], 0
        while n < len(segs):
            m = n + 1
            if n not in skip:
                while m < len(segs) and m not in skip and segs[m].chart == segs[n].chart:
                    m += 1
            runs.append((n, m))
            n = m
        for a, b in runs:
            seg = segs[a]
            if seg.chart not in forms:
                forms[seg.chart] = self.chart_form(alpha, seg)
            form = forms[seg.chart]
            if pos is None:
                pos = np.zeros(form.rows) if start is None else np.asarray(start, dtype=float)
            if a in skip:
                lvl = min(2, max(1, math.floor(seg.Z.p)))
                segs_const = np.zeros((seg.Z.m, tensor_size(form.rows, lvl)))
                segs_const[:, 0] = 1.0
                pieces.append(ClassicalRoughPath(seg.Z.times, segs_const, form.rows, lvl, pos, seg.Z.p))
                continue
            Z = _level2(seg.Z) if b == a + 1 else concat_many([_level2(s.Z) for s in segs[a:b]],
                                                             check_start=False)
            E = rough_integrate(form, Z, tol=tol, start=pos)
            pieces.append(E)
            pos = E.end
        out = concat_many(pieces, check_start=False)
        return ClassicalRoughPath(out.times, out.segs, out.dim, out.level, out.start, max(self.p, 1.0))

    def pushforward(self, g: Map, tol: float = 1e-10) -> ClassicalRoughPath:
        """``g_* Z`` for a map into a vector space: increments ``Z(dg)``, start ``g(x0)``."""
        if g.din != self.atlas.ambient:
            raise DomainError("map must act on ambient points of the manifold")
        return self.evaluate(JacobianField(g), tol, start=g(self.x0[None, :])[0])

    def to_classical(self, tol: float = 1e-10) -> ClassicalRoughPath:
        return self.pushforward(identity_map(self.atlas.ambient), tol)

    def support(self) -> np.ndarray:
        pts = [self.x0[None, :]]
        for seg in self.segments:
            pts.append(self.chart_of(seg).inv(seg.Z.trace()))
        return np.vstack(pts)

    # invariants ------------------------------------------------------------------
    def localisation_radii(self) -> np.ndarray:
        norm = NORMS[self.atlas.norm]
        return np.array([K.vec_norm(seg.Z.trace(), norm).max() for seg in self.segments])

    def check_localisation(self) -> bool:
        return bool(np.all(self.localisation_radii() <= 1.0 - self.atlas.delta / 2 + 1e-12))

    def probes(self, chart: int) -> list:
        """Bumped coordinate functions and their squares for one chart (2d maps)."""
        A = self.atlas
        c = A.charts[chart]
        r = 1.0 - A.delta / 2
        cut = BoxCutoff(-r * np.ones(c.dim), r * np.ones(c.dim), A.delta / 4)
        out = []
        for k in range(c.dim):
            e = np.zeros((1, c.dim))
            e[0, k] = 1.0
            lin = AffineMap(e)
            out.append(_Guarded(ScaledMap(cut, lin), c))
            out.append(_Guarded(ScaledMap(cut, _Square(c.dim, k)), c))
        return out

    def boundary_residual(self, n: int, y, tol: float = 1e-10) -> float:
        """``max |g(x_n) + Z^n(dg) - g(y)|`` over the probes of the charts involved."""
        seg = self.segments[n]
        xn = self.segment_start(n)
        y = np.asarray(y, dtype=float).reshape(1, -1)
        A = self.atlas
        charts = {seg.chart, int(A.best_chart(y)[0])}
        worst = 0.0
        for ci in charts:
            for g in self.probes(ci):
                E = self.evaluate(JacobianField(g), tol, segments=[seg])
                lhs = g(xn[None, :])[0] + (E.end - E.start)
                worst = max(worst, float(np.abs(lhs - g(y)[0]).max()))
        return worst

    def endpoint_consistency(self, tol: float = 1e-10) -> float:
        """Worst probe residual over the stored segment boundaries."""
        worst = 0.0
        for n in range(self.N - 1):
            worst = max(worst, self.boundary_residual(n, self.segment_start(n + 1), tol))
        return worst

    # surgery ------------------------------------------------------------------------
    def restrict(self, s: float, t: float) -> "ManifoldRoughPath":
        if not (self.start_time - 1e-12 <= s < t <= self.T + 1e-12):
            raise ValidationError(f"[{s}, {t}] is not inside [{self.start_time}, {self.T}]")
        segs = []
        for seg in self.segments:
            a, b = seg.interval
            lo, hi = max(a, s), min(b, t)
            if hi - lo > 1e-14 * max(1.0, abs(hi)):
                segs.append(Segment(seg.chart, seg.Z.restrict(lo, hi)))
        x0 = self.atlas.charts[segs[0].chart].inv(segs[0].Z.start[None, :])[0]
        return ManifoldRoughPath(self.atlas, x0, segs, self.p, self.t0)

    def concat(self, other: "ManifoldRoughPath", tol: float = PROBE_TOL) -> "ManifoldRoughPath":
        if other.atlas is not self.atlas and other.atlas.to_json_obj() != self.atlas.to_json_obj():
            raise ValidationError("paths live on different atlases")
        if abs(other.start_time - self.T) > 1e-12 * max(1.0, abs(self.T)):
            other = other.shifted(self.T - other.start_time)
        res = self.boundary_residual(self.N - 1, other.x0)
        if res > tol:
            raise ValidationError(f"end point of the first path is inconsistent with the start of "
                                  f"the second (worst probe residual {res:.3g})")
        return ManifoldRoughPath(self.atlas, self.x0, self.segments + other.segments,
                                 max(self.p, other.p), self.t0)

    def shifted(self, dt: float) -> "ManifoldRoughPath":
        segs = [Segment(s.chart, ClassicalRoughPath(s.Z.times + dt, s.Z.segs, s.Z.dim, s.Z.level,
                                                    s.Z.start, s.Z.p)) for s in self.segments]
        return ManifoldRoughPath(self.atlas, self.x0, segs, self.p, self.t0)

    # serialisation -------------------------------------------------------------------
    def to_json_obj(self) -> dict:
        return {"atlas": self.atlas.to_json_obj(), "start": self.x0.tolist(), "p": self.p,
                "t0": self.t0,
                "segments": [{"interval": list(s.interval), "chart": self.atlas.charts[s.chart].id,
                              "start_coords": s.Z.start.tolist(), "roughpath": s.Z.to_json_obj()}
                             for s in self.segments]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json_obj(cls, obj, atlas: Atlas | None = None) -> "ManifoldRoughPath":
        try:
            A = atlas if atlas is not None else atlas_from_json_obj(obj["atlas"])
            segs = [Segment(A.index(s["chart"]), ClassicalRoughPath.from_json_obj(s["roughpath"]))
                    for s in obj["segments"]]
            return cls(A, obj["start"], segs, float(obj.get("p", 1.0)), obj.get("t0"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad manifold rough path object: {exc}") from exc

    @classmethod
    def from_json(cls, text: str, atlas: Atlas | None = None) -> "ManifoldRoughPath":
        try:
            return cls.from_json_obj(json.loads(text), atlas)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from exc


class _Square(Map):
    """``z -> z_k^2``."""

    def __init__(self, d, k):
        self.din, self.dout, self.k = d, 1, k

    def jet(self, x, order=2):
        N = x.shape[0]
        out = [x[:, self.k:self.k + 1] ** 2]
        if order >= 1:
            J = np.zeros((N, 1, self.din))
            J[:, 0, self.k] = 2 * x[:, self.k]
            out.append(J)
        if order >= 2:
            H = np.zeros((N, 1, self.din, self.din))
            H[:, 0, self.k, self.k] = 2.0
            out.append(H)
        return out


# ------------------------------------------------------------------ localisation

def displacement_budget(A: Atlas, p: float) -> float:
    """Largest admissible ``omega`` over one segment."""
    if not np.isfinite(A.L1) or not np.isfinite(A.dphi):
        A.validate()
    rhs = A.delta / (2.0 * A.L1) * beta_constant(p) * math.gamma(1.0 / p + 1.0)
    return rhs ** p / A.dphi


def choose_t0(omega: ControlEstimate, budget: float) -> float:
    """Largest ``t0`` with ``omega(s, s + t0) <= budget`` for grid times ``s``.

    The supremum over ``s`` is taken on the grid, where ``omega`` is known;
    the resulting localisation is checked afterwards.
    """
    X = omega.X
    times = X.times
    m = X.m
    if omega.total() <= budget:
        return float(times[-1] - times[0])
    if omega._cum is not None:
        cum = omega._cum
        bmax = np.searchsorted(cum, cum[:m] + budget, side="right") - 1
    else:
        W = omega.matrix()
        bmax = np.array([int(np.nonzero(W[a] <= budget)[0].max()) for a in range(m)])
    if np.any(bmax[:m] <= np.arange(m)):
        a = int(np.nonzero(bmax[:m] <= np.arange(m))[0][0])
        raise NumericError(f"a single grid step at t={times[a]:.6g} exceeds the localisation "
                           f"budget; refine the input path")
    cand = [times[b] - times[a] for a, b in enumerate(bmax[:m]) if b < m]
    t0 = float(min(cand)) if cand else float(times[-1] - times[0])
    pitch = float(np.min(np.diff(times)))
    if t0 < pitch:
        raise NumericError(f"localisation time {t0:.3g} is below the grid pitch {pitch:.3g}; "
                           f"refine the input path")
    return t0


def segment_count(T: float, t0: float) -> int:
    """``ceil(T / t0)``, ignoring rounding noise in the ratio."""
    return max(1, math.ceil(T / t0 - 1e-9))


def cut_grid(t_start: float, T: float, t0: float, grid=None) -> np.ndarray:
    """``s_k = min(t_start + k t0, T)``, snapped onto ``grid`` when within rounding."""
    N = segment_count(T - t_start, t0)
    cuts = np.minimum(t_start + t0 * np.arange(N + 1), T)
    if grid is not None:
        grid = np.asarray(grid)
        k = np.clip(np.searchsorted(grid, cuts), 1, grid.size - 1)
        for off in (0, -1):
            near = np.abs(grid[k + off] - cuts) <= 1e-12 * max(1.0, abs(T))
            cuts[near] = grid[k + off][near]
    return cuts


def from_classical(X: ClassicalRoughPath, A: Atlas, x0=None, t0: float | None = None) -> ManifoldRoughPath:
    """Manifold rough path on a vector-space atlas from a classical path and its start."""
    if any(c.kind != "translation" for c in A.charts):
        raise ValidationError("from_classical needs an atlas of translation charts")
    X = _level2(X)
    x0 = X.start if x0 is None else np.asarray(x0, dtype=float)
    X = ClassicalRoughPath(X.times, X.segs, X.dim, X.level, x0, X.p)
    trace = X.trace()
    region = A.params.get("region")
    if region is not None:
        lo, hi = np.asarray(region[0]), np.asarray(region[1])
        if np.any(trace < lo - 1e-12) or np.any(trace > hi + 1e-12):
            raise DomainError("the path leaves the working region of the atlas")
    if t0 is None:
        t0 = choose_t0(ControlEstimate(X, max(X.p, 1.0)), displacement_budget(A, max(X.p, 1.0)))
    cuts = cut_grid(X.t0, X.T, t0, X.times)
    Xr = X.refine_to(cuts)
    segs = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        piece = Xr.restrict(a, b)
        x = piece.start[None, :]
        ci = int(A.best_chart(x)[0])
        z0 = A.charts[ci].phi(x)[0]
        segs.append(Segment(ci, ClassicalRoughPath(piece.times, piece.segs, piece.dim, piece.level,
                                                   z0, piece.p)))
    Z = ManifoldRoughPath(A, x0, segs, X.p, t0)
    if not Z.check_localisation():
        raise NumericError("a segment left its chart; the localisation time is too large")
    return Z


def from_curve(A: Atlas, times, points, t0: float | None = None, level: int = 2) -> ManifoldRoughPath:
    """Bounded-variation path on ``M`` through ambient ``points`` (or a callable of time).

    Inside each segment the path is the polyline through the chart images of
    the samples; at a cut the next segment starts from the exact image of the
    previous end point, so consecutive segments meet.
    """
    times = np.asarray(times, dtype=float)
    curve = points if callable(points) else None
    pts = curve(times) if curve is not None else np.asarray(points, dtype=float)
    if pts.shape != (times.size, A.ambient):
        raise ValidationError("points must be ambient samples at the given times")
    amb = signature(SampledPath(times, pts), 1, p=1.0)
    if t0 is None:
        t0 = choose_t0(ControlEstimate(amb, 1.0), displacement_budget(A, 1.0))
    cuts = cut_grid(times[0], times[-1], t0, times)
    if curve is not None:
        grid = np.union1d(times, cuts)
        times, pts = grid, curve(grid)
    segs = []
    x = pts[0]
    for a, b in zip(cuts[:-1], cuts[1:]):
        ci = int(A.best_chart(x[None, :])[0])
        c = A.charts[ci]
        inner = (times > a + 1e-14) & (times < b - 1e-14)
        tt = np.concatenate([[a], times[inner], [b]])
        z_in = c.phi(pts[inner]) if inner.any() else np.zeros((0, c.dim))
        z_start = c.phi(x[None, :])
        # end point by interpolation of chart images at the cut
        k = int(np.searchsorted(times, b - 1e-14))
        k = min(max(k, 1), times.size - 1)
        zk = c.phi(pts[[k - 1, k]])
        w = (b - times[k - 1]) / (times[k] - times[k - 1])
        z_end = ((1 - w) * zk[0] + w * zk[1])[None, :]
        if np.isclose(times[k], b, rtol=0, atol=1e-14):
            z_end = zk[1:2]
        zz = np.vstack([z_start, z_in, z_end])
        keep = np.concatenate([[True], np.diff(tt) > 1e-14])
        Zc = signature(SampledPath(tt[keep], zz[keep]), level, p=1.0)
        segs.append(Segment(ci, Zc))
        x = c.inv(z_end)[0]
    Z = ManifoldRoughPath(A, pts[0], segs, 1.0, t0)
    if not Z.check_localisation():
        raise NumericError("a segment left its chart; the localisation time is too large")
    return Z


def localise(A: Atlas, X, x0=None, times=None, t0: float | None = None) -> ManifoldRoughPath:
    """Localising sequence for a classical path (vector-space atlas) or a curve on ``M``."""
    if isinstance(X, ClassicalRoughPath):
        return from_classical(X, A, x0, t0)
    if times is None:
        raise ValidationError("curves need their sample times")
    return from_curve(A, times, X, t0)


# -------------------------------------------------------------------- embedding

class _ChartForm(Field):
    """``h_i(y) = rho_i(psi(y)) alpha(psi(y)) Dpsi(y)`` inside the unit ball, zero outside."""

    def __init__(self, rho: Map, alpha: Field, chart: Chart, norm: str):
        self.inner = ScaledField(ComposeMap(rho, chart.inv), pullback(alpha, chart.inv))
        self.point_dim = chart.dim
        self.rows, self.cols = alpha.rows, chart.dim
        self.norm = norm

    def jet(self, x, order=1):
        N = x.shape[0]
        out = [np.zeros((N, self.rows, self.cols))]
        if order >= 1:
            out.append(np.zeros((N, self.rows, self.cols, self.point_dim)))
        ok = K.vec_norm(x, NORMS[self.norm]) < 1.0
        if ok.any():
            js = self.inner.jet(x[ok], order)
            for o, j in zip(out, js):
                o[ok] = j
        return out


class _StepOf(Map):
    """``a -> S((a - a0) / (1 - a0))`` applied to one coordinate."""

    def __init__(self, din: int, k: int, a0: float):
        self.din, self.dout, self.k, self.a0 = din, 1, k, a0

    def jet(self, x, order=2):
        N = x.shape[0]
        w = 1.0 - self.a0
        v, d1, d2 = smooth_step((x[:, self.k] - self.a0) / w)
        out = [v[:, None]]
        if order >= 1:
            J = np.zeros((N, 1, self.din))
            J[:, 0, self.k] = d1 / w
            out.append(J)
        if order >= 2:
            H = np.zeros((N, 1, self.din, self.din))
            H[:, 0, self.k, self.k] = d2 / w ** 2
            out.append(H)
        return out


@dataclass
class WhitneyEmbedding:
    g: Map
    betas: list
    blocks: list

    @property
    def dim(self) -> int:
        return self.g.dout


def whitney_embed(forms, A: Atlas, charts=None, tol: float = 1e-12) -> WhitneyEmbedding:
    """Map ``g: M -> R^n`` and forms ``beta_i`` on ``R^n`` with ``g^* beta_i = alpha_i``.

    Each form is split with the partition of unity; the piece supported in
    chart ``j`` is written in coordinates as ``h_j``. The chart contributes the
    block ``(c_j, c_j phi_j)`` of ``g``, where ``c_j`` equals one where the
    partition function lives, and ``beta`` reads ``b(a) h_j(y) dy`` on it;
    ``b`` switches off before ``c_j phi_j`` can re-enter the support of ``h_j``.
    """
    from .atlas import partition_of_unity
    if A.norm != "max":
        raise ValidationError("embedding is built for max-norm atlases")
    rho = partition_of_unity(A)
    xs = A.sample(4000, 11)
    delta = A.delta
    blocks, maps = [], []
    per_form = []
    for fi, alpha in enumerate(forms):
        if alpha.point_dim != A.ambient or not alpha.is_one_form:
            raise DomainError("forms must be ambient one-forms on the manifold")
        listed = None if charts is None else charts[fi]
        active = []
        vals = alpha.value(xs)
        nz = np.abs(vals).reshape(xs.shape[0], -1).max(axis=1) > tol
        for j in range(len(A.charts)):
            if listed is not None and j not in listed:
                continue
            if nz.any() and np.any(rho[j](xs[nz])[:, 0] > 0):
                active.append(j)
        if listed is not None and nz.any():
            cover = sum(rho[j](xs[nz])[:, 0] for j in active) if active else np.zeros(nz.sum())
            if np.any(cover < 1.0 - 1e-12):
                raise DomainError("form is not supported in the listed charts")
        per_form.append(active)
        for j in active:
            blocks.append((fi, j))
    d = A.dim
    r_in = 1.0 - delta / 4
    for fi, j in blocks:
        c = A.charts[j]
        cut = BoxCutoff(-r_in * np.ones(d), r_in * np.ones(d), delta / 8)
        maps.append(_Guarded(cut, c))
        maps.append(_Guarded(ScaledMap(cut, identity_map(d)), c))
    n = (d + 1) * len(blocks)
    if n == 0:
        zero = AffineMap(np.zeros((1, A.ambient)))
        betas = [BlockField([[None]], [f.rows], [1], 1) for f in forms]
        return WhitneyEmbedding(zero, betas, [])
    g = StackMap(maps)
    a0 = (1.0 - delta / 2) / r_in
    betas = []
    for fi, alpha in enumerate(forms):
        cols = []
        for bi, (fj, j) in enumerate(blocks):
            if fj != fi:
                cols.append(None)
                cols.append(None)
                continue
            off = bi * (d + 1)
            h = _ChartForm(rho[j], alpha, A.charts[j], A.norm)
            hy = ComposePoint(h, projection(n, range(off + 1, off + 1 + d)))
            cols.append(None)
            cols.append(ScaledField(_StepOf(n, off, a0), hy))
        col_sizes = [1, d] * len(blocks)
        betas.append(BlockField([cols], [alpha.rows], col_sizes, n))
    return WhitneyEmbedding(g, betas, blocks)


def whitney_residual(W: WhitneyEmbedding, forms, A: Atlas, n: int = 1000, seed: int = 3) -> float:
    """``max |(g o psi_j)^* beta_i - psi_j^* alpha_i|`` over chart samples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in A.charts:
        z = rng.uniform(-1, 1, (max(1, n // len(A.charts)), c.dim))
        for alpha, beta in zip(forms, W.betas):
            lhs = pullback(beta, ComposeMap(W.g, c.inv)).value(z)
            rhs = pullback(alpha, c.inv).value(z)
            worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst
