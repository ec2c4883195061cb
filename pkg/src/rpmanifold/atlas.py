"""Finite chart atlases with constants ``(delta, L, R)``.

Points of a manifold are represented by ambient coordinates (``R^d`` for
vector spaces, ``R^2`` per circle factor, ``R^3`` for the sphere). A chart
carries a coordinate map ``phi`` defined on an ambient neighbourhood of its
domain ``U = phi^-1(B(0, 1))`` together with a domain predicate, and an
inverse ``psi: B(0, 1) -> M``. Balls are taken in the atlas norm, the max
norm by default, so the image of every chart is the cube ``[-1, 1]^d``.

Cover and transition conditions are checked on dense samples.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .calculus import (AffineMap, ComposeMap, ExprMap, Field, Map, ProductMap,
                       pullback)
from .errors import DomainError, ParseError, ValidationError
from .expr import names
from .lip import (BoxCutoff, composition_constant, grid_points, jet_from_field,
                  jet_from_map, jet_order, lip_norm_estimate)

NORMS = {"max": "linf", "l1": "l1"}
ATLAS_PITCH = 1.0 / 16.0


def _true(x):
    return np.ones(x.shape[0], dtype=bool)


@dataclass
class Chart:
    id: str
    kind: str
    params: dict
    dim: int
    ambient: int
    phi: Map
    inv: Map
    defined: callable = _true

    def coords(self, x):
        """Chart coordinates and the mask of points where ``phi`` is defined."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = self.defined(x)
        z = np.full((x.shape[0], self.dim), np.nan)
        if ok.any():
            z[ok] = self.phi(x[ok])
        return z, ok

    def radius(self, x, norm: str = "max"):
        z, ok = self.coords(x)
        r = np.full(z.shape[0], np.inf)
        r[ok] = K.vec_norm(z[ok], NORMS[norm])
        return r

    def to_json_obj(self):
        return {"id": self.id, "kind": self.kind, "params": self.params}


class _Guarded(Map):
    """``outer(phi(x))`` where the chart is defined and zero elsewhere.

    Only used with outer maps that vanish near the edge of the chart domain,
    so the result is smooth on the whole manifold.
    """

    def __init__(self, outer: Map, chart: Chart):
        self.outer, self.chart = outer, chart
        self.din, self.dout = chart.ambient, outer.dout

    def jet(self, x, order=2):
        N = x.shape[0]
        out = [np.zeros((N, self.dout))]
        if order >= 1:
            out.append(np.zeros((N, self.dout, self.din)))
        if order >= 2:
            out.append(np.zeros((N, self.dout, self.din, self.din)))
        ok = self.chart.defined(x)
        if ok.any():
            js = ComposeMap(self.outer, self.chart.phi).jet(x[ok], order)
            for o, j in zip(out, js):
                o[ok] = np.nan_to_num(j)
        return out


# ---------------------------------------------------------------- builders

def _vector_chart(centre, idx):
    c = np.asarray(centre, dtype=float)
    d = c.size
    return Chart(f"v{idx}", "translation", {"centre": c.tolist()}, d, d,
                 AffineMap(np.eye(d), -c), AffineMap(np.eye(d), c))


def _angle_chart(theta0: float, idx, width: float = 1.0):
    def phi_f(x):
        th = np.arctan2(x[:, 1], x[:, 0]) - theta0
        return (((th + np.pi) % (2 * np.pi)) - np.pi)[:, None] / width

    def phi_j(x):
        r2 = x[:, 0] ** 2 + x[:, 1] ** 2
        return np.stack([-x[:, 1] / r2, x[:, 0] / r2], axis=1)[:, None, :] / width

    def phi_h(x):
        r4 = (x[:, 0] ** 2 + x[:, 1] ** 2) ** 2
        a, b = x[:, 0], x[:, 1]
        H = np.empty((x.shape[0], 1, 2, 2))
        H[:, 0, 0, 0] = 2 * a * b / r4
        H[:, 0, 1, 1] = -2 * a * b / r4
        H[:, 0, 0, 1] = H[:, 0, 1, 0] = (b * b - a * a) / r4
        return H / width

    def inv_f(z):
        th = theta0 + width * z[:, 0]
        return np.stack([np.cos(th), np.sin(th)], axis=1)

    def inv_j(z):
        th = theta0 + width * z[:, 0]
        return width * np.stack([-np.sin(th), np.cos(th)], axis=1)[:, :, None]

    def inv_h(z):
        th = theta0 + width * z[:, 0]
        return -width ** 2 * np.stack([np.cos(th), np.sin(th)], axis=1)[:, :, None, None]

    from .calculus import CallableMap

    def defined(x):
        # away from the antipodal ray, where the wrapped angle jumps
        th = np.arctan2(x[:, 1], x[:, 0]) - theta0
        w = ((th + np.pi) % (2 * np.pi)) - np.pi
        return (np.abs(w) < np.pi - 1e-9) & (x[:, 0] ** 2 + x[:, 1] ** 2 > 1e-12)

    return Chart(f"a{idx}", "angle", {"theta0": theta0, "width": width}, 1, 2,
                 CallableMap(2, 1, phi_f, phi_j, phi_h), CallableMap(1, 2, inv_f, inv_j, inv_h), defined)


def _gnomonic_chart(axis: int, sign: int, scale: float):
    others = [i for i in range(3) if i != axis]
    xs = names("x", 3)
    zs = names("z", 2)
    phi = ExprMap.parse([f"{xs[o]}/({sign}*{xs[axis]}*{scale})" for o in others], xs)
    comps = [None, None, None]
    comps[others[0]] = f"{scale}*z1"
    comps[others[1]] = f"{scale}*z2"
    comps[axis] = f"{sign}"
    norm = f"sqrt(1 + ({scale}*z1)**2 + ({scale}*z2)**2)"
    inv = ExprMap.parse([f"({c})/{norm}" for c in comps], zs)

    def defined(x):
        return sign * x[:, axis] > 1e-9

    sgn = "+" if sign > 0 else "-"
    return Chart(f"{sgn}{'xyz'[axis]}", "gnomonic", {"axis": axis, "sign": sign, "scale": scale},
                 2, 3, phi, inv, defined)


def _product_chart(a: Chart, b: Chart) -> Chart:
    def defined(x):
        return a.defined(x[:, :a.ambient]) & b.defined(x[:, a.ambient:])

    return Chart(f"{a.id}*{b.id}", "product", {"left": a.to_json_obj(), "right": b.to_json_obj()},
                 a.dim + b.dim, a.ambient + b.ambient,
                 ProductMap([a.phi, b.phi]), ProductMap([a.inv, b.inv]), defined)


def _custom_chart(obj, ambient: int, idx):
    try:
        d = len(obj["phi"])
        phi = ExprMap.parse(obj["phi"], names("x", ambient))
        inv = ExprMap.parse(obj["inverse"], names("z", d))
        guard = obj.get("guard")
    except (KeyError, TypeError) as exc:
        raise ParseError(f"custom chart needs 'phi' and 'inverse': {exc}") from exc
    defined = _true
    if guard is not None:
        g = ExprMap.parse([guard], names("x", ambient))

        def defined(x):
            return g(x)[:, 0] > 0

    return Chart(str(obj.get("id", f"c{idx}")), "custom", dict(obj), d, ambient, phi, inv, defined)


# ------------------------------------------------------------------ atlas

@dataclass
class Atlas:
    charts: list
    gamma0: float
    delta: float
    kind: str
    params: dict
    norm: str = "max"
    L: float = float("nan")
    R: float = float("nan")
    L1: float = float("nan")
    dphi: float = float("nan")
    sampler: callable = None
    report: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.charts[0].dim

    @property
    def ambient(self) -> int:
        return self.charts[0].ambient

    def chart(self, cid) -> Chart:
        for c in self.charts:
            if c.id == cid:
                return c
        raise ValidationError(f"no chart named {cid!r}")

    def index(self, cid) -> int:
        return [c.id for c in self.charts].index(cid)

    def sample(self, n: int = 10_000, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if self.sampler is not None:
            return self.sampler(n, rng)
        # uniform over charts, uniform inside each chart image
        per = np.array_split(np.arange(n), len(self.charts))
        pts = [c.inv(rng.uniform(-1, 1, (len(ix), c.dim))) for c, ix in zip(self.charts, per)]
        return np.vstack(pts)

    def radii(self, x) -> np.ndarray:
        """``(N, charts)`` chart radii, infinite where a chart is undefined."""
        return np.stack([c.radius(x, self.norm) for c in self.charts], axis=1)

    def best_chart(self, x) -> np.ndarray:
        """Index of the chart in which each point sits deepest."""
        return np.argmin(self.radii(x), axis=1)

    def in_shrunk(self, x, i: int, delta: float | None = None) -> np.ndarray:
        delta = self.delta if delta is None else delta
        return self.charts[i].radius(x, self.norm) < 1.0 - delta

    # transitions ---------------------------------------------------------
    def transition(self, i: int, j: int) -> Map:
        """``phi_i o phi_j^-1`` as a map on chart-``j`` coordinates."""
        return ComposeMap(self.charts[i].phi, self.charts[j].inv)

    def overlap_coords(self, i: int, j: int, pitch: float = ATLAS_PITCH) -> np.ndarray:
        """Grid points of ``phi_j(U_i n U_j)``."""
        cj = self.charts[j]
        z = grid_points(-np.ones(cj.dim), np.ones(cj.dim), pitch)
        z = z[K.vec_norm(z, NORMS[self.norm]) < 1.0]
        x = cj.inv(z)
        keep = self.charts[i].radius(x, self.norm) < 1.0
        return z[keep]

    def transition_norms(self, pitch: float = ATLAS_PITCH, gamma: float | None = None,
                         first_order: bool = False) -> dict:
        """Lip norm estimates of all transitions on their overlaps.

        With ``first_order`` the values are ``(norm, sup |D transition|)``.
        """
        gamma = self.gamma0 if gamma is None else gamma
        out, seen = {}, {}
        for i, j in itertools.permutations(range(len(self.charts)), 2):
            ci, cj = self.charts[i], self.charts[j]
            # translation charts: the transition depends only on the offset
            key = _translation_key(ci, cj)
            if key is not None:
                if key in seen:
                    if seen[key] is not None:
                        out[(i, j)] = seen[key]
                    continue
            z = self.overlap_coords(i, j, pitch)
            if z.shape[0] == 0:
                if key is not None:
                    seen[key] = None
                continue
            jet = jet_from_map(self.transition(i, j), z, min(gamma, 3.0), NORMS[self.norm])
            rep = lip_norm_estimate(jet)
            out[(i, j)] = (rep.estimate, float(rep.sup[1])) if first_order else rep.estimate
            if key is not None:
                seen[key] = out[(i, j)]
        return out

    def chart_gradient_bound(self, pitch: float = ATLAS_PITCH) -> float:
        """``max |d phi_i(x) v|_chart / |v|_1`` over chart domains (largest Jacobian entry)."""
        best = 0.0
        for c in self.charts:
            z = grid_points(-np.ones(c.dim), np.ones(c.dim), pitch)
            z = z[K.vec_norm(z, NORMS[self.norm]) < 1.0]
            best = max(best, float(np.abs(c.phi.jacobian(c.inv(z))).max()))
        return best

    # checks ----------------------------------------------------------------
    def cover_check(self, n: int = 10_000, seed: int = 0) -> dict:
        x = self.sample(n, seed)
        r = self.radii(x)
        depth = r.min(axis=1)
        bad = np.nonzero(depth >= 1.0 - self.delta)[0]
        return {"ok": bad.size == 0, "worst_radius": float(depth.max()),
                "witnesses": x[bad[:5]].tolist()}

    def validate(self, n: int = 10_000, pitch: float = ATLAS_PITCH, seed: int = 0) -> "Atlas":
        cov = self.cover_check(n, seed)
        if not cov["ok"]:
            raise ValidationError(f"shrunk charts do not cover: witnesses {cov['witnesses']}")
        both = self.transition_norms(pitch, first_order=True)
        norms = {k: v[0] for k, v in both.items()}
        L = max(max(norms.values(), default=1.0), 1.0)
        self.L1 = max(max((v[1] for v in both.values()), default=1.0), 1.0)
        self.dphi = self.chart_gradient_bound(pitch)
        if np.isfinite(self.L) and L > self.L * (1 + 1e-9):
            (i, j) = max(norms, key=norms.get)
            raise ValidationError(f"transition {self.charts[i].id}<-{self.charts[j].id} has "
                                  f"norm {L:.6g} above the declared L={self.L}")
        self.L = L
        self.R = self.global_radius(n, seed)
        self.report = {"cover": cov, "transitions": {f"{self.charts[i].id}<-{self.charts[j].id}": v
                                                      for (i, j), v in norms.items()}}
        return self

    def global_map(self, i: int, margin: float = 0.5) -> Map:
        """Compactly supported extension of ``phi_i``: ``c(phi) phi`` with a cutoff ``c``."""
        from .calculus import ScaledMap
        c = self.charts[i]
        cut = BoxCutoff(-np.ones(c.dim), np.ones(c.dim), margin)
        return _Guarded(ScaledMap(cut, AffineMap(np.eye(c.dim))), c)

    def global_radius(self, n: int = 10_000, seed: int = 0, margin: float = 0.5) -> float:
        x = self.sample(n, seed + 1)
        R = 1.0
        for i in range(len(self.charts)):
            v = self.global_map(i, margin)(x)
            R = max(R, float(K.vec_norm(v, NORMS[self.norm]).max()))
        return R

    # serialisation ------------------------------------------------------------
    def to_json_obj(self) -> dict:
        return {"manifold": {"kind": self.kind, "params": self.params},
                "gamma0": self.gamma0, "delta": self.delta, "L": self.L, "R": self.R,
                "L1": self.L1, "dphi": self.dphi,
                "norm": self.norm, "charts": [c.to_json_obj() for c in self.charts]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())


# ------------------------------------------------------------- constructors

def vector_space(d: int, region=(-2.0, 2.0), step: float = 0.5, delta: float = 0.25,
                 gamma0: float = 3.0) -> Atlas:
    lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (d,)) for v in region)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(hi > lo)):
        raise ValidationError("the working region must be a bounded box")
    if step > 2 * (1 - delta):
        raise ValidationError("grid step too coarse for the requested delta")
    axes = [np.arange(a, b + step / 2, step) for a, b in zip(lo, hi)]
    centres = np.array(list(itertools.product(*axes)))
    charts = [_vector_chart(c, i) for i, c in enumerate(centres)]

    def sampler(n, rng):
        return rng.uniform(lo, hi, (n, d))

    return Atlas(charts, gamma0, delta, "vector_space",
                 {"d": d, "region": [lo.tolist(), hi.tolist()], "step": step}, "max", sampler=sampler)


def circle(n: int = 6, delta: float = 0.2, gamma0: float = 3.0, offset: float = 0.0) -> Atlas:
    if (1 - delta) * n <= math.pi:
        raise ValidationError("too few angle charts to cover the circle")
    charts = [_angle_chart(offset + 2 * math.pi * i / n, i) for i in range(n)]

    def sampler(m, rng):
        th = rng.uniform(0, 2 * math.pi, m)
        return np.c_[np.cos(th), np.sin(th)]

    return Atlas(charts, gamma0, delta, "circle", {"n": n, "offset": offset}, "max", sampler=sampler)


def sphere(delta: float = 0.2, scale: float = 1.5, gamma0: float = 3.0) -> Atlas:
    """Six gnomonic cube-face charts scaled by ``scale``."""
    if scale * (1 - delta) <= 1.0:
        raise ValidationError("cube-face charts need scale * (1 - delta) > 1 to cover")
    charts = [_gnomonic_chart(a, s, scale) for a in range(3) for s in (1, -1)]

    def sampler(m, rng):
        v = rng.normal(size=(m, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    return Atlas(charts, gamma0, delta, "sphere", {"scale": scale}, "max", sampler=sampler)


def product_atlas(A: Atlas, B: Atlas) -> Atlas:
    if A.norm != "max" or B.norm != "max":
        raise ValidationError("product atlases use the max norm")
    charts = [_product_chart(a, b) for a in A.charts for b in B.charts]

    def sampler(n, rng):
        xa = A.sample(n, int(rng.integers(1 << 31)))
        xb = B.sample(n, int(rng.integers(1 << 31)))
        return np.hstack([xa, xb[rng.permutation(n)]])

    out = Atlas(charts, min(A.gamma0, B.gamma0), min(A.delta, B.delta), "product",
                {"left": A.to_json_obj()["manifold"], "right": B.to_json_obj()["manifold"]},
                "max", sampler=sampler)
    out.L = max(A.L, B.L) if np.isfinite(A.L) and np.isfinite(B.L) else float("nan")
    out.R = max(A.R, B.R) if np.isfinite(A.R) and np.isfinite(B.R) else float("nan")
    out.L1 = max(A.L1, B.L1) if np.isfinite(A.L1) and np.isfinite(B.L1) else float("nan")
    out.dphi = max(A.dphi, B.dphi) if np.isfinite(A.dphi) and np.isfinite(B.dphi) else float("nan")
    return out


def torus(n: int = 6, delta: float = 0.2, gamma0: float = 3.0) -> Atlas:
    T = product_atlas(circle(n, delta, gamma0), circle(n, delta, gamma0))
    T.kind, T.params = "torus", {"n": n}
    return T


def custom(obj: dict) -> Atlas:
    """Atlas from expression charts.

    ``obj`` holds ``ambient`` (dimension of the point representation),
    ``charts`` (each with ``phi`` in ``x1..``, ``inverse`` in ``z1..`` and an
    optional ``guard`` expression that is positive where ``phi`` is
    defined), ``delta``, ``gamma0`` and optionally ``region`` (a box to sample
    the manifold from; otherwise the chart images are sampled).
    """
    try:
        ambient = int(obj["ambient"])
        charts = [_custom_chart(c, ambient, i) for i, c in enumerate(obj["charts"])]
        delta = float(obj.get("delta", 0.2))
        gamma0 = float(obj.get("gamma0", 3.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad custom atlas: {exc}") from exc
    if not charts:
        raise ParseError("custom atlas has no charts")
    sampler = None
    if "region" in obj:
        lo, hi = (np.asarray(v, dtype=float) for v in obj["region"])

        def sampler(n, rng):
            return rng.uniform(lo, hi, (n, ambient))

    return Atlas(charts, gamma0, delta, "custom", obj, obj.get("norm", "max"), sampler=sampler)


def build_atlas(kind: str, validate: bool = True, **params) -> Atlas:
    if kind == "vector_space":
        A = vector_space(**params)
    elif kind == "circle":
        A = circle(**params)
    elif kind == "sphere":
        A = sphere(**params)
    elif kind == "torus":
        A = torus(**params)
    elif kind == "custom":
        A = custom(params.get("spec", params))
    else:
        raise ValidationError(f"unknown manifold kind {kind!r}")
    return A.validate() if validate else A


def atlas_from_json_obj(obj: dict, validate: bool = True) -> Atlas:
    try:
        man = obj["manifold"]
        kind, params = man["kind"], dict(man.get("params", {}))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"atlas object needs a manifold description: {exc}") from exc
    if kind in ("vector_space",):
        params["region"] = tuple(params["region"])
    if kind == "product":
        A = product_atlas(atlas_from_json_obj({"manifold": params["left"]}, validate),
                          atlas_from_json_obj({"manifold": params["right"]}, validate))
        return A.validate() if validate else A
    if kind != "custom":
        for key in ("delta", "gamma0"):
            if key in obj:
                params[key] = obj[key]
    return build_atlas(kind, validate, **params)


def atlas_from_json(text: str, validate: bool = True) -> Atlas:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc)) from exc
    return atlas_from_json_obj(obj, validate)


# ---------------------------------------------------------- manifold calculus

def manifold_lip_norm(A: Atlas, F: Map, gamma: float | None = None, pitch: float = ATLAS_PITCH) -> float:
    """``max_i |F o phi_i^-1|`` over chart images, ``F`` given on ambient points."""
    gamma = A.gamma0 if gamma is None else gamma
    best = 0.0
    for c in A.charts:
        z = grid_points(-np.ones(c.dim), np.ones(c.dim), pitch)
        z = z[K.vec_norm(z, NORMS[A.norm]) < 1.0]
        jet = jet_from_map(ComposeMap(F, c.inv), z, min(gamma, 3.0), NORMS[A.norm])
        best = max(best, lip_norm_estimate(jet).estimate)
    return best


def default_probes(ambient: int, count: int = 6, seed: int = 0) -> list:
    """Smooth test functions on the ambient space: coordinates and random waves."""
    rng = np.random.default_rng(seed)
    xs = names("x", ambient)
    probes = [ExprMap.parse([x], xs) for x in xs]
    for _ in range(count):
        w = rng.normal(size=ambient)
        b = rng.uniform(0, 2 * math.pi)
        lin = " + ".join(f"({wi:.6f})*{x}" for wi, x in zip(w, xs))
        probes.append(ExprMap.parse([f"sin({lin} + {b:.6f})"], xs))
    return probes


def _translation_key(ci: Chart, cj: Chart):
    """Translation charts of equal size: the transition depends only on the offset."""
    if ci.kind == cj.kind == "translation":
        return tuple(np.round(np.subtract(ci.params["centre"], cj.params["centre"]), 12))
    return None


def atlas_equivalence_check(A1: Atlas, A2: Atlas, gamma: float | None = None,
                            pitch: float = ATLAS_PITCH, probes=None, probe_pitch: float = 0.125) -> dict:
    """Cross-transition constant and the probe norm band ``c |f|_1 <= |f|_2 <= d |f|_1``.

    Probe norms are sampled at ``probe_pitch``; the band is a diagnostic.
    """
    if A1.ambient != A2.ambient:
        raise DomainError("atlases live on different point sets")
    gamma = min(A1.gamma0, A2.gamma0) if gamma is None else gamma
    norm = NORMS[A1.norm]
    C = 0.0
    seen = {}
    for (P, Q) in ((A1, A2), (A2, A1)):
        for i, ci in enumerate(P.charts):
            for j, cj in enumerate(Q.charts):
                key = _translation_key(ci, cj)
                if key is not None and key in seen:
                    continue
                z = grid_points(-np.ones(cj.dim), np.ones(cj.dim), pitch)
                z = z[K.vec_norm(z, norm) < 1.0]
                keep = ci.radius(cj.inv(z), P.norm) < 1.0
                if key is not None:
                    seen[key] = True
                if not keep.any():
                    continue
                jet = jet_from_map(ComposeMap(ci.phi, cj.inv), z[keep], min(gamma, 3.0), norm)
                C = max(C, lip_norm_estimate(jet).estimate)
    # both atlases should cover each other's samples
    x = A2.sample(2000, 7)
    if np.any(A1.radii(x).min(axis=1) >= 1.0):
        raise DomainError("second atlas reaches points outside the first atlas")
    probes = default_probes(A1.ambient) if probes is None else probes
    ratios = []
    for f in probes:
        n1 = manifold_lip_norm(A1, f, gamma, probe_pitch)
        n2 = n1 if A2 is A1 else manifold_lip_norm(A2, f, gamma, probe_pitch)
        if n1 > 0:
            ratios.append(n2 / n1)
    ratios = np.array(ratios)
    return {"equivalent": bool(np.isfinite(C)), "C": C,
            "c": float(ratios.min()) if ratios.size else float("nan"),
            "d": float(ratios.max()) if ratios.size else float("nan"),
            "ratios": ratios.tolist()}


class Bump(Map):
    """Bump of chart ``i``: one on ``U^delta``, zero outside ``U^(delta/2)``."""

    def __init__(self, A: Atlas, i: int):
        c = A.charts[i]
        self._g = _Guarded(BoxCutoff(-(1 - A.delta) * np.ones(c.dim), (1 - A.delta) * np.ones(c.dim),
                                     A.delta / 2), c)
        self.din, self.dout = c.ambient, 1

    def jet(self, x, order=2):
        return self._g.jet(x, order)


class PartitionFunction(Map):
    """``f_i = c_i / sum_j c_j``; the denominator is at least one on the manifold."""

    def __init__(self, bumps, i: int):
        self.bumps, self.i = bumps, i
        self.din, self.dout = bumps[0].din, 1

    def jet(self, x, order=2):
        js = [b.jet(x, order) for b in self.bumps]
        S = [sum(j[k] for j in js) for k in range(order + 1)]
        c = js[self.i]
        s0 = S[0][:, 0]
        inv = 1.0 / s0
        out = [c[0] * inv[:, None]]
        if order >= 1:
            g1 = -S[1][:, 0] * (inv ** 2)[:, None]
            out.append(c[1] * inv[:, None, None] + c[0][:, :, None] * g1[:, None, :])
        if order >= 2:
            s1 = S[1][:, 0]
            g2 = (2 * np.einsum("na,nb->nab", s1, s1) * (inv ** 3)[:, None, None]
                  - S[2][:, 0] * (inv ** 2)[:, None, None])
            out.append(c[2] * inv[:, None, None, None]
                       + c[0][:, :, None, None] * g2[:, None]
                       + np.einsum("nea,nb->neab", c[1], g1)
                       + np.einsum("neb,na->neab", c[1], g1))
        return out


def partition_of_unity(A: Atlas) -> list:
    if A.norm != "max":
        raise ValidationError("bump functions are built for max-norm atlases")
    bumps = [Bump(A, i) for i in range(len(A.charts))]
    return [PartitionFunction(bumps, i) for i in range(len(bumps))]


# ----------------------------------------------------------------- one-forms

def pullback_constant(gamma: float) -> float:
    """Constant in ``|h^* alpha| <= C |alpha| |h| max(|h|^(gamma-1), 1)``.

    The chart representation is the pointwise product of ``alpha o h`` and
    ``Dh``, both Lip-(gamma-1); products of such maps cost a factor 2
    (``gamma - 1 <= 1``) or 6, composition costs 2 or the composition
    constant.
    """
    g1 = gamma - 1.0
    k = jet_order(g1)
    if k == 0:
        return 2.0 * 2.0
    if k == 1:
        return 6.0 * composition_constant(g1)
    raise ValidationError("pullbacks are supported for gamma <= 3")


def pullback_one_form(A: Atlas, h: Map, alpha: Field, gamma: float | None = None,
                      pitch: float = ATLAS_PITCH) -> dict:
    """Chart representations of ``h^* alpha`` with the norm bound.

    ``h`` maps ambient points of the manifold to the space on which ``alpha``
    lives. Returns per-chart fields and a report with both sides of the
    inequality.
    """
    gamma = A.gamma0 if gamma is None else gamma
    gamma = min(gamma, 3.0)
    if alpha.point_dim != h.dout or not alpha.is_one_form:
        raise DomainError("the one-form must live on the range of h")
    norm = NORMS[A.norm]
    forms, n_pull, n_alpha, n_h = {}, 0.0, 0.0, 0.0
    for c in A.charts:
        hc = ComposeMap(h, c.inv)
        form = pullback(alpha, hc)
        forms[c.id] = form
        z = grid_points(-np.ones(c.dim), np.ones(c.dim), pitch)
        z = z[K.vec_norm(z, norm) < 1.0]
        n_pull = max(n_pull, lip_norm_estimate(jet_from_field(form, z, gamma - 1, norm)).estimate)
        n_h = max(n_h, lip_norm_estimate(jet_from_map(hc, z, gamma, norm)).estimate,
                  lip_norm_estimate(jet_from_map(hc, z, gamma - 1, norm)).estimate
                  if gamma - 1 > 0 else 0.0)
        y = hc(z)
        n_alpha = max(n_alpha, lip_norm_estimate(jet_from_field(alpha, y, gamma - 1, norm)).estimate)
    C = pullback_constant(gamma)
    bound = C * n_alpha * n_h * max(n_h ** (gamma - 1), 1.0)
    return {"forms": forms, "norm": n_pull, "bound": bound, "C": C,
            "norm_alpha": n_alpha, "norm_h": n_h, "ok": bool(n_pull <= bound)}


def chart_form(A: Atlas, alpha: Field, i: int) -> Field:
    """Coordinate representation ``(phi_i^-1)^* alpha`` of an ambient one-form."""
    return pullback(alpha, A.charts[i].inv)
