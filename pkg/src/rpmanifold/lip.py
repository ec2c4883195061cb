"""Lipschitz-gamma jets in Stein's sense, sampled on finite sets.

A jet of order ``k`` (``gamma`` in ``(k, k+1]``) carries ``f^0, ..., f^k``
at every sample. Its remainders

    R_j(x, y) = f^j(y) - sum_{l <= k-j} f^{j+l}(x)(. x (y-x)^l) / l!

must satisfy ``|R_j(x, y)| <= L |x - y|^(gamma - j)``. The norm estimate is
the larger of the component suprema and the worst remainder ratio.

Component arrays have shape ``(N, e, S * d**j)``: output, then ``S`` slots of
an extra linear argument (``S = 1`` for plain functions), then ``j``
direction slots.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .calculus import Field, Map
from .errors import DomainError, ParseError, ShapeError, ValidationError

DEFAULT_PITCH = 1.0 / 64.0


def jet_order(gamma: float) -> int:
    """The integer ``k`` with ``gamma`` in ``(k, k+1]``."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    return int(math.ceil(gamma) - 1)


@dataclass
class LipJet:
    gamma: float
    points: np.ndarray
    comps: list
    slots: int = 1
    norm: str = "l1"
    declared: float | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        k = jet_order(self.gamma)
        if len(self.comps) < k + 1:
            raise ShapeError(f"gamma={self.gamma} needs {k + 1} jet components")
        self.comps = [np.asarray(c, dtype=float) for c in self.comps[:k + 1]]
        N, d = self.points.shape
        for j, c in enumerate(self.comps):
            if c.shape[0] != N or c.shape[2] != self.slots * d ** j:
                raise ShapeError(f"component {j} has shape {c.shape}")

    @property
    def k(self) -> int:
        return jet_order(self.gamma)

    @property
    def dim_in(self) -> int:
        return self.points.shape[1]

    @property
    def dim_out(self) -> int:
        return self.comps[0].shape[1]

    def restrict(self, mask) -> "LipJet":
        return LipJet(self.gamma, self.points[mask], [c[mask] for c in self.comps],
                      self.slots, self.norm, self.declared)

    # serialisation
    def to_json_obj(self) -> dict:
        samples = []
        for i in range(self.points.shape[0]):
            item = {"x": self.points[i].tolist()}
            for j, c in enumerate(self.comps):
                item[f"f{j}"] = c[i].tolist()
            samples.append(item)
        return {"gamma": self.gamma, "dim_in": self.dim_in, "dim_out": self.dim_out,
                "slots": self.slots, "samples": samples, "norm": self.declared}

    @classmethod
    def from_json_obj(cls, obj) -> "LipJet":
        try:
            gamma = float(obj["gamma"])
            d, e = int(obj["dim_in"]), int(obj["dim_out"])
            S = int(obj.get("slots", 1))
            pts = np.array([s["x"] for s in obj["samples"]], dtype=float).reshape(-1, d)
            k = jet_order(gamma)
            comps = [np.array([s[f"f{j}"] for s in obj["samples"]], dtype=float).reshape(-1, e, S * d ** j)
                     for j in range(k + 1)]
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"bad jet object: {exc}") from exc
        return cls(gamma, pts, comps, S, declared=obj.get("norm"))

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json(cls, text: str) -> "LipJet":
        try:
            return cls.from_json_obj(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from exc


def grid_points(lo, hi, pitch: float = DEFAULT_PITCH) -> np.ndarray:
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = [np.linspace(a, b, max(2, int(round((b - a) / pitch)) + 1)) for a, b in zip(lo, hi)]
    return np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T


def jet_from_map(F: Map, points, gamma: float, norm: str = "l1") -> LipJet:
    k = jet_order(gamma)
    if k > 2:
        raise ValidationError("jets above order two are not supported")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    js = F.jet(pts, k)
    N = pts.shape[0]
    comps = [js[j].reshape(N, F.dout, -1) for j in range(k + 1)]
    return LipJet(gamma, pts, comps, 1, norm)


def jet_from_field(A: Field, points, gamma: float, norm: str = "l1") -> LipJet:
    """Jet of a matrix-valued field; the column index is the extra linear slot."""
    k = jet_order(gamma)
    if k > 1:
        raise ValidationError("fields carry one derivative: gamma must be at most 2")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    js = A.jet(pts, k)
    N = pts.shape[0]
    comps = [js[j].reshape(N, A.rows, -1) for j in range(k + 1)]
    return LipJet(gamma, pts, comps, A.cols, norm)


@dataclass
class NormReport:
    estimate: float
    sup: np.ndarray
    remainder: np.ndarray

    def __float__(self):
        return self.estimate


def lip_norm_estimate(jet: LipJet, norm: str | None = None) -> NormReport:
    norm = jet.norm if norm is None else norm
    if jet.points.shape[0] == 0:
        raise ValidationError("jet has an empty domain")
    sup = np.array([float(np.max(K.multi_norm(c, norm))) for c in jet.comps])
    if jet.points.shape[0] > 1:
        rem = K.lip_remainder_max(jet.points, jet.comps, jet.gamma, norm, jet.slots)
    else:
        rem = np.zeros(jet.k + 1)
    return NormReport(float(max(sup.max(), rem.max())), sup, rem)


def lip_validate(jet: LipJet, L: float | None = None) -> dict:
    """Check the remainder inequalities against ``L`` (the declared norm by default)."""
    L = jet.declared if L is None else L
    if L is None:
        raise ValidationError("no Lipschitz constant to validate against")
    rep = lip_norm_estimate(jet)
    return {"ok": bool(rep.estimate <= L * (1 + 1e-12)), "estimate": rep.estimate,
            "declared": float(L), "sup": rep.sup.tolist(), "remainder": rep.remainder.tolist()}


# ------------------------------------------------------------ composition

def composition_constant(gamma: float) -> float:
    """Constant ``C`` in ``|g o f| <= C |g| max(|f|^gamma, 1)``.

    Obtained by bounding each Faa di Bruno term: for ``k = 1``,
    ``|f(y) - f(x)| <= 2|f||x-y|`` gives ``2^gamma + 1``; for ``k = 2`` the
    analogous bound with ``2.5|f||x-y|`` gives the value below.
    """
    k = jet_order(gamma)
    if k == 1:
        return 2.0 ** gamma + 1.0
    if k == 2:
        return 2.5 ** gamma + 2.5 ** (gamma - 1) + 2.5 ** (gamma - 2) + 8.0
    raise ValidationError("composition is supported for 1 < gamma <= 3")


def _taylor_eval(jet: LipJet, y: np.ndarray, order: int):
    """Components at ``y`` by Taylor expansion from the nearest sample."""
    diff = y[:, None, :] - jet.points[None, :, :]
    near = np.argmin(np.abs(diff).sum(axis=2), axis=1)
    h = y - jet.points[near]
    d = jet.dim_in
    e = jet.dim_out
    out = []
    for j in range(order + 1):
        acc = jet.comps[j][near].copy()
        for l in range(1, jet.k - j + 1):
            c = jet.comps[j + l][near].reshape(y.shape[0], e, -1, *([d] * l))
            term = c
            for _ in range(l):
                term = np.einsum("ne...u,nu->ne...", term, h)
            acc = acc + term.reshape(acc.shape) / math.factorial(l)
        out.append(acc)
    return out


def lip_compose(g, f: LipJet, gamma: float | None = None) -> tuple[LipJet, dict]:
    """Jet of ``g o f`` on the samples of ``f`` by Faa di Bruno (order <= 2).

    ``g`` is a :class:`Map` or a :class:`LipJet` (evaluated by Taylor
    expansion from its nearest sample). Returns the composed jet and a report
    with the published bound.
    """
    gamma = f.gamma if gamma is None else gamma
    k = jet_order(gamma)
    if k < 1 or k > 2:
        raise ValidationError("composition is supported for 1 < gamma <= 3")
    if f.slots != 1:
        raise ShapeError("inner jet must be a plain function")
    N, d = f.points.shape
    m = f.dim_out
    F = [f.comps[j].reshape(N, m, *([d] * j)) for j in range(k + 1)]
    y = F[0]
    if isinstance(g, Map):
        gj = g.jet(y, k)
        e = g.dout
        g_on_f = LipJet(gamma, y, [gj[j].reshape(N, e, -1) for j in range(k + 1)], 1, f.norm)
    elif isinstance(g, LipJet):
        e = g.dim_out
        comps = _taylor_eval(g, y, k)
        g_on_f = LipJet(gamma, y, comps, 1, f.norm)
        gj = [c.reshape(N, e, *([m] * j)) for j, c in enumerate(comps)]
    else:
        raise ShapeError("outer function must be a Map or a LipJet")
    if isinstance(g, LipJet):
        res = 2.0 * sampling_resolution(g.points)
        dist = np.abs(y[:, None, :] - g.points[None, :, :]).sum(axis=2).min(axis=1)
        bad = np.nonzero(dist > res)[0]
        if bad.size:
            raise DomainError(f"range of the inner jet leaves the outer domain at samples {bad[:10].tolist()}")
    out = [gj[0]]
    out.append(np.einsum("nem,nma->nea", gj[1], F[1]))
    if k >= 2:
        out.append(np.einsum("nemq,nma,nqb->neab", gj[2], F[1], F[1])
                   + np.einsum("nem,nmab->neab", gj[1], F[2]))
    comp = LipJet(gamma, f.points, [o.reshape(N, e, -1) for o in out], 1, f.norm)
    nf = lip_norm_estimate(LipJet(gamma, f.points, f.comps, 1, f.norm)).estimate
    ng = lip_norm_estimate(g_on_f).estimate
    C = composition_constant(gamma)
    bound = C * ng * max(nf ** gamma, 1.0)
    return comp, {"C": C, "norm_f": nf, "norm_g": ng, "bound": bound,
                  "estimate": lip_norm_estimate(comp).estimate}


# ------------------------------------------------------------ extensions

def cauchy_bound(L: float, r: float, gamma: float, j: int) -> float:
    """``4 L max(r, r^(gamma - j))`` bounds ``|f^j(x) - f^j(y)|`` at distance ``r``."""
    return 4.0 * L * max(r, r ** (gamma - j))


def sampling_resolution(points) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        return 0.0
    D = np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=2)
    np.fill_diagonal(D, np.inf)
    return float(D.min(axis=1).max())


def lip_extend_closure(jet: LipJet, new_points, resolution: float | None = None,
                       L: float | None = None) -> tuple[LipJet, dict]:
    """Extend a jet to limit points of its domain.

    Values at a new point come from the Taylor expansion at the nearest
    sample; the discrepancy is bounded by :func:`cauchy_bound` at that
    distance. Points farther than ``resolution`` (twice the sampling
    resolution by default) are rejected.
    """
    new = np.atleast_2d(np.asarray(new_points, dtype=float))
    if new.shape[1] != jet.dim_in:
        raise ShapeError("new points have the wrong dimension")
    res = 2.0 * sampling_resolution(jet.points) if resolution is None else resolution
    dist = np.abs(new[:, None, :] - jet.points[None, :, :]).sum(axis=2).min(axis=1)
    if np.any(dist > res):
        bad = new[np.argmax(dist)]
        raise ValidationError(f"point {bad.tolist()} is not within the sampling resolution {res:.3g}")
    comps = _taylor_eval(jet, new, jet.k)
    L = lip_norm_estimate(jet).estimate if L is None else L
    bounds = [max(cauchy_bound(L, r, jet.gamma, j) for r in dist) if dist.size else 0.0
              for j in range(jet.k + 1)]
    ext = LipJet(jet.gamma, np.vstack([jet.points, new]),
                 [np.concatenate([c, n], axis=0) for c, n in zip(jet.comps, comps)],
                 jet.slots, jet.norm, jet.declared)
    return ext, {"max_distance": float(dist.max()) if dist.size else 0.0, "error_bounds": bounds}


def local_to_global_bound(C: float, delta: float, gamma: float) -> float:
    """``max(C, 2C / delta^(gamma - k))`` for local norms ``<= C`` on ``delta``-balls."""
    k = jet_order(gamma)
    return max(C, 2.0 * C / delta ** (gamma - k))


def verify_local_to_global(jet: LipJet, delta: float, convex: bool = True) -> dict:
    """Check the global estimate against :func:`local_to_global_bound`."""
    if not convex:
        raise DomainError("the local to global bound needs a convex domain")
    C = local_norm(jet, delta)
    bound = local_to_global_bound(C, delta, jet.gamma)
    est = lip_norm_estimate(jet).estimate
    return {"local": C, "bound": bound, "estimate": est, "ok": bool(est <= bound * (1 + 1e-12))}


def local_norm(jet: LipJet, delta: float, max_centres: int = 64) -> float:
    """Largest norm estimate over the jet restricted to ``delta``-balls."""
    N = jet.points.shape[0]
    centres = np.linspace(0, N - 1, min(N, max_centres)).astype(int)
    best = 0.0
    for c in centres:
        r = K.vec_norm(jet.points - jet.points[c], jet.norm)
        mask = r < delta
        best = max(best, lip_norm_estimate(jet.restrict(mask)).estimate)
    return best


# --------------------------------------------------------- smooth cutoffs

def _psi(t):
    # exp(-1/t) for t > 0 together with its first two derivatives
    t = np.asarray(t, dtype=float)
    pos = t > 0
    safe = np.where(pos, t, 1.0)
    v = np.where(pos, np.exp(-1.0 / safe), 0.0)
    d1 = np.where(pos, v / safe ** 2, 0.0)
    d2 = np.where(pos, v * (1.0 - 2.0 * safe) / safe ** 4, 0.0)
    return v, d1, d2


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, with two derivatives."""
    a, a1, a2 = _psi(t)
    b, b1, b2 = _psi(1.0 - np.asarray(t, dtype=float))
    b1, b2 = -b1, b2
    s = a + b
    v = a / s
    d1 = (a1 * s - a * (a1 + b1)) / s ** 2
    # quotient rule twice
    s1 = a1 + b1
    s2 = a2 + b2
    d2 = (a2 * s - a * s2) / s ** 2 - 2.0 * s1 * (a1 * s - a * s1) / s ** 3
    return v, d1, d2


def step_derivative_bounds(samples: int = 20001) -> np.ndarray:
    t = np.linspace(0.0, 1.0, samples)
    _, d1, d2 = smooth_step(t)
    return np.array([1.0, np.abs(d1).max(), np.abs(d2).max()])


class BoxCutoff(Map):
    """Equal to 1 on the box ``[lo, hi]`` and 0 beyond sup-distance ``margin``."""

    def __init__(self, lo, hi, margin: float):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.margin = float(margin)
        self.din = self.lo.size
        self.dout = 1

    def jet(self, x, order=2):
        N, d = x.shape
        below = self.lo - x
        above = x - self.hi
        dist = np.maximum(np.maximum(below, above), 0.0)
        sign = np.where(above > 0, 1.0, np.where(below > 0, -1.0, 0.0))
        v, d1, d2 = smooth_step(1.0 - dist / self.margin)
        # chain rule through dist; derivatives vanish to all orders where dist = 0
        g1 = -d1 * sign / self.margin
        g2 = d2 / self.margin ** 2
        val = np.prod(v, axis=1)
        out = [val[:, None]]
        if order >= 1:
            J = np.zeros((N, 1, d))
            for a in range(d):
                others = np.prod(np.delete(v, a, axis=1), axis=1) if d > 1 else 1.0
                J[:, 0, a] = g1[:, a] * others
            out.append(J)
        if order >= 2:
            H = np.zeros((N, 1, d, d))
            for a in range(d):
                for b in range(d):
                    if a == b:
                        others = np.prod(np.delete(v, a, axis=1), axis=1) if d > 1 else 1.0
                        H[:, 0, a, a] = g2[:, a] * others
                    else:
                        rest = np.prod(np.delete(v, [a, b], axis=1), axis=1) if d > 2 else 1.0
                        H[:, 0, a, b] = g1[:, a] * g1[:, b] * rest
            out.append(H)
        return out


class BlendedMap(Map):
    """``sum_i c_i(x) P_i(x)`` with box cutoffs ``c_i`` around separated boxes."""

    def __init__(self, components, margin: float):
        self.components = components
        self.cutoffs = [BoxCutoff(lo, hi, margin) for lo, hi, _ in components]
        self.din = self.cutoffs[0].din
        self.dout = components[0][2].dout
        self.margin = margin

    def jet(self, x, order=2):
        from .calculus import ScaledMap
        acc = None
        for (lo, hi, P), c in zip(self.components, self.cutoffs):
            js = ScaledMap(c, P).jet(x, order)
            acc = js if acc is None else [a + b for a, b in zip(acc, js)]
        return acc


def box_separation(components) -> float:
    sep = np.inf
    for i in range(len(components)):
        for j in range(i + 1, len(components)):
            lo1, hi1 = np.atleast_1d(components[i][0]), np.atleast_1d(components[i][1])
            lo2, hi2 = np.atleast_1d(components[j][0]), np.atleast_1d(components[j][1])
            gap = np.maximum(np.maximum(lo2 - hi1, lo1 - hi2), 0.0).max()
            sep = min(sep, gap)
    return float(sep)


def lip_extend_blend(components, gamma: float, margin: float | None = None) -> tuple[BlendedMap, float]:
    """Extend maps given on separated boxes to the whole space.

    ``components`` is a list of ``(lo, hi, P)`` with ``P`` a :class:`Map`
    that is the function on its box. Each ``P`` is multiplied by a cutoff
    equal to one on its box and vanishing at sup-distance ``margin`` (a third
    of the smallest gap by default), so the result agrees exactly with every
    ``P`` on its box. Returns the blended map and the constant ``K`` with
    ``|blend| <= K max_i |P_i|`` (norms taken on the cutoff supports).
    """
    sep = box_separation(components)
    if not sep > 0:
        raise ValidationError("components must be separated by a positive distance")
    if margin is None:
        margin = sep / 3.0 if np.isfinite(sep) else 1.0
    if 2 * margin >= sep:
        raise ValidationError("margin must be below half the separation")
    k = jet_order(gamma)
    b = step_derivative_bounds()
    d = np.atleast_1d(components[0][0]).size
    # derivative bounds of the product cutoff, then Leibniz for c * P
    cb = [1.0] + [d ** j * b[min(j, 2)] / margin ** j for j in range(1, k + 2)]
    Kc = sum(math.comb(k + 1, j) * cb[j] for j in range(k + 2))
    return BlendedMap(components, margin), float(Kc)
