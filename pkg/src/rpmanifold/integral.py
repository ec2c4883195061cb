"""Rough integration of one-forms by sewing.

For a driver ``X`` of degree two and a one-form ``alpha`` with derivative
``alpha1`` the almost increment over ``[s, t]`` is

    grade 1:  alpha(x_s) X^1 + alpha1(x_s) X^2
    grade 2:  (alpha(x_s) x alpha(x_s)) X^2

and the integral is its multiplicative limit over refining partitions.
Below the grid the driver is refined geodesically, so each grid segment is
split into ``2^k`` identical pieces; refinement stops once the summed
change between successive levels is below ``tol``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .calculus import Field
from .errors import SewingError, ShapeError
from .lift import ClassicalRoughPath, ControlEstimate, _zeta, extend
from .tensor import tensor_size

MAX_PIECES = 1 << 22


def q_increments(alpha: Field, xs: np.ndarray, G: np.ndarray, d: int, out_level: int) -> np.ndarray:
    """Almost increments at base points ``xs`` for driver increments ``G`` (level >= 2)."""
    M = xs.shape[0]
    e = alpha.rows
    A, dA = alpha.jet(xs, 1)
    X1 = G[:, 1:1 + d]
    X2 = G[:, 1 + d:1 + d + d * d].reshape(M, d, d)
    out = np.zeros((M, tensor_size(e, out_level)))
    out[:, 0] = 1.0
    out[:, 1:1 + e] = np.einsum("mew,mw->me", A, X1) + np.einsum("mewu,muw->me", dA, X2)
    if out_level >= 2:
        out[:, 1 + e:1 + e + e * e] = np.einsum("meu,muw,mfw->mef", A, X2, A).reshape(M, -1)
    return out


@dataclass
class AlmostRoughPath:
    """The almost multiplicative functional ``(s, t) -> Q_{s,t}`` of ``alpha`` along ``X``."""

    alpha: Field
    X: ClassicalRoughPath
    out_level: int = 0
    gamma: float | None = None
    _X2: ClassicalRoughPath = field(init=False, repr=False)

    def __post_init__(self):
        if not self.alpha.is_one_form or self.alpha.point_dim != self.X.dim:
            raise ShapeError("integrand must be a one-form on the driver's space")
        if self.out_level == 0:
            self.out_level = max(1, math.floor(self.X.p))
        self.out_level = min(self.out_level, 2)
        X = self.X
        if X.level < 2:
            X = extend(X, 2)
        elif X.level > 2:
            X = X.truncate(2) if math.floor(X.p) <= 2 else X
        self._X2 = X

    @property
    def dim_out(self) -> int:
        return self.alpha.rows

    def theta(self) -> float:
        p = self.X.p
        g = self.gamma if self.gamma is not None else math.floor(p) + 1.0
        return min(g / p, (math.floor(p) + 1) / p)

    def between(self, a: int, b: int) -> np.ndarray:
        """Flat almost increment over grid indices ``a < b``."""
        X = self._X2
        G = X.increment(a, b).coeffs[None, :]
        xs = X.trace()[a:a + 1]
        return q_increments(self.alpha, xs, G, X.dim, self.out_level)[0]

    def segments(self, K_pieces: int, idx=None) -> np.ndarray:
        """Products over ``K_pieces`` geodesic pieces of every (selected) grid segment."""
        X = self._X2
        d = X.dim
        idx = np.arange(X.m) if idx is None else idx
        segs = X.segs[idx]
        base = X.trace()[idx]
        if K_pieces == 1:
            return q_increments(self.alpha, base, segs, d, self.out_level)
        logs = K.batch_log(segs, d, 2)
        piece = K.batch_exp(logs / K_pieces, d, 2)
        frac = np.arange(K_pieces) / K_pieces
        xs = base[:, None, :] + frac[None, :, None] * logs[:, None, 1:1 + d]
        M = idx.size
        Q = q_increments(self.alpha, xs.reshape(-1, d), np.repeat(piece, K_pieces, axis=0),
                         d, self.out_level)
        return K.tree_product(Q.reshape(M, K_pieces, -1), self.dim_out, self.out_level)


@dataclass
class SewInfo:
    levels: np.ndarray
    residual: float
    theta_estimate: float
    evaluations: int


ROMBERG_DEPTH = 4


def sew(almost: AlmostRoughPath, tol: float = 1e-10, max_refine: int = 20,
        start=None) -> tuple[ClassicalRoughPath, SewInfo]:
    """Multiplicative limit of an almost rough path on the driver's grid.

    Level ``k`` multiplies the almost increments of ``2^k`` geodesic pieces of
    each grid segment. These products expand in integer powers of ``2^-k``,
    so successive levels are combined by Romberg extrapolation. A segment is
    accepted once two successive extrapolated values differ by less than
    ``tol / m``; the summed change over all segments is thus below ``tol``.
    """
    X = almost.X
    m = X.m
    e = almost.dim_out
    n = almost.out_level
    raw = [almost.segments(1), almost.segments(2)]
    evals = 3 * m
    table = _romberg_rows(raw)
    est_prev, est = table[0][0], table[1][-1]
    diff = np.abs(est - est_prev).sum(axis=1)
    raw_diff = np.abs(raw[1] - raw[0]).sum(axis=1)
    scale = np.abs(est).sum(axis=1)
    tol_seg = np.maximum(tol / m, 64 * np.finfo(float).eps * scale)
    levels = np.ones(m, dtype=np.int64)
    result = est.copy()
    active = np.nonzero(diff > tol_seg)[0]
    rows = table[1]
    ratios = []
    k = 1
    while active.size:
        k += 1
        if k > max_refine or active.size * (1 << k) > MAX_PIECES:
            theta = _theta_from(ratios)
            raise SewingError(f"sewing did not contract after {k - 1} refinements "
                              f"(measured theta {theta:.3g})", theta)
        new = almost.segments(1 << k, active)
        evals += active.size * (1 << k)
        prev_rows = [r[active] for r in rows]
        new_rows = [new]
        for j in range(1, min(k, ROMBERG_DEPTH) + 1):
            f = 2.0 ** j
            new_rows.append((f * new_rows[j - 1] - prev_rows[j - 1]) / (f - 1.0))
        nd_raw = np.abs(new - prev_rows[0]).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = nd_raw / raw_diff[active]
        ratios.extend(r[np.isfinite(r) & (r > 0)].tolist())
        raw_diff[active] = nd_raw
        nd = np.abs(new_rows[-1] - result[active]).sum(axis=1)
        result[active] = new_rows[-1]
        diff[active] = nd
        levels[active] = k
        # keep full-width row storage for the next level
        rows = [np.zeros((m, new.shape[1])) for _ in new_rows]
        for j, rr in enumerate(new_rows):
            rows[j][active] = rr
        active = active[nd > tol_seg[active]]
    start = np.zeros(e) if start is None else np.asarray(start, dtype=float)
    out = ClassicalRoughPath(X.times.copy(), result, e, n, start, X.p if n >= math.floor(X.p) else float(n))
    info = SewInfo(levels, float(diff.sum()), _theta_from(ratios), evals)
    return out, info


def _romberg_rows(raw):
    table = [[raw[0]]]
    row = [raw[1], 2.0 * raw[1] - raw[0]]
    table.append(row)
    return table


def _theta_from(ratios) -> float:
    # successive refinement changes shrink by 2^(1 - theta)
    if not ratios:
        return float("inf")
    r = float(np.median(ratios))
    return 1.0 - math.log2(r) if r > 0 else float("inf")


def almost_increment(alpha: Field, X: ClassicalRoughPath, gamma: float | None = None) -> AlmostRoughPath:
    return AlmostRoughPath(alpha, X, gamma=gamma)


def rough_integrate(alpha: Field, X: ClassicalRoughPath, tol: float = 1e-10,
                    max_refine: int = 20, start=None, return_info: bool = False):
    """``int alpha(X) dX`` as a classical rough path on the driver's grid."""
    Z, info = sew(almost_increment(alpha, X), tol, max_refine, start)
    return (Z, info) if return_info else Z


# ---------------------------------------------------------------- diagnostics

def sewing_constant(almost: AlmostRoughPath, omega: np.ndarray, theta: float) -> float:
    """``sup |Q_{s,t} - Q_{s,u} Q_{u,t}| / omega(s,t)^theta`` over grid triples."""
    m = almost.X.m
    e, n = almost.dim_out, almost.out_level
    Q = {}

    def q(a, b):
        if (a, b) not in Q:
            Q[(a, b)] = almost.between(a, b)
        return Q[(a, b)]

    best = 0.0
    for a in range(m):
        for b in range(a + 2, m + 1):
            for u in range(a + 1, b):
                prod = K.batch_mul(q(a, u)[None], q(u, b)[None], e, n)[0]
                w = omega[a, b]
                if w > 0:
                    best = max(best, np.abs(q(a, b) - prod).sum() / w ** theta)
    return best


def sewing_band(almost: AlmostRoughPath, Z: ClassicalRoughPath, p: float | None = None) -> dict:
    """Compare the sewn path with the almost path on all grid pairs.

    Returns the measured exponent (log-log slope of the worst error against
    omega over dyadic scales), the sewing-lemma constant
    ``K = 2^theta zeta(theta) C`` and the worst ratio ``err / (K omega^theta)``.
    """
    X = almost.X
    omega = ControlEstimate(X, p).matrix()
    m = X.m
    errs, ws = [], []
    for a in range(m):
        for b in range(a + 1, m + 1):
            err = np.abs(almost.between(a, b) - Z.increment(a, b).coeffs).sum()
            errs.append(err)
            ws.append(omega[a, b])
    errs = np.array(errs)
    ws = np.array(ws)
    # measured exponent over dyadic interval lengths
    xs, ys = [], []
    L = 1
    # scales with a single window or two measure one realisation, not an envelope
    while L <= max(1, m // 4):
        sel = [np.abs(almost.between(a, a + L) - Z.increment(a, a + L).coeffs).sum()
               for a in range(0, m - L + 1, L)]
        wsel = [omega[a, a + L] for a in range(0, m - L + 1, L)]
        if max(sel) > 0:
            xs.append(math.log(np.mean(wsel)))
            ys.append(math.log(max(max(sel), 1e-300)))
        L *= 2
    theta_meas = float(np.polyfit(xs, ys, 1)[0]) if len(xs) >= 2 else float("inf")
    theta = almost.theta()
    C = sewing_constant(almost, omega, theta)
    Kc = 2.0 ** theta * _zeta(theta) * C
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ws > 0, errs / (Kc * ws ** theta), 0.0)
    return {"theta": theta, "theta_measured": theta_meas, "C": C, "K": Kc,
            "worst_ratio": float(np.max(ratio)), "max_error": float(errs.max())}
