"""Rough differential equations ``dY = g(Y) dX`` by Picard iteration.

The solution is the rough path ``Z`` on ``V + W`` solving ``Z = int h(Z) dZ``
with ``h(x, y)(v, w) = (v, g(y) v)`` and the ``V`` block of ``Z`` pinned to
``X``. The grid is processed in windows; inside a window the iteration runs
until successive iterates are within ``tol`` in the p-variation distance.
Windows that fail to contract are halved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import (BlockField, ComposePoint, ConstantField, Field, projection)
from .errors import NumericError, ShapeError, SewingError
from .integral import AlmostRoughPath, sew
from .lift import ClassicalRoughPath, concat_many, dp_distance, extend
from .tensor import project_indices, tensor_size


def augmented_form(g: Field, d: int) -> Field:
    """``h(x, y) = [[I, 0], [g(y), 0]]`` as a one-form on ``R^d + R^e``."""
    e = g.point_dim
    if g.rows != e or g.cols != d:
        raise ShapeError("vector field must map R^e -> L(R^d, R^e)")
    gy = ComposePoint(g, projection(d + e, range(d, d + e)))
    return BlockField([[ConstantField(np.eye(d), d + e), None], [gy, None]], [d, e], [d, e], d + e)


def signal_dependent_form(f: Field, d: int) -> Field:
    """``f_hat(v1, w1)(v2) = (v2, f(v1, w1) v2)`` as a field on ``R^d + R^e``."""
    e = f.rows
    if f.point_dim != d + e or f.cols != d:
        raise ShapeError("signal dependent field must map R^(d+e) -> L(R^d, R^e)")
    return BlockField([[ConstantField(np.eye(d), d + e)], [f]], [d, e], [d], d + e)


def embed_driver(X: ClassicalRoughPath, total_dim: int) -> np.ndarray:
    """Segments of ``X`` viewed in ``T^2(R^total_dim)`` (first coordinates)."""
    idx = project_indices(total_dim, 2, range(X.dim))
    out = np.zeros((X.m, tensor_size(total_dim, 2)))
    out[:, idx] = X.segs
    return out


def davie_guess(g: Field, X: ClassicalRoughPath, y0) -> np.ndarray:
    """Explicit second-order Euler trace, used to seed the iteration."""
    d = X.dim
    y = np.asarray(y0, dtype=float).copy()
    ys = [y.copy()]
    for k in range(X.m):
        s = X.segs[k]
        A, dA = g.jet(y[None, :], 1)
        X1 = s[1:1 + d]
        X2 = s[1 + d:1 + d + d * d].reshape(d, d)
        # d/dy_u (g_w) g_u term
        step = A[0] @ X1 + np.einsum("ewu,uv,vw->e", dA[0], A[0], X2)
        y = y + step
        if not np.all(np.isfinite(y)):
            raise NumericError("explicit pre-pass diverged")
        ys.append(y.copy())
    return np.array(ys)


def reachable_box(g: Field, X: ClassicalRoughPath, y0, inflate: float = 0.5):
    """Bounding box of the explicit trace, inflated by ``inflate`` of its width."""
    ys = davie_guess(g, X, y0)
    lo, hi = ys.min(axis=0), ys.max(axis=0)
    pad = inflate * np.maximum(hi - lo, 1e-3)
    return lo - pad, hi + pad


@dataclass
class RDESolution:
    Z: ClassicalRoughPath
    d: int
    e: int
    windows: list = field(default_factory=list)
    unique: bool = True

    @property
    def times(self) -> np.ndarray:
        return self.Z.times

    def trace(self) -> np.ndarray:
        return self.Z.trace()[:, self.d:]

    @property
    def end(self) -> np.ndarray:
        return self.Z.end[self.d:]

    def response(self) -> ClassicalRoughPath:
        """The ``W`` block of the solution as a rough path on ``R^e``."""
        idx = project_indices(self.d + self.e, 2, range(self.d, self.d + self.e))
        return ClassicalRoughPath(self.Z.times, self.Z.segs[:, idx], self.e, 2,
                                  self.Z.start[self.d:], self.Z.p)

    def max_residual(self) -> float:
        return max((w["residual"] for w in self.windows), default=0.0)


def _picard_window(h: Field, Xw: ClassicalRoughPath, z0: np.ndarray, seed_trace: np.ndarray,
                   d: int, e: int, tol: float, max_sweeps: int, sew_tol: float):
    D = d + e
    segs = embed_driver(Xw, D)
    # seed: Y moves along the explicit trace, no cross terms yet
    segs[:, 1 + d:1 + D] = np.diff(seed_trace, axis=0)
    Z = ClassicalRoughPath(Xw.times, segs, D, 2, z0, Xw.p)
    vidx = project_indices(D, 2, range(d))
    history = []
    for sweep in range(1, max_sweeps + 1):
        new, _ = sew(AlmostRoughPath(h, Z, out_level=2), tol=sew_tol, start=z0)
        new.segs[:, vidx] = Xw.segs
        new = ClassicalRoughPath(new.times, new.segs, D, 2, z0, Xw.p)
        dist = dp_distance(new, Z, p=Xw.p)
        history.append(dist)
        Z = new
        if dist <= tol:
            return Z, sweep, dist, True
        if sweep >= 4 and history[-1] > 0.95 * history[-2] and history[-2] > 0.95 * history[-3]:
            break
        if not np.isfinite(dist):
            break
    return Z, len(history), history[-1], False


def solve_rde(g: Field, X: ClassicalRoughPath, y0, tol: float = 1e-9, max_sweeps: int = 50,
              window: int = 64, sew_tol: float = 1e-10, existence_only: bool = False,
              min_window: int = 1) -> RDESolution:
    """Solve ``dY = g(Y) dX, Y_0 = y0``."""
    d = X.dim
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    e = y0.size
    if X.level < 2:
        X = extend(X, 2)
    elif X.level > 2:
        X = X.truncate(2)
    h = augmented_form(g, d)
    seed = davie_guess(g, X, y0)
    pieces, windows = [], []
    a = 0
    y = y0.copy()
    w = max(1, int(window))
    unique = True
    while a < X.m:
        b = min(X.m, a + w)
        Xw = ClassicalRoughPath(X.times[a:b + 1], X.segs[a:b], d, 2, X.trace()[a], X.p)
        shift = y - seed[a]
        try:
            Zw, sweeps, res, ok = _picard_window(h, Xw, np.concatenate([Xw.start, y]),
                                                 seed[a:b + 1] + shift, d, e, tol, max_sweeps, sew_tol)
        except SewingError:
            ok, sweeps, res, Zw = False, 0, float("inf"), None
        if not ok:
            if b - a > min_window:
                w = max(min_window, (b - a) // 2)
                continue
            if not existence_only or Zw is None:
                raise NumericError(f"Picard iteration did not contract on [{Xw.t0}, {Xw.T}] "
                                   f"(residual {res:.3g})")
            unique = False
        windows.append({"t0": Xw.t0, "t1": Xw.T, "sweeps": sweeps, "residual": res})
        pieces.append(Zw)
        y = Zw.end[d:]
        a = b
    Z = concat_many(pieces, check_start=False)
    Z = ClassicalRoughPath(Z.times, Z.segs, d + e, 2, np.concatenate([X.start, y0]), X.p)
    return RDESolution(Z, d, e, windows, unique)


def solve_rde_signal_dep(f: Field, X: ClassicalRoughPath, y0, **kw) -> RDESolution:
    """Solve ``dY = f(X, Y) dX`` through the augmented equation on ``V + W``.

    The returned solution lives on ``V + W``: its first block reproduces ``X``
    and the second block is the response.
    """
    d = X.dim
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    e = y0.size
    g_hat = signal_dependent_form(f, d)
    if X.level < 2:
        X = extend(X, 2)
    full = solve_rde(g_hat, X, np.concatenate([X.start, y0]), **kw)
    D = d + e
    idx = project_indices(d + D, 2, range(d, d + D))
    Z = ClassicalRoughPath(full.Z.times, full.Z.segs[:, idx], D, 2, full.Z.start[d:], X.p)
    return RDESolution(Z, d, e, full.windows, full.unique)


def fixed_point_residual(g: Field, sol: RDESolution, sew_tol: float = 1e-10) -> float:
    """``d_p(Z, int h(Z) dZ)`` over the whole grid."""
    h = augmented_form(g, sol.d)
    new, _ = sew(AlmostRoughPath(h, sol.Z, out_level=2), tol=sew_tol, start=sol.Z.start)
    vidx = project_indices(sol.d + sol.e, 2, range(sol.d))
    new.segs[:, vidx] = sol.Z.segs[:, vidx]
    new = ClassicalRoughPath(new.times, new.segs, new.dim, 2, new.start, sol.Z.p)
    return dp_distance(new, sol.Z)


def pure_area_driver(a: float, T: float = 1.0, steps: int = 100, p: float = 2.5) -> ClassicalRoughPath:
    """``X^1 = 0``, ``X^2_{s,t} = (t - s) [[0, a], [-a, 0]]`` on ``[0, T]``."""
    times = np.linspace(0.0, T, steps + 1)
    segs = np.zeros((steps, tensor_size(2, 2)))
    segs[:, 0] = 1.0
    dt = np.diff(times)
    segs[:, 4] = a * dt
    segs[:, 5] = -a * dt
    return ClassicalRoughPath(times, segs, 2, 2, np.zeros(2), p)


def circle_approximant(a: float, T: float = 1.0, loops: int = 100, per_loop: int = 32) -> ClassicalRoughPath:
    """Bounded-variation driver made of ``loops`` small counter-clockwise polygons
    whose areas add up to ``a T``.

    Consecutive loops sit on opposite sides of the origin so that their
    third-level terms cancel in pairs; the lift converges to
    :func:`pure_area_driver` as ``loops`` grows.
    """
    from .lift import SampledPath, signature
    r = math.sqrt(a * T / (loops * 0.5 * per_loop * math.sin(2 * math.pi / per_loop)))
    n = loops * per_loop
    times = np.linspace(0.0, T, n + 1)
    th = 2 * math.pi * np.arange(n + 1) / per_loop
    loop = np.minimum(np.arange(n + 1) // per_loop, loops - 1)
    side = np.where(loop % 2 == 0, 1.0, -1.0)
    # left circles start at their rightmost point, right circles at their leftmost
    pts = np.c_[-side * r * (1.0 - np.cos(th)), side * r * np.sin(th)]
    return signature(SampledPath(times, pts), 2, p=2.5)
