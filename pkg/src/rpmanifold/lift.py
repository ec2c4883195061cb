"""Sampled paths, their signature lifts, and classical rough paths on a grid.

A :class:`ClassicalRoughPath` stores one group-like increment per grid
segment. Increments over coarser grid intervals follow from Chen's identity.
Points strictly inside a segment are reached by geodesic interpolation
``g -> exp(lam * log g)``, which is exact for piecewise linear lifts.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels as K
from .errors import ParseError, ShapeError, ValidationError
from .tensor import TruncatedTensor, check_capacity, tensor_size


# ------------------------------------------------------------------ constants

def _zeta(s: float) -> float:
    """Riemann zeta for s > 1 by Euler-Maclaurin summation."""
    if s <= 1.0:
        raise ValueError("zeta needs s > 1")
    M = 24
    head = sum(m ** -s for m in range(1, M))
    tail = M ** (1.0 - s) / (s - 1.0) + 0.5 * M ** -s
    # Bernoulli corrections B_2j / (2j)!
    coeffs = [1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0, 1.0 / 47900160.0]
    rising = s
    power = M ** (-s - 1.0)
    for j, c in enumerate(coeffs):
        tail += c * rising * power
        rising *= (s + 2 * j + 1) * (s + 2 * j + 2)
        power /= M * M
    return head + tail


def beta_constant(p: float) -> float:
    """``p * (1 + sum_{r>=3} (2/(r-2))^((floor(p)+1)/p))``.

    The series equals ``2^s zeta(s)`` with ``s = (floor(p)+1)/p > 1``.
    """
    if p < 1:
        raise ValidationError("p must be at least 1")
    s = (math.floor(p) + 1) / p
    return p * (1.0 + 2.0 ** s * _zeta(s))


def factorial_weights(p: float, n: int) -> np.ndarray:
    """``beta * Gamma(i/p + 1)`` for i = 0..n (entry 0 unused)."""
    b = beta_constant(p)
    return np.array([b * math.gamma(i / p + 1.0) for i in range(n + 1)])


# -------------------------------------------------------------- sampled paths

@dataclass
class SampledPath:
    """Piecewise linear path through ``points`` at strictly increasing ``times``."""

    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if self.points.shape[0] != self.times.size:
            raise ShapeError("times and points disagree in length")
        if self.times.size < 2:
            raise ValidationError("a path needs at least two samples")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("times must be strictly increasing")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("non-finite sample")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def lift(self, level: int = 2, p: float | None = None) -> "ClassicalRoughPath":
        return signature(self, level, p)


def load_path_csv(source) -> SampledPath:
    """Read ``t,x1,...,xd`` rows. ``source`` is a filename or a text stream."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        try:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ParseError(f"cannot read {source}: {exc}") from exc
    rows = [r for r in csv.reader(io.StringIO(text))]
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty path file")
    line, header = rows[0]
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0] != "t" or any(h != f"x{k + 1}" for k, h in enumerate(header[1:])):
        raise ParseError(f"line {line}: header must read t,x1,...,xd")
    d = len(header) - 1
    times, pts = [], []
    for line, r in rows[1:]:
        if len(r) != d + 1:
            raise ParseError(f"line {line}: expected {d + 1} fields, got {len(r)}")
        try:
            vals = [float(c) for c in r]
        except ValueError as exc:
            raise ParseError(f"line {line}: {exc}") from exc
        times.append(vals[0])
        pts.append(vals[1:])
    if len(times) < 2:
        raise ParseError("path file needs at least two samples")
    t = np.array(times)
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if bad.size:
        raise ValidationError(f"line {rows[bad[0] + 2][0]}: times must be strictly increasing")
    return SampledPath(t, np.array(pts))


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_path_csv(times, points, dest=None, prefix: str = "x") -> str:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] != len(times):
        points = points.T
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"{prefix}{k + 1}" for k in range(points.shape[1])]) + "\n")
    for t, row in zip(times, points):
        buf.write(",".join([format_float(t)] + [format_float(v) for v in row]) + "\n")
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


# ------------------------------------------------------------ rough paths

@dataclass
class ClassicalRoughPath:
    """Multiplicative functional of degree ``level`` on the grid ``times``.

    ``segs[k]`` is the flat increment over ``[times[k], times[k+1]]``.
    """

    times: np.ndarray
    segs: np.ndarray
    dim: int
    level: int
    start: np.ndarray
    p: float = 1.0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        check_capacity(self.dim, self.level)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.segs = np.ascontiguousarray(self.segs, dtype=float)
        self.start = np.asarray(self.start, dtype=float).reshape(-1)
        if self.segs.ndim != 2 or self.segs.shape != (self.times.size - 1, tensor_size(self.dim, self.level)):
            raise ShapeError("increment array does not match the grid and tensor size")
        if self.start.size != self.dim:
            raise ShapeError("start point has the wrong dimension")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("grid must be strictly increasing")
        if self.level < math.floor(self.p):
            raise ValidationError("truncation level below floor(p)")

    # basic data
    @property
    def m(self) -> int:
        return self.segs.shape[0]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def offsets(self) -> np.ndarray:
        return K.grade_offsets(self.dim, self.level)

    @cached_property
    def prefix(self) -> np.ndarray:
        return K.chen_prefix(self.segs, self.dim, self.level)

    def trace(self) -> np.ndarray:
        """Level-one path ``start + X^1_{t0, t_k}`` at every grid time."""
        return self.start[None, :] + self.prefix[:, 1:1 + self.dim]

    @property
    def end(self) -> np.ndarray:
        return self.trace()[-1]

    def total(self) -> TruncatedTensor:
        return TruncatedTensor(self.dim, self.level, self.prefix[-1].copy())

    def increment(self, a: int, b: int) -> TruncatedTensor:
        """Increment between grid indices ``a <= b`` as a product of segments."""
        if not 0 <= a <= b <= self.m:
            raise ValidationError("grid indices out of range")
        if a == b:
            return TruncatedTensor.one(self.dim, self.level)
        sub = self.segs[a:b]
        return TruncatedTensor(self.dim, self.level, K.chen_prefix(sub, self.dim, self.level)[-1])

    def increment_at(self, s: float, t: float) -> TruncatedTensor:
        return self.restrict(s, t).total()

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ValidationError(f"time {t} is not a grid point")
        return k

    def with_segs(self, segs, start=None, p=None) -> "ClassicalRoughPath":
        return ClassicalRoughPath(self.times.copy(), segs, self.dim, self.level,
                                  self.start.copy() if start is None else start,
                                  self.p if p is None else p)

    def truncate(self, level: int) -> "ClassicalRoughPath":
        if level > self.level:
            raise ShapeError("use extend() to raise the level")
        if level < math.floor(self.p):
            raise ShapeError("truncation below floor(p) loses the rough path")
        D = tensor_size(self.dim, level)
        return ClassicalRoughPath(self.times.copy(), self.segs[:, :D].copy(), self.dim, level,
                                  self.start.copy(), self.p)

    # grid surgery
    def refine_to(self, new_times) -> "ClassicalRoughPath":
        """Same path on a finer grid containing the current one."""
        new_times = np.union1d(self.times, np.asarray(new_times, dtype=float))
        new_times = new_times[(new_times >= self.t0) & (new_times <= self.T)]
        if new_times.size == self.times.size:
            return self
        parent = np.searchsorted(self.times, new_times[:-1], side="right") - 1
        parent = np.clip(parent, 0, self.m - 1)
        width = np.diff(new_times) / (self.times[parent + 1] - self.times[parent])
        whole = np.isclose(width, 1.0, rtol=0, atol=1e-15)
        segs = self.segs[parent].copy()
        part = ~whole
        if part.any():
            logs = K.batch_log(self.segs[parent[part]], self.dim, self.level)
            segs[part] = K.batch_exp(width[part, None] * logs, self.dim, self.level)
        return ClassicalRoughPath(new_times, segs, self.dim, self.level, self.start.copy(), self.p)

    def restrict(self, s: float, t: float) -> "ClassicalRoughPath":
        if not (self.t0 - 1e-12 <= s < t <= self.T + 1e-12):
            raise ValidationError(f"[{s}, {t}] is not inside [{self.t0}, {self.T}]")
        s = max(s, self.t0)
        t = min(t, self.T)
        ref = self.refine_to([s, t])
        a = int(np.searchsorted(ref.times, s - 1e-14 * max(1.0, abs(s))))
        b = int(np.searchsorted(ref.times, t + 1e-14 * max(1.0, abs(t)), side="right")) - 1
        start = ref.trace()[a]
        return ClassicalRoughPath(ref.times[a:b + 1].copy(), ref.segs[a:b].copy(), self.dim,
                                  self.level, start, self.p)

    # derived objects
    def control(self) -> "ControlEstimate":
        return ControlEstimate(self)

    def extend(self, level: int) -> "ClassicalRoughPath":
        return extend(self, level)

    def to_json_obj(self) -> dict:
        return {"dim": self.dim, "level": self.level, "p": self.p,
                "times": self.times.tolist(), "start": self.start.tolist(),
                "increments": self.segs.tolist()}

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ClassicalRoughPath":
        try:
            return cls(np.array(obj["times"], dtype=float), np.array(obj["increments"], dtype=float),
                       int(obj["dim"]), int(obj["level"]), np.array(obj["start"], dtype=float),
                       float(obj.get("p", 1.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad rough path object: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())


def signature(path: SampledPath, level: int = 2, p: float | None = None) -> ClassicalRoughPath:
    """Lift of the polyline: each segment contributes ``exp(delta)``."""
    d = path.dim
    check_capacity(d, level)
    delta = np.diff(path.points, axis=0)
    X = np.zeros((delta.shape[0], tensor_size(d, level)))
    X[:, 1:1 + d] = delta
    segs = K.batch_exp(X, d, level)
    return ClassicalRoughPath(path.times.copy(), segs, d, level, path.points[0].copy(),
                              1.0 if p is None else p)


def geodesic_segments(log_increments: np.ndarray, d: int, level: int) -> np.ndarray:
    return K.batch_exp(log_increments, d, level)


def extend(X: ClassicalRoughPath, level: int) -> ClassicalRoughPath:
    """Unique multiplicative extension to a higher level.

    Every grid segment is lifted along its geodesic, ``exp_m(log_n g)``, and
    coarse increments follow by Chen. This is the dyadic sewing limit of the
    almost multiplicative functional ``(s, t) -> exp_m(log_n X_{s,t})`` once
    refinement reaches the grid, below which the geodesic split is exact.
    """
    if level < X.level:
        raise ShapeError("extension level must not decrease")
    if level == X.level:
        return X
    check_capacity(X.dim, level)
    logs = K.batch_log(X.segs, X.dim, X.level)
    big = np.zeros((X.m, tensor_size(X.dim, level)))
    big[:, :logs.shape[1]] = logs
    segs = K.batch_exp(big, X.dim, level)
    return ClassicalRoughPath(X.times.copy(), segs, X.dim, level, X.start.copy(), X.p)


def concat(X: ClassicalRoughPath, Y: ClassicalRoughPath, check_start: bool = True,
           tol: float = 1e-8) -> ClassicalRoughPath:
    """Join two paths whose grids meet at ``X.T == Y.t0``.

    For ``r <= t <= v`` the joined increment is ``X_{r,t} x Y_{t,v}``, and it
    reduces to ``X`` or ``Y`` on intervals inside either piece.
    """
    if X.dim != Y.dim or X.level != Y.level:
        raise ShapeError("cannot concatenate paths of different shape")
    if abs(X.T - Y.t0) > 1e-12 * max(1.0, abs(X.T)):
        raise ValidationError("grids do not meet")
    if check_start and np.max(np.abs(X.end - Y.start)) > tol * (1.0 + np.max(np.abs(X.end))):
        raise ValidationError("second path does not start where the first ends")
    times = np.concatenate([X.times, Y.times[1:]])
    segs = np.concatenate([X.segs, Y.segs], axis=0)
    return ClassicalRoughPath(times, segs, X.dim, X.level, X.start.copy(), max(X.p, Y.p))


def concat_many(paths, check_start: bool = True, tol: float = 1e-8) -> ClassicalRoughPath:
    out = paths[0]
    for P in paths[1:]:
        out = concat(out, P, check_start, tol)
    return out


# ------------------------------------------------------------ p-variation

def _common(X: ClassicalRoughPath, Y: ClassicalRoughPath, p: float | None):
    if X.dim != Y.dim:
        raise ShapeError("paths live in different spaces")
    if abs(X.t0 - Y.t0) > 1e-12 or abs(X.T - Y.T) > 1e-12 * max(1.0, abs(X.T)):
        raise ValidationError("paths are defined on different intervals")
    p = max(X.p, Y.p) if p is None else p
    n = math.floor(p)
    if min(X.level, Y.level) < n:
        raise ShapeError("levels too low for this p")
    grid = np.union1d(X.times, Y.times)
    Xr = X.refine_to(grid)
    Yr = Y.refine_to(grid)
    D = tensor_size(X.dim, n)
    return Xr.segs[:, :D], Yr.segs[:, :D], n, p


def dp_distance(X: ClassicalRoughPath, Y: ClassicalRoughPath, p: float | None = None,
                per_grade: bool = False):
    """Inhomogeneous p-variation distance, exact over partitions of the merged grid."""
    sx, sy, n, p = _common(X, Y, p)
    sums = K.pvar_sums(sx, sy, X.dim, n, p)
    vals = np.array([sums[i] ** (i / p) for i in range(1, n + 1)])
    return vals if per_grade else float(vals.max())


def p_variation(X: ClassicalRoughPath, p: float | None = None, per_grade: bool = False):
    """``d_p`` against the constant path."""
    p = X.p if p is None else p
    n = math.floor(p)
    D = tensor_size(X.dim, n)
    sums = K.pvar_sums(X.segs[:, :D], None, X.dim, n, p)
    vals = np.array([sums[i] ** (i / p) for i in range(1, n + 1)])
    return vals if per_grade else float(vals.max())


class ControlEstimate:
    """Control ``omega`` with ``|X^i_{s,t}| <= omega(s,t)^(i/p) / (beta (i/p)!)``.

    ``omega = sum_i sup_D sum_D (beta (i/p)! |X^i|)^(p/i)``. Each summand is
    superadditive, hence so is the sum, and the single-interval partition
    gives the bound.
    """

    def __init__(self, X: ClassicalRoughPath, p: float | None = None):
        self.X = X
        self.p = X.p if p is None else p
        self.n = math.floor(self.p)
        self.weights = factorial_weights(self.p, self.n)
        self._D = tensor_size(X.dim, self.n)
        self._segs = X.segs[:, :self._D]
        self._cum = None
        if self.p == 1.0:
            lengths = np.abs(self._segs[:, 1:1 + X.dim]).sum(axis=1) * self.weights[1]
            self._cum = np.concatenate([[0.0], np.cumsum(lengths)])

    def between(self, a: int, b: int) -> float:
        """omega between grid indices."""
        if b <= a:
            return 0.0
        if self._cum is not None:
            return float(self._cum[b] - self._cum[a])
        sums = K.pvar_sums(self._segs[a:b], None, self.X.dim, self.n, self.p, self.weights)
        return float(sums[1:].sum())

    def __call__(self, s: float, t: float) -> float:
        X = self.X
        if s in X.times and t in X.times:
            return self.between(X.index_of(s), X.index_of(t))
        sub = X.restrict(s, t)
        return ControlEstimate(sub, self.p).between(0, sub.m)

    def matrix(self) -> np.ndarray:
        """omega on every pair of grid indices (cubic cost; small grids only)."""
        S = K.pvar_sums_all(self._segs, self.X.dim, self.n, self.p, self.weights)
        return S[1:].sum(axis=0)

    def total(self) -> float:
        return self.between(0, self.X.m)

    def bound_holds(self, a: int, b: int, tol: float = 1e-12) -> bool:
        w = self.between(a, b)
        inc = self.X.increment(a, b)
        for i in range(1, self.n + 1):
            if inc.norm(i) > w ** (i / self.p) / self.weights[i] * (1 + tol) + tol:
                return False
        return True
