"""Smooth maps and matrix-valued fields with exact low-order derivatives.

A :class:`Map` ``F: R^din -> R^dout`` returns jets ``[F, DF, D^2F]`` on a
batch of points: arrays of shape ``(N, dout)``, ``(N, dout, din)`` and
``(N, dout, din, din)``.

A :class:`Field` is a matrix-valued function on ``R^point_dim`` with values
in ``L(R^cols, R^rows)``. Its jet is ``[A, DA]`` with ``DA[n, e, w, u] =
d A[e, w] / d x_u``. One-forms are fields whose ``cols`` equals the point
dimension; the vector fields ``g(y): R^d -> R^e`` driving differential
equations are fields on the solution space.
"""
from __future__ import annotations

import numpy as np
import sympy as sp

from .errors import ShapeError
from .expr import parse_expr, parse_matrix


def _compile(exprs, syms):
    fn = sp.lambdify(syms, exprs, modules="numpy", cse=True)

    def ev(x):
        N = x.shape[0]
        vals = fn(*[x[:, i] for i in range(x.shape[1])])
        out = np.empty((N, len(exprs)))
        for j, v in enumerate(vals):
            out[:, j] = v
        return out

    return ev


def _pts(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != d:
        raise ShapeError(f"expected points of dimension {d}, got {x.shape[1]}")
    return x


# ======================================================================= maps

class Map:
    din: int
    dout: int

    def jet(self, x, order: int = 2) -> list:
        raise NotImplementedError

    def __call__(self, x):
        return self.jet(_pts(x, self.din), 0)[0]

    def jacobian(self, x):
        return self.jet(_pts(x, self.din), 1)[1]

    def hessian(self, x):
        return self.jet(_pts(x, self.din), 2)[2]

    # composition helpers
    def __matmul__(self, inner: "Map") -> "Map":
        return ComposeMap(self, inner)


class ExprMap(Map):
    """Map given by sympy expressions in the listed symbols."""

    def __init__(self, exprs, syms):
        self.exprs = [sp.sympify(e) for e in exprs]
        self.syms = list(syms)
        self.din = len(self.syms)
        self.dout = len(self.exprs)
        self._fns = {}

    @classmethod
    def parse(cls, texts, variables):
        syms = [sp.Symbol(v, real=True) for v in variables]
        return cls([parse_expr(t, variables) for t in texts], syms)

    def _fn(self, order):
        if order not in self._fns:
            if order == 0:
                flat = self.exprs
            elif order == 1:
                flat = [sp.diff(e, s) for e in self.exprs for s in self.syms]
            else:
                flat = [sp.diff(e, s, t) for e in self.exprs for s in self.syms for t in self.syms]
            self._fns[order] = _compile(flat, self.syms)
        return self._fns[order]

    def jet(self, x, order=2):
        N = x.shape[0]
        out = [self._fn(0)(x)]
        if order >= 1:
            out.append(self._fn(1)(x).reshape(N, self.dout, self.din))
        if order >= 2:
            out.append(self._fn(2)(x).reshape(N, self.dout, self.din, self.din))
        return out


class CallableMap(Map):
    """Map from user callables acting on ``(N, din)`` arrays."""

    def __init__(self, din, dout, f, jac=None, hess=None):
        self.din, self.dout = din, dout
        self.f, self.jac, self.hess = f, jac, hess

    def jet(self, x, order=2):
        out = [np.asarray(self.f(x), dtype=float).reshape(x.shape[0], self.dout)]
        if order >= 1:
            if self.jac is None:
                raise NotImplementedError("no derivative supplied")
            out.append(np.asarray(self.jac(x), dtype=float).reshape(x.shape[0], self.dout, self.din))
        if order >= 2:
            if self.hess is None:
                raise NotImplementedError("no second derivative supplied")
            out.append(np.asarray(self.hess(x), dtype=float).reshape(x.shape[0], self.dout, self.din, self.din))
        return out


class AffineMap(Map):
    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.dout, self.din = self.A.shape
        self.b = np.zeros(self.dout) if b is None else np.asarray(b, dtype=float).reshape(-1)

    def jet(self, x, order=2):
        N = x.shape[0]
        out = [x @ self.A.T + self.b]
        if order >= 1:
            out.append(np.broadcast_to(self.A, (N, self.dout, self.din)).copy())
        if order >= 2:
            out.append(np.zeros((N, self.dout, self.din, self.din)))
        return out


def identity_map(d: int) -> AffineMap:
    return AffineMap(np.eye(d))


def translation(c) -> AffineMap:
    c = np.asarray(c, dtype=float).reshape(-1)
    return AffineMap(np.eye(c.size), c)


def projection(din: int, idx) -> AffineMap:
    idx = list(idx)
    A = np.zeros((len(idx), din))
    A[np.arange(len(idx)), idx] = 1.0
    return AffineMap(A)


class ComposeMap(Map):
    """``outer o inner`` with the second-order chain rule."""

    def __init__(self, outer: Map, inner: Map):
        if outer.din != inner.dout:
            raise ShapeError("composition dimension mismatch")
        self.outer, self.inner = outer, inner
        self.din, self.dout = inner.din, outer.dout

    def jet(self, x, order=2):
        ji = self.inner.jet(x, order)
        jo = self.outer.jet(ji[0], order)
        out = [jo[0]]
        if order >= 1:
            out.append(np.einsum("nem,nma->nea", jo[1], ji[1]))
        if order >= 2:
            out.append(np.einsum("nemk,nma,nkb->neab", jo[2], ji[1], ji[1])
                       + np.einsum("nem,nmab->neab", jo[1], ji[2]))
        return out


class ProductMap(Map):
    """Block-diagonal map ``(x1, x2, ...) -> (F1(x1), F2(x2), ...)``."""

    def __init__(self, maps):
        self.maps = list(maps)
        self.din = sum(m.din for m in self.maps)
        self.dout = sum(m.dout for m in self.maps)

    def jet(self, x, order=2):
        N = x.shape[0]
        out = [np.zeros((N, self.dout))]
        if order >= 1:
            out.append(np.zeros((N, self.dout, self.din)))
        if order >= 2:
            out.append(np.zeros((N, self.dout, self.din, self.din)))
        i0 = o0 = 0
        for m in self.maps:
            i1, o1 = i0 + m.din, o0 + m.dout
            j = m.jet(x[:, i0:i1], order)
            out[0][:, o0:o1] = j[0]
            if order >= 1:
                out[1][:, o0:o1, i0:i1] = j[1]
            if order >= 2:
                out[2][:, o0:o1, i0:i1, i0:i1] = j[2]
            i0, o0 = i1, o1
        return out


class StackMap(Map):
    """``x -> (F1(x), F2(x), ...)``."""

    def __init__(self, maps):
        self.maps = list(maps)
        self.din = self.maps[0].din
        self.dout = sum(m.dout for m in self.maps)

    def jet(self, x, order=2):
        js = [m.jet(x, order) for m in self.maps]
        return [np.concatenate([j[k] for j in js], axis=1) for k in range(order + 1)]


class ScaledMap(Map):
    """``x -> c(x) F(x)`` for a scalar map ``c``."""

    def __init__(self, c: Map, F: Map):
        if c.dout != 1 or c.din != F.din:
            raise ShapeError("scalar factor must map R^din -> R")
        self.c, self.F = c, F
        self.din, self.dout = F.din, F.dout

    def jet(self, x, order=2):
        jc = self.c.jet(x, order)
        jf = self.F.jet(x, order)
        c0 = jc[0][:, 0]
        out = [c0[:, None] * jf[0]]
        if order >= 1:
            out.append(c0[:, None, None] * jf[1] + jf[0][:, :, None] * jc[1][:, 0][:, None, :])
        if order >= 2:
            dc = jc[1][:, 0]
            out.append(c0[:, None, None, None] * jf[2]
                       + jf[0][:, :, None, None] * jc[2][:, 0][:, None, :, :]
                       + jf[1][:, :, :, None] * dc[:, None, None, :]
                       + jf[1][:, :, None, :] * dc[:, None, :, None])
        return out


class SumMap(Map):
    def __init__(self, maps, weights=None):
        self.maps = list(maps)
        self.w = [1.0] * len(self.maps) if weights is None else list(weights)
        self.din, self.dout = self.maps[0].din, self.maps[0].dout

    def jet(self, x, order=2):
        js = [m.jet(x, order) for m in self.maps]
        return [sum(w * j[k] for w, j in zip(self.w, js)) for k in range(order + 1)]


# ===================================================================== fields

class Field:
    """Matrix-valued function ``A: R^point_dim -> L(R^cols, R^rows)``."""

    point_dim: int
    rows: int
    cols: int

    def jet(self, x, order: int = 1) -> list:
        raise NotImplementedError

    def value(self, x):
        return self.jet(_pts(x, self.point_dim), 0)[0]

    def deriv(self, x):
        return self.jet(_pts(x, self.point_dim), 1)[1]

    @property
    def is_one_form(self) -> bool:
        return self.cols == self.point_dim

    def __add__(self, other):
        return SumField([self, other])

    def __sub__(self, other):
        return SumField([self, other], [1.0, -1.0])

    def __rmul__(self, c):
        return SumField([self], [float(c)])


OneForm = Field


class ExprField(Field):
    """Field from a matrix of sympy expressions."""

    def __init__(self, matrix, syms):
        self.matrix = [[sp.sympify(c) for c in row] for row in matrix]
        self.syms = list(syms)
        self.point_dim = len(self.syms)
        self.rows = len(self.matrix)
        self.cols = len(self.matrix[0])
        flat = [c for row in self.matrix for c in row]
        self._v = _compile(flat, self.syms)
        self._d = None
        self._flat = flat

    @classmethod
    def parse(cls, rows, variables):
        syms = [sp.Symbol(v, real=True) for v in variables]
        return cls(parse_matrix(rows, variables), syms)

    def jet(self, x, order=1):
        N = x.shape[0]
        out = [self._v(x).reshape(N, self.rows, self.cols)]
        if order >= 1:
            if self._d is None:
                self._d = _compile([sp.diff(c, s) for c in self._flat for s in self.syms], self.syms)
            out.append(self._d(x).reshape(N, self.rows, self.cols, self.point_dim))
        return out


class ConstantField(Field):
    def __init__(self, A, point_dim: int):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.rows, self.cols = self.A.shape
        self.point_dim = point_dim

    def jet(self, x, order=1):
        N = x.shape[0]
        out = [np.broadcast_to(self.A, (N, self.rows, self.cols)).copy()]
        if order >= 1:
            out.append(np.zeros((N, self.rows, self.cols, self.point_dim)))
        return out


def identity_form(d: int) -> ConstantField:
    return ConstantField(np.eye(d), d)


class CallableField(Field):
    def __init__(self, point_dim, rows, cols, value, deriv=None):
        self.point_dim, self.rows, self.cols = point_dim, rows, cols
        self._value, self._deriv = value, deriv

    def jet(self, x, order=1):
        N = x.shape[0]
        out = [np.asarray(self._value(x), dtype=float).reshape(N, self.rows, self.cols)]
        if order >= 1:
            if self._deriv is None:
                raise NotImplementedError("no derivative supplied")
            out.append(np.asarray(self._deriv(x), dtype=float).reshape(N, self.rows, self.cols, self.point_dim))
        return out


class JacobianField(Field):
    """``x -> DF(x)``: the exact one-form ``dF``."""

    def __init__(self, F: Map):
        self.F = F
        self.point_dim = F.din
        self.rows, self.cols = F.dout, F.din

    def jet(self, x, order=1):
        j = self.F.jet(x, order + 1)
        return j[1:order + 2]


def exact_form(F: Map) -> JacobianField:
    return JacobianField(F)


class ComposePoint(Field):
    """``x -> A(h(x))``: change of the base point only."""

    def __init__(self, A: Field, h: Map):
        if A.point_dim != h.dout:
            raise ShapeError("base point map has the wrong target dimension")
        self.A, self.h = A, h
        self.point_dim, self.rows, self.cols = h.din, A.rows, A.cols

    def jet(self, x, order=1):
        jh = self.h.jet(x, order)
        ja = self.A.jet(jh[0], order)
        out = [ja[0]]
        if order >= 1:
            out.append(np.einsum("newm,nmu->newu", ja[1], jh[1]))
        return out


class MatMulField(Field):
    """Pointwise product ``x -> A(x) B(x)``."""

    def __init__(self, A: Field, B: Field):
        if A.cols != B.rows or A.point_dim != B.point_dim:
            raise ShapeError("fields cannot be multiplied")
        self.A, self.B = A, B
        self.point_dim, self.rows, self.cols = A.point_dim, A.rows, B.cols

    def jet(self, x, order=1):
        ja = self.A.jet(x, order)
        jb = self.B.jet(x, order)
        out = [np.einsum("nek,nkw->new", ja[0], jb[0])]
        if order >= 1:
            out.append(np.einsum("neku,nkw->newu", ja[1], jb[0])
                       + np.einsum("nek,nkwu->newu", ja[0], jb[1]))
        return out


def matmul(*fields: Field) -> Field:
    out = fields[0]
    for f in fields[1:]:
        out = MatMulField(out, f)
    return out


class SumField(Field):
    def __init__(self, fields, weights=None):
        self.fields = list(fields)
        self.w = [1.0] * len(self.fields) if weights is None else list(weights)
        f0 = self.fields[0]
        self.point_dim, self.rows, self.cols = f0.point_dim, f0.rows, f0.cols

    def jet(self, x, order=1):
        js = [f.jet(x, order) for f in self.fields]
        return [sum(w * j[k] for w, j in zip(self.w, js)) for k in range(order + 1)]


class ScaledField(Field):
    """``x -> c(x) A(x)`` for a scalar map ``c``."""

    def __init__(self, c: Map, A: Field):
        self.c, self.A = c, A
        self.point_dim, self.rows, self.cols = A.point_dim, A.rows, A.cols

    def jet(self, x, order=1):
        jc = self.c.jet(x, order)
        ja = self.A.jet(x, order)
        c0 = jc[0][:, 0]
        out = [c0[:, None, None] * ja[0]]
        if order >= 1:
            out.append(c0[:, None, None, None] * ja[1] + ja[0][:, :, :, None] * jc[1][:, 0][:, None, None, :])
        return out


class BlockField(Field):
    """Assemble a field from a grid of blocks; ``None`` marks a zero block."""

    def __init__(self, blocks, row_sizes, col_sizes, point_dim):
        self.blocks = blocks
        self.row_sizes, self.col_sizes = list(row_sizes), list(col_sizes)
        self.point_dim = point_dim
        self.rows, self.cols = sum(row_sizes), sum(col_sizes)

    def jet(self, x, order=1):
        N = x.shape[0]
        out = [np.zeros((N, self.rows, self.cols))]
        if order >= 1:
            out.append(np.zeros((N, self.rows, self.cols, self.point_dim)))
        r0 = 0
        for i, rs in enumerate(self.row_sizes):
            c0 = 0
            for j, cs in enumerate(self.col_sizes):
                blk = self.blocks[i][j]
                if blk is not None:
                    jb = blk.jet(x, order)
                    out[0][:, r0:r0 + rs, c0:c0 + cs] = jb[0]
                    if order >= 1:
                        out[1][:, r0:r0 + rs, c0:c0 + cs] = jb[1]
                c0 += cs
            r0 += rs
        return out


def pullback(alpha: Field, h: Map) -> Field:
    """``h^* alpha = alpha(h(x)) o Dh(x)``."""
    return MatMulField(ComposePoint(alpha, h), JacobianField(h))


def postcompose(L, alpha: Field) -> Field:
    """``x -> L o alpha(x)`` for a constant matrix ``L``."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    return MatMulField(ConstantField(L, alpha.point_dim), alpha)
