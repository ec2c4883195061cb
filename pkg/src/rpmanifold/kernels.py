"""Hot loops: truncated tensor products, Chen prefixes, p-variation dynamic
programming and Lipschitz remainder scans.

Each kernel exists twice: a loop version compiled with numba and a
vectorised numpy version. The public names dispatch according to
``rpmanifold._accel.USE_NUMBA``; both variants are importable for testing
and benchmarking.
"""
from __future__ import annotations

import numpy as np

from ._accel import njit, pick


def grade_offsets(d: int, n: int) -> np.ndarray:
    off = np.zeros(n + 2, dtype=np.int64)
    size = 1
    for g in range(n + 1):
        off[g + 1] = off[g] + size
        size *= d
    return off


# ---------------------------------------------------------------- products

@njit
def _mul_into_nb(a, b, off, n, out):
    for q in range(out.shape[0]):
        out[q] = 0.0
    for g in range(n + 1):
        o0 = off[g]
        for i in range(g + 1):
            j = g - i
            a0 = off[i]
            na = off[i + 1] - a0
            b0 = off[j]
            nb = off[j + 1] - b0
            for p in range(na):
                av = a[a0 + p]
                if av == 0.0:
                    continue
                base = o0 + p * nb
                for q in range(nb):
                    out[base + q] += av * b[b0 + q]


@njit
def _batch_mul_nb(A, B, off, n):
    m = A.shape[0]
    out = np.empty_like(A)
    for r in range(m):
        _mul_into_nb(A[r], B[r], off, n, out[r])
    return out


def _batch_mul_np(A, B, off, n):
    m = A.shape[0]
    out = np.zeros_like(A)
    for g in range(n + 1):
        blk = slice(off[g], off[g + 1])
        for i in range(g + 1):
            j = g - i
            a = A[:, off[i]:off[i + 1]]
            b = B[:, off[j]:off[j + 1]]
            out[:, blk] += (a[:, :, None] * b[:, None, :]).reshape(m, -1)
    return out


def batch_mul(A: np.ndarray, B: np.ndarray, d: int, n: int) -> np.ndarray:
    """Row-wise truncated tensor product of two stacks of flat tensors."""
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    A, B = np.broadcast_arrays(A, B)
    A = np.ascontiguousarray(A)
    B = np.ascontiguousarray(B)
    off = grade_offsets(d, n)
    return pick(_batch_mul_nb, _batch_mul_np)(A, B, off, n)


@njit
def _prefix_nb(segs, off, n):
    m, D = segs.shape
    out = np.zeros((m + 1, D))
    out[0, 0] = 1.0
    for k in range(m):
        _mul_into_nb(out[k], segs[k], off, n, out[k + 1])
    return out


def _prefix_np(segs, off, n):
    m, D = segs.shape
    out = np.zeros((m + 1, D))
    out[0, 0] = 1.0
    # sequential by nature; keep the per-step product vectorised over grades
    for k in range(m):
        out[k + 1] = _batch_mul_np(out[k:k + 1], segs[k:k + 1], off, n)[0]
    return out


def chen_prefix(segs: np.ndarray, d: int, n: int) -> np.ndarray:
    """Cumulative products ``P[k] = seg[0] x ... x seg[k-1]`` with ``P[0] = 1``."""
    segs = np.ascontiguousarray(segs, dtype=float)
    off = grade_offsets(d, n)
    return pick(_prefix_nb, _prefix_np)(segs, off, n)


def tree_product(T: np.ndarray, d: int, n: int) -> np.ndarray:
    """Ordered product along axis 1 of a (m, K, D) stack, K a power of two."""
    while T.shape[1] > 1:
        m, K, D = T.shape
        left = T[:, 0::2, :].reshape(-1, D)
        right = T[:, 1::2, :].reshape(-1, D)
        T = batch_mul(left, right, d, n).reshape(m, K // 2, D)
    return T[:, 0, :]


def batch_exp(X: np.ndarray, d: int, n: int) -> np.ndarray:
    """Truncated exponential of each row (grade-0 part must vanish)."""
    m, D = X.shape
    one = np.zeros((m, D))
    one[:, 0] = 1.0
    out = one.copy()
    for k in range(n, 0, -1):
        out = one + batch_mul(X, out, d, n) / k
    return out


def batch_log(G: np.ndarray, d: int, n: int) -> np.ndarray:
    """Truncated logarithm of each row (grade-0 part must equal one)."""
    m, D = G.shape
    H = G.copy()
    H[:, 0] -= 1.0
    out = np.zeros((m, D))
    power = H.copy()
    for k in range(1, n + 1):
        out += ((-1.0) ** (k + 1) / k) * power
        if k < n:
            power = batch_mul(power, H, d, n)
    return out


def batch_inverse(G: np.ndarray, d: int, n: int) -> np.ndarray:
    m, D = G.shape
    H = G.copy()
    H[:, 0] -= 1.0
    out = np.zeros((m, D))
    out[:, 0] = 1.0
    power = out.copy()
    for k in range(1, n + 1):
        power = -batch_mul(power, H, d, n)
        out += power
    return out


# ------------------------------------------------------------- p-variation

@njit
def _grade_dist_nb(x, y, off, i):
    s = 0.0
    for q in range(off[i], off[i + 1]):
        s += abs(x[q] - y[q])
    return s


@njit
def _pvar_nb(segX, segY, off, n, p, weights):
    """sup over grid partitions of sum (w_i ||X^i_ab - Y^i_ab||)^(p/i), per grade."""
    m, D = segX.shape
    best = np.zeros((n + 1, m + 1))
    curX = np.zeros(D)
    curY = np.zeros(D)
    tmp = np.zeros(D)
    for b in range(1, m + 1):
        for i in range(1, n + 1):
            best[i, b] = -1.0
        for q in range(D):
            curX[q] = 0.0
            curY[q] = 0.0
        curX[0] = 1.0
        curY[0] = 1.0
        for a in range(b - 1, -1, -1):
            _mul_into_nb(segX[a], curX, off, n, tmp)
            for q in range(D):
                curX[q] = tmp[q]
            _mul_into_nb(segY[a], curY, off, n, tmp)
            for q in range(D):
                curY[q] = tmp[q]
            for i in range(1, n + 1):
                dist = weights[i] * _grade_dist_nb(curX, curY, off, i)
                val = best[i, a] + dist ** (p / i)
                if val > best[i, b]:
                    best[i, b] = val
    out = np.zeros(n + 1)
    for i in range(1, n + 1):
        out[i] = best[i, m]
    return out


def _pvar_np(segX, segY, off, n, p, weights):
    m, D = segX.shape
    PX = _prefix_np(segX, off, n)
    PY = _prefix_np(segY, off, n)
    IX = _inverse_np(PX, off, n)
    IY = _inverse_np(PY, off, n)
    best = np.zeros((n + 1, m + 1))
    for b in range(1, m + 1):
        Xab = _batch_mul_np(IX[:b], np.repeat(PX[b:b + 1], b, axis=0), off, n)
        Yab = _batch_mul_np(IY[:b], np.repeat(PY[b:b + 1], b, axis=0), off, n)
        diff = np.abs(Xab - Yab)
        for i in range(1, n + 1):
            dist = weights[i] * diff[:, off[i]:off[i + 1]].sum(axis=1)
            best[i, b] = np.max(best[i, :b] + dist ** (p / i))
    out = np.zeros(n + 1)
    out[1:] = best[1:, m]
    return out


def _inverse_np(G, off, n):
    H = G.copy()
    H[:, 0] -= 1.0
    out = np.zeros_like(G)
    out[:, 0] = 1.0
    power = out.copy()
    for _ in range(n):
        power = -_batch_mul_np(power, H, off, n)
        out += power
    return out


def pvar_sums(segX, segY, d: int, n: int, p: float, weights=None) -> np.ndarray:
    """Per-grade suprema over grid partitions of ``sum (w_i |X^i - Y^i|)^(p/i)``.

    ``segY=None`` compares against the constant path. Entry ``i`` of the result
    belongs to grade ``i``; entry 0 is unused.
    """
    segX = np.ascontiguousarray(segX, dtype=float)
    if segY is None:
        segY = np.zeros_like(segX)
        segY[:, 0] = 1.0
    segY = np.ascontiguousarray(segY, dtype=float)
    w = np.ones(n + 1) if weights is None else np.asarray(weights, dtype=float)
    off = grade_offsets(d, n)
    return pick(_pvar_nb, _pvar_np)(segX, segY, off, n, float(p), w)


@njit
def _pvar_all_nb(segX, off, n, p, weights):
    m, D = segX.shape
    cost = np.zeros((n + 1, m + 1, m + 1))
    cur = np.zeros(D)
    tmp = np.zeros(D)
    for b in range(1, m + 1):
        for q in range(D):
            cur[q] = 0.0
        cur[0] = 1.0
        for a in range(b - 1, -1, -1):
            _mul_into_nb(segX[a], cur, off, n, tmp)
            for q in range(D):
                cur[q] = tmp[q]
            for i in range(1, n + 1):
                s = 0.0
                for q in range(off[i], off[i + 1]):
                    s += abs(cur[q])
                cost[i, a, b] = (weights[i] * s) ** (p / i)
    S = np.zeros((n + 1, m + 1, m + 1))
    for i in range(1, n + 1):
        for a in range(m + 1):
            for b in range(a + 1, m + 1):
                v = -1.0
                for c in range(a, b):
                    w = S[i, a, c] + cost[i, c, b]
                    if w > v:
                        v = w
                S[i, a, b] = v
    return S


def _pvar_all_np(segX, off, n, p, weights):
    m, D = segX.shape
    P = _prefix_np(segX, off, n)
    Inv = _inverse_np(P, off, n)
    cost = np.zeros((n + 1, m + 1, m + 1))
    for b in range(1, m + 1):
        Xab = _batch_mul_np(Inv[:b], np.repeat(P[b:b + 1], b, axis=0), off, n)
        for i in range(1, n + 1):
            cost[i, :b, b] = (weights[i] * np.abs(Xab[:, off[i]:off[i + 1]]).sum(axis=1)) ** (p / i)
    S = np.zeros((n + 1, m + 1, m + 1))
    for b in range(1, m + 1):
        for a in range(b):
            S[1:, a, b] = np.max(S[1:, a, a:b] + cost[1:, a:b, b], axis=1)
    return S


def pvar_sums_all(segX, d: int, n: int, p: float, weights=None) -> np.ndarray:
    """Same suprema for every grid sub-interval ``[a, b]``; shape (n+1, m+1, m+1)."""
    segX = np.ascontiguousarray(segX, dtype=float)
    w = np.ones(n + 1) if weights is None else np.asarray(weights, dtype=float)
    off = grade_offsets(d, n)
    return pick(_pvar_all_nb, _pvar_all_np)(segX, off, n, float(p), w)


# ------------------------------------------------------ Lipschitz remainders

_NORMS = {"l1": 0, "linf": 1, "l2": 2}


@njit
def _vec_norm_nb(v, kind):
    s = 0.0
    if kind == 0:
        for q in range(v.shape[0]):
            s += abs(v[q])
        return s
    if kind == 1:
        for q in range(v.shape[0]):
            a = abs(v[q])
            if a > s:
                s = a
        return s
    for q in range(v.shape[0]):
        s += v[q] * v[q]
    return np.sqrt(s)


@njit
def _multi_norm_nb(R, kind):
    # R has shape (out, cols); cols enumerate the multilinear input slots
    e, c = R.shape
    if kind == 0:
        best = 0.0
        for j in range(c):
            s = 0.0
            for o in range(e):
                s += abs(R[o, j])
            if s > best:
                best = s
        return best
    if kind == 1:
        best = 0.0
        for o in range(e):
            s = 0.0
            for j in range(c):
                s += abs(R[o, j])
            if s > best:
                best = s
        return best
    s = 0.0
    for o in range(e):
        for j in range(c):
            s += R[o, j] * R[o, j]
    return np.sqrt(s)


@njit
def _lip_rem_nb(pts, f0, f1, f2, k, gamma, kind, S, d):
    N = pts.shape[0]
    e = f0.shape[1]
    out = np.zeros(k + 1)
    h = np.zeros(d)
    R0 = np.zeros((e, S))
    R1 = np.zeros((e, S * d))
    R2 = np.zeros((e, S * d * d))
    for a in range(N):
        for b in range(N):
            if a == b:
                continue
            for q in range(d):
                h[q] = pts[b, q] - pts[a, q]
            r = _vec_norm_nb(h, kind)
            if r == 0.0:
                continue
            # grade 0 remainder
            for o in range(e):
                for s in range(S):
                    v = f0[b, o, s] - f0[a, o, s]
                    if k >= 1:
                        for u in range(d):
                            v -= f1[a, o, s * d + u] * h[u]
                    if k >= 2:
                        for u in range(d):
                            for w in range(d):
                                v -= 0.5 * f2[a, o, (s * d + u) * d + w] * h[u] * h[w]
                    R0[o, s] = v
            ratio = _multi_norm_nb(R0, kind) / r ** gamma
            if ratio > out[0]:
                out[0] = ratio
            if k >= 1:
                for o in range(e):
                    for c in range(S * d):
                        v = f1[b, o, c] - f1[a, o, c]
                        if k >= 2:
                            for w in range(d):
                                v -= f2[a, o, c * d + w] * h[w]
                        R1[o, c] = v
                ratio = _multi_norm_nb(R1, kind) / r ** (gamma - 1.0)
                if ratio > out[1]:
                    out[1] = ratio
            if k >= 2:
                for o in range(e):
                    for c in range(S * d * d):
                        R2[o, c] = f2[b, o, c] - f2[a, o, c]
                ratio = _multi_norm_nb(R2, kind) / r ** (gamma - 2.0)
                if ratio > out[2]:
                    out[2] = ratio
    return out


def _multi_norm_np(R, kind):
    # R: (M, out, cols)
    if kind == 0:
        return np.abs(R).sum(axis=1).max(axis=1)
    if kind == 1:
        return np.abs(R).sum(axis=2).max(axis=1)
    return np.sqrt((R ** 2).sum(axis=(1, 2)))


def _vec_norm_np(H, kind):
    if kind == 0:
        return np.abs(H).sum(axis=1)
    if kind == 1:
        return np.abs(H).max(axis=1)
    return np.sqrt((H ** 2).sum(axis=1))


def _lip_rem_np(pts, f0, f1, f2, k, gamma, kind, S, d):
    N = pts.shape[0]
    e = f0.shape[1]
    out = np.zeros(k + 1)
    for a in range(N):
        H = pts - pts[a]
        r = _vec_norm_np(H, kind)
        mask = r > 0
        if not mask.any():
            continue
        H = H[mask]
        r = r[mask]
        R0 = f0[mask] - f0[a]
        if k >= 1:
            R0 = R0 - np.einsum("osu,mu->mos", f1[a].reshape(e, S, d), H)
        if k >= 2:
            R0 = R0 - 0.5 * np.einsum("osuw,mu,mw->mos", f2[a].reshape(e, S, d, d), H, H)
        out[0] = max(out[0], np.max(_multi_norm_np(R0, kind) / r ** gamma))
        if k >= 1:
            R1 = f1[mask] - f1[a]
            if k >= 2:
                R1 = R1 - np.einsum("ocw,mw->moc", f2[a].reshape(e, S * d, d), H)
            out[1] = max(out[1], np.max(_multi_norm_np(R1, kind) / r ** (gamma - 1.0)))
        if k >= 2:
            R2 = f2[mask] - f2[a]
            out[2] = max(out[2], np.max(_multi_norm_np(R2, kind) / r ** (gamma - 2.0)))
    return out


def lip_remainder_max(pts, comps, gamma: float, norm: str = "l1", slots: int = 1) -> np.ndarray:
    """Largest ratio ``|R_j(x, y)| / |x - y|^(gamma - j)`` over ordered sample pairs.

    ``comps[j]`` has shape ``(N, e, slots * d**j)``: output index, then the
    extra linear slot (for map-valued jets) followed by ``j`` direction slots.
    """
    pts = np.ascontiguousarray(pts, dtype=float)
    N, d = pts.shape
    k = len(comps) - 1
    if k > 2:
        raise ValueError("jets of order above two are not supported")
    f0 = np.ascontiguousarray(comps[0], dtype=float)
    e = f0.shape[1]
    f1 = np.ascontiguousarray(comps[1], dtype=float) if k >= 1 else np.zeros((N, e, slots * d))
    f2 = np.ascontiguousarray(comps[2], dtype=float) if k >= 2 else np.zeros((N, e, slots * d * d))
    return pick(_lip_rem_nb, _lip_rem_np)(pts, f0, f1, f2, k, float(gamma), _NORMS[norm], slots, d)


def multi_norm(R: np.ndarray, norm: str = "l1") -> np.ndarray:
    """Norms of a stack ``(M, out, cols)`` of multilinear coefficient arrays."""
    return _multi_norm_np(np.asarray(R, dtype=float), _NORMS[norm])


def vec_norm(H: np.ndarray, norm: str = "l1") -> np.ndarray:
    return _vec_norm_np(np.atleast_2d(np.asarray(H, dtype=float)), _NORMS[norm])


# handles for tests and benchmarks
NUMBA_KERNELS = {
    "batch_mul": _batch_mul_nb,
    "prefix": _prefix_nb,
    "pvar": _pvar_nb,
    "pvar_all": _pvar_all_nb,
    "lip_rem": _lip_rem_nb,
}
NUMPY_KERNELS = {
    "batch_mul": _batch_mul_np,
    "prefix": _prefix_np,
    "pvar": _pvar_np,
    "pvar_all": _pvar_all_np,
    "lip_rem": _lip_rem_np,
}
