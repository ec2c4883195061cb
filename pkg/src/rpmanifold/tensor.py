"""Truncated tensor algebra T^(n)(R^d).

Coefficients are stored flat, grade by grade. Inside grade ``g`` the word
``(i1, ..., ig)`` sits at offset ``i1*d**(g-1) + ... + ig``, which is the
row-major ravel of a ``(d,)*g`` array.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import CapacityError, DomainError, ParseError, ShapeError

MAX_LEVEL = 6
MAX_DIM = 8


def check_capacity(dim: int, level: int) -> None:
    if dim < 1 or level < 0:
        raise ShapeError(f"invalid dimension {dim} or level {level}")
    if level > MAX_LEVEL or dim > MAX_DIM:
        raise CapacityError(f"T^({level})(R^{dim}) exceeds the supported envelope "
                            f"(level <= {MAX_LEVEL}, dim <= {MAX_DIM})")


def tensor_size(dim: int, level: int) -> int:
    return int(K.grade_offsets(dim, level)[-1])


@dataclass
class TruncatedTensor:
    dim: int
    level: int
    coeffs: np.ndarray

    def __post_init__(self):
        check_capacity(self.dim, self.level)
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if self.coeffs.size != tensor_size(self.dim, self.level):
            raise ShapeError("coefficient vector has the wrong length")

    # construction
    @classmethod
    def zeros(cls, dim: int, level: int) -> "TruncatedTensor":
        check_capacity(dim, level)
        return cls(dim, level, np.zeros(tensor_size(dim, level)))

    @classmethod
    def one(cls, dim: int, level: int) -> "TruncatedTensor":
        t = cls.zeros(dim, level)
        t.coeffs[0] = 1.0
        return t

    @classmethod
    def from_grades(cls, grades, dim: int | None = None) -> "TruncatedTensor":
        grades = [np.asarray(g, dtype=float) for g in grades]
        level = len(grades) - 1
        if dim is None:
            dim = grades[1].shape[0] if level >= 1 else 1
        check_capacity(dim, level)
        parts = []
        for g, arr in enumerate(grades):
            if arr.size != dim ** g:
                raise ShapeError(f"grade {g} has {arr.size} entries, expected {dim ** g}")
            parts.append(arr.reshape(-1))
        return cls(dim, level, np.concatenate(parts))

    @classmethod
    def from_vector(cls, v, level: int) -> "TruncatedTensor":
        v = np.asarray(v, dtype=float).reshape(-1)
        t = cls.zeros(v.size, level)
        if level >= 1:
            t.coeffs[1:1 + v.size] = v
        return t

    # access
    @property
    def offsets(self) -> np.ndarray:
        return K.grade_offsets(self.dim, self.level)

    def grade(self, g: int) -> np.ndarray:
        off = self.offsets
        return self.coeffs[off[g]:off[g + 1]].reshape((self.dim,) * g)

    def grades(self) -> list[np.ndarray]:
        return [self.grade(g) for g in range(self.level + 1)]

    def norm(self, g: int) -> float:
        """l1 norm of the grade-g coefficients (projective norm for an l1 base)."""
        return float(np.abs(self.grade(g)).sum())

    def grade_norms(self) -> np.ndarray:
        return np.array([self.norm(g) for g in range(self.level + 1)])

    def copy(self) -> "TruncatedTensor":
        return TruncatedTensor(self.dim, self.level, self.coeffs.copy())

    def truncate(self, level: int) -> "TruncatedTensor":
        if level > self.level:
            raise ShapeError("cannot truncate to a higher level")
        return TruncatedTensor(self.dim, level, self.coeffs[:tensor_size(self.dim, level)].copy())

    # algebra
    def _check(self, other: "TruncatedTensor") -> None:
        if self.dim != other.dim or self.level != other.level:
            raise ShapeError(f"mismatch: T^({self.level})(R^{self.dim}) vs "
                             f"T^({other.level})(R^{other.dim})")

    def __add__(self, other):
        self._check(other)
        return TruncatedTensor(self.dim, self.level, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return TruncatedTensor(self.dim, self.level, self.coeffs - other.coeffs)

    def __neg__(self):
        return TruncatedTensor(self.dim, self.level, -self.coeffs)

    def scale(self, c: float) -> "TruncatedTensor":
        return TruncatedTensor(self.dim, self.level, c * self.coeffs)

    def __rmul__(self, c):
        return self.scale(float(c))

    def __mul__(self, other):
        if isinstance(other, TruncatedTensor):
            return tensor_mul(self, other)
        return self.scale(float(other))

    def allclose(self, other: "TruncatedTensor", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.max(np.abs(self.coeffs - other.coeffs)) <= atol)

    # serialisation
    def to_json_obj(self) -> dict:
        return {"dim": self.dim, "level": self.level,
                "grades": [self.grade(g).reshape(-1).tolist() for g in range(self.level + 1)]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TruncatedTensor":
        try:
            dim, level, grades = int(obj["dim"]), int(obj["level"]), obj["grades"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad tensor object: {exc}") from exc
        if len(grades) != level + 1:
            raise ParseError("number of grades does not match level")
        return cls.from_grades(grades, dim)

    @classmethod
    def from_json(cls, text: str) -> "TruncatedTensor":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from exc
        return cls.from_json_obj(obj)


def tensor_mul(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Truncated product ``(a x b)^g = sum_{i+j=g} a^i x b^j``."""
    a._check(b)
    out = K.batch_mul(a.coeffs[None, :], b.coeffs[None, :], a.dim, a.level)[0]
    return TruncatedTensor(a.dim, a.level, out)


def tensor_exp(x: TruncatedTensor) -> TruncatedTensor:
    if abs(x.coeffs[0]) > 0.0:
        raise DomainError("exp requires a vanishing scalar part")
    return TruncatedTensor(x.dim, x.level, K.batch_exp(x.coeffs[None, :], x.dim, x.level)[0])


def tensor_log(g: TruncatedTensor) -> TruncatedTensor:
    if abs(g.coeffs[0] - 1.0) > 1e-14:
        raise DomainError("log requires scalar part equal to one")
    return TruncatedTensor(g.dim, g.level, K.batch_log(g.coeffs[None, :], g.dim, g.level)[0])


def tensor_inverse(g: TruncatedTensor) -> TruncatedTensor:
    if abs(g.coeffs[0] - 1.0) > 1e-14:
        raise DomainError("inverse implemented for scalar part one")
    return TruncatedTensor(g.dim, g.level, K.batch_inverse(g.coeffs[None, :], g.dim, g.level)[0])


def project_indices(dim: int, level: int, keep) -> np.ndarray:
    """Flat positions of the words using only letters in ``keep``, in order.

    Used to restrict a tensor over ``R^dim`` to the coordinate subspace
    spanned by ``keep``.
    """
    keep = np.asarray(keep, dtype=np.int64)
    off = K.grade_offsets(dim, level)
    idx = [np.array([0], dtype=np.int64)]
    for g in range(1, level + 1):
        words = np.array(np.meshgrid(*([keep] * g), indexing="ij")).reshape(g, -1)
        flat = np.zeros(words.shape[1], dtype=np.int64)
        for r in range(g):
            flat = flat * dim + words[r]
        idx.append(off[g] + flat)
    return np.concatenate(idx)


def embed_indices(dim_small: int, dim_big: int, level: int, letters) -> np.ndarray:
    """Flat positions in T(R^dim_big) receiving the coefficients of T(R^dim_small)
    when letter ``a`` of the small space is mapped to ``letters[a]``."""
    return project_indices(dim_big, level, letters)
