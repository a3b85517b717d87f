"""Matrix containers and Kronecker-structured kernels.

Vectors living on a tensor product space are stored with the last Kronecker
factor varying fastest.  For the space-time system ``A_t (x) M_s`` this
means time is the outer index: entry ``k * n_s + i`` is time function ``k``
and space function ``i``.

Dense matrices are plain :class:`numpy.ndarray` objects.  Banded matrices use
LAPACK-style diagonal storage (see :class:`BandedMatrix`).
"""

from __future__ import annotations

import math
from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from functools import reduce
from typing import Iterator, Sequence

import numpy as np

from .errors import BandStructureError, DimensionError, SingularFactorizationError

__all__ = [
    "BandedMatrix",
    "KronOperator",
    "KronSum",
    "ShufflePermutation",
    "kron_matvec",
    "shuffle_apply",
    "banded_lu_factor",
    "banded_lu_solve",
    "lu_factor_batched",
    "lu_solve_batched",
    "cond2",
    "count_flops",
    "add_flops",
    "write_matrix_market",
]

PIVOT_RTOL = 1e-14

# ---------------------------------------------------------------------------
# operation counters

_COUNTER: ContextVar[Counter | None] = ContextVar("heatkron_flop_counter", default=None)


@contextmanager
def count_flops() -> Iterator[Counter]:
    """Collect modelled floating point operation counts by category.

    Counting is off unless this context manager is active, so library code
    pays nothing in the normal path.  The counter is context-local.
    """
    counts: Counter = Counter()
    token = _COUNTER.set(counts)
    try:
        yield counts
    finally:
        _COUNTER.reset(token)


def add_flops(category: str, n: float) -> None:
    counts = _COUNTER.get()
    if counts is not None:
        counts[category] += int(n)


# ---------------------------------------------------------------------------
# banded storage


@dataclass(frozen=True)
class BandedMatrix:
    """Square matrix stored by diagonals.

    ``data[upper + i - j, j] == a[i, j]`` for ``-upper <= i - j <= lower``;
    slots of ``data`` that fall outside the matrix are kept at zero.
    """

    data: np.ndarray
    lower: int
    upper: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] != self.lower + self.upper + 1:
            raise DimensionError(
                f"band storage of shape {data.shape} does not match bands "
                f"({self.lower}, {self.upper})"
            )
        n = data.shape[1]
        if n and (self.lower >= n and self.lower > 0 or self.upper >= n and self.upper > 0):
            raise DimensionError("band counts must be smaller than the matrix size")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def dtype(self):
        return self.data.dtype

    @classmethod
    def from_dense(cls, a, lower: int, upper: int, check: bool = True) -> "BandedMatrix":
        a = np.asarray(a)
        n = a.shape[0]
        if a.ndim != 2 or a.shape[1] != n:
            raise DimensionError("banded matrices must be square")
        lower = min(lower, max(n - 1, 0))
        upper = min(upper, max(n - 1, 0))
        if check:
            i, j = np.indices(a.shape)
            outside = (i - j > lower) | (j - i > upper)
            if np.any(a[outside] != 0):
                raise BandStructureError(
                    f"matrix has nonzeros outside bands ({lower}, {upper})"
                )
        data = np.zeros((lower + upper + 1, n), dtype=a.dtype)
        for r in range(lower + upper + 1):
            off = upper - r  # j - i
            if off >= 0:
                data[r, off:] = np.diagonal(a, off)
            else:
                data[r, : n + off] = np.diagonal(a, off)
        return cls(data, lower, upper)

    @classmethod
    def identity(cls, n: int) -> "BandedMatrix":
        return cls(np.ones((1, n)), 0, 0)

    def to_dense(self) -> np.ndarray:
        n = self.n
        a = np.zeros((n, n), dtype=self.data.dtype)
        for r in range(self.lower + self.upper + 1):
            off = self.upper - r
            if off >= 0:
                idx = np.arange(n - off)
                a[idx, idx + off] = self.data[r, off:]
            else:
                idx = np.arange(n + off)
                a[idx - off, idx] = self.data[r, : n + off]
        return a

    def padded(self, lower: int, upper: int) -> np.ndarray:
        """Band storage widened to at least ``(lower, upper)`` bands."""
        lower, upper = max(lower, self.lower), max(upper, self.upper)
        out = np.zeros((lower + upper + 1, self.n), dtype=self.data.dtype)
        start = upper - self.upper
        out[start : start + self.data.shape[0]] = self.data
        return out

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise DimensionError(f"expected length {self.n}, got {x.shape[0]}")
        n = self.n
        trail = (1,) * (x.ndim - 1)
        y = np.zeros(x.shape, dtype=np.result_type(self.data, x))
        for r in range(self.lower + self.upper + 1):
            off = self.upper - r
            if off >= 0:
                y[: n - off] += self.data[r, off:].reshape(-1, *trail) * x[off:]
            else:
                y[-off:] += self.data[r, : n + off].reshape(-1, *trail) * x[: n + off]
        return y

    def __matmul__(self, x):
        return self.matvec(x)


def _as_dense(m) -> np.ndarray:
    if isinstance(m, BandedMatrix):
        return m.to_dense()
    if hasattr(m, "toarray"):
        return m.toarray()
    return np.asarray(m)


# ---------------------------------------------------------------------------
# Kronecker products


@dataclass(frozen=True)
class KronOperator:
    """Lazy ``F_0 (x) F_1 (x) ... (x) F_{d-1}``; the last factor is fastest."""

    factors: tuple

    def __init__(self, factors: Sequence):
        object.__setattr__(self, "factors", tuple(_as_dense(f) for f in factors))

    @property
    def shape(self) -> tuple[int, int]:
        rows = math.prod(f.shape[0] for f in self.factors)
        cols = math.prod(f.shape[1] for f in self.factors)
        return (rows, cols)

    def matvec(self, x) -> np.ndarray:
        return kron_matvec(self, x)

    def __matmul__(self, x):
        return kron_matvec(self, x)

    def to_dense(self) -> np.ndarray:
        return reduce(np.kron, self.factors)


@dataclass(frozen=True)
class KronSum:
    """Linear combination ``sum_j c_j K_j`` of Kronecker operators."""

    terms: tuple

    def __init__(self, terms: Sequence[tuple[float, KronOperator]]):
        object.__setattr__(self, "terms", tuple((c, k) for c, k in terms))

    @property
    def shape(self):
        return self.terms[0][1].shape

    def matvec(self, x) -> np.ndarray:
        out = None
        for c, k in self.terms:
            y = c * kron_matvec(k, x)
            out = y if out is None else out + y
        return out

    def __matmul__(self, x):
        return self.matvec(x)

    def to_dense(self) -> np.ndarray:
        return sum(c * k.to_dense() for c, k in self.terms)


def kron_matvec(op: KronOperator, x) -> np.ndarray:
    """Apply a Kronecker product to ``x`` one mode at a time."""
    factors = op.factors if isinstance(op, KronOperator) else tuple(_as_dense(f) for f in op)
    x = np.asarray(x)
    cols = [f.shape[1] for f in factors]
    if x.ndim != 1 or x.size != math.prod(cols):
        raise DimensionError(f"vector of size {x.size} does not match factor columns {cols}")
    t = x.reshape(cols)
    size = x.size
    for axis, f in enumerate(factors):
        t = np.moveaxis(np.tensordot(f, t, axes=(1, axis)), 0, axis)
        add_flops("kron", 2 * size * f.shape[0])
        size = size // f.shape[1] * f.shape[0]
    return t.reshape(-1)


# ---------------------------------------------------------------------------
# perfect shuffle


@dataclass(frozen=True)
class ShufflePermutation:
    """Index map swapping the two slots of a two-factor tensor product.

    ``shuffle_apply(S, x)`` takes a vector ordered time-outer (``k * n_s + i``)
    to the space-outer order (``i * n_t + k``).
    """

    n_t: int
    n_s: int

    @property
    def index(self) -> np.ndarray:
        # gather map: (S x)[i * n_t + k] = x[k * n_s + i]
        return np.arange(self.n_t * self.n_s).reshape(self.n_t, self.n_s).T.reshape(-1)

    @property
    def size(self) -> int:
        return self.n_t * self.n_s

    def transposed(self) -> "ShufflePermutation":
        return ShufflePermutation(self.n_s, self.n_t)


def shuffle_apply(perm: ShufflePermutation, x, inverse: bool = False) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != perm.size:
        raise DimensionError(f"expected length {perm.size}, got {x.shape[0]}")
    if inverse:
        return x[perm.transposed().index]
    return x[perm.index]


# ---------------------------------------------------------------------------
# banded LU without pivoting


def lu_factor_batched(ab, lower: int, upper: int, scale=None) -> np.ndarray:
    """In-place-style LU of a stack of band-stored matrices, no pivoting.

    ``ab`` has shape ``(..., lower + upper + 1, n)``.  The result holds the
    unit lower factor's multipliers below row ``upper`` and ``U`` in rows
    ``0..upper``.  ``scale`` (per batch entry) sets the near-zero pivot
    threshold; it defaults to the max-abs entry of each matrix.
    """
    ab = np.array(ab, copy=True)
    n = ab.shape[-1]
    batch_shape = ab.shape[:-2]
    if scale is None:
        scale = np.abs(ab).max(axis=(-2, -1)) if ab.size else 0.0
    tol = PIVOT_RTOL * np.asarray(scale)
    nbatch = math.prod(batch_shape)
    for k in range(n):
        piv = ab[..., upper, k]
        bad = np.abs(piv) <= tol
        if np.any(bad):
            if batch_shape:
                where = np.unravel_index(np.argmax(bad), batch_shape)
                batch = int(where[0]) if len(where) == 1 else tuple(int(w) for w in where)
                raise SingularFactorizationError(k, float(abs(piv[where])), batch=batch)
            raise SingularFactorizationError(k, float(abs(piv)))
        m = min(lower, n - 1 - k)
        if m == 0:
            continue
        ab[..., upper + 1 : upper + 1 + m, k] /= piv[..., None]
        mult = ab[..., upper + 1 : upper + 1 + m, k]
        ncol = min(upper, n - 1 - k)
        for j in range(k + 1, k + ncol + 1):
            ukj = ab[..., upper + k - j, j]
            ab[..., upper + k + 1 - j : upper + k + 1 - j + m, j] -= mult * ukj[..., None]
        add_flops("lu_setup", nbatch * (m + 2 * m * ncol))
    return ab


def lu_solve_batched(lu, lower: int, upper: int, b) -> np.ndarray:
    """Solve with factors from :func:`lu_factor_batched`; ``b`` is ``(..., n)``."""
    n = lu.shape[-1]
    x = np.array(b, dtype=np.result_type(lu, b), copy=True)
    if x.shape[-1] != n:
        raise DimensionError(f"expected trailing length {n}, got {x.shape[-1]}")
    nbatch = math.prod(x.shape[:-1])
    flops = 0
    for i in range(1, n):
        js = np.arange(max(0, i - lower), i)
        coef = lu[..., upper + i - js, js]
        x[..., i] -= np.sum(coef * x[..., js], axis=-1)
        flops += 2 * js.size
    for i in range(n - 1, -1, -1):
        js = np.arange(i + 1, min(n, i + upper + 1))
        if js.size:
            coef = lu[..., upper + i - js, js]
            x[..., i] -= np.sum(coef * x[..., js], axis=-1)
        x[..., i] /= lu[..., upper, i]
        flops += 2 * js.size + 1
    add_flops("block_solve", nbatch * flops)
    return x


def banded_lu_factor(m: BandedMatrix) -> tuple[BandedMatrix, BandedMatrix]:
    """LU factors of a banded matrix, computed without row exchanges.

    Raises :class:`SingularFactorizationError` carrying the pivot index when a
    pivot falls below ``1e-14 * max|m|``.
    """
    lu = lu_factor_batched(m.data, m.lower, m.upper)
    n = m.n
    ldata = np.zeros((m.lower + 1, n), dtype=lu.dtype)
    ldata[0] = 1.0
    ldata[1:] = lu[m.upper + 1 :]
    udata = lu[: m.upper + 1].copy()
    return BandedMatrix(ldata, m.lower, 0), BandedMatrix(udata, 0, m.upper)


def banded_lu_solve(L: BandedMatrix, U: BandedMatrix, b) -> np.ndarray:
    b = np.asarray(b)
    if b.shape[0] != L.n or L.n != U.n:
        raise DimensionError(f"expected length {L.n}, got {b.shape[0]}")
    packed = np.concatenate([U.data, L.data[1:]], axis=0)
    return lu_solve_batched(packed, L.lower, U.upper, b)


# ---------------------------------------------------------------------------
# diagnostics


def cond2(m) -> float:
    """Spectral condition number from the full set of singular values."""
    m = _as_dense(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError("cond2 needs a square matrix")
    if not np.all(np.isfinite(m)):
        return math.inf
    s = np.linalg.svd(m, compute_uv=False)
    if s[-1] == 0 or s[-1] <= s[0] * np.finfo(float).eps * 1e-2:
        return math.inf
    return float(s[0] / s[-1])


def write_matrix_market(path, m) -> None:
    """Dump a real matrix in Matrix Market coordinate format (debug aid)."""
    a = _as_dense(m)
    rows, cols = np.nonzero(a)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{a.shape[0]} {a.shape[1]} {rows.size}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i + 1} {j + 1} {float(np.real(a[i, j])):.17g}\n")
