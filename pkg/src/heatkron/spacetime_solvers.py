"""Direct solvers for ``(A_t (x) M_s + M_t (x) A_s) u = f``.

Every method factors the system as
``(Ut~ (x) Us~)^{-1} T (U_t (x) U_s)^{-1}`` with the space part from fast
diagonalization, and differs only in the time factors and in how the
blocks of the shuffled ``T`` are solved:

``DT``  generalized eigendecomposition of ``(A_t, M_t)``; ``T`` is diagonal.
``LU``  no time transform; banded LU of ``A_t + lam M_t`` per space eigenvalue.
``AR``  M-orthonormal time basis making ``U_t^* A_t U_t`` an arrowhead matrix.
``LR``  M-orthonormal eigenbasis of a skew part of ``A_t`` plus a
        Sherman-Morrison-Woodbury correction for the rank ``r`` remainder.

A plan is built once (:func:`plan`) and applied to any number of right-hand
sides (:func:`apply`).  Blocks are solved together as one batched array
operation over the space eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .eigensolvers import SpaceDiagonalization, nonsym_geig, skew_geig
from .errors import (
    DimensionError,
    HeatKronError,
    PositivityError,
    SingularBlockError,
)
from .tensor_core import (
    BandedMatrix,
    KronOperator,
    KronSum,
    ShufflePermutation,
    add_flops,
    count_flops,
    lu_factor_batched,
    lu_solve_batched,
    shuffle_apply,
)

__all__ = [
    "METHODS",
    "ArrowheadBlock",
    "SolverPlan",
    "plan",
    "apply",
    "solve",
    "smw_block_solve",
    "arrowhead_block_solve",
    "low_rank_split",
    "time_basis",
    "heat_operator",
    "residual",
]

METHODS = ("DT", "LU", "AR", "LR")
SINGULAR_TOL = 1e-14
IMAG_RTOL = 1e-8
ARROW_RTOL = 1e-10


# ---------------------------------------------------------------------------
# time parts of the plans


@dataclass(frozen=True)
class DTTime:
    U: np.ndarray
    U_tilde: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class LUTime:
    lu: np.ndarray  # (N_s, lower + upper + 1, N_t) packed factors
    lower: int
    upper: int


@dataclass(frozen=True)
class ARTime:
    U: np.ndarray
    delta: np.ndarray  # full U^* A_t U^*, kept for diagnostics
    deltas: np.ndarray
    g: np.ndarray
    sigma: complex
    s: np.ndarray  # Schur scalar per space eigenvalue
    rho: float


@dataclass(frozen=True)
class LRTime:
    U: np.ndarray
    lam: np.ndarray
    F_t: np.ndarray  # F^T, (N_t, r)
    G: np.ndarray  # (r, N_t)
    UF: np.ndarray  # U^* F^T
    GU: np.ndarray  # G U
    C: np.ndarray  # (N_s, r, r)
    rank: int


@dataclass(frozen=True)
class SolverPlan:
    method: str
    space: SpaceDiagonalization
    time: object
    n_t: int

    @property
    def n_s(self) -> int:
        return self.space.n

    @property
    def U_t(self):
        return getattr(self.time, "U", None)

    @property
    def U_t_tilde(self):
        if self.method == "LU":
            return None
        if self.method == "DT":
            return self.time.U_tilde
        return self.time.U.conj().T


@dataclass(frozen=True)
class ArrowheadBlock:
    """One block ``Delta_t + lam I`` in arrowhead form, ready to solve."""

    deltas: np.ndarray
    g: np.ndarray
    sigma: complex
    lam: float
    s_lambda: complex

    @classmethod
    def build(cls, deltas, g, sigma, lam) -> "ArrowheadBlock":
        deltas = np.asarray(deltas, dtype=complex)
        g = np.asarray(g, dtype=complex)
        s = _schur(deltas, g, sigma, np.array([lam]))[0]
        return cls(deltas, g, complex(sigma), float(lam), complex(s))

    def matrix(self) -> np.ndarray:
        n = self.deltas.size + 1
        out = np.zeros((n, n), dtype=complex)
        out[np.arange(n - 1), np.arange(n - 1)] = self.deltas + self.lam
        out[:-1, -1] = self.g
        out[-1, :-1] = -self.g.conj()
        out[-1, -1] = self.sigma + self.lam
        return out

    def lu_factors(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit lower factor and arrow-shaped upper factor."""
        n = self.deltas.size + 1
        d = self.deltas + self.lam
        L = np.eye(n, dtype=complex)
        L[-1, :-1] = -self.g.conj() / d
        U = np.zeros((n, n), dtype=complex)
        U[np.arange(n - 1), np.arange(n - 1)] = d
        U[:-1, -1] = self.g
        U[-1, -1] = self.s_lambda
        return L, U


def _schur(deltas, g, sigma, lams) -> np.ndarray:
    denom = deltas[None, :] + np.asarray(lams)[:, None]
    _check_denominators(denom)
    return sigma + lams + np.sum((g.conj() * g)[None, :] / denom, axis=1)


def _check_denominators(denom) -> None:
    if denom.size and np.min(np.abs(denom)) < SINGULAR_TOL:
        raise SingularBlockError("diagonal entry of a transformed block is numerically zero")


# ---------------------------------------------------------------------------
# setup


def _dense(m) -> np.ndarray:
    if isinstance(m, BandedMatrix):
        return m.to_dense()
    return np.asarray(m, dtype=float)


def _check_skew(K, scale, what) -> None:
    if K.size and np.max(np.abs(K + K.T)) > 1e-12 * max(scale, 1.0):
        raise PositivityError(f"{what} is not skew-symmetric; check the time basis ordering")


def _plan_dt(A_t, M_t, lam_s) -> DTTime:
    A, M = _dense(A_t), _dense(M_t)
    geig = nonsym_geig(A, M)
    U = geig.U
    U_tilde = np.linalg.inv(M @ U)
    add_flops("setup_time", 4 * A.shape[0] ** 3)
    return DTTime(U, U_tilde, geig.lam)


def _plan_lu(A_t: BandedMatrix, M_t: BandedMatrix, lam_s) -> LUTime:
    if not isinstance(A_t, BandedMatrix):
        A_t = BandedMatrix.from_dense(A_t, A_t.shape[0] - 1, A_t.shape[0] - 1, check=False)
    if not isinstance(M_t, BandedMatrix):
        M_t = BandedMatrix.from_dense(M_t, M_t.shape[0] - 1, M_t.shape[0] - 1, check=False)
    lower, upper = max(A_t.lower, M_t.lower), max(A_t.upper, M_t.upper)
    a = A_t.padded(lower, upper)
    m = M_t.padded(lower, upper)
    blocks = a[None] + lam_s[:, None, None] * m[None]
    add_flops("setup_time", blocks.size * 2)
    lu = lu_factor_batched(blocks, lower, upper)
    return LUTime(lu, lower, upper)


def _plan_ar(A_t, M_t, lam_s) -> ARTime:
    A, M = _dense(A_t), _dense(M_t)
    n = A.shape[0]
    alpha = A[-1, -1]
    if not alpha > 0:
        raise PositivityError(f"last diagonal entry of A_t is {alpha:.3e}, expected > 0")
    A_in, a = A[:-1, :-1], A[:-1, -1]
    M_in, m, mu = M[:-1, :-1], M[:-1, -1], M[-1, -1]
    _check_skew(A_in, np.abs(A).max(), "leading block of A_t")
    if n > 1:
        w = sla.cho_solve(sla.cho_factor(M_in, lower=True), m)
        schur = mu - m @ w
    else:
        w = np.zeros(0)
        schur = mu
    if not schur > 0:
        raise PositivityError(f"mu - m^T M^-1 m = {schur:.3e}, expected > 0")
    rho = schur ** -0.5
    v = np.r_[-rho * w, rho]
    U = np.zeros((n, n), dtype=complex)
    U[-1, -1] = rho
    U[:-1, -1] = -rho * w
    if n > 1:
        geig = skew_geig(A_in, M_in)
        U[:-1, :-1] = geig.U
        deltas = geig.lam
        g = geig.U.conj().T @ (A[:-1, :] @ v)
    else:
        deltas = np.zeros(0, dtype=complex)
        g = np.zeros(0, dtype=complex)
    sigma = complex(v @ A @ v)
    delta = U.conj().T @ A @ U
    add_flops("setup_time", 6 * n**3)
    mask = np.ones((n, n), dtype=bool)
    mask[np.arange(n), np.arange(n)] = False
    mask[-1, :] = False
    mask[:, -1] = False
    scale = np.linalg.norm(delta)
    if np.any(np.abs(delta[mask]) > ARROW_RTOL * scale):
        raise HeatKronError("transformed time matrix is not an arrowhead matrix")
    s = _schur(deltas, g, sigma, lam_s)
    add_flops("setup_time", 6 * n * lam_s.size)
    return ARTime(U, delta, deltas, g, sigma, s, rho)


def low_rank_split(A_t, rank: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``F^T`` and ``G`` with ``A_t - F^T G`` skew-symmetric.

    Rank 1 removes the last diagonal entry; rank 2 removes the whole last
    row and column.
    """
    A = _dense(A_t)
    n = A.shape[0]
    alpha = A[-1, -1]
    e = np.zeros(n)
    e[-1] = 1.0
    if rank == 1:
        return (alpha * e)[:, None], e[None, :]
    if rank == 2:
        a = A[:-1, -1]
        F_t = np.zeros((n, 2))
        F_t[:-1, 0] = a
        F_t[-1, 0] = alpha
        F_t[-1, 1] = 1.0
        G = np.zeros((2, n))
        G[0, -1] = 1.0
        G[1, :-1] = -a
        return F_t, G
    raise ValueError(f"low-rank split supports rank 1 or 2, got {rank}")


def _plan_lr(A_t, M_t, lam_s, rank: int) -> LRTime:
    A, M = _dense(A_t), _dense(M_t)
    n = A.shape[0]
    F_t, G = low_rank_split(A, rank)
    A_skew = A - F_t @ G
    _check_skew(A_skew, np.abs(A).max(), "A_t minus its low-rank part")
    geig = skew_geig(A_skew, M)
    U, lam = geig.U, geig.lam
    UF = U.conj().T @ F_t
    GU = G @ U
    add_flops("setup_time", 4 * rank * n**2)
    D = lam[None, :] + lam_s[:, None]
    _check_denominators(D)
    K = np.einsum("rj,sj,jq->srq", GU, 1.0 / D, UF)
    K += np.eye(rank)[None]
    try:
        C = np.linalg.inv(K)
    except np.linalg.LinAlgError as exc:
        raise SingularBlockError("capacitance matrix is singular") from exc
    if not np.all(np.isfinite(C)):
        raise SingularBlockError("capacitance matrix is singular")
    add_flops("setup_time", lam_s.size * (2 * rank**2 * n + rank**3))
    return LRTime(U, lam, F_t, G, UF, GU, C, rank)


def time_basis(method: str, A_t, M_t, *, rank: int = 1) -> np.ndarray:
    """Time transform ``U_t`` of a method, independent of the space part."""
    method = method.upper()
    none = np.zeros(0)
    if method == "DT":
        return _plan_dt(A_t, M_t, none).U
    if method == "AR":
        return _plan_ar(A_t, M_t, none).U
    if method == "LR":
        return _plan_lr(A_t, M_t, none, rank).U
    if method == "LU":
        return np.eye(A_t.shape[0])
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def plan(method: str, A_t, M_t, space: SpaceDiagonalization, *, rank: int = 1) -> SolverPlan:
    """Setup phase: build the time factors for ``method`` on top of ``space``.

    ``rank`` selects the low-rank split of the LR method (1 or 2).
    """
    method = method.upper()
    n_t = A_t.shape[0]
    if M_t.shape[0] != n_t:
        raise DimensionError("A_t and M_t must have the same size")
    lam_s = np.asarray(space.lam, dtype=float)
    with count_flops() as inner:
        if method == "DT":
            time = _plan_dt(A_t, M_t, lam_s)
        elif method == "LU":
            time = _plan_lu(A_t, M_t, lam_s)
        elif method == "AR":
            time = _plan_ar(A_t, M_t, lam_s)
        elif method == "LR":
            time = _plan_lr(A_t, M_t, lam_s, rank)
        else:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    for key, n in inner.items():
        add_flops(key, n)
    add_flops("setup", sum(inner.values()))
    return SolverPlan(method, space, time, n_t)


# ---------------------------------------------------------------------------
# block solves


def arrowhead_block_solve(block: ArrowheadBlock, y) -> np.ndarray:
    """Solve ``(Delta_t + lam I) x = y`` with the arrowhead LU factors."""
    y = np.asarray(y)
    if y.shape[-1] != block.deltas.size + 1:
        raise DimensionError("right-hand side does not match the block size")
    return _arrow_solve_batched(
        block.deltas, block.g, np.array([block.lam]), np.array([block.s_lambda]), y[None, :]
    )[0]


def _arrow_solve_batched(deltas, g, lams, s, Y) -> np.ndarray:
    if np.min(np.abs(s)) < SINGULAR_TOL * max(1.0, np.max(np.abs(s))):
        raise SingularBlockError("Schur scalar of an arrowhead block vanishes")
    denom = deltas[None, :] + lams[:, None]
    _check_denominators(denom)
    lead = Y[:, :-1] / denom
    # forward: only the last row of L is nontrivial
    last = Y[:, -1] + lead @ g.conj()
    x_last = last / s
    # backward: leading rows are independent once x_last is known
    X = np.empty(Y.shape, dtype=complex)
    X[:, -1] = x_last
    X[:, :-1] = lead - (x_last[:, None] * g[None, :]) / denom
    add_flops("block_solve", Y.shape[0] * (8 * deltas.size + 2))
    return X


def smw_block_solve(d, UF, GU, y, C=None) -> np.ndarray:
    """Apply ``(diag(d) + UF @ GU)^{-1}`` to ``y`` by Sherman-Morrison-Woodbury.

    ``C`` is the precomputed ``(I_r + GU diag(d)^{-1} UF)^{-1}``; it is formed
    on the fly when omitted.
    """
    d = np.asarray(d)
    UF = np.asarray(UF).reshape(d.size, -1)
    GU = np.asarray(GU).reshape(-1, d.size)
    r = UF.shape[1]
    if np.min(np.abs(d)) < SINGULAR_TOL:
        raise SingularBlockError("diagonal entry of D_lambda is numerically zero")
    if C is None:
        C = np.linalg.inv(np.eye(r) + GU @ (UF / d[:, None])) if r else np.zeros((0, 0))
    return _smw_solve_batched(d[None, :], UF, GU, np.asarray(C)[None], np.asarray(y)[None, :])[0]


def _smw_solve_batched(D, UF, GU, C, Y) -> np.ndarray:
    _check_denominators(D)
    v1 = Y / D
    v2 = v1 @ GU.T
    v3 = np.einsum("sqr,sr->sq", C, v2)
    v4 = v3 @ UF.T
    v5 = v4 / D
    r, n = GU.shape
    add_flops("block_solve", Y.shape[0] * (3 * n + 4 * r * n + 2 * r * r))
    # the correction enters with a minus sign, as in the Woodbury identity
    return v1 - v5


def _solve_blocks(p: SolverPlan, Ybar) -> np.ndarray:
    lam_s = p.space.lam
    t = p.time
    if p.method == "DT":
        lam_t = t.lam
        T = lam_t[None, :] + lam_s[:, None]
        guard = SINGULAR_TOL * (np.abs(lam_t)[None, :] + np.abs(lam_s)[:, None])
        if np.any(np.abs(T) < guard) or np.any(T == 0):
            raise SingularBlockError("eigenvalue collision lam_t = -lam_s in the diagonal T")
        add_flops("block_solve", Ybar.size)
        return Ybar / T
    if p.method == "LU":
        return lu_solve_batched(t.lu, t.lower, t.upper, Ybar)
    if p.method == "AR":
        return _arrow_solve_batched(t.deltas, t.g, lam_s, t.s, Ybar)
    D = t.lam[None, :] + lam_s[:, None]
    return _smw_solve_batched(D, t.UF, t.GU, t.C, Ybar)


# ---------------------------------------------------------------------------
# application


def _transform(x, time_factor, space_factors, n_t) -> np.ndarray:
    """``(time_factor (x) F_d (x) ... (x) F_1) x``; ``None`` means identity in time."""
    shape = [n_t] + [f.shape[1] for f in space_factors]
    t = np.asarray(x).reshape(shape)
    size = t.size
    if time_factor is not None:
        t = np.tensordot(time_factor, t, axes=(1, 0))
        add_flops("transform", 2 * size * n_t)
    for axis, f in enumerate(space_factors, start=1):
        t = np.moveaxis(np.tensordot(f, t, axes=(1, axis)), 0, axis)
        add_flops("transform", 2 * size * f.shape[0])
    return t.reshape(-1)


def apply(p: SolverPlan, f) -> np.ndarray:
    """Application phase: return ``u`` with ``A u = f``."""
    f = np.asarray(f)
    n_t, n_s = p.n_t, p.n_s
    if f.ndim != 1 or f.size != n_t * n_s:
        raise DimensionError(f"right-hand side of size {f.size}, expected {n_t * n_s}")
    Us = p.space.U[::-1]
    y = _transform(f, p.U_t_tilde, [u.T for u in Us], n_t)
    S = ShufflePermutation(n_t, n_s)
    Ybar = shuffle_apply(S, y).reshape(n_s, n_t)
    Z = _solve_blocks(p, Ybar)
    z = shuffle_apply(S, Z.reshape(-1), inverse=True)
    u = _transform(z, p.U_t, list(Us), n_t)
    if np.iscomplexobj(u):
        norm = np.linalg.norm(u)
        if np.linalg.norm(u.imag) > IMAG_RTOL * max(norm, np.finfo(float).tiny):
            raise HeatKronError(
                f"{p.method}: imaginary residue {np.linalg.norm(u.imag) / norm:.2e} in a real solution"
            )
        u = u.real.copy()
    return u


def solve(method: str, A_t, M_t, space: SpaceDiagonalization, f, **options) -> np.ndarray:
    return apply(plan(method, A_t, M_t, space, **options), f)


# ---------------------------------------------------------------------------
# verification utilities


class _MappedHeatOperator:
    def __init__(self, A_t, M_t, A_s, M_s):
        self.A_t, self.M_t, self.A_s, self.M_s = A_t, M_t, A_s, M_s
        self.n_t = A_t.shape[0]
        self.n_s = A_s.shape[0]
        self.shape = (self.n_t * self.n_s,) * 2

    def matvec(self, u):
        U = np.asarray(u).reshape(self.n_t, self.n_s)
        W = _time_apply(self.A_t, (self.M_s @ U.T).T) + _time_apply(self.M_t, (self.A_s @ U.T).T)
        add_flops("kron", 2 * U.size * (self.n_t + self.A_s.nnz / self.n_s + self.M_s.nnz / self.n_s))
        return W.reshape(-1)

    __matmul__ = matvec


def _time_apply(m, X):
    if isinstance(m, BandedMatrix):
        return m.matvec(X)
    return np.asarray(m) @ X


def heat_operator(A_t, M_t, space):
    """Matrix-free ``A_t (x) M_s + M_t (x) A_s``.

    ``space`` is either a sequence of per-direction ``(A_l, M_l)`` pairs
    (direction 0 fastest, Laplacian structure) or an object with sparse
    ``A`` and ``M`` attributes (mapped geometry).
    """
    if hasattr(space, "A") and hasattr(space, "M"):
        return _MappedHeatOperator(A_t, M_t, space.A, space.M)
    pairs = list(space)
    d = len(pairs)
    Ms = [pairs[l][1] for l in reversed(range(d))]
    terms = [(1.0, KronOperator([A_t] + Ms))]
    for j in range(d):
        ks = [pairs[l][0] if l == j else pairs[l][1] for l in reversed(range(d))]
        terms.append((1.0, KronOperator([M_t] + ks)))
    return KronSum(terms)


def residual(A_t, M_t, space, u, f) -> float:
    """``||A u - f|| / ||f||`` without assembling ``A`` (plain norm when f = 0)."""
    op = heat_operator(A_t, M_t, space)
    u, f = np.asarray(u), np.asarray(f)
    if u.shape != f.shape or u.size != op.shape[0]:
        raise DimensionError("u and f must both match the operator size")
    r = np.linalg.norm(op.matvec(u) - f)
    nf = np.linalg.norm(f)
    return float(r / nf) if nf > 0 else float(r)
