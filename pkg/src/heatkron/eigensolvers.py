"""Generalized eigendecompositions of the pencils met by the solvers.

* symmetric / SPD pencils (space directions) give real, M-orthonormal bases;
* skew-symmetric / SPD pencils (time, arrowhead and low-rank methods) give
  complex M-orthonormal bases with purely imaginary eigenvalues;
* general pencils (diagonalization in time) give unit-column bases with no
  orthogonality, possibly badly conditioned.

Eigenvalues are ordered by real part, ties broken by imaginary part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DefectivePencilError, NotPositiveDefiniteError
from .tensor_core import BandedMatrix, KronOperator, add_flops, cond2

__all__ = [
    "GeigResult",
    "SpaceDiagonalization",
    "DEFECTIVE_COND",
    "sym_pd_geig",
    "skew_geig",
    "nonsym_geig",
    "fast_diag_space",
    "laplacian_terms",
]

DEFECTIVE_COND = 1e15


@dataclass(frozen=True)
class GeigResult:
    """``A U = M U diag(lam)``; ``normalization`` is ``"M-orthonormal"`` or ``"none"``."""

    U: np.ndarray
    lam: np.ndarray
    normalization: str


def _dense(m) -> np.ndarray:
    if isinstance(m, BandedMatrix):
        return m.to_dense()
    if hasattr(m, "toarray"):
        return m.toarray()
    return np.asarray(m, dtype=float)


def _order(lam) -> np.ndarray:
    lam = np.asarray(lam)
    return np.lexsort((lam.imag, lam.real)) if np.iscomplexobj(lam) else np.argsort(lam, kind="stable")


def _cholesky(M) -> np.ndarray:
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("mass matrix is not positive definite") from exc


def _whiten(A, M):
    # L^{-1} A L^{-T} with M = L L^T
    L = _cholesky(M)
    X = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, X.T, lower=True).T
    return L, C


def sym_pd_geig(A, M) -> GeigResult:
    """Pencil with ``A`` symmetric and ``M`` SPD; ``U^T M U = I``."""
    A, M = _dense(A), _dense(M)
    n = A.shape[0]
    L, C = _whiten(A, M)
    C = (C + C.T) / 2
    lam, V = np.linalg.eigh(C)
    U = sla.solve_triangular(L.T, V, lower=False)
    add_flops("eig", 12 * n**3)
    return GeigResult(U, lam, "M-orthonormal")


def skew_geig(A, M) -> GeigResult:
    """Pencil with ``A`` skew-symmetric and ``M`` SPD; ``U^* M U = I``.

    After whitening, ``K = L^{-1} A L^{-T}`` is real skew, so ``iK`` is
    Hermitian with real spectrum ``w`` and ``K`` has eigenvalues ``-i w``.
    """
    A, M = _dense(A), _dense(M)
    n = A.shape[0]
    L, K = _whiten(A, M)
    K = (K - K.T) / 2
    w, V = np.linalg.eigh(1j * K)
    lam = -1j * w
    U = sla.solve_triangular(L.T, V, lower=False)
    order = _order(lam)
    add_flops("eig", 12 * n**3)
    return GeigResult(U[:, order], lam[order], "M-orthonormal")


def nonsym_geig(A, M) -> GeigResult:
    """General pencil through the standard problem ``M^{-1} A``.

    Columns of ``U`` have unit 2-norm.  Raises :class:`DefectivePencilError`
    when the eigenvector matrix is numerically singular.
    """
    A, M = _dense(A), _dense(M)
    n = A.shape[0]
    lam, U = np.linalg.eig(np.linalg.solve(M, A))
    U = U / np.linalg.norm(U, axis=0)
    order = _order(lam)
    lam, U = lam[order], U[:, order]
    add_flops("eig", 25 * n**3)
    kappa = cond2(U)
    if not math.isfinite(kappa) or kappa > DEFECTIVE_COND:
        raise DefectivePencilError(kappa)
    return GeigResult(U, lam, "none")


@dataclass(frozen=True)
class SpaceDiagonalization:
    """Per-direction eigenbases and the combined space eigenvalues.

    ``U[l]`` belongs to direction ``l`` (direction 0 varies fastest), so the
    full basis is ``U[d-1] (x) ... (x) U[0]``.
    """

    U: tuple
    lam: np.ndarray
    sizes: tuple

    @property
    def n(self) -> int:
        return self.lam.size

    @property
    def dim(self) -> int:
        return len(self.U)

    def basis(self) -> KronOperator:
        return KronOperator(self.U[::-1])

    def basis_transposed(self) -> KronOperator:
        return KronOperator([u.T for u in self.U[::-1]])


def laplacian_terms(d: int) -> list[tuple[float, tuple[str, ...]]]:
    """Terms of the Laplacian: direction ``j`` stiffness, mass elsewhere."""
    return [(1.0, tuple("A" if l == j else "M" for l in range(d))) for j in range(d)]


def fast_diag_space(direction_pairs: Sequence, terms=None) -> SpaceDiagonalization:
    """Diagonalize ``sum_j c_j K_{j,d} (x) ... (x) K_{j,1}`` against ``M_d (x) ... (x) M_1``.

    ``direction_pairs[l] = (A_l, M_l)``; each term is ``(c_j, kinds)`` with
    ``kinds[l]`` in ``{"A", "M"}``.  Defaults to the Laplacian.
    """
    d = len(direction_pairs)
    terms = laplacian_terms(d) if terms is None else terms
    results = [sym_pd_geig(A, M) for A, M in direction_pairs]
    sizes = tuple(r.lam.size for r in results)
    lam = np.zeros(math.prod(sizes))
    for c, kinds in terms:
        if len(kinds) != d:
            raise ValueError(f"term {kinds} does not have {d} directions")
        diag = np.ones(1)
        for l in reversed(range(d)):
            if kinds[l] == "A":
                diag = np.kron(diag, results[l].lam)
            elif kinds[l] == "M":
                diag = np.kron(diag, np.ones(sizes[l]))
            else:
                raise ValueError(f"unknown factor kind {kinds[l]!r}")
        lam += c * diag
    return SpaceDiagonalization(tuple(r.U for r in results), lam, sizes)
