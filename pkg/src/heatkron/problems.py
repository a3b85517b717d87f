"""Space-time heat problems on Cartesian domains."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .eigensolvers import SpaceDiagonalization, fast_diag_space
from .spline_discretization import (
    SplineSpace,
    TimePartition,
    assemble_1d,
    fd_time_operator,
    load_vector,
)
from .tensor_core import BandedMatrix

__all__ = [
    "SpaceTimeProblem",
    "galerkin_problem",
    "fd_problem",
    "fd_laplacian_1d",
    "implicit_euler",
    "time_matrices",
    "dense_system",
]


@dataclass(frozen=True)
class SpaceTimeProblem:
    """Assembled heat problem ``(A_t (x) M_s + M_t (x) A_s) u = rhs``.

    ``space`` is either a tuple of per-direction ``(A_l, M_l)`` pairs or a
    mapped-geometry matrix pair; ``hat_space`` holds the Cartesian pairs a
    preconditioner is built from (equal to ``space`` on Cartesian domains).
    """

    A_t: BandedMatrix
    M_t: BandedMatrix
    space: object
    rhs: np.ndarray
    hat_space: tuple | None = None
    time_space: SplineSpace | None = None
    space_spaces: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def n_t(self) -> int:
        return self.A_t.shape[0]

    @property
    def n_s(self) -> int:
        return self.rhs.size // self.n_t

    def diagonalize_space(self) -> SpaceDiagonalization:
        pairs = self.hat_space if self.hat_space is not None else self.space
        return fast_diag_space(pairs)


def time_matrices(p_t: int, n_elements: int, T: float = 1.0):
    """Galerkin time derivative and mass matrix with the initial function removed."""
    space = SplineSpace.uniform(p_t, n_elements, 0.0, T, "zero-at-left")
    return assemble_1d(space, "advection"), assemble_1d(space, "mass"), space


def _as_tuple(n, dim):
    return tuple(n) if np.iterable(n) else (int(n),) * dim


def galerkin_problem(dim: int, p: int, n_space, n_time: int, p_t: int | None = None,
                     T: float = 1.0, source: float = 1.0) -> SpaceTimeProblem:
    """Spline Galerkin heat problem on ``[0,1]^dim x [0,T]`` with constant source.

    ``n_space`` / ``n_time`` are element counts; Dirichlet functions in space
    and the initial-time function are removed.
    """
    p_t = p if p_t is None else p_t
    A_t, M_t, tspace = time_matrices(p_t, n_time, T)
    spaces = tuple(
        SplineSpace.uniform(p, n, 0.0, 1.0, "zero-at-both-ends") for n in _as_tuple(n_space, dim)
    )
    pairs = tuple((assemble_1d(s, "stiffness"), assemble_1d(s, "mass")) for s in spaces)
    ones = lambda x: np.ones_like(x)  # noqa: E731
    loads = [load_vector(s, ones) for s in spaces]
    rhs = source * reduce(np.kron, [load_vector(tspace, ones)] + loads[::-1])
    info = {"kind": "galerkin", "dim": dim, "p_s": p, "p_t": p_t,
            "n_space": _as_tuple(n_space, dim), "n_time": n_time, "geometry": "unit-cube" if dim == 3 else "unit-square" if dim == 2 else "unit-interval"}
    return SpaceTimeProblem(A_t, M_t, pairs, rhs, pairs, tspace, spaces, info)


def fd_laplacian_1d(n: int, length: float = 1.0) -> np.ndarray:
    h = length / (n + 1)
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2


def fd_problem(partition: TimePartition, n_space: int, rhs=None, seed: int = 0) -> SpaceTimeProblem:
    """Implicit Euler in time, centred differences on ``n_space`` interior points.

    Without ``rhs`` a seeded random source is used.
    """
    A_t = fd_time_operator(partition)
    n_t = A_t.shape[0]
    M_t = BandedMatrix.identity(n_t)
    pairs = ((fd_laplacian_1d(n_space), np.eye(n_space)),)
    if rhs is None:
        rhs = np.random.default_rng(seed).standard_normal(n_t * n_space)
    info = {"kind": "fd", "rule": partition.rule, "beta": partition.beta, "n_space": (n_space,), "n_time": n_t}
    return SpaceTimeProblem(A_t, M_t, pairs, np.asarray(rhs, dtype=float), pairs, None, (), info)


def implicit_euler(partition: TimePartition, A_s, f) -> np.ndarray:
    """Sequential implicit Euler from ``u_0 = 0``; ``f`` is ``(N_t, N_s)``."""
    A_s = np.asarray(A_s)
    n_s = A_s.shape[0]
    f = np.asarray(f).reshape(len(partition.taus), n_s)
    u = np.zeros(n_s)
    out = []
    for tau, fn in zip(partition.taus, f):
        u = np.linalg.solve(np.eye(n_s) / tau + A_s, u / tau + fn)
        out.append(u)
    return np.concatenate(out)


def dense_system(problem: SpaceTimeProblem) -> np.ndarray:
    """Explicitly assembled system matrix (test oracle, small sizes only)."""
    A_t, M_t = problem.A_t.to_dense(), problem.M_t.to_dense()
    pairs = [(_dense(a), _dense(m)) for a, m in problem.space]
    d = len(pairs)
    M_s = reduce(np.kron, [pairs[l][1] for l in reversed(range(d))])
    A_s = sum(
        reduce(np.kron, [pairs[l][0] if l == j else pairs[l][1] for l in reversed(range(d))])
        for j in range(d)
    )
    return np.kron(A_t, M_s) + np.kron(M_t, A_s)


def _dense(m):
    return m.to_dense() if isinstance(m, BandedMatrix) else np.asarray(m)
