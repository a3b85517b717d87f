"""B-spline spaces on an interval and the 1D Galerkin matrices built on them.

Boundary conditions are imposed by dropping basis functions: ``zero-at-left``
removes the first function (homogeneous initial condition in time),
``zero-at-both-ends`` removes the first and the last (Dirichlet in space).
With an open knot vector the remaining time basis vanishes at ``t = T``
except for the last function, which is the ordering the arrowhead split
relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import BandedMatrix

__all__ = [
    "CONSTRAINTS",
    "SplineSpace",
    "TimePartition",
    "gauss_legendre",
    "bspline_eval",
    "basis_ders",
    "assemble_1d",
    "collocation_matrix",
    "load_vector",
    "quadrature",
    "fd_time_operator",
]

CONSTRAINTS = ("none", "zero-at-left", "zero-at-both-ends")


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[-1, 1]``, exact to degree ``2n - 1``."""
    if not 1 <= n <= 32:
        raise ValueError(f"quadrature order must lie in [1, 32], got {n}")
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class SplineSpace:
    """Spline space of degree ``degree`` over an open knot vector."""

    degree: int
    knots: np.ndarray
    constraint: str = "none"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        p = self.degree
        if p < 1:
            raise ValueError("degree must be at least 1")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if knots.size < 2 * p + 2 or np.any(knots[: p + 1] != knots[0]) or np.any(knots[-p - 1 :] != knots[-1]):
            raise ValueError("knot vector must be open (end knots repeated p + 1 times)")
        knots = knots.copy()
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        if self.n_funcs < 1:
            raise ValueError("space has no basis functions left after constraints")

    @classmethod
    def uniform(cls, degree: int, n_elements: int, a: float = 0.0, b: float = 1.0,
                constraint: str = "none") -> "SplineSpace":
        """Maximal smoothness spline space on ``n_elements`` equal spans of ``[a, b]``."""
        if n_elements < 1:
            raise ValueError("need at least one element")
        inner = np.linspace(a, b, n_elements + 1)
        knots = np.r_[[a] * degree, inner, [b] * degree]
        return cls(degree, knots, constraint)

    @property
    def n_full(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def active(self) -> np.ndarray:
        """Indices (in the unconstrained numbering) of the kept functions."""
        start = 0 if self.constraint == "none" else 1
        stop = self.n_full - (1 if self.constraint == "zero-at-both-ends" else 0)
        return np.arange(start, stop)

    @property
    def n_funcs(self) -> int:
        return self.active.size

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def breaks(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def n_elements(self) -> int:
        return self.breaks.size - 1

    def unconstrained(self) -> "SplineSpace":
        return SplineSpace(self.degree, self.knots, "none")

    def greville(self) -> np.ndarray:
        """Greville abscissae of the kept functions."""
        p = self.degree
        g = np.array([self.knots[i + 1 : i + p + 1].mean() for i in range(self.n_full)])
        return g[self.active]


@dataclass(frozen=True)
class TimePartition:
    """Step sizes ``tau_0 .. tau_{N_t - 1}`` of a time grid on ``[0, T]``."""

    taus: np.ndarray
    rule: str = "uniform"
    beta: float | None = None

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimePartition":
        return cls(np.full(n_steps, T / n_steps), "uniform")

    @classmethod
    def geometric(cls, T: float, n_steps: int, beta: float) -> "TimePartition":
        # tau_n = beta**n * tau_0 for every n, so also tau_n = beta**(n-1) * tau_1
        # for n >= 1; taking tau_0 = tau_1 instead would repeat an eigenvalue.
        if beta <= 1:
            raise ValueError("geometric partitions need beta > 1")
        tau0 = T * (beta - 1) / (beta**n_steps - 1)
        return cls(tau0 * beta ** np.arange(n_steps), "geometric", beta)

    @property
    def T(self) -> float:
        return float(np.sum(self.taus))

    @property
    def times(self) -> np.ndarray:
        return np.r_[0.0, np.cumsum(self.taus)]


def fd_time_operator(partition: TimePartition) -> BandedMatrix:
    """Implicit Euler time-difference matrix: ``1/tau_n`` on the diagonal,
    ``-1/tau_n`` just below it in row ``n``."""
    taus = np.asarray(partition.taus, dtype=float)
    if np.any(taus <= 0):
        raise ValueError("time steps must be positive")
    n = taus.size
    if n == 1:
        return BandedMatrix(np.array([[1.0 / taus[0]]]), 0, 0)
    data = np.zeros((2, n))
    data[0] = 1.0 / taus
    data[1, :-1] = -1.0 / taus[1:]
    return BandedMatrix(data, 1, 0)


# ---------------------------------------------------------------------------
# basis evaluation


def _find_span(knots, p, x):
    n = knots.size - p - 1
    span = np.searchsorted(knots, x, side="right") - 1
    return np.clip(span, p, n - 1)


def basis_ders(knots, p: int, x, nder: int = 0):
    """Nonzero B-splines and their derivatives at the points ``x``.

    Returns ``(first, vals)`` where ``vals[q, k, a]`` is the ``k``-th
    derivative of function ``first[q] + a`` at ``x[q]``.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    npt = x.size
    span = _find_span(knots, p, x)
    ndu = np.zeros((npt, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((npt, p + 1))
    right = np.zeros((npt, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(npt)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    vals = np.zeros((npt, nder + 1, p + 1))
    vals[:, 0, :] = ndu[:, :, p]
    nd = min(nder, p)
    a = np.zeros((2, npt, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[0, :, 0] = 1.0
        for k in range(1, nd + 1):
            d = np.zeros(npt)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, :, 0] = a[s1, :, 0] / ndu[:, pk + 1, rk]
                d += a[s2, :, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, :, j] = (a[s1, :, j] - a[s1, :, j - 1]) / ndu[:, pk + 1, rk + j]
                d += a[s2, :, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[s2, :, k] = -a[s1, :, k - 1] / ndu[:, pk + 1, r]
                d += a[s2, :, k] * ndu[:, r, pk]
            vals[:, k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nd + 1):
        vals[:, k, :] *= fac
        fac *= p - k
    return span - p, vals


def bspline_eval(space: SplineSpace, x: float, max_der: int = 0):
    """Nonzero basis functions of ``space`` at ``x`` and their derivatives.

    Returns ``(indices, values)``: ``indices`` in the constrained numbering,
    ``values[k, a]`` the ``k``-th derivative of function ``indices[a]``.
    """
    lo, hi = space.domain
    if not lo <= x <= hi:
        raise ValueError(f"x = {x} lies outside [{lo}, {hi}]")
    first, vals = basis_ders(space.knots, space.degree, [x], max_der)
    full = first[0] + np.arange(space.degree + 1)
    active = space.active
    keep = (full >= active[0]) & (full <= active[-1])
    return full[keep] - active[0], vals[0][:, keep]


def collocation_matrix(space: SplineSpace, x, der: int = 0) -> np.ndarray:
    """Dense matrix ``C[q, i] = b_i^{(der)}(x_q)`` over the kept functions."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    first, vals = basis_ders(space.knots, space.degree, x, der)
    full = np.zeros((x.size, space.n_full))
    rows = np.repeat(np.arange(x.size), space.degree + 1)
    cols = (first[:, None] + np.arange(space.degree + 1)).ravel()
    full[rows, cols] = vals[:, der, :].ravel()
    return full[:, space.active]


# ---------------------------------------------------------------------------
# quadrature and assembly


def quadrature(space: SplineSpace, n_points: int | None = None):
    """Gauss points and weights on every nonempty knot span.

    Returns ``(x, w)`` flattened over elements, element-major.
    """
    nq = space.degree + 1 if n_points is None else n_points
    xi, wi = gauss_legendre(nq)
    br = space.breaks
    a, b = br[:-1, None], br[1:, None]
    x = (a + b) / 2 + (b - a) / 2 * xi
    w = (b - a) / 2 * wi
    return x.ravel(), np.broadcast_to(w, x.shape).ravel().copy()


def _assemble_full(space: SplineSpace, kind: str, n_points=None) -> np.ndarray:
    p = space.degree
    x, w = quadrature(space, n_points)
    first, vals = basis_ders(space.knots, p, x, 1)
    if kind == "mass":
        test, trial = vals[:, 0], vals[:, 0]
    elif kind == "stiffness":
        test, trial = vals[:, 1], vals[:, 1]
    elif kind == "advection":
        test, trial = vals[:, 0], vals[:, 1]
    else:
        raise ValueError(f"unknown matrix kind {kind!r}")
    # local[q, a, b] = w * test_a * trial_b  ->  entry (row i = first + a, col j = first + b)
    local = w[:, None, None] * test[:, :, None] * trial[:, None, :]
    idx = first[:, None] + np.arange(p + 1)
    rows = np.broadcast_to(idx[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(idx[:, None, :], local.shape).ravel()
    n = space.n_full
    out = np.zeros((n, n))
    np.add.at(out, (rows, cols), local.ravel())
    return out


def assemble_1d(space: SplineSpace, kind: str) -> BandedMatrix:
    """Galerkin matrix on ``space``.

    ``mass``: integral of b_j b_i; ``stiffness``: b_j' b_i'; ``advection``:
    b_j' b_i (row i, column j).  All have ``degree`` bands on each side.
    """
    full = _assemble_full(space, kind)
    act = space.active
    a = full[np.ix_(act, act)]
    p = min(space.degree, a.shape[0] - 1)
    return BandedMatrix.from_dense(a, p, p, check=False)


def load_vector(space: SplineSpace, func, n_points: int | None = None) -> np.ndarray:
    """``[integral of func * b_i]`` over the kept functions."""
    nq = space.degree + 3 if n_points is None else n_points
    x, w = quadrature(space, nq)
    first, vals = basis_ders(space.knots, space.degree, x, 0)
    contrib = (w * np.asarray(func(x), dtype=float))[:, None] * vals[:, 0, :]
    out = np.zeros(space.n_full)
    np.add.at(out, (first[:, None] + np.arange(space.degree + 1)).ravel(), contrib.ravel())
    return out[space.active]
