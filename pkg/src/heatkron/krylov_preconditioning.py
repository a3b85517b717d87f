"""Heat problems on mapped domains, preconditioned by the parametric operator.

On a domain ``G([0,1]^d)`` the space matrices lose their Kronecker
structure.  The same heat operator assembled on the parametric cube keeps
it, so any of the LU / AR / LR plans can apply its inverse cheaply and is
used as a left preconditioner for GMRES.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, GeometryError
from .problems import SpaceTimeProblem, time_matrices
from .spacetime_solvers import SolverPlan, apply, heat_operator, plan
from .spline_discretization import (
    SplineSpace,
    assemble_1d,
    basis_ders,
    collocation_matrix,
    gauss_legendre,
    load_vector,
    quadrature,
)

__all__ = [
    "GeometryMap",
    "GEOMETRIES",
    "get_geometry",
    "MappedSpaceMatrices",
    "assemble_mapped",
    "mapped_load",
    "GMRESResult",
    "gmres",
    "precondition_apply",
    "ExactSolution",
    "EXACT_SOLUTIONS",
    "manufactured_problem",
    "full_solution",
    "l2_error",
    "solve_preconditioned",
    "write_history_csv",
]


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class GeometryMap:
    """Analytic map from ``[0,1]^dim``; ``evaluator(xi) -> (x, J)`` with
    ``J[..., i, k] = d x_i / d xi_k``."""

    id: str
    dim: int
    evaluator: Callable

    def __call__(self, xi):
        return self.evaluator(np.asarray(xi, dtype=float))


def _identity(xi):
    d = xi.shape[-1]
    J = np.broadcast_to(np.eye(d), xi.shape + (d,)).copy()
    return xi.copy(), J


def _annulus(xi, eta):
    r = 1.0 + xi
    th = np.pi / 2 * eta
    c, s = np.cos(th), np.sin(th)
    a, b = r * c, r * s
    # rows: (a, b); columns: (d/dxi, d/deta)
    da = (c, -np.pi / 2 * r * s)
    db = (s, np.pi / 2 * r * c)
    return a, b, da, db


def _quarter_annulus_2d(xi):
    a, b, da, db = _annulus(xi[..., 0], xi[..., 1])
    x = np.stack([a, b], axis=-1)
    J = np.empty(xi.shape[:-1] + (2, 2))
    J[..., 0, 0], J[..., 0, 1] = da
    J[..., 1, 0], J[..., 1, 1] = db
    return x, J


def _rotated_quarter_annulus_3d(xi):
    # quarter annulus in the (x1, x2) plane swept by pi/2 about {(x1, -1, 0)}
    a, b, da, db = _annulus(xi[..., 0], xi[..., 1])
    th = np.pi / 2 * xi[..., 2]
    c, s = np.cos(th), np.sin(th)
    rad = b + 1.0
    x = np.stack([a, -1.0 + rad * c, rad * s], axis=-1)
    J = np.zeros(xi.shape[:-1] + (3, 3))
    J[..., 0, 0], J[..., 0, 1] = da
    J[..., 1, 0], J[..., 1, 1] = db[0] * c, db[1] * c
    J[..., 2, 0], J[..., 2, 1] = db[0] * s, db[1] * s
    J[..., 1, 2] = -np.pi / 2 * rad * s
    J[..., 2, 2] = np.pi / 2 * rad * c
    return x, J


GEOMETRIES = {
    "unit-square": GeometryMap("unit-square", 2, _identity),
    "unit-cube": GeometryMap("unit-cube", 3, _identity),
    "quarter-annulus-2d": GeometryMap("quarter-annulus-2d", 2, _quarter_annulus_2d),
    "rotated-quarter-annulus-3d": GeometryMap("rotated-quarter-annulus-3d", 3, _rotated_quarter_annulus_3d),
}


def get_geometry(geometry) -> GeometryMap:
    if isinstance(geometry, GeometryMap):
        return geometry
    try:
        return GEOMETRIES[geometry]
    except KeyError:
        raise ValueError(f"unknown geometry {geometry!r}; known: {sorted(GEOMETRIES)}") from None


# ---------------------------------------------------------------------------
# mapped assembly


@dataclass(frozen=True)
class MappedSpaceMatrices:
    """Space stiffness/mass on a mapped domain (CSR).

    ``A``/``M`` act on the interior (Dirichlet-free) functions; the
    ``*_full`` versions keep every tensor-product function.
    """

    A: sp.csr_matrix
    M: sp.csr_matrix
    A_full: sp.csr_matrix
    M_full: sp.csr_matrix
    interior: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def shape(self):
        return self.A.shape


def _per_direction(space: SplineSpace):
    p = space.degree
    x, w = quadrature(space)
    first, vals = basis_ders(space.knots, p, x, 1)
    ne, nq = space.n_elements, p + 1
    return (x.reshape(ne, nq), w.reshape(ne, nq),
            vals.reshape(ne, nq, 2, p + 1), first.reshape(ne, nq)[:, 0])


def _element_batches(geometry: GeometryMap, spaces: Sequence[SplineSpace]):
    """Yield quadrature data for slabs of elements (one slab per last-direction element).

    Each item is ``(glob, N, G, wdet, x)``: global full-space indices of the
    local functions ``(E, P)``, values ``(E, Q, P)``, physical gradients
    ``(E, Q, P, d)``, weights times ``|det J|`` ``(E, Q)`` and points ``(E, Q, d)``.
    """
    d = len(spaces)
    if d != geometry.dim:
        raise DimensionError(f"geometry {geometry.id} is {geometry.dim}D, got {d} spaces")
    data = [_per_direction(s) for s in spaces]
    nfull = [s.n_full for s in spaces]
    strides = [math.prod(nfull[:l]) for l in range(d)]
    nd = 2 * d + (d - 1)

    def place(arr, axes):
        shape = [1] * nd
        for ax, n in zip(axes, arr.shape):
            shape[ax] = n
        return arr.reshape(shape)

    for e_last in range(spaces[-1].n_elements):
        xs, ws, vals, idx = [], [], [], []
        for l, (xq, wq, v, first) in enumerate(data):
            if l == d - 1:
                xs.append(place(xq[e_last], [d - 1 + l]))
                ws.append(place(wq[e_last], [d - 1 + l]))
                vals.append([place(v[e_last, :, k, :], [d - 1 + l, 2 * d - 1 + l]) for k in range(2)])
                idx.append(place((first[e_last] + np.arange(v.shape[-1])) * strides[l], [2 * d - 1 + l]))
            else:
                xs.append(place(xq, [l, d - 1 + l]))
                ws.append(place(wq, [l, d - 1 + l]))
                vals.append([place(v[:, :, k, :], [l, d - 1 + l, 2 * d - 1 + l]) for k in range(2)])
                idx.append(place((first[:, None] + np.arange(v.shape[-1])) * strides[l], [l, 2 * d - 1 + l]))
        E = math.prod(s.n_elements for s in spaces[:-1])
        Q = math.prod(s.degree + 1 for s in spaces)
        P = Q
        grid_shape = np.broadcast_shapes(*[x.shape for x in xs])
        pts = np.stack([np.broadcast_to(x, grid_shape) for x in xs], axis=-1)
        pts = pts.reshape(E, Q, d)
        W = reduce(np.multiply, ws).reshape(E, Q) if d > 1 else ws[0].reshape(E, Q)
        N = reduce(np.multiply, [v[0] for v in vals])
        full_shape = N.shape
        N = N.reshape(E, Q, P)
        dN = np.stack(
            [reduce(np.multiply, [vals[l][1 if l == k else 0] for l in range(d)]).reshape(full_shape).reshape(E, Q, P)
             for k in range(d)], axis=-1)
        glob = reduce(np.add, idx)
        glob = np.broadcast_to(glob, glob.shape).reshape(E, P) if glob.ndim else glob
        x, J = geometry(pts)
        det = np.linalg.det(J)
        if np.any(det <= 0):
            bad = np.unravel_index(np.argmin(det), det.shape)
            raise GeometryError(f"nonpositive Jacobian determinant {det[bad]:.3e} at xi = {pts[bad]}",
                                point=pts[bad])
        Jinv = np.linalg.inv(J)
        G = np.einsum("eqki,eqak->eqai", Jinv, dN)
        yield glob.reshape(E, P), N, G, W * det, x


def assemble_mapped(geometry, spaces: Sequence[SplineSpace]) -> MappedSpaceMatrices:
    """Isoparametric pull-back assembly of stiffness and mass on ``G([0,1]^d)``."""
    geometry = get_geometry(geometry)
    spaces = list(spaces)
    n = math.prod(s.n_full for s in spaces)
    rows, cols, mv, kv = [], [], [], []
    for glob, N, G, wdet, _ in _element_batches(geometry, spaces):
        M_loc = np.einsum("eq,eqa,eqb->eab", wdet, N, N)
        K_loc = np.einsum("eq,eqai,eqbi->eab", wdet, G, G)
        P = glob.shape[1]
        rows.append(np.repeat(glob, P, axis=1).ravel())
        cols.append(np.tile(glob, (1, P)).ravel())
        mv.append(M_loc.ravel())
        kv.append(K_loc.ravel())
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    M_full = sp.csr_matrix((np.concatenate(mv), (rows, cols)), shape=(n, n))
    A_full = sp.csr_matrix((np.concatenate(kv), (rows, cols)), shape=(n, n))
    interior = _interior_indices(spaces)
    return MappedSpaceMatrices(
        A_full[interior][:, interior].tocsr(),
        M_full[interior][:, interior].tocsr(),
        A_full, M_full, interior,
    )


def _interior_indices(spaces) -> np.ndarray:
    # direction 0 fastest
    grids = np.meshgrid(*[s.active for s in spaces[::-1]], indexing="ij")
    nfull = [s.n_full for s in spaces]
    strides = [math.prod(nfull[:l]) for l in range(len(spaces))]
    flat = sum(g * strides[len(spaces) - 1 - k] for k, g in enumerate(grids))
    return np.sort(flat.ravel())


def mapped_load(geometry, spaces, func) -> np.ndarray:
    """``[integral over G([0,1]^d) of func(x) B_i(x) dx]`` over every full-space function."""
    geometry = get_geometry(geometry)
    n = math.prod(s.n_full for s in spaces)
    out = np.zeros(n)
    for glob, N, _, wdet, x in _element_batches(geometry, list(spaces)):
        vals = np.einsum("eq,eqa->ea", wdet * func(x), N)
        np.add.at(out, glob.ravel(), vals.ravel())
    return out


# ---------------------------------------------------------------------------
# GMRES


@dataclass
class GMRESResult:
    x: np.ndarray
    iterations: int
    residuals: list
    converged: bool


def gmres(apply_operator, apply_preconditioner, f, tol: float = 1e-8,
          max_iter: int = 500, x0=None) -> GMRESResult:
    """Left-preconditioned full GMRES (no restarts), Givens least squares.

    Stops when ``||P^{-1}(f - A x)|| <= tol ||P^{-1} f||``.  ``residuals``
    holds that relative norm for iterations ``0..iterations``.  Running out
    of iterations returns a result with ``converged=False``.
    """
    f = np.asarray(f, dtype=float)
    prec = apply_preconditioner if apply_preconditioner is not None else (lambda v: v)
    x0 = np.zeros_like(f) if x0 is None else np.asarray(x0, dtype=float)
    ref = np.linalg.norm(prec(f))
    if ref == 0:
        return GMRESResult(np.zeros_like(f), 0, [0.0], True)
    r0 = prec(f - apply_operator(x0)) if np.any(x0) else prec(f)
    beta = np.linalg.norm(r0)
    history = [beta / ref]
    if history[0] <= tol:
        return GMRESResult(x0, 0, history, True)

    n = f.size
    m = min(max_iter, n)
    V = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    cs, sn = np.zeros(m), np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r0 / beta
    k = 0
    converged = False
    for j in range(m):
        w = prec(apply_operator(V[j]))
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w = w - H[i, j] * V[i]
        # one reorthogonalization pass keeps the basis orthonormal near convergence
        for i in range(j + 1):
            c = V[i] @ w
            H[i, j] += c
            w = w - c * V[i]
        H[j + 1, j] = np.linalg.norm(w)
        if H[j + 1, j] > 0:
            V[j + 1] = w / H[j + 1, j]
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        rho = math.hypot(H[j, j], H[j + 1, j])
        cs[j], sn[j] = H[j, j] / rho, H[j + 1, j] / rho
        H[j, j] = rho
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        history.append(abs(g[j + 1]) / ref)
        if history[-1] <= tol or H[j, j] == 0:
            converged = history[-1] <= tol
            break
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - H[i, i + 1 : k] @ y[i + 1 :]) / H[i, i]
    x = x0 + V[:k].T @ y
    return GMRESResult(x, k, history, converged)


def precondition_apply(p: SolverPlan, r) -> np.ndarray:
    """Apply the inverse of the parametric-domain heat operator."""
    return apply(p, r)


def write_history_csv(path, residuals) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "residual"])
        for i, r in enumerate(residuals):
            w.writerow([i, f"{r:.5e}"])


# ---------------------------------------------------------------------------
# manufactured solutions


def _annulus_poly(x1, x2):
    s = x1**2 + x2**2
    P = -(s - 1) * (s - 4) * x1 * x2**2
    lap = -2 * x1 * (x1**4 + 22 * x1**2 * x2**2 - 5 * x1**2 + 21 * x2**4 - 45 * x2**2 + 4)
    return P, lap


def _u3(x, t):
    P, _ = _annulus_poly(x[..., 0], x[..., 1])
    return P * np.sin(x[..., 2]) * np.sin(t)


def _f3_terms():
    # f = P sin(x3) cos(t) - (lap P - P) sin(x3) sin(t)
    def g1(x):
        P, _ = _annulus_poly(x[..., 0], x[..., 1])
        return P * np.sin(x[..., 2])

    def g2(x):
        P, lap = _annulus_poly(x[..., 0], x[..., 1])
        return -(lap - P) * np.sin(x[..., 2])

    return [(g1, np.cos), (g2, np.sin)]


def _u2(x, t):
    P, _ = _annulus_poly(x[..., 0], x[..., 1])
    return P * np.sin(t)


def _f2_terms():
    def g1(x):
        return _annulus_poly(x[..., 0], x[..., 1])[0]

    def g2(x):
        return -_annulus_poly(x[..., 0], x[..., 1])[1]

    return [(g1, np.cos), (g2, np.sin)]


@dataclass(frozen=True)
class ExactSolution:
    """Exact ``u(x, t)`` with the source ``f = du/dt - Lap u`` written as a
    sum of separable terms ``space(x) * time(t)``."""

    dim: int
    u: Callable
    source_terms: tuple

    def source(self, x, t):
        x = np.asarray(x, dtype=float)
        return sum(g(x) * h(t) for g, h in self.source_terms)


_SOL3 = ExactSolution(3, _u3, tuple(_f3_terms()))
_SOL2 = ExactSolution(2, _u2, tuple(_f2_terms()))

EXACT_SOLUTIONS = {
    "rotated-quarter-annulus-3d": _SOL3,
    "unit-cube": _SOL3,
    "quarter-annulus-2d": _SOL2,
    "unit-square": _SOL2,
}


def _interpolate(spaces_full, values) -> np.ndarray:
    # values[k_t, i_d, ..., i_1] at Greville points -> coefficients
    t = values
    for axis, s in enumerate(spaces_full):
        C = collocation_matrix(s, s.greville())
        t = np.moveaxis(np.tensordot(np.linalg.inv(C), t, axes=(1, axis)), 0, axis)
    return t


def manufactured_problem(geometry, p: int, n_space, n_time: int, p_t: int | None = None,
                         T: float = 1.0) -> SpaceTimeProblem:
    """Mapped-domain heat problem with a registered exact solution.

    Dirichlet data are lifted by interpolating the exact solution at the
    Greville points and keeping the boundary coefficients.
    """
    geometry = get_geometry(geometry)
    if geometry.id not in EXACT_SOLUTIONS:
        raise ValueError(f"no exact solution registered for geometry {geometry.id!r}")
    exact = EXACT_SOLUTIONS[geometry.id]
    d = geometry.dim
    p_t = p if p_t is None else p_t
    n_space = tuple(n_space) if np.iterable(n_space) else (int(n_space),) * d
    spaces = [SplineSpace.uniform(p, n, 0.0, 1.0, "zero-at-both-ends") for n in n_space]
    A_t, M_t, tspace = time_matrices(p_t, n_time, T)
    mats = assemble_mapped(geometry, spaces)
    hat = tuple((assemble_1d(s, "stiffness"), assemble_1d(s, "mass")) for s in spaces)

    # load over every space function, restricted to interior rows afterwards
    F = 0.0
    for g, h in exact.source_terms:
        ft = load_vector(tspace, h, tspace.degree + 4)
        fs = mapped_load(geometry, spaces, g)
        F = F + np.outer(ft, fs)

    # lift: space-time interpolant of u, boundary coefficients only
    full = [s.unconstrained() for s in spaces]
    tfull = tspace.unconstrained()
    grid = np.stack(np.meshgrid(*[s.greville() for s in full[::-1]], indexing="ij")[::-1], axis=-1)
    xg, _ = geometry(grid)
    tg = tfull.greville()
    vals = exact.u(xg[None], tg.reshape(-1, *[1] * d))
    coef = _interpolate([tfull] + full[::-1], vals).reshape(tfull.n_full, -1)
    lift = coef[1:].copy()  # first time function carries u(x, 0) = 0
    lift[:, mats.interior] = 0.0

    n_t = A_t.shape[0]
    full_op = heat_operator(A_t, M_t, _FullSpace(mats.A_full, mats.M_full))
    rhs = (F - full_op.matvec(lift.reshape(-1)).reshape(n_t, -1))[:, mats.interior].reshape(-1)
    info = {"kind": "mapped", "geometry": geometry.id, "dim": d, "p_s": p, "p_t": p_t,
            "n_space": n_space, "n_time": n_time, "T": T,
            "lift": lift, "exact": exact, "geometry_map": geometry}
    return SpaceTimeProblem(A_t, M_t, mats, rhs, hat, tspace, tuple(spaces), info)


@dataclass(frozen=True)
class _FullSpace:
    A: object
    M: object


def full_solution(problem: SpaceTimeProblem, u_interior) -> np.ndarray:
    """Interior solution plus lift, as ``(N_t, N_s_full)`` coefficients."""
    lift = problem.info["lift"]
    out = lift.copy()
    out[:, problem.space.interior] += np.asarray(u_interior).reshape(problem.n_t, -1)
    return out


def l2_error(problem: SpaceTimeProblem, u_interior) -> float:
    """Space-time L2 error of the discrete solution against the exact one."""
    coef = full_solution(problem, u_interior)
    exact = problem.info["exact"]
    geometry = problem.info["geometry_map"]
    tspace = problem.time_space
    tq, tw = quadrature(tspace, tspace.degree + 2)
    Bt = collocation_matrix(tspace, tq)
    err2 = 0.0
    for glob, N, _, wdet, x in _element_batches(geometry, list(problem.space_spaces)):
        local = coef[:, glob]  # (N_t, E, P)
        us = np.einsum("kea,eqa->keq", local, N)
        uh = np.tensordot(Bt, us, axes=(1, 0))  # (tq, E, Q)
        ue = exact.u(x[None], tq[:, None, None])
        err2 += np.einsum("t,eq,teq->", tw, wdet, (uh - ue) ** 2)
    return float(np.sqrt(err2))


def solve_preconditioned(problem: SpaceTimeProblem, method: str = "LU", tol: float = 1e-8,
                         max_iter: int = 500, rank: int = 1, solver_plan: SolverPlan | None = None):
    """GMRES on the mapped problem with the parametric operator as left preconditioner."""
    if solver_plan is None:
        solver_plan = plan(method, problem.A_t, problem.M_t, problem.diagonalize_space(), rank=rank)
    op = heat_operator(problem.A_t, problem.M_t, problem.space)
    return gmres(op.matvec, lambda r: precondition_apply(solver_plan, r), problem.rhs, tol, max_iter)
