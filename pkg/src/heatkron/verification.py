"""Invariant suite run by ``heatkron verify``.

Each check is small, seeded and independent; a check reports
``(name, passed, detail)`` and never raises.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .eigensolvers import skew_geig, sym_pd_geig
from .errors import DefectivePencilError
from .krylov_preconditioning import EXACT_SOLUTIONS, manufactured_problem, solve_preconditioned
from .problems import dense_system, fd_problem, galerkin_problem, implicit_euler, time_matrices
from .spacetime_solvers import (
    ArrowheadBlock,
    apply,
    plan,
    smw_block_solve,
    time_basis,
)
from .spline_discretization import SplineSpace, TimePartition, collocation_matrix
from .tensor_core import (
    BandedMatrix,
    KronOperator,
    ShufflePermutation,
    banded_lu_factor,
    cond2,
    kron_matvec,
    shuffle_apply,
)

__all__ = ["CheckResult", "run_suite"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))


def _kron(rng, ctx):
    A, B, C = rng.standard_normal((3, 2)), rng.standard_normal((4, 3)), rng.standard_normal((2, 2))
    x = rng.standard_normal(12)
    err = _rel(kron_matvec(KronOperator([A, B, C]), x), np.kron(np.kron(A, B), C) @ x)
    return err <= 1e-13, f"rel err {err:.2e}"


def _shuffle(rng, ctx):
    S = ShufflePermutation(5, 7)
    x = rng.standard_normal(35)
    y = shuffle_apply(S, x)
    back = shuffle_apply(S, y, inverse=True)
    ok = np.array_equal(back, x) and np.isclose(np.linalg.norm(y), np.linalg.norm(x))
    return ok, "round trip and norm preserved" if ok else "shuffle is not an isometric permutation"


def _banded_lu(rng, ctx):
    n, lo, up = 12, 2, 3
    a = np.triu(np.tril(rng.standard_normal((n, n)), up), -lo) + 8 * np.eye(n)
    L, U = banded_lu_factor(BandedMatrix.from_dense(a, lo, up))
    err = _rel(L.to_dense() @ U.to_dense(), a)
    return err <= 1e-13, f"rel err {err:.2e}"


def _partition_of_unity(rng, ctx):
    s = SplineSpace.uniform(3, 5)
    x = rng.uniform(0, 1, 50)
    err = float(np.max(np.abs(collocation_matrix(s, x).sum(axis=1) - 1)))
    return err <= 1e-13, f"max dev {err:.2e}"


def _geig(rng, ctx):
    A_t, M_t, _ = time_matrices(2, 12)
    M = M_t.to_dense()
    K = A_t.to_dense()[:-1, :-1]
    r = skew_geig(K, M[:-1, :-1])
    e1 = np.max(np.abs(r.U.conj().T @ M[:-1, :-1] @ r.U - np.eye(K.shape[0])))
    B = rng.standard_normal((8, 8))
    S = sym_pd_geig(B + B.T, B @ B.T + 8 * np.eye(8))
    e2 = np.max(np.abs(S.U.T @ (B @ B.T + 8 * np.eye(8)) @ S.U - np.eye(8)))
    err = max(e1, e2)
    return err <= 1e-10, f"M-orthonormality dev {err:.2e}"


def _ar_identity(rng, ctx):
    A_t, M_t, _ = time_matrices(3, 32)
    k_u = cond2(time_basis("AR", A_t, M_t))
    k_m = np.sqrt(cond2(M_t.to_dense()))
    err = abs(k_u / k_m - 1)
    return err <= 0.02, f"cond(U_t) {k_u:.4f} vs sqrt(cond(M_t)) {k_m:.4f}"


def _methods_vs_dense(rng, ctx):
    prob = galerkin_problem(2, 2, 4, 5)
    f = rng.standard_normal(prob.rhs.size)
    ref = np.linalg.solve(dense_system(prob), f)
    sd = prob.diagonalize_space()
    worst = 0.0
    for m in ("DT", "LU", "AR", "LR"):
        p = plan(m, prob.A_t, prob.M_t, sd)
        if m == "LU" and ctx.get("corrupt_band"):
            lu = p.time.lu.copy()
            lu[:, lu.shape[1] // 2, lu.shape[2] // 2] *= 1.5
            p = dataclasses.replace(p, time=dataclasses.replace(p.time, lu=lu))
        worst = max(worst, _rel(apply(p, f), ref))
    return worst <= 1e-8, f"worst rel err {worst:.2e}"


def _smw(rng, ctx):
    worst = 0.0
    for r in (1, 2):
        n = 9
        d = rng.standard_normal(n) + 1j * rng.standard_normal(n) + 3
        UF = rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))
        GU = rng.standard_normal((r, n)) + 1j * rng.standard_normal((r, n))
        y = rng.standard_normal(n)
        ref = np.linalg.solve(np.diag(d) + UF @ GU, y)
        worst = max(worst, _rel(smw_block_solve(d, UF, GU, y), ref))
    return worst <= 1e-11, f"worst rel err {worst:.2e}"


def _arrowhead(rng, ctx):
    A_t, M_t, _ = time_matrices(3, 16)
    sd = galerkin_problem(2, 2, 4, 16).diagonalize_space()
    t = plan("AR", A_t, M_t, sd).time
    worst = 0.0
    for lam in sd.lam:
        b = ArrowheadBlock.build(t.deltas, t.g, t.sigma, lam)
        L, U = b.lu_factors()
        worst = max(worst, _rel(L @ U, b.matrix()))
    return worst <= 1e-13, f"worst rel err {worst:.2e}"


def _fd_dt(rng, ctx):
    part = TimePartition.geometric(1.0, 32, 1.2)
    prob = fd_problem(part, 16, seed=int(rng.integers(1 << 30)))
    u = apply(plan("DT", prob.A_t, prob.M_t, prob.diagonalize_space()), prob.rhs)
    ref = implicit_euler(part, prob.space[0][0], prob.rhs)
    err = _rel(u, ref)
    uni = fd_problem(TimePartition.uniform(1.0, 8), 4)
    try:
        plan("DT", uni.A_t, uni.M_t, uni.diagonalize_space())
        raised = False
    except DefectivePencilError:
        raised = True
    return err <= 1e-8 and raised, f"rel err {err:.2e}, uniform partition rejected: {raised}"


def _identity_precond(rng, ctx):
    prob = manufactured_problem("unit-square", 2, 4, 4)
    res = solve_preconditioned(prob, "AR", tol=1e-8)
    return res.converged and res.iterations <= 2, f"{res.iterations} GMRES iterations"


def _source_fd(rng, ctx):
    sol = EXACT_SOLUTIONS["rotated-quarter-annulus-3d"]
    x = rng.uniform(0.5, 1.5, (20, 3))
    t = rng.uniform(0.1, 1.0, 20)
    h = 1e-3
    ut = (sol.u(x, t + h) - sol.u(x, t - h)) / (2 * h)
    lap = sum(
        (sol.u(x + h * e, t) - 2 * sol.u(x, t) + sol.u(x - h * e, t)) / h**2 for e in np.eye(3)
    )
    err = _rel(sol.source(x, t), ut - lap)
    return err <= 1e-5, f"rel err {err:.2e}"


CHECKS: list[tuple[str, Callable]] = [
    ("kron_matvec matches dense Kronecker product", _kron),
    ("perfect shuffle is an isometric permutation", _shuffle),
    ("banded LU reproduces the matrix", _banded_lu),
    ("B-splines form a partition of unity", _partition_of_unity),
    ("generalized eigenbases are M-orthonormal", _geig),
    ("AR time basis has cond equal to sqrt(cond(M_t))", _ar_identity),
    ("all methods match the dense solve", _methods_vs_dense),
    ("Woodbury block solve matches dense inversion", _smw),
    ("arrowhead factors multiply back", _arrowhead),
    ("FD diagonalization matches implicit Euler", _fd_dt),
    ("exact preconditioner on Cartesian geometry", _identity_precond),
    ("manufactured source matches finite differences", _source_fd),
]


def run_suite(seed: int = 0, corrupt_band: bool = False) -> list[CheckResult]:
    """Run every check; ``corrupt_band`` perturbs the stored LU band (negative control)."""
    ctx = {"corrupt_band": corrupt_band}
    out = []
    for i, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            ok, detail = fn(rng, ctx)
        except Exception as exc:  # a crash counts as a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
