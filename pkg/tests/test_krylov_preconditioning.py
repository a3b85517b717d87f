import csv
from functools import reduce

import numpy as np
import pytest
import scipy.linalg as sla

from heatkron.errors import GeometryError
from heatkron.krylov_preconditioning import (
    EXACT_SOLUTIONS,
    GEOMETRIES,
    GeometryMap,
    assemble_mapped,
    full_solution,
    get_geometry,
    gmres,
    l2_error,
    manufactured_problem,
    mapped_load,
    precondition_apply,
    solve_preconditioned,
    write_history_csv,
)
from heatkron.spacetime_solvers import plan
from heatkron.spline_discretization import SplineSpace, assemble_1d, collocation_matrix


def spaces(p, ns, constraint="zero-at-both-ends"):
    return [SplineSpace.uniform(p, n, 0.0, 1.0, constraint) for n in ns]


# --- geometry ----------------------------------------------------------------


@pytest.mark.parametrize("gid", sorted(GEOMETRIES))
def test_jacobian_matches_finite_differences(gid):
    g = get_geometry(gid)
    rng = np.random.default_rng(0)
    xi = rng.uniform(0.1, 0.9, (10, g.dim))
    x, J = g(xi)
    h = 1e-6
    for k in range(g.dim):
        e = np.zeros(g.dim)
        e[k] = h
        fd = (g(xi + e)[0] - g(xi - e)[0]) / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd, atol=1e-8)
    assert np.all(np.linalg.det(J) > 0)


def test_annulus_corners():
    x, _ = get_geometry("quarter-annulus-2d")(np.array([[0.0, 0.0], [1.0, 1.0]]))
    np.testing.assert_allclose(x, [[1.0, 0.0], [0.0, 2.0]], atol=1e-15)
    # the swept solid starts in the x3 = 0 plane and ends in the x2 = -1 plane
    x, _ = get_geometry("rotated-quarter-annulus-3d")(np.array([[0.5, 0.3, 0.0], [0.5, 0.3, 1.0]]))
    assert x[0, 2] == pytest.approx(0.0)
    assert x[1, 1] == pytest.approx(-1.0)


def test_unknown_geometry():
    with pytest.raises(ValueError):
        get_geometry("torus")


# --- mapped assembly ---------------------------------------------------------


@pytest.mark.parametrize("gid,ns", [("unit-square", (3, 4)), ("unit-cube", (3, 2, 4))])
def test_identity_map_matches_kronecker_assembly(gid, ns):
    sp = spaces(2, ns)
    m = assemble_mapped(gid, sp)
    pairs = [(assemble_1d(s, "stiffness").to_dense(), assemble_1d(s, "mass").to_dense()) for s in sp]
    d = len(sp)
    Ms = reduce(np.kron, [p[1] for p in pairs[::-1]])
    As = sum(reduce(np.kron, [pairs[l][0] if l == j else pairs[l][1] for l in reversed(range(d))])
             for j in range(d))
    assert np.max(np.abs(m.M.toarray() - Ms)) <= 1e-12
    assert np.max(np.abs(m.A.toarray() - As)) <= 1e-12
    assert m.n == Ms.shape[0]


def test_quarter_annulus_area():
    errs = []
    for n in (2, 4, 8):
        m = assemble_mapped("quarter-annulus-2d", spaces(1, (n, n)))
        errs.append(abs(m.M_full.sum() - 3 * np.pi / 4))
    # det J is linear in xi, so Gauss quadrature already gives the area exactly
    assert max(errs) <= 1e-12


def test_rotated_annulus_volume():
    # solid of revolution: (pi / 2) * integral of (x2 + 1) over the quarter annulus
    exact = np.pi / 2 * (3 * np.pi / 4 + 7 / 3)
    m = assemble_mapped("rotated-quarter-annulus-3d", spaces(2, (4, 4, 4)))
    assert m.M_full.sum() == pytest.approx(exact, rel=1e-6)


def test_matrices_symmetric_positive_definite():
    m = assemble_mapped("quarter-annulus-2d", spaces(2, (4, 5)))
    for mat in (m.A, m.M):
        d = mat.toarray()
        np.testing.assert_allclose(d, d.T, atol=1e-13)
        assert np.linalg.eigvalsh(d).min() > 0


def test_patch_test_on_cartesian_geometry():
    # a linear function is reproduced exactly by the Dirichlet problem
    sp = spaces(2, (4, 3))
    m = assemble_mapped("unit-square", sp)
    full = [s.unconstrained() for s in sp]
    gx, gy = full[0].greville(), full[1].greville()
    X, Y = np.meshgrid(gx, gy)
    vals = 1.0 + 2.0 * X - 3.0 * Y
    c = np.linalg.solve(collocation_matrix(full[1], gy), np.linalg.solve(collocation_matrix(full[0], gx), vals.T).T)
    c = c.ravel()
    bnd = np.setdiff1d(np.arange(c.size), m.interior)
    rhs = -m.A_full[m.interior][:, bnd] @ c[bnd]
    u = np.linalg.solve(m.A.toarray(), rhs)
    assert np.max(np.abs(u - c[m.interior])) <= 1e-9


def test_inverted_map_raises_geometry_error():
    def flipped(xi):
        x = xi.copy()
        x[..., 1] = -x[..., 1]
        J = np.broadcast_to(np.diag([1.0, -1.0]), xi.shape + (2,)).copy()
        return x, J

    with pytest.raises(GeometryError) as info:
        assemble_mapped(GeometryMap("flipped", 2, flipped), spaces(1, (2, 2)))
    assert info.value.point is not None


def test_mapped_load_of_one_is_volume():
    sp = spaces(2, (3, 3))
    f = mapped_load("quarter-annulus-2d", sp, lambda x: np.ones(x.shape[:-1]))
    assert f.sum() == pytest.approx(3 * np.pi / 4, rel=1e-6)


def test_mass_spectral_equivalence():
    # Rayleigh quotients of (M, M_hat) are weighted by det J, which ranges over [pi/2, pi]
    intervals = []
    for n in (16, 32):
        sp = spaces(1, (n, n))
        m = assemble_mapped("quarter-annulus-2d", sp)
        Mh = reduce(np.kron, [assemble_1d(s, "mass").to_dense() for s in sp])
        w = sla.eigh(m.M.toarray(), Mh, eigvals_only=True)
        assert w.min() >= np.pi / 2 * (1 - 1e-12) and w.max() <= np.pi * (1 + 1e-12)
        intervals.append((w.min(), w.max()))
    (lo1, hi1), (lo2, hi2) = intervals
    assert lo2 >= 0.95 * lo1 and hi2 <= 1.05 * hi1


# --- GMRES -------------------------------------------------------------------


def test_gmres_identity():
    f = np.arange(1.0, 6.0)
    res = gmres(lambda v: v, lambda v: v, f, tol=1e-12)
    assert res.iterations == 1 and res.converged
    np.testing.assert_allclose(res.x, f)


def test_gmres_spd_against_dense():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((50, 50))
    A = B @ B.T + 50 * np.eye(50)
    f = rng.standard_normal(50)
    res = gmres(lambda v: A @ v, None, f, tol=1e-10)
    ref = np.linalg.solve(A, f)
    assert res.converged
    assert np.linalg.norm(res.x - ref) <= 1e-10 * np.linalg.cond(A) * np.linalg.norm(ref)


def test_gmres_history_nonincreasing_and_nonconvergence_flag():
    rng = np.random.default_rng(2)
    A = np.eye(40) + 0.5 * rng.standard_normal((40, 40))
    f = rng.standard_normal(40)
    res = gmres(lambda v: A @ v, None, f, tol=1e-14, max_iter=5)
    assert not res.converged and res.iterations == 5
    assert len(res.residuals) == 6
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res.residuals, res.residuals[1:]))


def test_gmres_zero_rhs():
    res = gmres(lambda v: 2 * v, None, np.zeros(4))
    assert res.converged and res.iterations == 0 and not np.any(res.x)


def test_history_csv(tmp_path):
    path = tmp_path / "h.csv"
    write_history_csv(path, [1.0, 0.5, 1.25e-9])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["iter", "residual"]
    assert rows[-1] == ["2", "1.25000e-09"]


# --- manufactured problem ----------------------------------------------------


@pytest.mark.parametrize("gid", sorted(EXACT_SOLUTIONS))
def test_source_matches_finite_differences(gid):
    sol = EXACT_SOLUTIONS[gid]
    rng = np.random.default_rng(3)
    x = rng.uniform(0.3, 1.5, (20, sol.dim))
    t = rng.uniform(0.1, 1.0, 20)
    h = 1e-3
    ut = (sol.u(x, t + h) - sol.u(x, t - h)) / (2 * h)
    lap = sum((sol.u(x + h * e, t) - 2 * sol.u(x, t) + sol.u(x - h * e, t)) / h**2 for e in np.eye(sol.dim))
    f = sol.source(x, t)
    assert np.linalg.norm(f - (ut - lap)) <= 1e-5 * np.linalg.norm(f)


def test_exact_solution_vanishes_on_annulus_arcs():
    sol = EXACT_SOLUTIONS["rotated-quarter-annulus-3d"]
    th = np.linspace(0, np.pi / 2, 7)
    for r in (1.0, 2.0):
        x = np.stack([r * np.cos(th), r * np.sin(th), np.linspace(0, 1, 7)], axis=-1)
        assert np.max(np.abs(sol.u(x, 0.7))) <= 1e-14


def test_lift_vanishes_on_annulus_arcs_2d():
    prob = manufactured_problem("quarter-annulus-2d", 2, 3, 3)
    n1 = prob.space_spaces[0].n_full
    lift = prob.info["lift"].reshape(prob.n_t, -1, n1)
    assert np.max(np.abs(lift[:, :, 0])) <= 1e-12
    assert np.max(np.abs(lift[:, :, -1])) <= 1e-12
    assert np.max(np.abs(lift)) > 0


def test_lift_vanishes_where_the_solid_meets_x3_zero():
    # after the sweep only the starting face stays in the plane x3 = 0;
    # the curved faces are no longer on x1^2 + x2^2 = const
    prob = manufactured_problem("rotated-quarter-annulus-3d", 2, 3, 3)
    n = [s.n_full for s in prob.space_spaces]
    lift = prob.info["lift"].reshape(prob.n_t, n[2], n[1], n[0])
    assert np.max(np.abs(lift[:, 0])) <= 1e-12
    assert np.max(np.abs(lift[:, :, :, 0])) > 0.1


def test_unregistered_geometry():
    g = GeometryMap("stretched", 2, lambda xi: (2 * xi, np.broadcast_to(2 * np.eye(2), xi.shape + (2,))))
    with pytest.raises(ValueError):
        manufactured_problem(g, 1, 2, 2)


def test_l2_error_decreases_under_refinement():
    errs = []
    for n in (2, 4, 8):
        prob = manufactured_problem("rotated-quarter-annulus-3d", 1, n, n)
        res = solve_preconditioned(prob, "LU", tol=1e-10)
        assert res.converged
        errs.append(l2_error(prob, res.x))
    assert errs[0] > errs[1] > errs[2]


def test_l2_error_rate_in_2d():
    errs = []
    for n in (4, 8, 16):
        prob = manufactured_problem("quarter-annulus-2d", 2, n, n)
        errs.append(l2_error(prob, solve_preconditioned(prob, "AR", tol=1e-11).x))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 2.5)


def test_full_solution_shape():
    prob = manufactured_problem("quarter-annulus-2d", 1, 3, 3)
    u = full_solution(prob, np.zeros(prob.rhs.size))
    np.testing.assert_array_equal(u, prob.info["lift"])


# --- preconditioning ---------------------------------------------------------


@pytest.mark.parametrize("gid", ["unit-square", "unit-cube"])
def test_exact_preconditioner_on_cartesian_geometry(gid):
    prob = manufactured_problem(gid, 2, 3, 3)
    res = solve_preconditioned(prob, "LR", tol=1e-8)
    assert res.converged and res.iterations <= 2


def test_preconditioner_apply_inverts_parametric_operator():
    prob = manufactured_problem("unit-square", 2, 3, 4)
    p = plan("AR", prob.A_t, prob.M_t, prob.diagonalize_space())
    from heatkron.spacetime_solvers import heat_operator

    op = heat_operator(prob.A_t, prob.M_t, prob.space)
    r = np.random.default_rng(4).standard_normal(prob.rhs.size)
    np.testing.assert_allclose(op @ precondition_apply(p, r), r, atol=1e-10)


def test_methods_give_identical_iterations_and_histories():
    prob = manufactured_problem("rotated-quarter-annulus-3d", 2, 4, 4)
    runs = {m: solve_preconditioned(prob, m, tol=1e-8) for m in ("LU", "AR", "LR")}
    counts = {r.iterations for r in runs.values()}
    assert len(counts) == 1
    ref = np.array(runs["LU"].residuals)
    for m in ("AR", "LR"):
        np.testing.assert_allclose(runs[m].residuals, ref, rtol=1e-6)


@pytest.mark.slow
def test_iteration_growth_under_refinement():
    its = [solve_preconditioned(manufactured_problem("rotated-quarter-annulus-3d", 1, n, n), "LU").iterations
           for n in (8, 16)]
    assert its[0] <= its[1] <= 1.6 * its[0]
