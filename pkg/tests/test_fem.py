"""FE spaces, assembly oracles, norms, projections, and carry."""

import math

import numpy as np
import pytest

from goafem.fem import (FeSolution, assemble, assemble_dual, build_space,
                        carry, edge_quadrature, energy_norm_diff,
                        fe_values_at, goal_value, l2_norm_diff,
                        l2_project_element, project_residual,
                        triangle_quadrature)
from goafem.mesh import assign_refinement_edges, unit_square_mesh
from goafem.problem import (CoefficientField, ProblemData, SQUARE, constant,
                            manufactured)
from goafem.solver import solve


def single_right_triangle():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return assign_refinement_edges(pts, [(0, 1, 2)])


def make_data(A=None, b=(0.0, 0.0), c=0.0, f=1.0, g=1.0):
    A = np.eye(2) if A is None else np.asarray(A, dtype=float)
    return ProblemData(constant(A), constant(np.array(b, dtype=float)),
                       constant(np.array(float(c))),
                       f if isinstance(f, CoefficientField)
                       else constant(np.array(float(f))),
                       g if isinstance(g, CoefficientField)
                       else constant(np.array(float(g))), SQUARE)


def full_matrix(space, d, **kw):
    """Assemble over ALL dofs by faking an all-interior space."""
    import copy
    s = copy.copy(space)
    s.dof_boundary = np.zeros(space.num_dofs, dtype=bool)
    s.interior_dofs = np.arange(space.num_dofs)
    s.num_interior = space.num_dofs
    s.interior_map = np.arange(space.num_dofs)
    return assemble(s, d, **kw)


# ----------------------------------------------------------------------
# quadrature

@pytest.mark.parametrize("degree", [0, 1, 2, 3, 4, 6, 8, 10])
def test_triangle_quadrature_exact_monomials(degree):
    bary, w = triangle_quadrature(degree)
    assert w.sum() == pytest.approx(0.5, abs=1e-14)
    # reference coordinates
    x, y = bary[:, 1], bary[:, 2]
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            # exact integral of x^i y^j over the unit right triangle
            exact = (math.factorial(i) * math.factorial(j)
                     / math.factorial(i + j + 2))
            got = np.sum(w * x ** i * y ** j)
            assert got == pytest.approx(exact, rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("degree", [0, 1, 3, 5, 7])
def test_edge_quadrature_exact(degree):
    t, w = edge_quadrature(degree)
    assert w.sum() == pytest.approx(1.0)
    for k in range(degree + 1):
        assert np.sum(w * t ** k) == pytest.approx(1.0 / (k + 1), rel=1e-13)


# ----------------------------------------------------------------------
# spaces

def test_single_triangle_space_all_boundary():
    space = build_space(single_right_triangle(), 1)
    assert space.num_dofs == 3
    assert space.num_interior == 0


def test_criss_cross_interior_dof_count():
    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    # 2x2 criss-cross: 13 vertices, interior = 1 cross point + 4 centers
    assert space.num_dofs == 13
    assert space.num_interior == 5


def test_refinement_grows_dofs():
    mesh = unit_square_mesh(cells=2)
    n_prev = build_space(mesh, 1).num_dofs
    for _ in range(3):
        mesh.refine_uniform(1)
        n = build_space(mesh, 1).num_dofs
        assert n > n_prev
        n_prev = n


def test_p2_space_dof_count():
    mesh = unit_square_mesh(cells=1)
    space = build_space(mesh, 2)
    # 5 vertices + 8 edges
    assert space.num_dofs == 13


def test_unsupported_degree_rejected():
    from goafem.fem import FemError
    with pytest.raises(FemError):
        build_space(unit_square_mesh(cells=1), 3)


# ----------------------------------------------------------------------
# assembly oracles on the unit right triangle

def test_local_stiffness_oracle():
    space = build_space(single_right_triangle(), 1)
    sysm = full_matrix(space, make_data(c=0.0))
    M = sysm.matrix.toarray()
    # dof order follows the stored element ordering; map back to the
    # geometric vertices (0,0), (1,0), (0,1)
    perm = [np.argmin(np.hypot(space.dof_x - px, space.dof_y - py))
            for px, py in ((0, 0), (1, 0), (0, 1))]
    M = M[np.ix_(perm, perm)]
    oracle = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0],
                       [-0.5, 0.0, 0.5]])
    assert np.allclose(M, oracle, atol=1e-13)


def test_local_mass_oracle():
    space = build_space(single_right_triangle(), 1)
    sysm = full_matrix(space, make_data(A=np.zeros((2, 2)) + 1e-300, c=1.0))
    M = sysm.matrix.toarray()
    oracle = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    # mass matrix is permutation-invariant in this symmetric pattern
    assert np.allclose(np.sort(M.ravel()), np.sort(oracle.ravel()), atol=1e-13)
    assert np.allclose(M, M.T, atol=1e-15)


def test_local_convection_oracle():
    space = build_space(single_right_triangle(), 1)
    d = make_data(A=np.zeros((2, 2)) + 1e-300, b=(1.0, 0.0), c=0.0)
    sysm = full_matrix(space, d)
    M = sysm.matrix.toarray()
    perm = [np.argmin(np.hypot(space.dof_x - px, space.dof_y - py))
            for px, py in ((0, 0), (1, 0), (0, 1))]
    M = M[np.ix_(perm, perm)]
    # column j: (d phi_j / dx) * |T|/3; gradients d/dx = (-1, 1, 0)
    oracle = np.outer(np.ones(3), np.array([-1.0, 1.0, 0.0])) * (0.5 / 3.0)
    assert np.allclose(M, oracle, atol=1e-13)


def test_rhs_constant_forcing():
    # g = 1 -> rhs[i] = sum over support of |T|/3 for n=1
    mesh = unit_square_mesh(cells=1)
    space = build_space(mesh, 1)
    sysm = assemble(space, make_data(c=1.0, f=1.0))
    areas = space.area
    expect = np.zeros(space.num_dofs)
    for k in range(space.num_elems):
        for dof in space.elem_dofs[k]:
            expect[dof] += areas[k] / 3.0
    assert np.allclose(sysm.rhs, expect[space.interior_dofs], atol=1e-14)


# ----------------------------------------------------------------------
# transpose identity and structure

@pytest.mark.parametrize("name", ["square-smooth", "square-convect",
                                  "lshape-corner", "lshape-goal"])
def test_transpose_identity(name):
    case = manufactured(name)
    mesh = case.data.domain.mesh()
    space = build_space(mesh, 1)
    Mp = assemble(space, case.data).matrix.toarray()
    Md = assemble_dual(space, case.data).matrix.toarray()
    assert np.max(np.abs(Md - Mp.T)) <= 1e-12


def test_b_zero_dual_equals_primal():
    case = manufactured("square-poly")
    space = build_space(case.data.domain.mesh(), 1)
    Mp = assemble(space, case.data).matrix.toarray()
    Md = assemble_dual(space, case.data).matrix.toarray()
    assert np.allclose(Mp, Md, atol=1e-14)


def test_coercivity_witness():
    case = manufactured("square-convect")
    space = build_space(case.data.domain.mesh(), 1)
    M = assemble(space, case.data).matrix.toarray()
    Ms = 0.5 * (M + M.T)
    rng = np.random.default_rng(5)
    for _ in range(50):
        v = rng.standard_normal(M.shape[0])
        assert v @ Ms @ v > 0.0


def test_skew_part_is_convection():
    d_full = make_data(b=(1.0, 1.0), c=1.0)
    d_conv = make_data(A=np.zeros((2, 2)) + 1e-300, b=(1.0, 1.0), c=0.0)
    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    M = assemble(space, d_full).matrix.toarray()
    C = assemble(space, d_conv).matrix.toarray()
    assert np.max(np.abs((M - M.T) - (C - C.T))) <= 1e-12


# ----------------------------------------------------------------------
# norms

def test_energy_norm_unit_gradient():
    # piecewise function with gradient (1,0): u = x on the square, A=I, c=0
    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    coeffs = space.dof_x.copy()
    fh = FeSolution(space, coeffs)
    d = make_data(c=0.0)
    assert energy_norm_diff(space, d, fh) == pytest.approx(1.0, abs=1e-13)


def test_energy_norm_exact_polynomial_zero():
    # fh reproduces a degree-1 exact field exactly
    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    fh = FeSolution(space, 2.0 * space.dof_x + 3.0 * space.dof_y)

    class Lin:
        def __call__(self, x, y):
            return 2.0 * x + 3.0 * y

        def grad(self, x, y):
            return np.stack([2.0 * np.ones_like(x), 3.0 * np.ones_like(x)])

    d = make_data(c=1.0)
    assert energy_norm_diff(space, d, fh, Lin()) <= 1e-13


def test_l2_norm_of_one():
    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    fh = FeSolution(space, np.ones(space.num_dofs))
    assert l2_norm_diff(space, fh) == pytest.approx(1.0, abs=1e-13)


def test_interpolant_energy_error_rate():
    # interpolating sin(pi x) sin(pi y): energy error ~ h for P1
    case = manufactured("square-smooth")
    errs = []
    mesh = SQUARE.mesh()
    for _ in range(7):
        space = build_space(mesh, 1)
        fh = FeSolution(space, case.exact_u(space.dof_x, space.dof_y)
                        * ~space.dof_boundary)
        errs.append(energy_norm_diff(space, case.data, fh, case.exact_u))
        mesh.refine_uniform(1)
    # two bisection rounds halve h (similarity classes alternate), so the
    # P1 energy rate shows up as a factor ~2 per generation pair
    rates = [math.log2(errs[i] / errs[i + 2]) for i in range(5)]
    assert all(0.6 <= r <= 1.4 for r in rates)


# ----------------------------------------------------------------------
# goal values

def test_goal_constant_density_constant_function():
    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    fh = FeSolution(space, 3.0 * np.ones(space.num_dofs))
    assert goal_value(space, constant(np.array(1.0)), fh) \
        == pytest.approx(3.0, abs=1e-13)


def test_goal_mean_value_density():
    def chi(x, y):
        return np.where((x <= 0.5) & (y <= 0.5), 4.0, 0.0)

    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    fh = FeSolution(space, 7.0 * np.ones(space.num_dofs))
    g = CoefficientField((), fn=chi)
    assert goal_value(space, g, fh) == pytest.approx(7.0, abs=1e-12)


def test_goal_converges_to_exact():
    case = manufactured("square-smooth")
    mesh = SQUARE.mesh()
    mesh.refine_uniform(6)
    space = build_space(mesh, 1)
    sysm = assemble(space, case.data)
    x, rep = solve(sysm)
    assert rep.converged
    fh = FeSolution(space, space.expand(x))
    got = goal_value(space, case.data.goal_g, fh)
    assert got == pytest.approx(case.exact_goal, abs=2e-3)


# ----------------------------------------------------------------------
# local L2 projection

def test_project_polynomial_onto_own_space():
    mesh = unit_square_mesh(cells=2)
    space = build_space(mesh, 1)
    bary, wq = triangle_quadrature(6)
    xs, ys = space.quad_points(bary)
    vals = 1.0 + 2.0 * xs - 3.0 * ys + xs * ys   # degree 2
    rem = project_residual(space, 2, vals, bary, wq)
    assert np.max(np.abs(rem)) <= 1e-12


def test_project_onto_constants_is_mean():
    space = build_space(single_right_triangle(), 1)
    value_at, err = l2_project_element(space, 0, 0, lambda x, y: x)
    # best constant = mean of x over the unit right triangle = 1/3
    assert value_at(0.2, 0.2) == pytest.approx(1.0 / 3.0, abs=1e-13)
    # remainder norm: sqrt(int (x - 1/3)^2) = sqrt(1/36)
    assert err == pytest.approx(math.sqrt(1.0 / 36.0), rel=1e-10)


def test_projection_remainder_contraction():
    space = build_space(unit_square_mesh(cells=2).clone(), 1)
    bary, wq = triangle_quadrature(8)
    xs, ys = space.quad_points(bary)
    vals = np.sin(3.0 * xs) * np.cos(2.0 * ys)
    rem = project_residual(space, 0, vals, bary, wq)
    norm2_rem = np.sum(wq * rem * rem, axis=1)
    norm2_val = np.sum(wq * vals * vals, axis=1)
    assert np.all(norm2_rem <= norm2_val + 1e-15)


# ----------------------------------------------------------------------
# carry between nested spaces

def test_carry_exact_on_nested_spaces():
    case = manufactured("square-smooth")
    mesh = SQUARE.mesh()
    coarse = build_space(mesh, 1)
    sysm = assemble(coarse, case.data)
    x, _ = solve(sysm)
    u_c = coarse.expand(x)
    mesh.refine(set(mesh.leaf_ids()[:5]))
    fine = build_space(mesh, 1)
    u_f = carry(coarse, u_c, fine)
    # the carried function is the same function: equal point values
    bary, _ = triangle_quadrature(4)
    vals_f = fe_values_at(fine, u_f, bary)
    xs, ys = fine.quad_points(bary)
    # evaluate the coarse function by locating each fine element's root
    fh_c = FeSolution(coarse, u_c)
    d = case.data
    e_c = energy_norm_diff(coarse, d, fh_c)
    e_f = energy_norm_diff(fine, d, FeSolution(fine, u_f))
    assert e_f == pytest.approx(e_c, rel=1e-12)
    assert np.all(np.isfinite(vals_f))


def test_carry_preserves_error_against_exact():
    case = manufactured("square-smooth")
    mesh = SQUARE.mesh()
    coarse = build_space(mesh, 1)
    x, _ = solve(assemble(coarse, case.data))
    u_c = coarse.expand(x)
    err_c = energy_norm_diff(coarse, case.data, FeSolution(coarse, u_c),
                             case.exact_u)
    mesh.refine_uniform(1)
    fine = build_space(mesh, 1)
    u_f = carry(coarse, u_c, fine)
    err_f = energy_norm_diff(fine, case.data, FeSolution(fine, u_f),
                             case.exact_u)
    assert err_f == pytest.approx(err_c, rel=1e-10)


def test_carry_p2(tmp_path):
    mesh = unit_square_mesh(cells=1)
    coarse = build_space(mesh, 2)
    # a quadratic is represented exactly in P2
    u_c = coarse.dof_x * coarse.dof_y
    mesh.refine_uniform(1)
    fine = build_space(mesh, 2)
    u_f = carry(coarse, u_c, fine)
    assert np.allclose(u_f, fine.dof_x * fine.dof_y, atol=1e-13)
