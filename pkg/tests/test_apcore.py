import numpy as np
import pytest

from apdiff.apcore import (
    LinearProblem,
    fill_ghost,
    reconstruct_pi,
    reconstruct_q,
    solve_L,
    solve_h,
    solve_l,
    solve_linear_ap,
)
from apdiff.grid import INTERIOR, CellField, NodeField, make_grid, sample_node
from apdiff.linsolve import SolverConfig
from apdiff.operators import apply_dh
from apdiff.problems import case_angle, case_linear_variable
from apdiff.experiments import fit_loglog_slope, rel_error, unit_square_grid

from _oracles import dense_second_order

UNIT = ((1.0, 2.0), (1.0, 2.0))


def swirl_problem(grid, eps, source=None, grad_source=None):
    bump = lambda x, y: 1.0 + np.sin(x) ** 2 * np.sin(y) ** 2
    return LinearProblem.from_functions(
        grid,
        eps,
        reaction=bump,
        diffusivity=bump,
        direction=lambda x, y: (y / np.hypot(x, y), -x / np.hypot(x, y)),
        source=source or (lambda x, y: np.zeros_like(x)),
        grad_source=grad_source or (lambda x, y: np.zeros_like(x)),
    )


def test_problem_validation():
    g = make_grid(UNIT, 5, 5)
    with pytest.raises(ValueError):
        swirl_problem(g, -1.0)
    with pytest.raises(ValueError):
        LinearProblem.from_functions(
            g, 0.0,
            reaction=lambda x, y: np.zeros_like(x),  # not strictly positive
            diffusivity=lambda x, y: np.ones_like(x),
            direction=lambda x, y: (np.ones_like(x), np.zeros_like(x)),
            source=lambda x, y: np.zeros_like(x),
            grad_source=lambda x, y: np.zeros_like(x),
        )


def test_solve_h_zero_source():
    g = make_grid(UNIT, 8, 8)
    h, rep = solve_h(swirl_problem(g, 0.5))
    assert rep.ok
    np.testing.assert_allclose(h.values, 0.0, atol=1e-12)


def test_solve_h_constant_source_ratio():
    g = make_grid(UNIT, 8, 8)
    bump = lambda x, y: 1.0 + np.sin(x) ** 2 * np.sin(y) ** 2
    # f/G constant -> right-hand side vanishes
    problem = swirl_problem(g, 0.5, source=lambda x, y: 3.0 * bump(x, y))
    h, rep = solve_h(problem)
    np.testing.assert_allclose(h.values, 0.0, atol=1e-10)


def test_reconstruct_pi_trivial_cases():
    g = make_grid(UNIT, 6, 6)
    bump = lambda x, y: 1.0 + np.sin(x) ** 2 * np.sin(y) ** 2
    problem = swirl_problem(g, 0.1, source=bump)
    pi = reconstruct_pi(problem, CellField.zeros(g))
    np.testing.assert_allclose(pi.values[INTERIOR], 1.0, rtol=1e-14)
    problem0 = swirl_problem(g, 0.1)
    pi0 = reconstruct_pi(problem0, CellField.zeros(g))
    np.testing.assert_allclose(pi0.values, 0.0)


def test_solve_L_skipped_at_eps_zero():
    g = make_grid(UNIT, 8, 8)
    case = case_linear_variable(g, 0.0)
    L, rep = solve_L(case.problem)
    assert "skipped" in rep.method
    assert np.all(L.values == 0.0)


def test_solve_L_vanishes_when_sources_balance():
    g = make_grid(UNIT, 8, 8)
    problem = swirl_problem(g, 0.3, source=lambda x, y: np.sin(x) * np.cos(y))
    # prescribe b.S = dh(f/G) pointwise so the right-hand side cancels exactly
    ratio = NodeField(g, problem.source_node.values / problem.reaction_node.values)
    problem.grad_source_cell = CellField(g, apply_dh(ratio, problem.context()).values)
    L, rep = solve_L(problem)
    np.testing.assert_allclose(L.values, 0.0, atol=1e-10)


def test_solve_l_trivial():
    g = make_grid(UNIT, 8, 8)
    problem = swirl_problem(g, 0.2)
    l, rep = solve_l(problem, CellField.zeros(g))
    np.testing.assert_allclose(l.values, 0.0, atol=1e-12)


def test_reconstruct_q_trivial_and_impulse():
    g = make_grid(UNIT, 6, 6)
    problem = swirl_problem(g, 0.2)
    q = reconstruct_q(problem, CellField.zeros(g))
    np.testing.assert_allclose(q.values, 0.0)
    # single-cell impulse with unit reaction: q equals the divergence stencil
    ones = lambda x, y: np.ones_like(x)
    problem1 = LinearProblem.from_functions(
        g, 0.2, reaction=ones, diffusivity=ones,
        direction=lambda x, y: (y / np.hypot(x, y), -x / np.hypot(x, y)),
        source=lambda x, y: np.zeros_like(x), grad_source=lambda x, y: np.zeros_like(x),
    )
    l = CellField.zeros(g)
    l.values[3, 3] = 1.0
    from apdiff.operators import apply_dh_star

    q1 = reconstruct_q(problem1, l)
    expected = apply_dh_star(l, problem1.context())
    np.testing.assert_allclose(q1.values, expected.values, atol=1e-14)


def test_three_solves_match_dense_oracle():
    # every elliptic stage against a dense LU on a small grid
    g = make_grid(UNIT, 7, 7)
    case = case_linear_variable(g, 0.37)
    problem = case.problem
    dec = solve_linear_ap(problem, fill=False)

    b = problem.direction.values
    a_mean = dense_second_order(g, b, problem.reaction_cell.values, problem.reaction_node.values)
    a_fluct = dense_second_order(g, b, problem.diffusivity_cell.values, problem.reaction_node.values)
    a_fluct += problem.eps * np.eye(g.n_interior_cells)

    ratio = NodeField(g, problem.source_node.values / problem.reaction_node.values)
    rhs_mean = apply_dh(ratio, problem.context()).values[INTERIOR].ravel()
    h_dense = np.linalg.solve(a_mean, rhs_mean)
    np.testing.assert_allclose(dec.h.values[INTERIOR].ravel(), h_dense, atol=1e-12)

    rhs_L = -problem.eps * (rhs_mean - problem.grad_source_cell.values[INTERIOR].ravel())
    L_dense = np.linalg.solve(a_fluct, rhs_L)
    np.testing.assert_allclose(dec.L.values[INTERIOR].ravel(), L_dense, atol=1e-12)

    rhs_l = L_dense - problem.grad_source_cell.values[INTERIOR].ravel()
    l_dense = np.linalg.solve(a_mean, rhs_l)
    np.testing.assert_allclose(dec.l.values[INTERIOR].ravel(), l_dense, atol=1e-12)


def test_constant_solution_for_any_eps():
    g = make_grid(UNIT, 10, 10)
    bump = lambda x, y: 1.0 + np.sin(x) ** 2 * np.sin(y) ** 2
    for eps in (0.0, 1e-9, 0.5):
        problem = swirl_problem(g, eps, source=lambda x, y: 4.2 * bump(x, y))
        dec = solve_linear_ap(problem)
        np.testing.assert_allclose(dec.p.values[INTERIOR], 4.2, rtol=1e-9)


def test_decomposition_identity():
    g = make_grid(UNIT, 12, 12)
    case = case_linear_variable(g, 1e-3)
    dec = solve_linear_ap(case.problem)
    np.testing.assert_array_equal(
        dec.p.values[INTERIOR], dec.pi.values[INTERIOR] + dec.q.values[INTERIOR]
    )


def test_mean_part_kernel_property():
    g = unit_square_grid(50)
    case = case_linear_variable(g, 1e-9)
    dec = solve_linear_ap(case.problem, SolverConfig(tol=1e-12))
    assert dec.mean_gradient_l2 <= 100 * 1e-12


def test_eps_uniform_well_posedness():
    g = unit_square_grid(25)
    errors = []
    for eps in (1.0, 1e-3, 1e-9, 0.0):
        case = case_linear_variable(g, eps)
        dec = solve_linear_ap(case.problem)
        errors.append(rel_error(case.exact_field(), dec.p, 2))
    assert (max(errors) - min(errors)) / max(errors) < 0.10


def test_vanishing_eps_matches_limit_solve():
    g = unit_square_grid(25)
    p_small = solve_linear_ap(case_linear_variable(g, 1e-9).problem).p
    p_zero = solve_linear_ap(case_linear_variable(g, 0.0).problem).p
    diff = np.linalg.norm(p_small.values[INTERIOR] - p_zero.values[INTERIOR])
    assert diff / np.linalg.norm(p_zero.values[INTERIOR]) <= 1e-8


def test_second_order_convergence_small():
    errs, hs = [], []
    for cells in (12, 24, 48):
        g = unit_square_grid(cells)
        case = case_linear_variable(g, 0.0)
        dec = solve_linear_ap(case.problem)
        errs.append(rel_error(case.exact_field(), dec.p, 2))
        hs.append(g.h)
    slope = fit_loglog_slope(hs, errs)
    assert 1.8 <= slope <= 2.2


def test_orthogonality_of_decomposition():
    # the mean and fluctuation parts are orthogonal in the reaction-weighted
    # inner product down to the solver residual (the duality identity makes
    # this exact, far below the O(h^2) one could settle for)
    for cells in (16, 32):
        g = unit_square_grid(cells)
        case = case_angle(g, 1e-3, 0.6)
        dec = solve_linear_ap(case.problem)
        gv = case.problem.reaction_node.values[INTERIOR]
        w = g.dx * g.dy
        pi_i, q_i = dec.pi.values[INTERIOR], dec.q.values[INTERIOR]
        num = abs(np.sum(gv * pi_i * q_i) * w)
        den = np.sqrt(np.sum(gv * pi_i**2) * w) * np.sqrt(np.sum(gv * q_i**2) * w)
        assert num / den <= 1e-10


def test_fill_ghost_affine_exactness():
    g = make_grid(UNIT, 10, 10)
    c0, c1, c2 = 0.4, 1.7, -0.9
    problem = swirl_problem(g, 0.2)
    b = problem.direction
    problem.grad_source_cell = CellField(g, b.x * c1 + b.y * c2)
    p = NodeField.zeros(g)
    exact = sample_node(lambda x, y: c0 + c1 * x + c2 * y, g)
    p.values[INTERIOR] = exact.values[INTERIOR]
    filled, report = fill_ghost(p, problem)
    assert report.constraint_defect <= 1e-12
    mask = ~g.interior_node_mask
    np.testing.assert_allclose(filled.values[mask], exact.values[mask], atol=1e-10)


def test_fill_ghost_constant():
    g = make_grid(UNIT, 8, 8)
    problem = swirl_problem(g, 0.2)
    p = NodeField.zeros(g)
    p.values[INTERIOR] = 2.5
    filled, report = fill_ghost(p, problem)
    mask = ~g.interior_node_mask
    np.testing.assert_allclose(filled.values[mask], 2.5, atol=1e-12)
    assert report.constraint_defect <= 1e-12


def test_fill_ghost_second_order_on_manufactured_case():
    errs = []
    for cells in (25, 50):
        g = unit_square_grid(cells)
        case = case_linear_variable(g, 0.1)
        exact = case.exact_field()
        p = NodeField.zeros(g)
        p.values[INTERIOR] = exact.values[INTERIOR]
        filled, report = fill_ghost(p, case.problem)
        assert report.rank_deficient  # tangential corners: reported, not fatal
        mask = ~g.interior_node_mask
        errs.append(np.abs(filled.values - exact.values)[mask].max())
    assert errs[1] <= errs[0] / 3.0  # ~ h^2


def test_fill_ghost_preserves_interior():
    g = make_grid(UNIT, 8, 8)
    case = case_linear_variable(g, 0.1)
    rng = np.random.default_rng(2)
    p = NodeField.zeros(g)
    p.values[INTERIOR] = rng.standard_normal((g.nx + 1, g.ny + 1))
    before = p.values[INTERIOR].copy()
    filled, _ = fill_ghost(p, case.problem)
    np.testing.assert_array_equal(filled.values[INTERIOR], before)


def test_residuals_reported():
    g = make_grid(UNIT, 10, 10)
    case = case_linear_variable(g, 0.5)
    dec = solve_linear_ap(case.problem)
    assert set(dec.residuals) == {"h", "L", "l"}
    assert all(r <= 1e-12 for r in dec.residuals.values())
