from types import SimpleNamespace

import numpy as np
import pytest

from dmlpanel.errors import DataError, SolverError
from dmlpanel.solvers import (
	LassoProblem,
	QuadraticProblem,
	RieszProblem,
	assemble_riesz_problem,
	coordinate_descent,
	kkt_residual,
	lasso_fit,
	largest_eigenvalue,
	ols_fit,
	riesz_fit_exact,
	riesz_fit_iterative,
	riesz_fit_least_squares,
	soft_threshold,
)


def random_lasso(n=200, q=5, seed=0, penalty=0.0, weights=None) -> LassoProblem:
	rng = np.random.default_rng(seed)
	x = rng.normal(size=(n, q))
	y = x @ rng.normal(size=q) + rng.normal(size=n)
	return LassoProblem(design=x, response=y, weights=weights, penalty=penalty)


def random_riesz(q=4, seed=0, penalty=0.01) -> RieszProblem:
	rng = np.random.default_rng(seed)
	a = rng.normal(size=(500, q))
	return RieszProblem(M=rng.normal(size=q), Q=a.T @ a / 500, penalty=penalty)


def test_zero_penalty_lasso_is_least_squares():
	problem = random_lasso()
	result = lasso_fit(problem)
	assert result.converged
	expected, *_ = np.linalg.lstsq(problem.design, problem.response, rcond=None)
	np.testing.assert_allclose(result.coefficients, expected, atol=1e-9)


def test_soft_threshold_boundary():
	assert soft_threshold(0.5, 0.5) == 0.0
	assert soft_threshold(-0.2, 0.5) == 0.0
	assert soft_threshold(-1.5, 0.5) == -1.0
	at_threshold = coordinate_descent(QuadraticProblem(Q=np.array([[1.0]]), c=np.array([0.5]), penalty=1.0))
	assert at_threshold.coefficients[0] == 0.0
	below = coordinate_descent(QuadraticProblem(Q=np.array([[1.0]]), c=np.array([0.5]), penalty=0.9))
	assert below.coefficients[0] == pytest.approx(0.05)


def test_large_penalty_gives_all_zero_lasso():
	problem = random_lasso(penalty=0.0)
	quad = problem.quadratic()
	big = LassoProblem(problem.design, problem.response, penalty=2.0 * np.abs(quad.c).max() + 1e-9)
	assert lasso_fit(big).nonzero == 0


def _grid_minimum(problem: QuadraticProblem, points: int = 41, levels: int = 16) -> float:
	"""Brute-force minimum over a lattice that is re-centred and shrunk around the best point each level."""
	q = problem.c.shape[0]
	center = np.zeros(q)
	half = 5.0
	best = np.inf
	for _ in range(levels):
		axes = [np.linspace(center[k] - half, center[k] + half, points) for k in range(q)]
		pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
		vals = (
			np.einsum("ni,ij,nj->n", pts, problem.Q, pts)
			- 2.0 * pts @ problem.c
			+ problem.penalty * np.abs(pts).sum(axis=1)
			+ problem.offset
		)
		k = int(np.argmin(vals))
		best = min(best, float(vals[k]))
		center = pts[k]
		half /= 4.0
	return best


def test_two_coefficient_problem_matches_grid_search():
	problem = QuadraticProblem(Q=np.array([[2.0, 0.5], [0.5, 1.0]]), c=np.array([1.0, -0.3]), penalty=0.4)
	result = coordinate_descent(problem)
	best = _grid_minimum(problem)
	assert result.objective <= best + 1e-10
	assert best - result.objective < 1e-5


def test_small_riesz_problems_match_grid_search():
	rng = np.random.default_rng(21)
	for i in range(100):
		q = 1 + i % 3
		a = rng.normal(size=(4, q))
		problem = RieszProblem(M=rng.uniform(-1.0, 1.0, q), Q=a.T @ a / 4 + 0.5 * np.eye(q), penalty=rng.uniform(0.0, 0.5))
		exact = riesz_fit_exact(problem)
		assert exact.converged
		assert abs(exact.objective - _grid_minimum(problem.quadratic())) < 1e-5
		assert exact.kkt_residual < 1e-7
		assert riesz_fit_iterative(problem, step_budget=50).objective >= exact.objective - 1e-12


def test_small_lasso_problems_match_grid_search():
	rng = np.random.default_rng(22)
	for i in range(100):
		q = 1 + i % 3
		x = rng.normal(size=(50, q))
		y = x @ rng.uniform(-1.0, 1.0, q) + rng.normal(scale=0.5, size=50)
		problem = LassoProblem(x, y, weights=rng.uniform(0.5, 2.0, 50), penalty=rng.uniform(0.0, 0.5))
		result = lasso_fit(problem)
		assert result.converged
		assert abs(result.objective - _grid_minimum(problem.quadratic())) < 1e-5
		assert result.kkt_residual < 1e-7


def test_ill_conditioned_polynomial_design_converges():
	rng = np.random.default_rng(23)
	z = rng.uniform(0.0, 1.0, size=400)
	x = np.column_stack([z ** k for k in range(1, 6)])
	x = (x - x.mean(axis=0)) / x.std(axis=0)
	Q = x.T @ x / 400
	assert np.linalg.cond(Q) > 1e4
	problem = RieszProblem(M=rng.normal(size=5), Q=Q, penalty=0.0025)
	result = riesz_fit_exact(problem)
	assert result.converged
	assert result.kkt_residual < 1e-7
	assert result.objective <= riesz_fit_iterative(problem, step_budget=2000).objective + 1e-12
	y = x @ np.array([1.0, -2.0, 0.5, 0.0, 1.5]) + rng.normal(scale=0.1, size=400)
	lasso = lasso_fit(LassoProblem(x, y, penalty=0.0025))
	assert lasso.converged
	assert lasso.kkt_residual < 1e-7
	assert np.all(np.diff(lasso.objective_path) <= 1e-12)


def test_kkt_conditions_hold_at_solution():
	result = lasso_fit(random_lasso(q=8, seed=3, penalty=0.05))
	assert result.converged
	assert result.kkt_residual < 1e-6
	assert 0 < result.nonzero <= 8
	assert np.all(np.diff(result.objective_path) <= 1e-12)


def test_riesz_recovers_inverse_second_moment():
	rng = np.random.default_rng(17)
	n = 100_000
	z = rng.normal(size=n)
	design = SimpleNamespace(delta_basis=z[:, None], derivative=np.ones((n, 1)), weight=np.ones(n))
	result = riesz_fit_exact(assemble_riesz_problem(design, penalty=0.0))
	assert result.coefficients[0] == pytest.approx(1.0, abs=0.02)
	assert result.coefficients[0] == pytest.approx(1.0 / np.mean(z ** 2), rel=1e-10)


def test_zero_curvature_with_signal_is_unbounded():
	problem = RieszProblem(M=np.array([1.0]), Q=np.array([[0.0]]), penalty=0.5)
	with pytest.raises(SolverError):
		riesz_fit_exact(problem)
	# inside the penalty band the coordinate stays at zero
	quiet = RieszProblem(M=np.array([0.1]), Q=np.array([[0.0]]), penalty=0.5)
	assert riesz_fit_exact(quiet).coefficients[0] == 0.0


def test_largest_eigenvalue_of_diagonal():
	assert largest_eigenvalue(np.diag([2.0, 1.0, 0.5])) == pytest.approx(2.0, rel=1e-9)
	assert largest_eigenvalue(np.zeros((3, 3))) == 0.0


def test_iterative_single_step_closed_form():
	problem = RieszProblem(M=np.array([1.0, -0.05, 0.4]), Q=np.diag([2.0, 1.0, 0.5]), penalty=0.2)
	result = riesz_fit_iterative(problem, step_budget=1)
	assert not result.converged
	assert result.iterations == 1
	assert result.step == pytest.approx(1.0 / (2.0 * 1.05 * 2.0), rel=1e-9)
	expected = soft_threshold(2.0 * result.step * problem.M, result.step * problem.penalty)
	np.testing.assert_allclose(result.coefficients, expected, rtol=1e-12)
	assert result.coefficients[1] == 0.0


def test_iterative_never_beats_exact():
	for seed in range(5):
		problem = random_riesz(seed=seed)
		exact = riesz_fit_exact(problem)
		for budget in (1, 10, 100):
			assert riesz_fit_iterative(problem, step_budget=budget).objective >= exact.objective - 1e-12


def test_iterative_converges_with_a_large_budget():
	problem = random_riesz(seed=4, penalty=0.02)
	exact = riesz_fit_exact(problem)
	long_run = riesz_fit_iterative(problem, step_budget=20_000)
	np.testing.assert_allclose(long_run.coefficients, exact.coefficients, atol=1e-6)


def test_iterative_objective_path_is_monotone():
	result = riesz_fit_iterative(random_riesz(seed=2, penalty=0.05), step_budget=300)
	assert len(result.objective_path) == 300
	assert np.all(np.diff(result.objective_path) <= 1e-12)


def test_weight_scale_does_not_change_lasso():
	rng = np.random.default_rng(5)
	w = rng.uniform(0.2, 3.0, size=200)
	a = lasso_fit(random_lasso(seed=5, penalty=0.03, weights=w))
	b = lasso_fit(random_lasso(seed=5, penalty=0.03, weights=7.0 * w))
	np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-10)


def test_least_squares_riesz_solves_normal_equations():
	problem = random_riesz(seed=8, penalty=0.0)
	result = riesz_fit_least_squares(problem)
	np.testing.assert_allclose(problem.Q @ result.coefficients, problem.M, atol=1e-10)


def test_ols_exact_fit():
	rng = np.random.default_rng(1)
	x = rng.normal(size=(50, 3))
	beta = np.array([1.5, -2.0, 0.25])
	result = ols_fit(x, x @ beta)
	np.testing.assert_allclose(result.coefficients, beta, atol=1e-10)
	assert result.dropped == ()


def test_ols_duplicate_column_is_dropped():
	rng = np.random.default_rng(2)
	base = rng.normal(size=(40, 2))
	x = np.column_stack([base, base[:, 0]])
	y = base @ np.array([1.0, 2.0]) + rng.normal(scale=0.1, size=40)
	result = ols_fit(x, y)
	assert len(result.dropped) == 1
	assert result.dropped[0] in (0, 2)
	assert result.coefficients[result.dropped[0]] == 0.0
	expected, *_ = np.linalg.lstsq(base, y, rcond=None)
	np.testing.assert_allclose(x @ result.coefficients, base @ expected, atol=1e-10)


def test_weighted_ols_matches_normal_equations():
	rng = np.random.default_rng(3)
	x = rng.normal(size=(80, 4))
	y = rng.normal(size=80)
	w = rng.uniform(0.1, 2.0, size=80)
	result = ols_fit(x, y, w)
	xtw = x.T * w
	np.testing.assert_allclose(result.coefficients, np.linalg.solve(xtw @ x, xtw @ y), atol=1e-10)


def test_ols_rejects_empty_design():
	with pytest.raises(DataError):
		ols_fit(np.zeros((0, 2)), np.zeros(0))


def test_assemble_riesz_small_example():
	single = SimpleNamespace(delta_basis=np.array([[1.0, 0.0]]), derivative=np.array([[2.0, 0.0]]), weight=np.ones(1))
	one_row = assemble_riesz_problem(single, penalty=0.0)
	np.testing.assert_array_equal(one_row.M, [2.0, 0.0])
	np.testing.assert_array_equal(one_row.Q, [[1.0, 0.0], [0.0, 0.0]])

	design = SimpleNamespace(
		delta_basis=np.array([[1.0, 0.0], [0.0, 2.0]]),
		derivative=np.array([[1.0, 1.0], [3.0, 1.0]]),
		weight=np.ones(2),
	)
	problem = assemble_riesz_problem(design, penalty=0.1)
	np.testing.assert_allclose(problem.M, [2.0, 1.0])
	np.testing.assert_allclose(problem.Q, np.diag([0.5, 2.0]))
	weighted = assemble_riesz_problem(SimpleNamespace(**{**vars(design), "weight": np.array([1.0, 3.0])}), penalty=0.1)
	np.testing.assert_allclose(weighted.M, [2.5, 1.0])
	np.testing.assert_allclose(weighted.Q, np.diag([0.25, 3.0]))


def test_assembled_gram_is_psd_and_row_order_free():
	rng = np.random.default_rng(12)
	design = SimpleNamespace(delta_basis=rng.normal(size=(60, 6)), derivative=rng.normal(size=(60, 6)), weight=rng.uniform(0.5, 2, 60))
	problem = assemble_riesz_problem(design, penalty=0.0)
	assert np.linalg.eigvalsh(problem.Q).min() >= -1e-12
	perm = rng.permutation(60)
	shuffled = SimpleNamespace(delta_basis=design.delta_basis[perm], derivative=design.derivative[perm], weight=design.weight[perm])
	other = assemble_riesz_problem(shuffled, penalty=0.0)
	np.testing.assert_allclose(other.M, problem.M, atol=1e-12)
	np.testing.assert_allclose(other.Q, problem.Q, atol=1e-12)


def test_kkt_residual_at_zero_with_dominant_penalty():
	quad = QuadraticProblem(Q=np.eye(2), c=np.array([0.1, -0.2]), penalty=1.0)
	assert kkt_residual(quad, np.zeros(2)) == 0.0
