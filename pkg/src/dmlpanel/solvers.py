"""L1-penalized quadratic solvers for the regression and Riesz-representer fits, plus weighted OLS.

Both penalized problems are solved in the same form

    minimize  rho' Q rho - 2 c' rho + penalty * |rho|_1 (+ offset)

Lasso: Q = X'WX / N, c = X'Wy / N, offset = y'Wy / N.  Riesz: Q = mean of delta-basis outer
products, c = M (mean standardized derivative row).  Weights are always rescaled to mean 1.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from dmlpanel.errors import DataError, SolverError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
DEFAULT_STEP_BUDGET = 400
_ZERO_CURVATURE = 1e-14
_POWER_ITERATIONS = 200
_STEP_SAFETY = 1.05


def normalized_weights(weights: Optional[np.ndarray], n: int) -> np.ndarray:
	if weights is None:
		return np.ones(n)
	w = np.asarray(weights, dtype=float)
	if w.shape != (n,):
		raise DataError(f"weights have shape {w.shape}, expected ({n},)")
	if not np.all(np.isfinite(w)) or np.any(w <= 0):
		raise DataError("weights must be finite and strictly positive")
	return w * (n / w.sum())


@dataclass(frozen=True)
class QuadraticProblem:
	Q: np.ndarray
	c: np.ndarray
	penalty: float
	offset: float = 0.0

	def objective(self, rho: np.ndarray) -> float:
		rho = np.asarray(rho, dtype=float)
		return float(rho @ self.Q @ rho - 2.0 * self.c @ rho + self.penalty * np.abs(rho).sum() + self.offset)

	def gradient(self, rho: np.ndarray) -> np.ndarray:
		"""Gradient of the smooth part, 2 Q rho - 2 c."""
		return 2.0 * (self.Q @ rho) - 2.0 * self.c


@dataclass(frozen=True)
class LassoProblem:
	design: np.ndarray
	response: np.ndarray
	weights: Optional[np.ndarray] = None
	penalty: float = 0.0

	def __post_init__(self) -> None:
		x = np.asarray(self.design, dtype=float)
		y = np.asarray(self.response, dtype=float)
		if x.ndim != 2 or y.shape != (x.shape[0],):
			raise DataError(f"design {x.shape} and response {y.shape} do not line up")
		if x.shape[0] == 0:
			raise DataError("lasso problem has no rows")
		if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
			raise DataError("non-finite entries in lasso problem")
		if self.penalty < 0:
			raise DataError(f"penalty must be >= 0, got {self.penalty}")
		object.__setattr__(self, "design", x)
		object.__setattr__(self, "response", y)
		object.__setattr__(self, "weights", normalized_weights(self.weights, x.shape[0]))

	def quadratic(self) -> QuadraticProblem:
		n = self.design.shape[0]
		wx = self.design * self.weights[:, None]
		return QuadraticProblem(
			Q=(wx.T @ self.design) / n,
			c=(wx.T @ self.response) / n,
			penalty=float(self.penalty),
			offset=float(self.weights @ self.response ** 2) / n,
		)


@dataclass(frozen=True)
class RieszProblem:
	M: np.ndarray
	Q: np.ndarray
	penalty: float = 0.0

	def __post_init__(self) -> None:
		M = np.asarray(self.M, dtype=float)
		Q = np.asarray(self.Q, dtype=float)
		if Q.shape != (M.shape[0], M.shape[0]):
			raise DataError(f"Q has shape {Q.shape}, expected {(M.shape[0], M.shape[0])}")
		if self.penalty < 0:
			raise DataError(f"penalty must be >= 0, got {self.penalty}")
		object.__setattr__(self, "M", M)
		object.__setattr__(self, "Q", 0.5 * (Q + Q.T))

	def quadratic(self) -> QuadraticProblem:
		return QuadraticProblem(Q=self.Q, c=self.M, penalty=float(self.penalty))


@dataclass
class SolverResult:
	coefficients: np.ndarray
	iterations: int
	converged: bool
	objective: float
	objective_path: List[float] = field(default_factory=list)
	kkt_residual: float = float("nan")
	step: Optional[float] = None
	dropped: Tuple[int, ...] = ()
	notes: List[str] = field(default_factory=list)

	@property
	def nonzero(self) -> int:
		return int(np.count_nonzero(self.coefficients))


def soft_threshold(value, threshold: float):
	return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


def kkt_residual(problem: QuadraticProblem, rho: np.ndarray) -> float:
	"""Largest violation of the subgradient optimality conditions at rho."""
	if rho.shape[0] == 0:
		return 0.0
	g = problem.gradient(rho)
	lam = problem.penalty
	nz = rho != 0
	viol = np.where(nz, np.abs(g + lam * np.sign(rho)), np.maximum(np.abs(g) - lam, 0.0))
	return float(viol.max())


def _sweep(problem: QuadraticProblem, rho: np.ndarray, q_rho: np.ndarray, coords) -> float:
	Q, c, half_lam = problem.Q, problem.c, 0.5 * problem.penalty
	max_delta = 0.0
	for j in coords:
		qjj = Q[j, j]
		old = rho[j]
		partial = c[j] - (q_rho[j] - qjj * old)
		if qjj <= _ZERO_CURVATURE:
			if abs(partial) > half_lam:
				raise SolverError(f"objective unbounded along coordinate {j}: zero curvature with |c_j| = {abs(partial):.3g}")
			new = 0.0
		else:
			new = float(soft_threshold(partial, half_lam)) / qjj
		if new != old:
			q_rho += Q[:, j] * (new - old)
			rho[j] = new
			max_delta = max(max_delta, abs(new - old))
	return max_delta


def _support_newton(problem: QuadraticProblem, rho: np.ndarray) -> np.ndarray:
	"""Move toward the minimizer on the current support with the signs held fixed.

	The objective is a smooth quadratic on that orthant face, so the segment toward the Newton point
	only descends; it is cut where the first coefficient reaches zero and that coefficient is dropped.
	"""
	support = np.flatnonzero(rho)
	if support.size == 0:
		return rho
	signs = np.sign(rho[support])
	rhs = problem.c[support] - 0.5 * problem.penalty * signs
	Qss = problem.Q[np.ix_(support, support)]
	with warnings.catch_warnings():
		warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
		try:
			target = scipy.linalg.solve(Qss, rhs, assume_a="sym")
		except (scipy.linalg.LinAlgError, ValueError):
			target = scipy.linalg.lstsq(Qss, rhs)[0]
	if not np.all(np.isfinite(target)):
		return rho
	current = rho[support]
	crossing = np.sign(target) != signs
	step, hit = 1.0, None
	if crossing.any():
		fractions = np.where(crossing, current / np.where(crossing, current - target, 1.0), np.inf)
		hit = int(np.argmin(fractions))
		step = float(fractions[hit])
	candidate = rho.copy()
	candidate[support] = current + step * (target - current)
	if hit is not None:
		candidate[support[hit]] = 0.0
	# a singular face can give a least-squares point that is not a descent target
	if problem.objective(candidate) > problem.objective(rho):
		return rho
	return candidate


def coordinate_descent(
	problem: QuadraticProblem,
	tol: float = DEFAULT_TOL,
	max_iter: int = DEFAULT_MAX_ITER,
	start: Optional[np.ndarray] = None,
) -> SolverResult:
	"""Cyclic coordinate descent with an active-set inner loop and a support Newton step per round.

	One iteration is one sweep. Converged when a sweep over all coordinates moves no coefficient by tol
	or more and the KKT residual is below 10 * tol.
	"""
	if tol <= 0:
		raise DataError(f"tol must be > 0, got {tol}")
	q = problem.c.shape[0]
	rho = np.zeros(q) if start is None else np.array(start, dtype=float)
	if q == 0:
		return SolverResult(coefficients=rho, iterations=0, converged=True, objective=problem.offset, kkt_residual=0.0)
	q_rho = problem.Q @ rho
	everything = range(q)
	path: List[float] = []
	iterations = 0
	converged = False
	while iterations < max_iter:
		delta = _sweep(problem, rho, q_rho, everything)
		iterations += 1
		path.append(problem.objective(rho))
		if delta < tol and kkt_residual(problem, rho) < 10.0 * tol:
			converged = True
			break
		active = np.flatnonzero(rho)
		while iterations < max_iter and active.size:
			delta = _sweep(problem, rho, q_rho, active)
			iterations += 1
			path.append(problem.objective(rho))
			if delta < tol:
				break
		rho = _support_newton(problem, rho)
		q_rho = problem.Q @ rho
	notes: List[str] = []
	if not converged:
		notes.append(f"coordinate descent stopped at max_iter={max_iter} without converging")
		log.warning(notes[-1])
	return SolverResult(
		coefficients=rho,
		iterations=iterations,
		converged=converged,
		objective=problem.objective(rho),
		objective_path=path,
		kkt_residual=kkt_residual(problem, rho),
		notes=notes,
	)


def lasso_fit(
	problem: LassoProblem,
	tol: float = DEFAULT_TOL,
	max_iter: int = DEFAULT_MAX_ITER,
	start: Optional[np.ndarray] = None,
) -> SolverResult:
	return coordinate_descent(problem.quadratic(), tol=tol, max_iter=max_iter, start=start)


def riesz_fit_exact(
	problem: RieszProblem,
	tol: float = DEFAULT_TOL,
	max_iter: int = DEFAULT_MAX_ITER,
	start: Optional[np.ndarray] = None,
) -> SolverResult:
	return coordinate_descent(problem.quadratic(), tol=tol, max_iter=max_iter, start=start)


def largest_eigenvalue(Q: np.ndarray, iterations: int = _POWER_ITERATIONS, seed: int = 0) -> float:
	"""Power-iteration estimate of the top eigenvalue of a PSD matrix."""
	if Q.shape[0] == 0:
		return 0.0
	v = np.random.default_rng(seed).standard_normal(Q.shape[0])
	v /= np.linalg.norm(v)
	estimate = 0.0
	for _ in range(iterations):
		w = Q @ v
		norm = np.linalg.norm(w)
		if norm == 0.0:
			return 0.0
		v = w / norm
		previous, estimate = estimate, float(v @ Q @ v)
		if abs(estimate - previous) <= 1e-12 * max(1.0, abs(estimate)):
			break
	return estimate


def riesz_fit_iterative(
	problem: RieszProblem,
	step_budget: int = DEFAULT_STEP_BUDGET,
	start: Optional[np.ndarray] = None,
) -> SolverResult:
	"""Fixed-budget proximal gradient; returns the last iterate whether or not it has settled."""
	if step_budget < 1:
		raise DataError(f"step_budget must be >= 1, got {step_budget}")
	quad = problem.quadratic()
	lam_max = largest_eigenvalue(quad.Q)
	# gradient 2Q rho - 2M of the unhalved objective is 2*lam_max-Lipschitz, so steps must stay below 1/(2*lam_max)
	step = 1.0 / (2.0 * _STEP_SAFETY * lam_max) if lam_max > 0 else 1.0
	rho = np.zeros(quad.c.shape[0]) if start is None else np.array(start, dtype=float)
	path: List[float] = []
	for _ in range(step_budget):
		rho = soft_threshold(rho - step * quad.gradient(rho), step * quad.penalty)
		path.append(quad.objective(rho))
	return SolverResult(
		coefficients=rho,
		iterations=step_budget,
		converged=False,
		objective=quad.objective(rho),
		objective_path=path,
		kkt_residual=kkt_residual(quad, rho),
		step=step,
	)


def _rank_tolerance(r_diag: np.ndarray, shape: tuple) -> float:
	if r_diag.size == 0:
		return 0.0
	return max(shape) * np.finfo(float).eps * abs(r_diag[0])


def ols_fit(design: np.ndarray, response: np.ndarray, weights: Optional[np.ndarray] = None) -> SolverResult:
	"""Weighted least squares by column-pivoted QR; columns beyond the numerical rank get coefficient 0."""
	x = np.asarray(design, dtype=float)
	y = np.asarray(response, dtype=float)
	if x.ndim != 2 or x.shape[0] == 0:
		raise DataError("ols_fit needs a non-empty 2-D design")
	if y.shape != (x.shape[0],):
		raise DataError(f"response has shape {y.shape}, expected ({x.shape[0]},)")
	n, q = x.shape
	w = normalized_weights(weights, n)
	coef = np.zeros(q)
	if q == 0:
		return SolverResult(coefficients=coef, iterations=1, converged=True, objective=float(w @ y ** 2) / n, kkt_residual=0.0)
	sw = np.sqrt(w)
	a = x * sw[:, None]
	b = y * sw
	qmat, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
	diag = np.abs(np.diag(r))
	rank = int(np.sum(diag > _rank_tolerance(diag, a.shape)))
	if rank:
		z = scipy.linalg.solve_triangular(r[:rank, :rank], qmat[:, :rank].T @ b)
		coef[piv[:rank]] = z
	dropped = tuple(sorted(int(j) for j in piv[rank:]))
	notes: List[str] = []
	if dropped:
		notes.append(f"rank-deficient design: {len(dropped)} of {q} columns set to 0")
		log.warning("%s (columns %s)", notes[-1], list(dropped))
	resid = y - x @ coef
	return SolverResult(
		coefficients=coef,
		iterations=1,
		converged=True,
		objective=float(w @ resid ** 2) / n,
		kkt_residual=float(np.abs(a.T @ (b - a @ coef)).max(initial=0.0)) * 2.0 / n,
		dropped=dropped,
		notes=notes,
	)


def riesz_fit_least_squares(problem: RieszProblem) -> SolverResult:
	"""Unpenalized Riesz coefficients: a minimum-norm solution of Q rho = M."""
	quad = problem.quadratic()
	if quad.c.shape[0] == 0:
		return SolverResult(coefficients=np.zeros(0), iterations=1, converged=True, objective=0.0, kkt_residual=0.0)
	rho, _, rank, _ = scipy.linalg.lstsq(quad.Q, quad.c)
	notes: List[str] = []
	if rank < quad.c.shape[0]:
		notes.append(f"singular Riesz system: rank {rank} of {quad.c.shape[0]}")
		log.warning(notes[-1])
	return SolverResult(
		coefficients=rho,
		iterations=1,
		converged=True,
		objective=quad.objective(rho),
		kkt_residual=kkt_residual(quad, rho),
		notes=notes,
	)


def assemble_riesz_problem(design, penalty: float) -> RieszProblem:
	"""M = weighted mean of derivative rows, Q = weighted mean of delta-basis outer products.

	`design` is a `panel.DifferencedDesign` (or any object with `delta_basis`, `derivative`, `weight`).
	"""
	n = design.delta_basis.shape[0]
	if n == 0:
		raise DataError("cannot assemble a Riesz problem from an empty design")
	w = normalized_weights(design.weight, n)
	M = (w @ design.derivative) / n
	wx = design.delta_basis * w[:, None]
	Q = (wx.T @ design.delta_basis) / n
	return RieszProblem(M=M, Q=Q, penalty=penalty)
