"""Cross-fitted debiased average-derivative estimation, clustered variance, tuning and baselines."""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import statsmodels.api as sm
from joblib import Parallel, delayed
from scipy.stats import norm

from dmlpanel.dictionary import Dictionary, DictionarySpec, build_dictionary, fit_standardization, linear_spec
from dmlpanel.errors import ConfigError, DataError, DmlPanelError, SolverError, TuningError
from dmlpanel.panel import (
	BasisCache,
	DifferencedDesign,
	FoldAssignment,
	PanelDataset,
	assign_folds,
	build_differenced_design,
	expand,
)
from dmlpanel.solvers import (
	DEFAULT_MAX_ITER,
	DEFAULT_STEP_BUDGET,
	DEFAULT_TOL,
	LassoProblem,
	assemble_riesz_problem,
	lasso_fit,
	normalized_weights,
	ols_fit,
	riesz_fit_exact,
	riesz_fit_iterative,
	riesz_fit_least_squares,
)

log = logging.getLogger(__name__)

DEFAULT_LASSO_GRID: Tuple[float, ...] = (0.0025, 0.005, 0.01, 0.02, 0.04, 0.08, 0.16)
DEFAULT_RIESZ_GRID: Tuple[float, ...] = (0.0025, 0.005, 0.01, 0.02, 0.04, 0.08, 0.16)


class Method(str, enum.Enum):
	DML = "DML"
	DML_ITERATIVE = "DMLIterative"
	LASSO_PLUG_IN = "LassoPlugIn"
	OLS_LINEAR = "OLSLinear"
	OLS_POLY = "OLSPoly"

	@property
	def display(self) -> str:
		return _DISPLAY[self]

	@property
	def cross_fit(self) -> bool:
		return self in (Method.DML, Method.DML_ITERATIVE, Method.LASSO_PLUG_IN)

	@classmethod
	def parse(cls, name: str) -> "Method":
		key = name.strip().replace(" ", "").replace("_", "").lower()
		for method in cls:
			if key in (method.value.lower(), method.display.replace(" ", "").lower()):
				return method
		raise ConfigError(f"unknown method '{name}' (choose from {', '.join(m.value for m in cls)})")


_DISPLAY = {
	Method.DML: "DML",
	Method.DML_ITERATIVE: "DML Iterative",
	Method.LASSO_PLUG_IN: "Lasso",
	Method.OLS_LINEAR: "OLS Linear",
	Method.OLS_POLY: "OLS Poly",
}
ALL_METHODS: Tuple[Method, ...] = tuple(Method)


def parse_methods(names: Union[str, Iterable[str]]) -> List[Method]:
	if isinstance(names, str):
		names = [n for n in names.split(",") if n.strip()]
	methods: List[Method] = []
	for name in names:
		m = name if isinstance(name, Method) else Method.parse(name)
		if m not in methods:
			methods.append(m)
	if not methods:
		raise ConfigError("no methods selected")
	return methods


@dataclass(frozen=True)
class EstimatorConfig:
	method: Method = Method.DML
	L: int = 5
	lasso_grid: Tuple[float, ...] = DEFAULT_LASSO_GRID
	riesz_grid: Tuple[float, ...] = DEFAULT_RIESZ_GRID
	seed: int = 0
	use_weights: bool = True
	level: float = 0.95
	step_budget: int = DEFAULT_STEP_BUDGET
	tol: float = DEFAULT_TOL
	max_iter: int = DEFAULT_MAX_ITER
	jobs: int = 1

	def __post_init__(self) -> None:
		object.__setattr__(self, "method", Method(self.method))
		object.__setattr__(self, "lasso_grid", tuple(float(v) for v in self.lasso_grid))
		object.__setattr__(self, "riesz_grid", tuple(float(v) for v in self.riesz_grid))
		if not self.lasso_grid or not self.riesz_grid:
			raise ConfigError("penalty grids must be non-empty")
		if any(v < 0 for v in self.lasso_grid + self.riesz_grid):
			raise ConfigError("penalties must be >= 0")
		if not 0.0 < self.level < 1.0:
			raise ConfigError(f"confidence level must lie in (0, 1), got {self.level}")
		if self.L < 2:
			raise ConfigError(f"fold count L must be >= 2, got {self.L}")
		if self.step_budget < 1:
			raise ConfigError(f"step_budget must be >= 1, got {self.step_budget}")
		if self.tol <= 0 or self.max_iter < 1:
			raise ConfigError("tol must be > 0 and max_iter >= 1")

	@property
	def z(self) -> float:
		return float(norm.ppf(0.5 + self.level / 2.0))

	@property
	def needs_tuning(self) -> bool:
		return len(self.lasso_grid) > 1 or len(self.riesz_grid) > 1


@dataclass(frozen=True)
class ScoreTable:
	"""Per-row scores of one method, aligned with the differenced rows of a dataset."""
	unit: np.ndarray
	time: np.ndarray
	unit_code: np.ndarray
	obs_index: np.ndarray
	score: np.ndarray
	weight: np.ndarray

	@property
	def n(self) -> int:
		return int(self.score.shape[0])

	def tau(self) -> float:
		return float(self.weight @ self.score) / self.n

	def unit_means(self) -> np.ndarray:
		"""Weighted mean score of every unit, indexed by unit code."""
		wsum = np.bincount(self.unit_code, weights=self.weight)
		num = np.bincount(self.unit_code, weights=self.weight * self.score)
		return np.divide(num, wsum, out=np.zeros_like(num), where=wsum > 0)

	def aligned_with(self, other: "ScoreTable") -> bool:
		return (
			self.n == other.n
			and np.array_equal(self.obs_index, other.obs_index)
			and np.array_equal(self.unit, other.unit)
			and np.allclose(self.weight, other.weight, rtol=1e-12, atol=0.0)
		)

	def with_scores(self, score: np.ndarray) -> "ScoreTable":
		return ScoreTable(self.unit, self.time, self.unit_code, self.obs_index, np.asarray(score, dtype=float), self.weight)

	def to_frame(self) -> pd.DataFrame:
		return pd.DataFrame({"unit": self.unit, "time": self.time, "score": self.score, "weight": self.weight})


@dataclass
class FoldFit:
	fold: int
	train_units: Tuple = ()
	test_units: Tuple = ()
	n_train_rows: int = 0
	n_test_rows: int = 0
	n_active: int = 0
	beta_nonzero: int = 0
	rho_nonzero: Dict[str, int] = field(default_factory=dict)
	mse_in: float = float("nan")
	sse_out: float = float("nan")
	lasso_converged: bool = True
	riesz_converged: bool = True
	notes: List[str] = field(default_factory=list)


@dataclass
class EstimateReport:
	method: Method
	tau_hat: float
	variance: float
	se: float
	ci: Tuple[float, float]
	level: float
	mse_gamma_in_sample: float
	mse_gamma_cross_folds: float
	r_L: Optional[float]
	r_alpha: Optional[float]
	nonzero_beta: List[int]
	nonzero_rho: List[int]
	n_obs: int
	n_units: int
	p: int
	converged: bool
	warnings: List[str]
	scores: ScoreTable
	folds: List[FoldFit] = field(default_factory=list)

	def covers(self, target: float) -> bool:
		return self.ci[0] <= target <= self.ci[1]


@dataclass(frozen=True)
class MethodFailure:
	method: Method
	message: str


def _variance_sum(scores: ScoreTable, tau_hat: float) -> float:
	w, s, codes = scores.weight, scores.score, scores.unit_code
	own = w * (s - tau_hat)
	dev = w * (s - scores.unit_means()[codes])
	# 2 * sum_{t<t'} a_t a_t' = (sum a)^2 - sum a^2, per unit
	cross = np.bincount(codes, weights=dev) ** 2 - np.bincount(codes, weights=dev ** 2)
	return float(own @ own + cross.sum()) / scores.n


def clustered_variance(scores: ScoreTable, tau_hat: float) -> float:
	"""Unit-clustered variance of the scores; N is the number of differenced rows."""
	if scores.n == 0:
		raise DataError("cannot compute a variance from an empty score table")
	v = _variance_sum(scores, tau_hat)
	if v < 0:
		log.warning("negative clustered variance %.3g clamped to 0", v)
		return 0.0
	return v


def _interval(tau: float, variance: float, n: int, z: float) -> Tuple[float, float, float]:
	se = float(np.sqrt(variance / n))
	return se, tau - z * se, tau + z * se


def _weights(dataset: PanelDataset, config: EstimatorConfig) -> PanelDataset:
	if config.use_weights:
		return dataset
	return dataset.with_weights(np.ones(dataset.n_obs))


def _train_stats(dataset: PanelDataset, cache: BasisCache, train_obs: np.ndarray):
	return fit_standardization(cache.basis[train_obs], dataset.weight[train_obs])


def _weighted_sse(design: DifferencedDesign, beta: np.ndarray, weight: np.ndarray) -> float:
	resid = design.delta_y - design.delta_basis @ beta
	return float(weight @ resid ** 2)


@dataclass(frozen=True)
class _FoldData:
	fold: int
	train: DifferencedDesign
	test: DifferencedDesign
	test_mask: np.ndarray
	test_weight: np.ndarray
	train_units: Tuple
	test_units: Tuple


def _fold_data(
	dataset: PanelDataset,
	dictionary: Dictionary,
	cache: BasisCache,
	folds: FoldAssignment,
	fold: int,
	global_weight: np.ndarray,
) -> _FoldData:
	labels = folds.labels(dataset)
	train_obs = labels != fold
	stats = _train_stats(dataset, cache, train_obs)
	full = build_differenced_design(dataset, dictionary, stats, folds, cache)
	test_mask = full.fold == fold
	if not test_mask.any() or test_mask.all():
		raise ConfigError(f"fold {fold} is degenerate: {int(test_mask.sum())} held-out rows of {full.n_rows}")
	return _FoldData(
		fold=fold,
		train=full.rows(~test_mask),
		test=full.rows(test_mask),
		test_mask=test_mask,
		test_weight=global_weight[test_mask],
		train_units=tuple(sorted(set(dataset.unit[train_obs].tolist()))),
		test_units=tuple(sorted(set(dataset.unit[~train_obs].tolist()))),
	)


def _fit_fold(
	data: _FoldData,
	r_L: float,
	r_alpha: float,
	riesz_methods: Tuple[Method, ...],
	config: EstimatorConfig,
) -> Tuple[FoldFit, Dict[Method, np.ndarray]]:
	train, test = data.train, data.test
	lasso = lasso_fit(LassoProblem(train.delta_basis, train.delta_y, train.weight, r_L), tol=config.tol, max_iter=config.max_iter)
	beta = lasso.coefficients
	fit = FoldFit(
		fold=data.fold,
		train_units=data.train_units,
		test_units=data.test_units,
		n_train_rows=train.n_rows,
		n_test_rows=test.n_rows,
		n_active=train.q,
		beta_nonzero=lasso.nonzero,
		mse_in=_weighted_sse(train, beta, normalized_weights(train.weight, train.n_rows)) / train.n_rows,
		sse_out=_weighted_sse(test, beta, data.test_weight),
		lasso_converged=lasso.converged,
		notes=[f"fold {data.fold} lasso: {n}" for n in lasso.notes],
	)
	plug_in = test.derivative @ beta
	resid = test.delta_y - test.delta_basis @ beta
	scores: Dict[Method, np.ndarray] = {Method.LASSO_PLUG_IN: plug_in}
	if riesz_methods:
		problem = assemble_riesz_problem(train, r_alpha)
		for method in riesz_methods:
			if method is Method.DML:
				rr = riesz_fit_exact(problem, tol=config.tol, max_iter=config.max_iter)
				fit.riesz_converged = rr.converged
				fit.notes.extend(f"fold {data.fold} riesz: {n}" for n in rr.notes)
			else:
				rr = riesz_fit_iterative(problem, step_budget=config.step_budget)
			fit.rho_nonzero[method.value] = rr.nonzero
			scores[method] = plug_in + (test.delta_basis @ rr.coefficients) * resid
	return fit, scores


def _report(
	method: Method,
	table: ScoreTable,
	config: EstimatorConfig,
	*,
	mse_in: float,
	mse_out: float,
	r_L: Optional[float],
	r_alpha: Optional[float],
	nonzero_beta: List[int],
	nonzero_rho: List[int],
	n_units: int,
	p: int,
	converged: bool,
	warnings: List[str],
	folds: List[FoldFit],
) -> EstimateReport:
	tau = table.tau()
	raw = _variance_sum(table, tau)
	warnings = list(warnings)
	if raw < 0:
		warnings.append(f"negative clustered variance {raw:.3g} clamped to 0")
		log.warning("%s: %s", method.value, warnings[-1])
	variance = max(raw, 0.0)
	se, lo, hi = _interval(tau, variance, table.n, config.z)
	if not converged:
		warnings.append("one or more solver fits did not converge")
	return EstimateReport(
		method=method, tau_hat=tau, variance=variance, se=se, ci=(lo, hi), level=config.level,
		mse_gamma_in_sample=mse_in, mse_gamma_cross_folds=mse_out, r_L=r_L, r_alpha=r_alpha,
		nonzero_beta=nonzero_beta, nonzero_rho=nonzero_rho, n_obs=table.n, n_units=n_units, p=p,
		converged=converged, warnings=warnings, scores=table, folds=folds,
	)


def _score_table(design: DifferencedDesign, score: np.ndarray, weight: np.ndarray) -> ScoreTable:
	return ScoreTable(
		unit=design.unit, time=design.time, unit_code=design.unit_code, obs_index=design.obs_index,
		score=np.asarray(score, dtype=float), weight=weight,
	)


def _cross_fit_reports(
	dataset: PanelDataset,
	dictionary: Dictionary,
	cache: BasisCache,
	folds: FoldAssignment,
	methods: Sequence[Method],
	r_L: float,
	r_alpha: float,
	config: EstimatorConfig,
) -> Dict[Method, EstimateReport]:
	template = build_differenced_design(dataset, dictionary, fit_standardization(cache.basis, dataset.weight), folds, cache)
	weight = normalized_weights(template.weight, template.n_rows)
	data = [_fold_data(dataset, dictionary, cache, folds, f, weight) for f in range(folds.L)]
	riesz_methods = tuple(m for m in (Method.DML, Method.DML_ITERATIVE) if m in methods)
	results = Parallel(n_jobs=config.jobs)(
		delayed(_fit_fold)(d, r_L, r_alpha, riesz_methods, config) for d in data
	)
	fold_fits = [fit for fit, _ in results]
	notes = [n for f in fold_fits for n in f.notes]
	mse_in = float(np.mean([f.mse_in for f in fold_fits]))
	mse_out = float(sum(f.sse_out for f in fold_fits)) / template.n_rows
	reports: Dict[Method, EstimateReport] = {}
	for method in methods:
		score = np.empty(template.n_rows)
		for d, (_, scores) in zip(data, results):
			score[d.test_mask] = scores[method]
		reports[method] = _report(
			method, _score_table(template, score, weight), config,
			mse_in=mse_in, mse_out=mse_out, r_L=r_L,
			r_alpha=r_alpha if method is not Method.LASSO_PLUG_IN else None,
			nonzero_beta=[f.beta_nonzero for f in fold_fits],
			nonzero_rho=[f.rho_nonzero.get(method.value, 0) for f in fold_fits],
			n_units=dataset.n_units, p=dictionary.p,
			converged=all(f.lasso_converged and (method is not Method.DML or f.riesz_converged) for f in fold_fits),
			warnings=notes, folds=fold_fits,
		)
	return reports


def _ols_report(
	dataset: PanelDataset,
	dictionary: Dictionary,
	folds: FoldAssignment,
	method: Method,
	config: EstimatorConfig,
) -> EstimateReport:
	cache = expand(dataset, dictionary)
	stats = fit_standardization(cache.basis, dataset.weight)
	design = build_differenced_design(dataset, dictionary, stats, folds, cache)
	weight = normalized_weights(design.weight, design.n_rows)
	fit = ols_fit(design.delta_basis, design.delta_y, weight)
	beta = fit.coefficients
	riesz = riesz_fit_least_squares(assemble_riesz_problem(design, 0.0))
	resid = design.delta_y - design.delta_basis @ beta
	score = design.derivative @ beta + (design.delta_basis @ riesz.coefficients) * resid
	sse_out = 0.0
	for f in range(folds.L):
		held = design.fold == f
		if not held.any() or held.all():
			raise ConfigError(f"fold {f} is degenerate for {method.value}")
		part = ols_fit(design.delta_basis[~held], design.delta_y[~held], weight[~held])
		sse_out += _weighted_sse(design.rows(held), part.coefficients, weight[held])
	return _report(
		method, _score_table(design, score, weight), config,
		mse_in=_weighted_sse(design, beta, weight) / design.n_rows,
		mse_out=sse_out / design.n_rows,
		r_L=None, r_alpha=None,
		nonzero_beta=[fit.nonzero], nonzero_rho=[riesz.nonzero],
		n_units=dataset.n_units, p=dictionary.p, converged=True,
		warnings=fit.notes + riesz.notes, folds=[],
	)


@dataclass(frozen=True)
class TuningRow:
	kind: str  # "lasso" or "riesz"
	penalty: float
	loss: float
	converged: bool


@dataclass(frozen=True)
class TuningResult:
	r_L: float
	r_alpha: float
	rows: Tuple[TuningRow, ...]

	def losses(self, kind: str) -> Dict[float, float]:
		return {r.penalty: r.loss for r in self.rows if r.kind == kind}

	def to_frame(self) -> pd.DataFrame:
		frame = pd.DataFrame([r.__dict__ for r in self.rows], columns=["kind", "penalty", "loss", "converged"])
		chosen = {"lasso": self.r_L, "riesz": self.r_alpha}
		frame["selected"] = [chosen[k] == p for k, p in zip(frame["kind"], frame["penalty"])]
		return frame


def _tune_fold(data: _FoldData, lasso_grid: Sequence[float], riesz_grid: Sequence[float], config: EstimatorConfig):
	"""Held-out losses of one fold along both grids, walked from the largest penalty down with warm starts."""
	train, test = data.train, data.test
	w = data.test_weight
	lasso_out: List[Tuple[float, bool]] = []
	start = None
	for r in lasso_grid:
		try:
			res = lasso_fit(LassoProblem(train.delta_basis, train.delta_y, train.weight, r), tol=config.tol, max_iter=config.max_iter, start=start)
		except SolverError:
			lasso_out.append((float("nan"), False))
			continue
		start = res.coefficients
		lasso_out.append((_weighted_sse(test, res.coefficients, w), res.converged))
	riesz_out: List[Tuple[float, bool]] = []
	start = None
	for r in riesz_grid:
		try:
			res = riesz_fit_exact(assemble_riesz_problem(train, r), tol=config.tol, max_iter=config.max_iter, start=start)
		except SolverError:
			riesz_out.append((float("nan"), False))
			continue
		start = res.coefficients
		fitted = test.delta_basis @ res.coefficients
		loss = float(w @ (-2.0 * (test.derivative @ res.coefficients) + fitted ** 2))
		riesz_out.append((loss, res.converged))
	return lasso_out, riesz_out


def _select(kind: str, grid: Sequence[float], per_fold: List[List[Tuple[float, bool]]], n_rows: int) -> Tuple[float, List[TuningRow]]:
	rows: List[TuningRow] = []
	best: Optional[Tuple[float, float]] = None
	for k, penalty in enumerate(grid):
		losses = [fold[k][0] for fold in per_fold]
		ok = all(fold[k][1] for fold in per_fold) and all(np.isfinite(losses))
		loss = float(sum(losses)) / n_rows if ok else float("nan")
		rows.append(TuningRow(kind=kind, penalty=penalty, loss=loss, converged=ok))
		# grid runs largest first, so a tie keeps the larger penalty
		if ok and (best is None or loss < best[1]):
			best = (penalty, loss)
	if best is None:
		raise TuningError(f"every {kind} penalty candidate failed to converge")
	return best[0], rows


def tune_on_folds(
	dataset: PanelDataset,
	dictionary: Dictionary,
	cache: BasisCache,
	folds: FoldAssignment,
	config: EstimatorConfig,
) -> TuningResult:
	lasso_grid = sorted(set(config.lasso_grid), reverse=True)
	riesz_grid = sorted(set(config.riesz_grid), reverse=True)
	template = build_differenced_design(dataset, dictionary, fit_standardization(cache.basis, dataset.weight), folds, cache)
	weight = normalized_weights(template.weight, template.n_rows)
	data = [_fold_data(dataset, dictionary, cache, folds, f, weight) for f in range(folds.L)]
	results = Parallel(n_jobs=config.jobs)(delayed(_tune_fold)(d, lasso_grid, riesz_grid, config) for d in data)
	r_L, lasso_rows = _select("lasso", lasso_grid, [r[0] for r in results], template.n_rows)
	r_alpha, riesz_rows = _select("riesz", riesz_grid, [r[1] for r in results], template.n_rows)
	log.info("tuned penalties r_L=%g r_alpha=%g", r_L, r_alpha)
	return TuningResult(r_L=r_L, r_alpha=r_alpha, rows=tuple(lasso_rows + riesz_rows))


def tune(dataset: PanelDataset, dict_spec: DictionarySpec, config: EstimatorConfig) -> TuningResult:
	"""Pick r_L and r_alpha by held-out loss over the unit folds, each normalized by the row count."""
	dataset = _weights(dataset, config)
	dictionary = build_dictionary(dict_spec, dataset.h)
	folds = assign_folds(dataset, config.L, config.seed)
	return tune_on_folds(dataset, dictionary, expand(dataset, dictionary), folds, config)


def estimate_many(
	dataset: PanelDataset,
	dict_spec: DictionarySpec,
	config: EstimatorConfig,
	methods: Sequence[Method] = ALL_METHODS,
	tuning: Optional[TuningResult] = None,
	raise_errors: bool = True,
) -> Dict[Method, Union[EstimateReport, MethodFailure]]:
	"""Estimate several methods on one dataset with one fold assignment; the Lasso fits are shared.

	With `raise_errors=False` a failing method yields a `MethodFailure` instead of aborting the others.
	"""
	methods = parse_methods(methods)
	dataset = _weights(dataset, config)
	dictionary = build_dictionary(dict_spec, dataset.h)
	folds = assign_folds(dataset, config.L, config.seed)
	out: Dict[Method, Union[EstimateReport, MethodFailure]] = {}

	def fail(group: Sequence[Method], exc: Exception) -> None:
		if raise_errors or isinstance(exc, ConfigError):
			raise exc
		for m in group:
			log.warning("%s failed: %s", m.value, exc)
			out[m] = MethodFailure(method=m, message=str(exc))

	cross = [m for m in methods if m.cross_fit]
	if cross:
		cache = expand(dataset, dictionary)
		try:
			if tuning is None and config.needs_tuning:
				tuning = tune_on_folds(dataset, dictionary, cache, folds, config)
			r_L = tuning.r_L if tuning is not None else config.lasso_grid[0]
			r_alpha = tuning.r_alpha if tuning is not None else config.riesz_grid[0]
			out.update(_cross_fit_reports(dataset, dictionary, cache, folds, cross, r_L, r_alpha, config))
		except (DmlPanelError, np.linalg.LinAlgError) as exc:
			fail(cross, exc)
	for method in methods:
		if method.cross_fit:
			continue
		ols_dictionary = build_dictionary(linear_spec(), dataset.h) if method is Method.OLS_LINEAR else dictionary
		try:
			out[method] = _ols_report(dataset, ols_dictionary, folds, method, config)
		except (DmlPanelError, np.linalg.LinAlgError) as exc:
			fail([method], exc)
	return {m: out[m] for m in methods}


def estimate(dataset: PanelDataset, dict_spec: DictionarySpec, config: EstimatorConfig) -> EstimateReport:
	return estimate_many(dataset, dict_spec, config, [config.method])[config.method]


@dataclass(frozen=True)
class Comparison:
	first: Method
	second: Method
	difference: float
	se: float
	z: float
	p_value: float


def compare(reports: Sequence[EstimateReport], level: float = 0.95) -> List[Comparison]:
	"""Pairwise z-tests on estimate differences, using the clustered variance of the score differences."""
	if len(reports) < 2:
		raise DataError("compare needs at least two reports")
	rows: List[Comparison] = []
	for a, b in itertools.combinations(reports, 2):
		if not a.scores.aligned_with(b.scores):
			raise DataError(f"{a.method.value} and {b.method.value} were estimated on different observations")
		diff = a.scores.with_scores(a.scores.score - b.scores.score)
		delta = diff.tau()
		se = float(np.sqrt(clustered_variance(diff, delta) / diff.n))
		if se > 0:
			z = delta / se
		else:
			z = 0.0 if delta == 0 else float(np.copysign(np.inf, delta))
		rows.append(Comparison(first=a.method, second=b.method, difference=delta, se=se, z=z, p_value=float(2.0 * norm.sf(abs(z)))))
	return rows


@dataclass(frozen=True)
class TrendFit:
	slope: float
	intercept: float
	slope_se: float
	p_value: float
	residual_variance: float
	n_windows: int


def fit_trend(times: Sequence[float], estimates: Sequence[float], ses: Sequence[float]) -> TrendFit:
	"""Linear trend of window estimates by WLS with weights 1 / (se^2 + residual variance).

	The residual variance comes from a first unweighted pass (SSR / (k - 2)). The second pass treats the
	weights as known inverse variances, so the slope SE uses a fixed scale of 1. The p-value is the two-sided
	normal approximation 2 * (1 - Phi(|slope / SE|)), not a t reference.
	"""
	t = np.asarray(times, dtype=float)
	y = np.asarray(estimates, dtype=float)
	s = np.asarray(ses, dtype=float)
	k = t.shape[0]
	if k < 3:
		nan = float("nan")
		return TrendFit(nan, nan, nan, nan, nan, k)
	X = sm.add_constant(t, has_constant="add")
	first = sm.OLS(y, X).fit()
	resid_var = float(first.ssr) / (k - 2)
	second = sm.WLS(y, X, weights=1.0 / (s ** 2 + resid_var)).fit(cov_type="fixed scale")
	slope_se = float(second.bse[1])
	slope = float(second.params[1])
	if slope_se > 0:
		p = float(2.0 * norm.sf(abs(slope / slope_se)))
	else:
		p = 1.0 if slope == 0 else 0.0
	return TrendFit(
		slope=slope,
		intercept=float(second.params[0]),
		slope_se=slope_se,
		p_value=p,
		residual_variance=resid_var,
		n_windows=k,
	)
