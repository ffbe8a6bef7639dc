from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from dmlpanel.dictionary import DictionarySpec, PairPolicy
from dmlpanel.errors import ConfigError
from dmlpanel.estimator import (
	DEFAULT_LASSO_GRID,
	DEFAULT_RIESZ_GRID,
	Comparison,
	EstimateReport,
	EstimatorConfig,
	Method,
	TuningResult,
)
from dmlpanel.panel import CsvSchema
from dmlpanel.simulation import DGPConfig, SimulationSummary
from dmlpanel.solvers import DEFAULT_MAX_ITER, DEFAULT_STEP_BUDGET, DEFAULT_TOL

SCHEMA_VERSION = "1"


class _Strict(BaseModel):
	model_config = ConfigDict(extra="forbid")


class DictionarySection(_Strict):
	max_degree: int = Field(3, ge=1)
	pair_policy: PairPolicy = PairPolicy.TREATMENT_PAIRS_ONLY
	include_intercept: bool = True

	def to_spec(self) -> DictionarySpec:
		return DictionarySpec(max_degree=self.max_degree, pair_policy=self.pair_policy, include_intercept=self.include_intercept)


class ColumnsSection(_Strict):
	unit: str = "unit"
	time: str = "time"
	y: str = "y"
	d: str = "d"
	x: Optional[List[str]] = None  # default: every x<k> column
	weight: Optional[str] = None

	def to_schema(self) -> CsvSchema:
		return CsvSchema(
			unit=self.unit, time=self.time, y=self.y, d=self.d,
			x=tuple(self.x) if self.x is not None else None, weight=self.weight,
		)


class EstimatorSection(_Strict):
	folds: int = Field(5, ge=2)
	lasso_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_LASSO_GRID), min_length=1)
	riesz_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_RIESZ_GRID), min_length=1)
	level: float = Field(0.95, gt=0.0, lt=1.0)
	step_budget: int = Field(DEFAULT_STEP_BUDGET, ge=1)
	tol: float = Field(DEFAULT_TOL, gt=0.0)
	max_iter: int = Field(DEFAULT_MAX_ITER, ge=1)
	use_weights: bool = True

	@field_validator("lasso_grid", "riesz_grid")
	@classmethod
	def _non_negative(cls, grid: List[float]) -> List[float]:
		if any(v < 0 for v in grid):
			raise ValueError("penalties must be >= 0")
		return grid


class SimulationSection(_Strict):
	N: int = Field(1000, ge=2)
	T: int = Field(2, ge=2)
	h: int = Field(20, ge=1)
	trials: int = Field(200, ge=1)
	retune_each_trial: bool = False


class RunConfig(_Strict):
	version: str = "v1"
	seed: Optional[int] = Field(None, ge=0)
	jobs: int = Field(default=1, ge=1)
	out: str = "runs"
	data: Optional[str] = None
	methods: List[str] = Field(default_factory=lambda: [m.value for m in Method])
	window: int = Field(2, ge=2)
	dictionary: DictionarySection = Field(default_factory=DictionarySection)
	columns: ColumnsSection = Field(default_factory=ColumnsSection)
	estimator: EstimatorSection = Field(default_factory=EstimatorSection)
	simulation: SimulationSection = Field(default_factory=SimulationSection)

	@field_validator("methods")
	@classmethod
	def _known_methods(cls, names: List[str]) -> List[str]:
		out: List[str] = []
		for name in names:
			try:
				value = Method.parse(name).value
			except ConfigError as exc:
				raise ValueError(str(exc)) from exc
			if value not in out:
				out.append(value)
		if not out:
			raise ValueError("at least one method is required")
		return out

	def method_list(self) -> List[Method]:
		return [Method(m) for m in self.methods]

	def estimator_config(self, seed: int, method: Method = Method.DML) -> EstimatorConfig:
		e = self.estimator
		return EstimatorConfig(
			method=method, L=e.folds, lasso_grid=tuple(e.lasso_grid), riesz_grid=tuple(e.riesz_grid),
			seed=seed, use_weights=e.use_weights, level=e.level, step_budget=e.step_budget,
			tol=e.tol, max_iter=e.max_iter, jobs=self.jobs,
		)

	def dgp_config(self, seed: int) -> DGPConfig:
		s = self.simulation
		return DGPConfig(N=s.N, T=s.T, h=s.h, seed=seed)


class MethodReport(BaseModel):
	method: str
	tau_hat: float
	variance: float
	se: float
	ci_lower: float
	ci_upper: float
	level: float
	mse_gamma_in_sample: float
	mse_gamma_cross_folds: float
	r_L: Optional[float] = None
	r_alpha: Optional[float] = None
	nonzero_beta: List[int] = Field(default_factory=list)
	nonzero_rho: List[int] = Field(default_factory=list)
	n_obs: int
	n_units: int
	p: int
	converged: bool = True
	warnings: List[str] = Field(default_factory=list)


class ComparisonRow(BaseModel):
	first: str
	second: str
	difference: float
	se: float
	z: float
	p_value: float


class FailedMethod(BaseModel):
	method: str
	error: str


class ReportDocument(BaseModel):
	schema_version: str = SCHEMA_VERSION
	data: Optional[str] = None
	seed: int
	folds: int
	dictionary: DictionarySection
	reports: List[MethodReport] = Field(default_factory=list)
	comparisons: List[ComparisonRow] = Field(default_factory=list)
	failed: List[FailedMethod] = Field(default_factory=list)


class MethodSummaryRow(BaseModel):
	method: str
	trials: int
	failures: int
	true_value: Optional[float]
	mean_estimate: Optional[float]
	bias: Optional[float]
	sd: Optional[float]
	mse_tau: Optional[float]
	coverage: Optional[float]
	mse_gamma_in: Optional[float]
	mse_gamma_out: Optional[float]


class SummaryDocument(BaseModel):
	schema_version: str = SCHEMA_VERSION
	N: int
	T: int
	h: int
	p: int
	trials: int
	seed: int
	level: float
	r_L: Optional[float] = None
	r_alpha: Optional[float] = None
	methods: List[MethodSummaryRow] = Field(default_factory=list)


class TuningDocument(BaseModel):
	schema_version: str = SCHEMA_VERSION
	seed: int
	r_L: float
	r_alpha: float
	lasso_losses: Dict[str, Optional[float]] = Field(default_factory=dict)
	riesz_losses: Dict[str, Optional[float]] = Field(default_factory=dict)


def _finite(value: Optional[float]) -> Optional[float]:
	if value is None or value != value:
		return None
	return float(value)


def build_method_report(report: EstimateReport) -> MethodReport:
	return MethodReport(
		method=report.method.value,
		tau_hat=report.tau_hat,
		variance=report.variance,
		se=report.se,
		ci_lower=report.ci[0],
		ci_upper=report.ci[1],
		level=report.level,
		mse_gamma_in_sample=report.mse_gamma_in_sample,
		mse_gamma_cross_folds=report.mse_gamma_cross_folds,
		r_L=report.r_L,
		r_alpha=report.r_alpha,
		nonzero_beta=list(report.nonzero_beta),
		nonzero_rho=list(report.nonzero_rho),
		n_obs=report.n_obs,
		n_units=report.n_units,
		p=report.p,
		converged=report.converged,
		warnings=list(report.warnings),
	)


def build_comparison_row(row: Comparison) -> ComparisonRow:
	return ComparisonRow(first=row.first.value, second=row.second.value, difference=row.difference, se=row.se, z=row.z, p_value=row.p_value)


def build_summary_document(summary: SimulationSummary) -> SummaryDocument:
	rows = [
		MethodSummaryRow(
			method=m.value,
			trials=s.trials,
			failures=s.failures,
			true_value=_finite(s.true_value),
			mean_estimate=_finite(s.mean_estimate),
			bias=_finite(s.bias),
			sd=_finite(s.sd),
			mse_tau=_finite(s.mse_tau),
			coverage=_finite(s.coverage),
			mse_gamma_in=_finite(s.mse_gamma_in),
			mse_gamma_out=_finite(s.mse_gamma_out),
		)
		for m, s in summary.methods.items()
	]
	return SummaryDocument(
		N=summary.dgp.N, T=summary.dgp.T, h=summary.dgp.h, p=summary.p, trials=summary.trials,
		seed=summary.master_seed, level=summary.level, r_L=summary.r_L, r_alpha=summary.r_alpha, methods=rows,
	)


def build_tuning_document(result: TuningResult, seed: int) -> TuningDocument:
	return TuningDocument(
		seed=seed,
		r_L=result.r_L,
		r_alpha=result.r_alpha,
		lasso_losses={repr(k): _finite(v) for k, v in result.losses("lasso").items()},
		riesz_losses={repr(k): _finite(v) for k, v in result.losses("riesz").items()},
	)
