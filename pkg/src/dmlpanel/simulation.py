"""Simulation DGP, true target, Monte Carlo driver and per-method aggregation."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from dmlpanel.dictionary import DictionarySpec, build_dictionary
from dmlpanel.errors import ConfigError, DataError
from dmlpanel.estimator import (
	EstimatorConfig,
	Method,
	MethodFailure,
	TuningResult,
	estimate_many,
	parse_methods,
	tune_on_folds,
)
from dmlpanel.panel import PanelDataset, assign_folds, expand

log = logging.getLogger(__name__)

# (label, MethodSummary attribute) in table order
TABLE_ROWS: Tuple[Tuple[str, str], ...] = (
	("True Value", "true_value"),
	("Average Derivative", "mean_estimate"),
	("Bias", "bias"),
	("Standard Deviation", "sd"),
	("MSE tau", "mse_tau"),
	("Coverage", "coverage"),
	("MSE gamma In Sample", "mse_gamma_in"),
	("MSE gamma Cross Folds", "mse_gamma_out"),
)

RECORD_COLUMNS = [
	"trial", "seed", "method", "tau_hat", "se", "true_tau", "covered",
	"mse_gamma_in", "mse_gamma_out", "failed", "error",
]


@dataclass(frozen=True)
class DGPConfig:
	N: int = 1000
	T: int = 2
	h: int = 20
	seed: int = 0

	def __post_init__(self) -> None:
		if self.N < 2 or self.T < 2 or self.h < 1:
			raise ConfigError(f"DGP needs N >= 2, T >= 2, h >= 1 (got N={self.N}, T={self.T}, h={self.h})")


def theta(h: int) -> np.ndarray:
	return 1.0 / np.arange(1, h + 1, dtype=float) ** 2


def outcome_mean(d: np.ndarray, x: np.ndarray) -> np.ndarray:
	"""gamma_0(D, X) without the fixed effect: D + D^2 + D^3 + D*X1 + 0.1 theta'X."""
	x = np.atleast_2d(x)
	return d + d ** 2 + d ** 3 + d * x[:, 0] + 0.1 * (x @ theta(x.shape[1]))


def generate_dataset(cfg: DGPConfig) -> PanelDataset:
	rng = np.random.default_rng(cfg.seed)
	N, T, h = cfg.N, cfg.T, cfg.h
	th = theta(h)
	a = rng.normal(1.0, 1.0, size=N)
	x = rng.normal(a[:, None, None], 1.0, size=(N, T, h))
	d = 0.1 * (x @ th) + rng.beta(1.0, 7.0, size=(N, T))
	eps = rng.normal(0.0, 1.0, size=(N, T))
	y = a[:, None] + d + d ** 2 + d ** 3 + d * x[:, :, 0] + 0.1 * (x @ th) + eps
	return PanelDataset.build(
		unit=np.repeat(np.arange(N), T),
		time=np.tile(np.arange(1, T + 1), N),
		y=y.reshape(-1),
		d=d.reshape(-1),
		x=x.reshape(N * T, h),
	)


def true_average_derivative(dataset: PanelDataset) -> float:
	"""Sample mean of dgamma_0/dD = 1 + 2D + 3D^2 + X1 over every observation."""
	if dataset.h < 1:
		raise DataError("the simulation target needs at least one covariate")
	d = dataset.d
	return float(np.mean(1.0 + 2.0 * d + 3.0 * d ** 2 + dataset.x[:, 0]))


def trial_seed(master_seed: int, trial: int) -> int:
	"""Counter-based child seed: independent of how many trials run or in which order."""
	state = np.random.SeedSequence(master_seed, spawn_key=(trial,)).generate_state(1)
	return int(state[0])


@dataclass(frozen=True)
class TrialRecord:
	trial: int
	seed: int
	method: Method
	tau_hat: float
	se: float
	true_tau: float
	covered: bool
	mse_gamma_in: float
	mse_gamma_out: float
	failed: bool = False
	error: str = ""


@dataclass
class MethodSummary:
	method: Method
	trials: int
	failures: int
	true_value: float
	mean_estimate: float
	bias: float
	sd: float
	mse_tau: float
	coverage: float
	mse_gamma_in: float
	mse_gamma_out: float


@dataclass
class SimulationSummary:
	dgp: DGPConfig
	trials: int
	master_seed: int
	level: float
	p: int
	methods: Dict[Method, MethodSummary]
	r_L: Optional[float] = None
	r_alpha: Optional[float] = None
	records: List[TrialRecord] = field(default_factory=list, repr=False)


def _run_trial(
	trial: int,
	cfg: DGPConfig,
	methods: Sequence[Method],
	est_config: EstimatorConfig,
	dict_spec: DictionarySpec,
	tuning: Optional[TuningResult],
) -> List[TrialRecord]:
	seed = trial_seed(cfg.seed, trial)
	dataset = generate_dataset(replace(cfg, seed=seed))
	tau0 = true_average_derivative(dataset)
	config = replace(est_config, seed=seed, jobs=1)
	results = estimate_many(dataset, dict_spec, config, methods, tuning=tuning, raise_errors=False)
	out: List[TrialRecord] = []
	for method in methods:
		res = results[method]
		if isinstance(res, MethodFailure):
			nan = float("nan")
			out.append(TrialRecord(trial, seed, method, nan, nan, tau0, False, nan, nan, failed=True, error=res.message))
			continue
		out.append(TrialRecord(
			trial=trial,
			seed=seed,
			method=method,
			tau_hat=res.tau_hat,
			se=res.se,
			true_tau=tau0,
			covered=res.covers(tau0),
			mse_gamma_in=res.mse_gamma_in_sample,
			mse_gamma_out=res.mse_gamma_cross_folds,
		))
	return out


def tune_on_trial(cfg: DGPConfig, trial: int, est_config: EstimatorConfig, dict_spec: DictionarySpec) -> TuningResult:
	seed = trial_seed(cfg.seed, trial)
	dataset = generate_dataset(replace(cfg, seed=seed))
	config = replace(est_config, seed=seed)
	dictionary = build_dictionary(dict_spec, dataset.h)
	folds = assign_folds(dataset, config.L, config.seed)
	return tune_on_folds(dataset, dictionary, expand(dataset, dictionary), folds, config)


def run_monte_carlo(
	cfg: DGPConfig,
	methods: Sequence[Method],
	trials: int,
	est_config: EstimatorConfig,
	dict_spec: Optional[DictionarySpec] = None,
	jobs: int = 1,
	retune_each_trial: bool = False,
	progress=None,
) -> SimulationSummary:
	"""Every method runs on the same fresh dataset and fold assignment per trial.

	Penalties are tuned once on the trial-0 dataset unless `retune_each_trial` is set.
	"""
	if trials < 1:
		raise ConfigError(f"trials must be >= 1, got {trials}")
	methods = parse_methods(methods)
	dict_spec = dict_spec or DictionarySpec()
	tuning: Optional[TuningResult] = None
	needs_penalties = any(m.cross_fit for m in methods)
	if needs_penalties and est_config.needs_tuning and not retune_each_trial:
		tuning = tune_on_trial(cfg, 0, est_config, dict_spec)
	tasks = (delayed(_run_trial)(t, cfg, methods, est_config, dict_spec, tuning) for t in range(trials))
	records: List[TrialRecord] = []
	for batch in Parallel(n_jobs=jobs, return_as="generator")(tasks):
		records.extend(batch)
		if progress is not None:
			progress()
	summary = summarize(records, methods, cfg=cfg, master_seed=cfg.seed, level=est_config.level, p=build_dictionary(dict_spec, cfg.h).p)
	if tuning is not None:
		summary.r_L, summary.r_alpha = tuning.r_L, tuning.r_alpha
	elif needs_penalties and not est_config.needs_tuning:
		summary.r_L, summary.r_alpha = est_config.lasso_grid[0], est_config.riesz_grid[0]
	return summary


def _method_summary(method: Method, rows: List[TrialRecord]) -> MethodSummary:
	ok = [r for r in rows if not r.failed]
	failures = len(rows) - len(ok)
	if failures:
		log.warning("%s failed on %d of %d trials; excluded from aggregates", method.value, failures, len(rows))
	if not ok:
		nan = float("nan")
		return MethodSummary(method, 0, failures, nan, nan, nan, nan, nan, nan, nan, nan)
	est = np.array([r.tau_hat for r in ok])
	truth = np.array([r.true_tau for r in ok])
	err = est - truth
	k = len(ok)
	return MethodSummary(
		method=method,
		trials=k,
		failures=failures,
		true_value=float(truth.mean()),
		mean_estimate=float(est.mean()),
		bias=float(err.mean()),
		sd=float(err.std(ddof=1)) if k > 1 else 0.0,
		mse_tau=float(np.mean(err ** 2)),
		coverage=float(np.mean([r.covered for r in ok])),
		mse_gamma_in=float(np.mean([r.mse_gamma_in for r in ok])),
		mse_gamma_out=float(np.mean([r.mse_gamma_out for r in ok])),
	)


def summarize(
	records: Sequence[TrialRecord],
	methods: Optional[Sequence[Method]] = None,
	*,
	cfg: Optional[DGPConfig] = None,
	master_seed: int = 0,
	level: float = 0.95,
	p: int = 0,
) -> SimulationSummary:
	ordered = sorted(records, key=lambda r: r.trial)
	if methods is None:
		methods = list(dict.fromkeys(r.method for r in ordered))
	per_method = {m: _method_summary(m, [r for r in ordered if r.method is m]) for m in methods}
	n_trials = len({r.trial for r in ordered})
	return SimulationSummary(
		dgp=cfg or DGPConfig(),
		trials=n_trials,
		master_seed=master_seed,
		level=level,
		p=p,
		methods=per_method,
		records=list(ordered),
	)


def write_records(records: Sequence[TrialRecord], path: str | Path) -> Path:
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	rows = [{**asdict(r), "method": r.method.value} for r in records]
	pd.DataFrame(rows, columns=RECORD_COLUMNS).to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
	return path


def read_records(path: str | Path) -> List[TrialRecord]:
	frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values={c: ["nan", "NaN", ""] for c in RECORD_COLUMNS if c != "error"})
	missing = [c for c in RECORD_COLUMNS if c not in frame.columns]
	if missing:
		raise DataError(f"trial record file is missing column(s): {', '.join(missing)}")
	return [
		TrialRecord(
			trial=int(row.trial),
			seed=int(row.seed),
			method=Method(row.method),
			tau_hat=float(row.tau_hat),
			se=float(row.se),
			true_tau=float(row.true_tau),
			covered=_as_bool(row.covered),
			mse_gamma_in=float(row.mse_gamma_in),
			mse_gamma_out=float(row.mse_gamma_out),
			failed=_as_bool(row.failed),
			error=str(row.error),
		)
		for row in frame.itertuples(index=False)
	]


def _as_bool(value) -> bool:
	if isinstance(value, str):
		return value.strip().lower() == "true"
	return bool(value)


def _fmt(value: float) -> str:
	if value is None or (isinstance(value, float) and math.isnan(value)):
		return "n/a"
	return f"{value:.4g}"


def table_rows(summary: SimulationSummary) -> List[List[str]]:
	"""Row label followed by one formatted cell per method, in TABLE_ROWS order."""
	rows = []
	for label, attr in TABLE_ROWS:
		rows.append([label] + [_fmt(getattr(s, attr)) for s in summary.methods.values()])
	return rows


def render_markdown(summary: SimulationSummary) -> str:
	heads = [m.display for m in summary.methods]
	lines = [
		f"Summary of derivative estimates from {summary.trials} Monte Carlo trials "
		f"(N={summary.dgp.N}, T={summary.dgp.T}, h={summary.dgp.h}, p={summary.p}, seed={summary.master_seed})",
		"",
		"| | " + " | ".join(heads) + " |",
		"|---|" + "---|" * len(heads),
	]
	for row in table_rows(summary):
		lines.append("| " + " | ".join(row) + " |")
	failures = {m.display: s.failures for m, s in summary.methods.items() if s.failures}
	if failures:
		lines.append("")
		lines.append("Failed trials (excluded): " + ", ".join(f"{k}={v}" for k, v in failures.items()))
	return "\n".join(lines) + "\n"
