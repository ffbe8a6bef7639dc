import numpy as np
import pytest

import dmlpanel.simulation as simulation
from dmlpanel.dictionary import DictionarySpec
from dmlpanel.errors import ConfigError
from dmlpanel.estimator import EstimatorConfig, Method, MethodFailure
from dmlpanel.panel import PanelDataset
from dmlpanel.simulation import (
	TABLE_ROWS,
	DGPConfig,
	generate_dataset,
	outcome_mean,
	read_records,
	render_markdown,
	run_monte_carlo,
	summarize,
	trial_seed,
	true_average_derivative,
	write_records,
)

METHODS = [Method.DML, Method.LASSO_PLUG_IN, Method.OLS_POLY]
SMALL = DGPConfig(N=60, T=2, h=2, seed=7)
FIXED = EstimatorConfig(L=3, lasso_grid=(0.01,), riesz_grid=(0.01,))


def test_dgp_moments():
	ds = generate_dataset(DGPConfig(N=20_000, T=2, h=20, seed=1))
	assert ds.n_obs == 40_000
	assert ds.h == 20
	assert ds.d.mean() == pytest.approx(0.2846, abs=0.01)
	assert ds.x.mean() == pytest.approx(1.0, abs=0.03)
	assert np.all(ds.weight == 1.0)


def test_dgp_is_reproducible():
	a = generate_dataset(DGPConfig(N=50, T=3, h=4, seed=9))
	b = generate_dataset(DGPConfig(N=50, T=3, h=4, seed=9))
	c = generate_dataset(DGPConfig(N=50, T=3, h=4, seed=10))
	for name in ("unit", "time", "y", "d", "x"):
		assert np.array_equal(getattr(a, name), getattr(b, name))
	assert not np.array_equal(a.y, c.y)


def test_dgp_rejects_bad_shapes():
	with pytest.raises(ConfigError):
		DGPConfig(N=1)
	with pytest.raises(ConfigError):
		DGPConfig(T=1)
	with pytest.raises(ConfigError):
		DGPConfig(h=0)


def test_true_value_is_near_its_population_mean():
	ds = generate_dataset(DGPConfig(N=5000, T=2, h=20, seed=2))
	assert 2.85 <= true_average_derivative(ds) <= 3.05


def test_true_derivative_at_origin():
	ds = PanelDataset.build(unit=[0, 0], time=[1, 2], y=[0.0, 0.0], d=[0.0, 0.0], x=np.zeros((2, 3)))
	assert true_average_derivative(ds) == 1.0


def test_outcome_mean_derivative_matches_finite_differences():
	rng = np.random.default_rng(4)
	d = rng.uniform(0.0, 1.0, size=20)
	x = rng.normal(1.0, 1.0, size=(20, 5))
	step = 1e-6
	numeric = (outcome_mean(d + step, x) - outcome_mean(d - step, x)) / (2 * step)
	np.testing.assert_allclose(numeric, 1 + 2 * d + 3 * d ** 2 + x[:, 0], atol=1e-6)


def test_trial_seeds_are_stable_and_distinct():
	seeds = [trial_seed(42, t) for t in range(100)]
	assert len(set(seeds)) == 100
	assert trial_seed(42, 7) == seeds[7]
	assert trial_seed(43, 7) != seeds[7]


@pytest.fixture(scope="module")
def small_run():
	return run_monte_carlo(SMALL, METHODS, 3, FIXED, DictionarySpec())


def test_monte_carlo_aggregates(small_run):
	assert small_run.trials == 3
	assert small_run.p == 28
	assert (small_run.r_L, small_run.r_alpha) == (0.01, 0.01)
	assert len(small_run.records) == 9
	for method in METHODS:
		s = small_run.methods[method]
		assert s.trials == 3 and s.failures == 0
		# mean squared error = bias^2 + population variance of the errors
		assert s.mse_tau == pytest.approx(s.bias ** 2 + s.sd ** 2 * 2 / 3, rel=1e-9)
		assert s.bias == pytest.approx(s.mean_estimate - s.true_value, abs=1e-12)
		assert 0.0 <= s.coverage <= 1.0


def test_records_are_internally_consistent(small_run):
	z = FIXED.z
	for r in small_run.records:
		assert r.seed == trial_seed(SMALL.seed, r.trial)
		assert r.covered == (abs(r.tau_hat - r.true_tau) <= z * r.se)
	# every method sees the same dataset in a trial
	for t in range(3):
		assert len({r.true_tau for r in small_run.records if r.trial == t}) == 1


def test_summary_is_recomputable_from_written_records(small_run, tmp_path):
	path = write_records(small_run.records, tmp_path / "trials.csv")
	again = summarize(read_records(path), METHODS, cfg=SMALL, master_seed=SMALL.seed, p=small_run.p)
	for method in METHODS:
		assert again.methods[method] == small_run.methods[method]


def test_single_trial_has_zero_spread():
	summary = run_monte_carlo(SMALL, [Method.OLS_POLY], 1, FIXED, DictionarySpec())
	assert summary.methods[Method.OLS_POLY].sd == 0.0
	assert summary.r_L is None


def test_failed_method_is_recorded_and_excluded(monkeypatch):
	real = simulation.estimate_many
	bad_seed = trial_seed(SMALL.seed, 1)

	def flaky(dataset, dict_spec, config, methods, **kwargs):
		out = real(dataset, dict_spec, config, methods, **kwargs)
		if config.seed == bad_seed:
			out[Method.DML] = MethodFailure(Method.DML, "solver blew up")
		return out

	monkeypatch.setattr(simulation, "estimate_many", flaky)
	summary = run_monte_carlo(SMALL, METHODS, 3, FIXED, DictionarySpec())
	dml = summary.methods[Method.DML]
	assert dml.failures == 1
	assert dml.trials == 2
	failed = [r for r in summary.records if r.failed]
	assert len(failed) == 1 and failed[0].error == "solver blew up" and failed[0].trial == 1
	assert summary.methods[Method.LASSO_PLUG_IN].trials == 3
	assert "Failed trials (excluded): DML=1" in render_markdown(summary)


def test_markdown_table_has_every_row_and_method(small_run):
	text = render_markdown(small_run)
	for label, _ in TABLE_ROWS:
		assert f"| {label} |" in text
	assert "| | DML | Lasso | OLS Poly |" in text
	assert "N=60, T=2, h=2, p=28, seed=7" in text


def test_trials_must_be_positive():
	with pytest.raises(ConfigError):
		run_monte_carlo(SMALL, METHODS, 0, FIXED)
