from collections import Counter

import numpy as np
import pytest

from conftest import make_panel
from dmlpanel.dictionary import BasisTerm, Dictionary, DictionarySpec, StandardizationStats, build_dictionary, eval_basis, fit_standardization
from dmlpanel.errors import ConfigError, DataError
from dmlpanel.panel import (
	CsvSchema,
	PanelDataset,
	assign_folds,
	build_differenced_design,
	expand,
	load_csv,
	rolling_windows,
	write_csv,
)


def write_text(path, text: str):
	path.write_text(text, encoding="utf-8")
	return path


def test_load_small_csv(tmp_path):
	path = write_text(tmp_path / "p.csv", "unit,time,y,d,x1\nb,2,1.5,0.2,3\na,1,1.0,0.1,2\nb,1,0.5,0.3,1\na,2,2.0,0.4,4\n")
	ds = load_csv(path)
	assert ds.n_units == 2
	assert ds.h == 1
	assert len(ds.periods) == 2
	assert list(ds.unit) == ["a", "a", "b", "b"]
	np.testing.assert_array_equal(ds.time, [1, 2, 1, 2])
	np.testing.assert_array_equal(ds.weight, np.ones(4))
	assert ds.covariate_names == ("x1",)


def test_x_columns_are_ordered_numerically(tmp_path):
	path = write_text(tmp_path / "p.csv", "unit,time,y,d,x10,x2,x1\n1,1,0,0,10,2,1\n1,2,0,0,10,2,1\n")
	ds = load_csv(path)
	assert ds.covariate_names == ("x1", "x2", "x10")
	np.testing.assert_array_equal(ds.x[0], [1.0, 2.0, 10.0])


def test_duplicate_unit_time_rejected(tmp_path):
	path = write_text(tmp_path / "p.csv", "unit,time,y,d,x1\n1,1,1,0,0\n1,1,2,0,0\n1,2,2,0,0\n")
	with pytest.raises(DataError, match="duplicate"):
		load_csv(path)


def test_missing_column_named(tmp_path):
	path = write_text(tmp_path / "p.csv", "unit,time,y,d,x1\n1,1,1,0,0\n1,2,2,0,0\n")
	with pytest.raises(DataError, match="x7"):
		load_csv(path, CsvSchema(x=("x1", "x7")))


def test_non_numeric_cell_rejected(tmp_path):
	path = write_text(tmp_path / "p.csv", "unit,time,y,d,x1\n1,1,1,0,0\n1,2,abc,0,0\n")
	with pytest.raises(DataError, match="'y'"):
		load_csv(path)


def test_single_observation_unit_rejected(tmp_path):
	path = write_text(tmp_path / "p.csv", "unit,time,y,d,x1\n1,1,1,0,0\n1,2,2,0,0\n2,1,2,0,0\n")
	with pytest.raises(DataError, match="single observation"):
		load_csv(path)


def test_duplicate_header_rejected(tmp_path):
	path = write_text(tmp_path / "p.csv", "unit,time,y,d,x1,x1\n1,1,1,0,0,0\n1,2,2,0,0,0\n")
	with pytest.raises(DataError, match="duplicate column"):
		load_csv(path)


def test_weight_column_and_round_trip_is_bit_exact(tmp_path):
	ds = make_panel(8, 3, 2, seed=4)
	ds = ds.with_weights(np.random.default_rng(1).uniform(0.1, 5.0, ds.n_obs))
	path = write_csv(ds, tmp_path / "panel.csv")
	back = load_csv(path, CsvSchema(weight="weight"))
	np.testing.assert_array_equal(back.unit, ds.unit)
	np.testing.assert_array_equal(back.time, ds.time)
	for name in ("y", "d", "x", "weight"):
		assert np.array_equal(getattr(back, name), getattr(ds, name)), name


def test_assign_folds_sizes_and_determinism():
	ds = make_panel(1000, 2, 1, seed=0)
	folds = assign_folds(ds, 5, seed=42)
	assert folds.sizes() == [200] * 5
	assert assign_folds(ds, 5, seed=42).folds == folds.folds
	assert assign_folds(ds, 5, seed=43).folds != folds.folds

	small = make_panel(7, 2, 1, seed=0)
	assert sorted(assign_folds(small, 3, seed=1).sizes()) == [2, 2, 3]


def test_assign_folds_errors():
	ds = make_panel(4, 2, 1)
	with pytest.raises(ConfigError):
		assign_folds(ds, 5, seed=0)
	with pytest.raises(ConfigError):
		assign_folds(ds, 1, seed=0)


def test_every_observation_of_a_unit_shares_its_fold():
	ds = make_panel(50, 4, 1, seed=2)
	folds = assign_folds(ds, 5, seed=3)
	labels = folds.labels(ds)
	for code in range(ds.n_units):
		assert len(set(labels[ds.unit_codes == code])) == 1
	seen = Counter(u for f in range(5) for u in folds.units_in(f))
	assert all(c == 1 for c in seen.values())
	assert len(seen) == ds.n_units


def _unbalanced_panel() -> PanelDataset:
	rng = np.random.default_rng(6)
	units, times = [], []
	for u, periods in enumerate([[1, 2], [1, 2, 3, 4], [2, 5, 6], [1, 3]]):
		units += [u] * len(periods)
		times += periods
	n = len(units)
	return PanelDataset.build(units, times, rng.normal(size=n), rng.normal(size=n), rng.normal(size=(n, 2)))


def test_differenced_row_count_unbalanced():
	ds = _unbalanced_panel()
	d = build_dictionary(DictionarySpec(2), ds.h)
	stats = fit_standardization(eval_basis(d, ds.variables()))
	design = build_differenced_design(ds, d, stats, assign_folds(ds, 2, seed=0))
	assert design.n_rows == 1 + 3 + 2 + 1
	assert design.delta_basis.shape == (7, int(stats.active.sum()))
	# T=2 unit contributes exactly one row
	assert np.sum(design.unit == 0) == 1


def test_hand_computed_difference():
	dictionary = Dictionary(
		spec=DictionarySpec(max_degree=2),
		terms=(BasisTerm(((0, 1),)), BasisTerm(((1, 1),)), BasisTerm(((0, 2), (1, 1)))),
		n_variables=2,
	)
	ds = PanelDataset.build(unit=[7, 7], time=[1, 2], y=[1.0, 4.0], d=[1.0, 2.0], x=[[2.0], [3.0]])
	stats = StandardizationStats(means=np.zeros(3), sds=np.array([1.0, 1.0, 2.0]), active=np.ones(3, dtype=bool))
	design = build_differenced_design(ds, dictionary, stats)
	# b(1,2) = (1,2,2), b(2,3) = (2,3,12)
	np.testing.assert_allclose(design.delta_basis, [[1.0, 1.0, 5.0]])
	np.testing.assert_allclose(design.derivative, [[1.0, 0.0, 6.0]])
	np.testing.assert_allclose(design.delta_y, [3.0])


def test_fixed_effects_cancel():
	ds = make_panel(30, 4, 2, seed=9)
	shift = np.random.default_rng(0).normal(0, 100, size=ds.n_units)[ds.unit_codes]
	shifted = ds.with_outcome(ds.y + shift)
	d = build_dictionary(DictionarySpec(), ds.h)
	cache = expand(ds, d)
	stats = fit_standardization(cache.basis)
	folds = assign_folds(ds, 3, seed=1)
	a = build_differenced_design(ds, d, stats, folds, cache)
	b = build_differenced_design(shifted, d, stats, folds)
	np.testing.assert_array_equal(a.delta_basis, b.delta_basis)
	np.testing.assert_array_equal(a.derivative, b.derivative)
	np.testing.assert_array_equal(a.fold, b.fold)
	np.testing.assert_allclose(a.delta_y, b.delta_y, atol=1e-10)


def test_weights_carried_from_time_t():
	ds = make_panel(5, 3, 1).with_weights(np.arange(1.0, 16.0))
	d = build_dictionary(DictionarySpec(1), 1)
	stats = fit_standardization(eval_basis(d, ds.variables()))
	design = build_differenced_design(ds, d, stats)
	np.testing.assert_array_equal(design.weight, ds.weight[design.obs_index])
	assert np.all(ds.time[design.obs_index] >= 2)


def test_rolling_windows_balanced():
	ds = make_panel(10, 3, 1)
	windows = rolling_windows(ds, 2)
	assert len(windows) == 2
	assert [list(w.periods) for w in windows] == [[1, 2], [2, 3]]
	five = make_panel(6, 5, 1)
	for width in (2, 3, 4, 5):
		assert len(rolling_windows(five, width)) == 5 - width + 1
	assert rolling_windows(ds, 4) == []


def test_rolling_two_periods_returns_input():
	ds = make_panel(6, 2, 2)
	(only,) = rolling_windows(ds, 2)
	for name in ("unit", "time", "y", "d", "x", "weight"):
		np.testing.assert_array_equal(getattr(only, name), getattr(ds, name))


def test_rolling_drops_units_without_full_window():
	ds = _unbalanced_panel()
	windows = rolling_windows(ds, 2)
	first = windows[0]
	assert list(first.periods) == [1, 2]
	assert set(first.unit.tolist()) == {0, 1}
	with pytest.raises(ConfigError):
		rolling_windows(ds, 1)
