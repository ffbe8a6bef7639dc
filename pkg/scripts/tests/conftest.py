import numpy as np
import pytest

from dmlpanel.panel import PanelDataset


def make_panel(n_units: int, n_periods: int, h: int, seed: int = 0, outcome=None) -> PanelDataset:
	"""Balanced panel with unit effects; `outcome(d, x)` defaults to a mildly nonlinear function."""
	rng = np.random.default_rng(seed)
	a = rng.normal(1.0, 1.0, size=n_units)
	x = rng.normal(a[:, None, None], 1.0, size=(n_units, n_periods, h)).reshape(-1, h)
	d = rng.uniform(0.0, 1.0, size=n_units * n_periods) + 0.1 * x[:, 0]
	fe = np.repeat(a, n_periods)
	if outcome is None:
		y = fe + d + d ** 2 + 0.5 * d * x[:, 0] + rng.normal(0.0, 0.5, size=d.shape[0])
	else:
		y = fe + outcome(d, x)
	return PanelDataset.build(
		unit=np.repeat(np.arange(n_units), n_periods),
		time=np.tile(np.arange(1, n_periods + 1), n_units),
		y=y,
		d=d,
		x=x,
	)


@pytest.fixture
def small_panel() -> PanelDataset:
	return make_panel(40, 3, 2, seed=11)


@pytest.fixture
def two_period_panel() -> PanelDataset:
	return make_panel(60, 2, 2, seed=5)
