"""Panel data model, CSV ingestion, first-differencing and unit-level fold assignment."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dmlpanel.dictionary import Dictionary, StandardizationStats, eval_basis, eval_basis_derivative
from dmlpanel.errors import ConfigError, DataError

log = logging.getLogger(__name__)

_X_COLUMN = re.compile(r"^x(\d+)$")


@dataclass(frozen=True)
class CsvSchema:
	unit: str = "unit"
	time: str = "time"
	y: str = "y"
	d: str = "d"
	x: Optional[Tuple[str, ...]] = None  # None: every column named x<k>, ordered by k
	weight: Optional[str] = None


@dataclass(frozen=True)
class PanelDataset:
	"""Long-format panel sorted by (unit, time). Build through `PanelDataset.build`."""
	unit: np.ndarray
	time: np.ndarray
	y: np.ndarray
	d: np.ndarray
	x: np.ndarray
	weight: np.ndarray
	covariate_names: Tuple[str, ...] = ()
	_starts: np.ndarray = field(default=None, repr=False, compare=False)

	@classmethod
	def build(
		cls,
		unit: Sequence[Hashable],
		time: Sequence[float],
		y: Sequence[float],
		d: Sequence[float],
		x: np.ndarray,
		weight: Optional[Sequence[float]] = None,
		covariate_names: Optional[Sequence[str]] = None,
	) -> "PanelDataset":
		unit_arr = np.asarray(unit)
		time_arr = np.asarray(time)
		n = unit_arr.shape[0]
		x_arr = np.asarray(x, dtype=float)
		if x_arr.ndim == 1:
			x_arr = x_arr.reshape(n, -1) if n else x_arr.reshape(0, 0)
		if n == 0:
			raise DataError("panel has no observations")
		y_arr = np.asarray(y, dtype=float)
		d_arr = np.asarray(d, dtype=float)
		w_arr = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
		for name, arr in (("time", time_arr), ("y", y_arr), ("d", d_arr), ("weight", w_arr)):
			if arr.shape != (n,):
				raise DataError(f"column '{name}' has {arr.shape[0] if arr.ndim else 0} entries, expected {n}")
		if x_arr.shape[0] != n:
			raise DataError(f"covariate matrix has {x_arr.shape[0]} rows, expected {n}")
		for name, arr in (("y", y_arr), ("d", d_arr), ("x", x_arr), ("weight", w_arr)):
			if not np.all(np.isfinite(arr)):
				raise DataError(f"non-finite values in column '{name}'")
		if not np.all(np.isfinite(time_arr.astype(float))):
			raise DataError("non-finite values in column 'time'")
		if np.any(w_arr <= 0):
			raise DataError("weights must be strictly positive")

		order = np.lexsort((time_arr, unit_arr))
		unit_arr, time_arr = unit_arr[order], time_arr[order]
		y_arr, d_arr, x_arr, w_arr = y_arr[order], d_arr[order], x_arr[order], w_arr[order]

		same_unit = unit_arr[1:] == unit_arr[:-1]
		dup = same_unit & (time_arr[1:] == time_arr[:-1])
		if np.any(dup):
			k = int(np.flatnonzero(dup)[0])
			raise DataError(f"duplicate (unit, time) observation: ({unit_arr[k]!r}, {time_arr[k]!r})")
		starts = np.flatnonzero(np.r_[True, ~same_unit])
		counts = np.diff(np.r_[starts, n])
		if np.any(counts < 2):
			k = int(starts[np.flatnonzero(counts < 2)[0]])
			raise DataError(f"unit {unit_arr[k]!r} has a single observation; every unit needs at least 2")

		names = tuple(covariate_names) if covariate_names is not None else tuple(f"x{j}" for j in range(1, x_arr.shape[1] + 1))
		if len(names) != x_arr.shape[1]:
			raise DataError(f"{len(names)} covariate names for {x_arr.shape[1]} covariate columns")
		return cls(unit=unit_arr, time=time_arr, y=y_arr, d=d_arr, x=x_arr, weight=w_arr, covariate_names=names, _starts=starts)

	@property
	def n_obs(self) -> int:
		return int(self.unit.shape[0])

	@property
	def h(self) -> int:
		return int(self.x.shape[1])

	@property
	def units(self) -> np.ndarray:
		return self.unit[self._starts]

	@property
	def n_units(self) -> int:
		return int(self._starts.shape[0])

	@property
	def periods(self) -> np.ndarray:
		return np.unique(self.time)

	@property
	def unit_sizes(self) -> np.ndarray:
		return np.diff(np.r_[self._starts, self.n_obs])

	@property
	def unit_codes(self) -> np.ndarray:
		"""Integer position of each observation's unit in `units`."""
		return np.repeat(np.arange(self.n_units), self.unit_sizes)

	def variables(self) -> np.ndarray:
		"""Raw variable rows [D, X1..Xh], the input of the basis dictionary."""
		return np.column_stack([self.d, self.x])

	def subset(self, mask: np.ndarray) -> "PanelDataset":
		mask = np.asarray(mask, dtype=bool)
		return PanelDataset.build(
			self.unit[mask], self.time[mask], self.y[mask], self.d[mask], self.x[mask],
			self.weight[mask], covariate_names=self.covariate_names,
		)

	def with_outcome(self, y: np.ndarray) -> "PanelDataset":
		return PanelDataset.build(self.unit, self.time, y, self.d, self.x, self.weight, covariate_names=self.covariate_names)

	def with_weights(self, weight: np.ndarray) -> "PanelDataset":
		return PanelDataset.build(self.unit, self.time, self.y, self.d, self.x, weight, covariate_names=self.covariate_names)

	def to_frame(self, include_weight: bool = True) -> pd.DataFrame:
		cols: Dict[str, np.ndarray] = {"unit": self.unit, "time": self.time, "y": self.y, "d": self.d}
		for j, name in enumerate(self.covariate_names):
			cols[name] = self.x[:, j]
		if include_weight:
			cols["weight"] = self.weight
		return pd.DataFrame(cols)


def _resolve_x_columns(frame: pd.DataFrame, schema: CsvSchema) -> List[str]:
	if schema.x is not None:
		return list(schema.x)
	found = [(int(m.group(1)), c) for c in frame.columns if (m := _X_COLUMN.match(str(c)))]
	return [c for _, c in sorted(found)]


def _numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
	values = pd.to_numeric(frame[column], errors="coerce")
	bad = values.isna()
	if bad.any():
		row = int(np.flatnonzero(bad.to_numpy())[0])
		raise DataError(f"non-numeric value {frame[column].iloc[row]!r} in column '{column}' at data row {row + 1}")
	return values.to_numpy()


def load_csv(path: str | Path, schema: Optional[CsvSchema] = None) -> PanelDataset:
	schema = schema or CsvSchema()
	path = Path(path)
	if not path.is_file():
		raise DataError(f"panel file not found: {path}")
	header = pd.read_csv(path, header=None, nrows=1, dtype=str, encoding="utf-8").iloc[0]
	if header.duplicated().any():
		dups = sorted(set(header[header.duplicated()]))
		raise DataError(f"duplicate column name(s) in {path.name}: {', '.join(dups)}")
	frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
	x_cols = _resolve_x_columns(frame, schema)
	required = [schema.unit, schema.time, schema.y, schema.d, *x_cols]
	if schema.weight:
		required.append(schema.weight)
	missing = [c for c in required if c not in frame.columns]
	if missing:
		raise DataError(f"missing column(s) in {path.name}: {', '.join(missing)}")
	if frame[schema.unit].isna().any():
		raise DataError(f"empty unit id in column '{schema.unit}'")
	units = frame[schema.unit]
	if not pd.api.types.is_integer_dtype(units):
		units = units.astype(str)
	x = np.column_stack([_numeric(frame, c).astype(float) for c in x_cols]) if x_cols else np.zeros((len(frame), 0))
	weight = _numeric(frame, schema.weight).astype(float) if schema.weight else None
	return PanelDataset.build(
		unit=units.to_numpy(),
		time=_numeric(frame, schema.time),
		y=_numeric(frame, schema.y).astype(float),
		d=_numeric(frame, schema.d).astype(float),
		x=x,
		weight=weight,
		covariate_names=x_cols,
	)


def write_csv(dataset: PanelDataset, path: str | Path, include_weight: bool = True) -> Path:
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	dataset.to_frame(include_weight=include_weight).to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
	return path


@dataclass(frozen=True)
class FoldAssignment:
	L: int
	seed: int
	folds: Dict[Hashable, int]

	def labels(self, dataset: PanelDataset) -> np.ndarray:
		"""Per-observation fold labels for `dataset`."""
		try:
			per_unit = np.array([self.folds[u] for u in dataset.units], dtype=int)
		except KeyError as exc:
			raise DataError(f"unit {exc.args[0]!r} has no fold assignment") from exc
		return np.repeat(per_unit, dataset.unit_sizes)

	def units_in(self, fold: int) -> list:
		return [u for u, f in self.folds.items() if f == fold]

	def sizes(self) -> list[int]:
		counts = np.bincount(np.fromiter(self.folds.values(), dtype=int), minlength=self.L)
		return counts.tolist()


def assign_folds(dataset: PanelDataset, L: int, seed: int) -> FoldAssignment:
	if L < 2:
		raise ConfigError(f"fold count L must be >= 2, got {L}")
	if L > dataset.n_units:
		raise ConfigError(f"fold count L={L} exceeds the number of units ({dataset.n_units})")
	rng = np.random.default_rng(seed)
	units = dataset.units
	order = rng.permutation(units.shape[0])
	folds = {units[k].item() if hasattr(units[k], "item") else units[k]: pos % L for pos, k in enumerate(order)}
	return FoldAssignment(L=L, seed=int(seed), folds=folds)


@dataclass(frozen=True)
class BasisCache:
	"""Raw basis rows b and b_D for every observation of a dataset."""
	basis: np.ndarray
	derivative: np.ndarray


def expand(dataset: PanelDataset, dictionary: Dictionary) -> BasisCache:
	if dictionary.n_variables != dataset.h + 1:
		raise DataError(f"dictionary expects {dictionary.n_variables - 1} covariates, panel has {dataset.h}")
	rows = dataset.variables()
	return BasisCache(basis=eval_basis(dictionary, rows), derivative=eval_basis_derivative(dictionary, rows))


@dataclass(frozen=True)
class DifferencedDesign:
	"""One row per (unit, t >= 2): standardized delta-basis, standardized derivative, delta-Y.

	Columns are the active dictionary terms listed in `active`.
	"""
	unit: np.ndarray
	time: np.ndarray
	unit_code: np.ndarray
	delta_basis: np.ndarray
	derivative: np.ndarray
	delta_y: np.ndarray
	weight: np.ndarray
	fold: np.ndarray
	active: np.ndarray
	obs_index: np.ndarray

	@property
	def n_rows(self) -> int:
		return int(self.delta_y.shape[0])

	@property
	def q(self) -> int:
		return int(self.active.shape[0])

	def rows(self, mask: np.ndarray) -> "DifferencedDesign":
		return DifferencedDesign(
			unit=self.unit[mask], time=self.time[mask], unit_code=self.unit_code[mask],
			delta_basis=self.delta_basis[mask], derivative=self.derivative[mask],
			delta_y=self.delta_y[mask], weight=self.weight[mask], fold=self.fold[mask],
			active=self.active, obs_index=self.obs_index[mask],
		)


def differenced_rows(dataset: PanelDataset) -> np.ndarray:
	"""Observation indices k whose predecessor k-1 belongs to the same unit."""
	same = np.r_[False, dataset.unit[1:] == dataset.unit[:-1]]
	return np.flatnonzero(same)


def build_differenced_design(
	dataset: PanelDataset,
	dictionary: Dictionary,
	stats: StandardizationStats,
	folds: Optional[FoldAssignment] = None,
	cache: Optional[BasisCache] = None,
) -> DifferencedDesign:
	cache = cache or expand(dataset, dictionary)
	if stats.means.shape[0] != dictionary.p:
		raise DataError(f"standardization stats cover {stats.means.shape[0]} terms, dictionary has {dictionary.p}")
	cur = differenced_rows(dataset)
	prev = cur - 1
	active = stats.active_index
	sds = stats.sds[active]
	# the fitted mean cancels in the difference
	delta_basis = (cache.basis[cur][:, active] - cache.basis[prev][:, active]) / sds
	derivative = cache.derivative[cur][:, active] / sds
	labels = folds.labels(dataset)[cur] if folds is not None else np.zeros(cur.shape[0], dtype=int)
	return DifferencedDesign(
		unit=dataset.unit[cur],
		time=dataset.time[cur],
		unit_code=dataset.unit_codes[cur],
		delta_basis=delta_basis,
		derivative=derivative,
		delta_y=dataset.y[cur] - dataset.y[prev],
		weight=dataset.weight[cur],
		fold=labels,
		active=active,
		obs_index=cur,
	)


def rolling_windows(dataset: PanelDataset, width: int = 2) -> List[PanelDataset]:
	"""Sub-panels over consecutive distinct periods; units missing any period of a window are dropped."""
	if width < 2:
		raise ConfigError(f"window width must be >= 2, got {width}")
	periods = dataset.periods
	windows: List[PanelDataset] = []
	for start in range(len(periods) - width + 1):
		span = periods[start:start + width]
		in_span = np.isin(dataset.time, span)
		counts = pd.Series(in_span).groupby(dataset.unit_codes).transform("sum").to_numpy()
		mask = in_span & (counts == width)
		if not mask.any():
			log.warning("window starting at %s has no complete units; skipped", span[0])
			continue
		windows.append(dataset.subset(mask))
	return windows
