"""Polynomial basis dictionaries, their analytical treatment-derivatives, and standardization.

Variable index 0 is always the treatment D; indices 1..h are the covariates X1..Xh.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from dmlpanel.errors import ConfigError, DataError

TREATMENT_INDEX = 0
INACTIVE_SD = 1e-12


class PairPolicy(str, enum.Enum):
	TREATMENT_PAIRS_ONLY = "treatment_pairs_only"
	ALL_PAIRS = "all_pairs"
	NO_PAIRS = "no_pairs"


class DerivativeMode(str, enum.Enum):
	SIMPLE = "simple"
	FULL_CORRECTION = "full_correction"


@dataclass(frozen=True)
class BasisTerm:
	# sorted (variable index, power) pairs; empty tuple is the intercept
	exponents: Tuple[Tuple[int, int], ...] = ()

	@property
	def variables(self) -> Tuple[int, ...]:
		return tuple(v for v, _ in self.exponents)

	@property
	def powers(self) -> Tuple[int, ...]:
		return tuple(a for _, a in self.exponents)

	@property
	def is_intercept(self) -> bool:
		return not self.exponents

	def power_of(self, variable: int) -> int:
		for v, a in self.exponents:
			if v == variable:
				return a
		return 0

	def sort_key(self) -> tuple:
		return (self.variables, self.powers)

	def label(self) -> str:
		if self.is_intercept:
			return "1"
		parts = []
		for v, a in self.exponents:
			name = "D" if v == TREATMENT_INDEX else f"X{v}"
			parts.append(name if a == 1 else f"{name}^{a}")
		return "*".join(parts)


@dataclass(frozen=True)
class DictionarySpec:
	max_degree: int = 3
	pair_policy: PairPolicy = PairPolicy.TREATMENT_PAIRS_ONLY
	include_intercept: bool = True

	def __post_init__(self) -> None:
		if int(self.max_degree) < 1:
			raise ConfigError(f"max_degree must be >= 1, got {self.max_degree}")
		object.__setattr__(self, "pair_policy", PairPolicy(self.pair_policy))


@dataclass(frozen=True)
class Dictionary:
	spec: DictionarySpec
	terms: Tuple[BasisTerm, ...]
	n_variables: int
	treatment_index: int = TREATMENT_INDEX

	@property
	def p(self) -> int:
		return len(self.terms)


@dataclass(frozen=True)
class StandardizationStats:
	means: np.ndarray
	sds: np.ndarray
	active: np.ndarray = field(repr=False)

	@property
	def active_index(self) -> np.ndarray:
		return np.flatnonzero(self.active)

	def standardize(self, features: np.ndarray) -> np.ndarray:
		"""Return (b - mu) / sigma on active columns and 0 on inactive ones."""
		features = np.asarray(features, dtype=float)
		out = np.zeros_like(features)
		idx = self.active_index
		out[..., idx] = (features[..., idx] - self.means[idx]) / self.sds[idx]
		return out

	def destandardize(self, standardized: np.ndarray) -> np.ndarray:
		standardized = np.asarray(standardized, dtype=float)
		out = np.broadcast_to(self.means, standardized.shape).copy()
		idx = self.active_index
		out[..., idx] = standardized[..., idx] * self.sds[idx] + self.means[idx]
		return out


def _pairs(policy: PairPolicy, n_variables: int) -> list[tuple[int, int]]:
	if policy is PairPolicy.NO_PAIRS:
		return []
	if policy is PairPolicy.TREATMENT_PAIRS_ONLY:
		return [(TREATMENT_INDEX, j) for j in range(1, n_variables)]
	return list(itertools.combinations(range(n_variables), 2))


def expected_size(spec: DictionarySpec, n_covariates: int) -> int:
	"""Closed-form term count for `build_dictionary(spec, n_covariates)`."""
	v = n_covariates + 1
	k = spec.max_degree
	n_pairs = len(_pairs(spec.pair_policy, v))
	return int(spec.include_intercept) + k * v + k * k * n_pairs


def build_dictionary(spec: DictionarySpec, n_covariates: int) -> Dictionary:
	if n_covariates < 0:
		raise ConfigError(f"n_covariates must be >= 0, got {n_covariates}")
	v = n_covariates + 1
	k = spec.max_degree
	terms: set[BasisTerm] = set()
	if spec.include_intercept:
		terms.add(BasisTerm())
	for var in range(v):
		for a in range(1, k + 1):
			terms.add(BasisTerm(((var, a),)))
	for left, right in _pairs(spec.pair_policy, v):
		for a, b in itertools.product(range(1, k + 1), repeat=2):
			terms.add(BasisTerm(((left, a), (right, b))))
	ordered = tuple(sorted(terms, key=BasisTerm.sort_key))
	return Dictionary(spec=spec, terms=ordered, n_variables=v)


def _as_rows(dictionary: Dictionary, rows: np.ndarray) -> tuple[np.ndarray, bool]:
	arr = np.asarray(rows, dtype=float)
	single = arr.ndim == 1
	arr = np.atleast_2d(arr)
	if arr.shape[1] < dictionary.n_variables:
		raise DataError(f"rows have {arr.shape[1]} variables, dictionary needs {dictionary.n_variables}")
	if not np.all(np.isfinite(arr[:, :dictionary.n_variables])):
		raise DataError("non-finite values in basis input rows")
	return arr, single


def _power_table(arr: np.ndarray, n_variables: int, max_degree: int) -> np.ndarray:
	# table[v, a] = column v raised to a, for a in 0..max_degree
	table = np.ones((n_variables, max_degree + 1, arr.shape[0]))
	for var in range(n_variables):
		for a in range(1, max_degree + 1):
			table[var, a] = table[var, a - 1] * arr[:, var]
	return table


def eval_basis(dictionary: Dictionary, rows: np.ndarray) -> np.ndarray:
	"""Evaluate every term at one row (1-D input) or at each row of a matrix."""
	arr, single = _as_rows(dictionary, rows)
	table = _power_table(arr, dictionary.n_variables, dictionary.spec.max_degree)
	out = np.ones((arr.shape[0], dictionary.p))
	for j, term in enumerate(dictionary.terms):
		for var, a in term.exponents:
			out[:, j] *= table[var, a]
	return out[0] if single else out


def eval_basis_derivative(dictionary: Dictionary, rows: np.ndarray) -> np.ndarray:
	"""Analytical d(term)/dD for every term; terms without D are 0."""
	arr, single = _as_rows(dictionary, rows)
	table = _power_table(arr, dictionary.n_variables, dictionary.spec.max_degree)
	d_index = dictionary.treatment_index
	out = np.zeros((arr.shape[0], dictionary.p))
	for j, term in enumerate(dictionary.terms):
		a_d = term.power_of(d_index)
		if a_d == 0:
			continue
		col = a_d * table[d_index, a_d - 1]
		for var, a in term.exponents:
			if var != d_index:
				col = col * table[var, a]
		out[:, j] = col
	return out[0] if single else out


def fit_standardization(features: np.ndarray, weights: Optional[np.ndarray] = None) -> StandardizationStats:
	"""Column means and sample SDs; weights are rescaled to mean 1 so the n-1 denominator still applies."""
	x = np.asarray(features, dtype=float)
	if x.ndim != 2 or x.shape[0] < 2:
		raise DataError("standardization needs a 2-D feature matrix with at least 2 rows")
	n = x.shape[0]
	if weights is None:
		w = np.ones(n)
	else:
		w = np.asarray(weights, dtype=float)
		w = w * (n / w.sum())
	means = (w @ x) / n
	sds = np.sqrt((w @ (x - means) ** 2) / (n - 1))
	return StandardizationStats(means=means, sds=sds, active=sds >= INACTIVE_SD)


def standardized_derivative(
	dictionary: Dictionary,
	stats: StandardizationStats,
	rows: np.ndarray,
	mode: DerivativeMode = DerivativeMode.SIMPLE,
	n: Optional[int] = None,
) -> np.ndarray:
	"""Derivative of the standardized basis.

	SIMPLE scales b_D by 1/sigma. FULL_CORRECTION also differentiates through the estimated
	mean and SD, multiplying by (n-1)/n - (b - mu)^2 / ((n-1) sigma^2); the two differ by O(1/n).
	"""
	mode = DerivativeMode(mode)
	deriv = eval_basis_derivative(dictionary, rows)
	idx = stats.active_index
	out = np.zeros_like(deriv)
	out[..., idx] = deriv[..., idx] / stats.sds[idx]
	if mode is DerivativeMode.SIMPLE:
		return out
	if n is None or n < 2:
		raise DataError(f"full-correction derivative needs n >= 2, got {n}")
	basis = eval_basis(dictionary, rows)
	centered = basis[..., idx] - stats.means[idx]
	factor = (n - 1) / n - centered ** 2 / ((n - 1) * stats.sds[idx] ** 2)
	out[..., idx] = out[..., idx] * factor
	return out


def numerical_derivative(
	dictionary: Dictionary,
	coefficients: np.ndarray,
	rows: np.ndarray,
	step: float = 1e-5,
	scheme: str = "central",
) -> np.ndarray:
	"""Finite-difference derivative in D of b(row)'coefficients ("forward" or "central")."""
	arr, single = _as_rows(dictionary, rows)
	coef = np.asarray(coefficients, dtype=float)
	up = arr.copy()
	up[:, dictionary.treatment_index] += step
	if scheme == "forward":
		out = (eval_basis(dictionary, up) @ coef - eval_basis(dictionary, arr) @ coef) / step
	elif scheme == "central":
		down = arr.copy()
		down[:, dictionary.treatment_index] -= step
		out = (eval_basis(dictionary, up) @ coef - eval_basis(dictionary, down) @ coef) / (2 * step)
	else:
		raise ConfigError(f"unknown finite-difference scheme: {scheme}")
	return out[0] if single else out


@dataclass(frozen=True)
class DerivativeCheck:
	max_abs_error: float
	max_rel_error: float
	n_rows: int


def derivative_check(dictionary: Dictionary, rows: np.ndarray, step: float = 1e-5) -> DerivativeCheck:
	"""Compare analytical basis derivatives with central differences, term by term.

	Relative error is |analytic - numeric| / max(1, |analytic|).
	"""
	arr, _ = _as_rows(dictionary, rows)
	analytic = eval_basis_derivative(dictionary, arr)
	up = arr.copy()
	down = arr.copy()
	up[:, dictionary.treatment_index] += step
	down[:, dictionary.treatment_index] -= step
	numeric = (eval_basis(dictionary, up) - eval_basis(dictionary, down)) / (2 * step)
	abs_err = np.abs(analytic - numeric)
	rel_err = abs_err / np.maximum(1.0, np.abs(analytic))
	return DerivativeCheck(
		max_abs_error=float(abs_err.max(initial=0.0)),
		max_rel_error=float(rel_err.max(initial=0.0)),
		n_rows=int(arr.shape[0]),
	)


def linear_spec() -> DictionarySpec:
	"""Raw D and X columns only (the OLS Linear design)."""
	return DictionarySpec(max_degree=1, pair_policy=PairPolicy.NO_PAIRS, include_intercept=False)
