class DmlPanelError(RuntimeError):
	"""Base class for every error raised by dmlpanel."""


class ConfigError(DmlPanelError):
	"""Invalid settings: bad spec values, grids, fold counts, unknown config keys."""


class DataError(DmlPanelError):
	"""Input data that violates the panel contract (missing columns, duplicates, non-finite cells)."""


class SolverError(DmlPanelError):
	"""A solver problem that has no finite minimizer."""


class TuningError(DmlPanelError):
	"""No hyperparameter candidate produced a usable fit."""
