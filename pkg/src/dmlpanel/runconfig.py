"""Run configuration layering: defaults < environment (.env) < JSON config file < command-line flags."""
import json
import os
import secrets
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

from dmlpanel.errors import ConfigError
from dmlpanel.models import RunConfig

JOBS_ENV = "DMLPANEL_JOBS"
OUT_ENV = "DMLPANEL_OUT"
RUN_CONFIG_NAME = "run_config.json"


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
	out = dict(base)
	for key, value in extra.items():
		if isinstance(value, dict) and isinstance(out.get(key), dict):
			out[key] = _merge(out[key], value)
		else:
			out[key] = value
	return out


def env_defaults() -> Dict[str, Any]:
	load_dotenv()
	data: Dict[str, Any] = {}
	jobs = os.environ.get(JOBS_ENV)
	if jobs:
		try:
			data["jobs"] = int(jobs)
		except ValueError as exc:
			raise ConfigError(f"{JOBS_ENV} must be an integer, got {jobs!r}") from exc
	out = os.environ.get(OUT_ENV)
	if out:
		data["out"] = out
	return data


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
	if not path:
		return {}
	p = Path(path)
	if not p.is_file():
		raise ConfigError(f"config file not found: {p}")
	try:
		data = json.loads(p.read_text(encoding="utf-8"))
	except json.JSONDecodeError as exc:
		raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
	if not isinstance(data, dict):
		raise ConfigError(f"config file {p} must hold a JSON object")
	return data


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
	"""Validate the layered config. Flags arrive as a nested dict of non-None values."""
	merged = _merge(env_defaults(), read_config_file(path))
	merged = _merge(merged, overrides or {})
	return RunConfig.model_validate(merged)


def resolve_seed(cfg: RunConfig) -> Tuple[RunConfig, bool]:
	"""Fill a missing seed from system entropy; the flag tells the caller to echo it."""
	if cfg.seed is not None:
		return cfg, False
	return cfg.model_copy(update={"seed": secrets.randbits(32)}), True


def save_run_config(cfg: RunConfig, out_dir: Path) -> Path:
	out_dir = Path(out_dir)
	out_dir.mkdir(parents=True, exist_ok=True)
	path = out_dir / RUN_CONFIG_NAME
	path.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
	return path
