"""Shared command-line plumbing: flags, logging, config resolution and exit codes."""
import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from dmlpanel.dictionary import PairPolicy
from dmlpanel.errors import ConfigError, DataError
from dmlpanel.models import RunConfig
from dmlpanel.runconfig import load_run_config, resolve_seed, save_run_config
from dmlpanel.runlog import RunLog

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

console = Console()
err_console = Console(stderr=True)
log = logging.getLogger("dmlpanel.cli")


def setup_logging(verbose: bool = False) -> None:
	logging.basicConfig(
		level=logging.DEBUG if verbose else logging.INFO,
		format="%(message)s",
		datefmt="[%X]",
		handlers=[RichHandler(console=err_console, show_path=False, rich_tracebacks=verbose)],
		force=True,
	)


def _floats(text: str) -> List[float]:
	try:
		return [float(v) for v in text.split(",") if v.strip()]
	except ValueError as exc:
		raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> List[str]:
	return [v.strip() for v in text.split(",") if v.strip()]


def add_common_arguments(p: argparse.ArgumentParser) -> None:
	p.add_argument("--config", help="JSON run config; flags override its values")
	p.add_argument("--seed", type=int, help="Master seed (omit to draw one from system entropy)")
	p.add_argument("--jobs", type=int, help="Worker processes for folds/trials")
	p.add_argument("--out", help="Output directory")
	p.add_argument("--verbose", action="store_true", help="Debug logging")


def add_model_arguments(p: argparse.ArgumentParser) -> None:
	p.add_argument("--methods", type=_names, help="Comma-separated methods (DML,DMLIterative,Lasso,OLSLinear,OLSPoly)")
	p.add_argument("--folds", type=int, help="Cross-fitting folds L")
	p.add_argument("--lasso-grid", type=_floats, help="Comma-separated r_L candidates")
	p.add_argument("--riesz-grid", type=_floats, help="Comma-separated r_alpha candidates")
	p.add_argument("--level", type=float, help="Confidence level")
	p.add_argument("--step-budget", type=int, help="Iterations of the iterative Riesz solver")
	p.add_argument("--max-degree", type=int, help="Per-variable polynomial degree")
	p.add_argument("--pair-policy", choices=[pp.value for pp in PairPolicy], help="Which variable pairs get interaction terms")
	p.add_argument("--no-intercept", dest="include_intercept", action="store_const", const=False, help="Drop the intercept term")


def add_data_arguments(p: argparse.ArgumentParser, required: bool = False) -> None:
	p.add_argument("--data", required=required, help="Panel CSV (unit,time,y,d,x1..xh[,weight])")
	p.add_argument("--unit-col", help="Unit id column")
	p.add_argument("--time-col", help="Time column")
	p.add_argument("--y-col", help="Outcome column")
	p.add_argument("--d-col", help="Treatment column")
	p.add_argument("--x-cols", type=_names, help="Comma-separated covariate columns (default: x1, x2, ...)")
	p.add_argument("--weight-col", help="Observation weight column")
	p.add_argument("--no-weights", dest="use_weights", action="store_const", const=False, help="Ignore the weight column")


def _put(target: Dict[str, Any], path: str, value: Any) -> None:
	if value is None:
		return
	*parents, leaf = path.split(".")
	for key in parents:
		target = target.setdefault(key, {})
	target[leaf] = value


FLAG_PATHS = {
	"seed": "seed",
	"jobs": "jobs",
	"out": "out",
	"data": "data",
	"methods": "methods",
	"window": "window",
	"folds": "estimator.folds",
	"lasso_grid": "estimator.lasso_grid",
	"riesz_grid": "estimator.riesz_grid",
	"level": "estimator.level",
	"step_budget": "estimator.step_budget",
	"use_weights": "estimator.use_weights",
	"max_degree": "dictionary.max_degree",
	"pair_policy": "dictionary.pair_policy",
	"include_intercept": "dictionary.include_intercept",
	"unit_col": "columns.unit",
	"time_col": "columns.time",
	"y_col": "columns.y",
	"d_col": "columns.d",
	"x_cols": "columns.x",
	"weight_col": "columns.weight",
	"trials": "simulation.trials",
	"N": "simulation.N",
	"T": "simulation.T",
	"h": "simulation.h",
	"retune_each_trial": "simulation.retune_each_trial",
}


def overrides_from(args: argparse.Namespace) -> Dict[str, Any]:
	out: Dict[str, Any] = {}
	for attr, path in FLAG_PATHS.items():
		_put(out, path, getattr(args, attr, None))
	return out


@dataclass
class RunContext:
	cfg: RunConfig
	seed: int
	out_dir: Path
	runlog: RunLog


def prepare(args: argparse.Namespace, command: str) -> RunContext:
	cfg = load_run_config(args.config, overrides_from(args))
	cfg, generated = resolve_seed(cfg)
	out_dir = Path(cfg.out)
	save_run_config(cfg, out_dir)
	runlog = RunLog(out_dir)
	runlog.event("start", command, seed=cfg.seed, generated_seed=generated)
	if generated:
		console.print(f"[yellow]No --seed given; using entropy seed {cfg.seed}[/yellow]")
	return RunContext(cfg=cfg, seed=int(cfg.seed), out_dir=out_dir, runlog=runlog)


def parse_or_exit_code(p: argparse.ArgumentParser, argv: Optional[List[str]]):
	"""argparse exits on usage errors; turn that into a return value."""
	try:
		return p.parse_args(sys.argv[1:] if argv is None else argv), None
	except SystemExit as exc:
		code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
		return None, code


def guarded(command: str, body: Callable[[], int]) -> int:
	"""Run a command body, mapping failures to exit codes (2 config/data, 1 anything else)."""
	try:
		return body()
	except (ConfigError, DataError, ValidationError) as exc:
		err_console.print(f"[red]{command}: {exc}[/red]")
		return EXIT_USAGE
	except KeyboardInterrupt:
		err_console.print(f"[red]{command}: interrupted[/red]")
		return EXIT_RUNTIME
	except Exception as exc:
		log.debug("unhandled failure", exc_info=True)
		err_console.print(f"[red]{command} failed: {exc}[/red]")
		return EXIT_RUNTIME


def render_table(title: str, heads: List[str], rows: List[List[str]]) -> Table:
	table = Table(title=title)
	for i, head in enumerate(heads):
		table.add_column(head, justify="left" if i == 0 else "right")
	for row in rows:
		table.add_row(*row)
	return table


def markdown_table(heads: List[str], rows: List[List[str]]) -> str:
	lines = ["| " + " | ".join(heads) + " |", "|" + "---|" * len(heads)]
	lines.extend("| " + " | ".join(r) + " |" for r in rows)
	return "\n".join(lines) + "\n"


def fmt(value: Optional[float], digits: int = 4) -> str:
	if value is None or value != value:
		return "n/a"
	return f"{value:.{digits}g}"
