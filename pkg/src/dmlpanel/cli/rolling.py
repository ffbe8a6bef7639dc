import argparse
import sys
from typing import Dict, List

import pandas as pd

from dmlpanel.cli.common import (
	EXIT_OK,
	EXIT_RUNTIME,
	add_common_arguments,
	add_data_arguments,
	add_model_arguments,
	console,
	err_console,
	fmt,
	guarded,
	parse_or_exit_code,
	prepare,
	render_table,
	setup_logging,
)
from dmlpanel.errors import ConfigError
from dmlpanel.estimator import EstimateReport, Method, estimate_many, fit_trend
from dmlpanel.panel import load_csv, rolling_windows

WINDOW_COLUMNS = ["window_start", "window_end", "method", "tau_hat", "se", "ci_lower", "ci_upper", "n_units", "n_obs", "failed"]
TREND_COLUMNS = ["method", "slope", "intercept", "slope_se", "p_value", "residual_variance", "n_windows"]


def build_parser(p: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
	p = p or argparse.ArgumentParser(prog="dmlpanel-rolling", description="Estimate on consecutive-period windows and fit a WLS trend")
	add_common_arguments(p)
	add_model_arguments(p)
	add_data_arguments(p)
	p.add_argument("--window", type=int, help="Periods per window (default 2)")
	return p


def run(args: argparse.Namespace) -> int:
	setup_logging(args.verbose)
	ctx = prepare(args, "rolling")
	cfg = ctx.cfg
	if not cfg.data:
		raise ConfigError("no panel CSV given (--data or 'data' in the config file)")
	dataset = load_csv(cfg.data, cfg.columns.to_schema())
	windows = rolling_windows(dataset, cfg.window)
	if not windows:
		raise ConfigError(f"panel spans {len(dataset.periods)} periods, fewer than the window width {cfg.window}")
	methods = cfg.method_list()
	spec = cfg.dictionary.to_spec()
	est = cfg.estimator_config(ctx.seed)
	ctx.runlog.event("running", "rolling", windows=len(windows), width=cfg.window, methods=",".join(cfg.methods))

	rows: List[dict] = []
	failed = 0
	for window in windows:
		start, end = window.periods[0], window.periods[-1]
		results = estimate_many(window, spec, est, methods, raise_errors=False)
		for method, res in results.items():
			if isinstance(res, EstimateReport):
				rows.append({
					"window_start": start, "window_end": end, "method": method.value,
					"tau_hat": res.tau_hat, "se": res.se, "ci_lower": res.ci[0], "ci_upper": res.ci[1],
					"n_units": res.n_units, "n_obs": res.n_obs, "failed": False,
				})
			else:
				failed += 1
				err_console.print(f"[red]window {start}-{end} {method.value} failed: {res.message}[/red]")
				rows.append({"window_start": start, "window_end": end, "method": method.value, "failed": True})
		ctx.runlog.event("window", "rolling", start=start, end=end, units=window.n_units)

	per_window = pd.DataFrame(rows, columns=WINDOW_COLUMNS)
	per_window.to_csv(ctx.out_dir / "rolling.csv", index=False, float_format="%.17g")

	trends: Dict[Method, dict] = {}
	for method in methods:
		ok = per_window[(per_window["method"] == method.value) & ~per_window["failed"].astype(bool)]
		fit = fit_trend(ok["window_start"].to_numpy(float), ok["tau_hat"].to_numpy(float), ok["se"].to_numpy(float))
		trends[method] = {"method": method.value, **{k: getattr(fit, k) for k in TREND_COLUMNS[1:]}}
	pd.DataFrame(list(trends.values()), columns=TREND_COLUMNS).to_csv(ctx.out_dir / "trend.csv", index=False, float_format="%.17g")

	console.print(render_table(
		f"{len(windows)} windows of {cfg.window} periods",
		["method", "slope", "slope_se", "p_value", "windows"],
		[[m.display, fmt(t["slope"], 6), fmt(t["slope_se"]), fmt(t["p_value"]), str(t["n_windows"])] for m, t in trends.items()],
	))
	ctx.runlog.event("done", "rolling", rows=len(rows), failed=failed, out=ctx.out_dir)
	return EXIT_RUNTIME if failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
	args, code = parse_or_exit_code(build_parser(), argv)
	if args is None:
		return code
	return guarded("rolling", lambda: run(args))


if __name__ == "__main__":
	sys.exit(main())
