import argparse
import json
import sys
from pathlib import Path
from typing import List

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
	markdown_table,
	parse_or_exit_code,
	prepare,
	render_table,
	setup_logging,
)
from dmlpanel.errors import ConfigError
from dmlpanel.estimator import Comparison, EstimateReport, MethodFailure, compare, estimate_many
from dmlpanel.models import FailedMethod, ReportDocument, build_comparison_row, build_method_report
from dmlpanel.panel import load_csv

ESTIMATE_HEADS = ["method", "tau_hat", "se", "ci_lower", "ci_upper", "mse_gamma_in", "mse_gamma_cross", "p"]
COMPARE_HEADS = ["first", "second", "difference", "se", "z", "p_value"]


def build_parser(p: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
	p = p or argparse.ArgumentParser(prog="dmlpanel-estimate", description="Estimate the average derivative from a panel CSV")
	add_common_arguments(p)
	add_model_arguments(p)
	add_data_arguments(p)
	return p


def estimate_rows(reports: List[EstimateReport]) -> List[List[str]]:
	return [
		[r.method.display, fmt(r.tau_hat, 6), fmt(r.se, 4), fmt(r.ci[0], 6), fmt(r.ci[1], 6),
		 fmt(r.mse_gamma_in_sample), fmt(r.mse_gamma_cross_folds), str(r.p)]
		for r in reports
	]


def comparison_rows(rows: List[Comparison]) -> List[List[str]]:
	return [[c.first.display, c.second.display, fmt(c.difference, 6), fmt(c.se), fmt(c.z), fmt(c.p_value)] for c in rows]


def write_outputs(out_dir: Path, doc: ReportDocument, reports: List[EstimateReport], comparisons: List[Comparison]) -> None:
	(out_dir / "report.json").write_text(json.dumps(doc.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
	frame = pd.DataFrame([c.model_dump() for c in doc.comparisons], columns=COMPARE_HEADS)
	frame.to_csv(out_dir / "comparison.csv", index=False, float_format="%.17g")
	for r in reports:
		r.scores.to_frame().to_csv(out_dir / f"scores_{r.method.value}.csv", index=False, float_format="%.17g")
	md = markdown_table(ESTIMATE_HEADS, estimate_rows(reports))
	if comparisons:
		md += "\n" + markdown_table(COMPARE_HEADS, comparison_rows(comparisons))
	(out_dir / "estimates.md").write_text(md, encoding="utf-8")


def run(args: argparse.Namespace) -> int:
	setup_logging(args.verbose)
	ctx = prepare(args, "estimate")
	cfg = ctx.cfg
	if not cfg.data:
		raise ConfigError("no panel CSV given (--data or 'data' in the config file)")
	dataset = load_csv(cfg.data, cfg.columns.to_schema())
	ctx.runlog.event("loaded", "estimate", data=cfg.data, units=dataset.n_units, obs=dataset.n_obs, h=dataset.h)

	results = estimate_many(dataset, cfg.dictionary.to_spec(), cfg.estimator_config(ctx.seed), cfg.method_list(), raise_errors=False)
	reports = [r for r in results.values() if isinstance(r, EstimateReport)]
	failed = [r for r in results.values() if isinstance(r, MethodFailure)]
	comparisons = compare(reports) if len(reports) >= 2 else []

	doc = ReportDocument(
		data=cfg.data,
		seed=ctx.seed,
		folds=cfg.estimator.folds,
		dictionary=cfg.dictionary,
		reports=[build_method_report(r) for r in reports],
		comparisons=[build_comparison_row(c) for c in comparisons],
		failed=[FailedMethod(method=f.method.value, error=f.message) for f in failed],
	)
	write_outputs(ctx.out_dir, doc, reports, comparisons)

	console.print(render_table(f"{dataset.n_units} units, {dataset.n_obs} observations", ESTIMATE_HEADS, estimate_rows(reports)))
	if comparisons:
		console.print(render_table("pairwise difference tests", COMPARE_HEADS, comparison_rows(comparisons)))
	for r in reports:
		for w in r.warnings:
			err_console.print(f"[yellow]{r.method.value}: {w}[/yellow]")
	for f in failed:
		err_console.print(f"[red]{f.method.value} failed: {f.message}[/red]")
	ctx.runlog.event("done", "estimate", methods=len(reports), failed=len(failed), out=ctx.out_dir)
	return EXIT_RUNTIME if failed else EXIT_OK


def main(argv: list[str] | None = None) -> int:
	args, code = parse_or_exit_code(build_parser(), argv)
	if args is None:
		return code
	return guarded("estimate", lambda: run(args))


if __name__ == "__main__":
	sys.exit(main())
