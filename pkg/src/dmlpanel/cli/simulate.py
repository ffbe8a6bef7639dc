import argparse
import json
import sys

from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from dmlpanel.cli.common import (
	EXIT_OK,
	add_common_arguments,
	add_model_arguments,
	console,
	guarded,
	parse_or_exit_code,
	prepare,
	render_table,
	setup_logging,
)
from dmlpanel.models import build_summary_document
from dmlpanel.simulation import render_markdown, run_monte_carlo, table_rows, write_records


def build_parser(p: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
	p = p or argparse.ArgumentParser(prog="dmlpanel-simulate", description="Monte Carlo comparison of the estimators on the simulation DGP")
	add_common_arguments(p)
	add_model_arguments(p)
	p.add_argument("--trials", type=int, help="Monte Carlo trials")
	p.add_argument("--N", type=int, help="Units per trial")
	p.add_argument("--T", type=int, help="Periods per unit")
	p.add_argument("--h", type=int, help="Covariates")
	p.add_argument("--retune-each-trial", action="store_const", const=True, help="Tune penalties on every trial instead of trial 0 only")
	return p


def run(args: argparse.Namespace) -> int:
	setup_logging(args.verbose)
	ctx = prepare(args, "simulate")
	cfg = ctx.cfg
	methods = cfg.method_list()
	dgp = cfg.dgp_config(ctx.seed)
	est = cfg.estimator_config(ctx.seed)
	trials = cfg.simulation.trials
	ctx.runlog.event("running", "simulate", trials=trials, N=dgp.N, T=dgp.T, h=dgp.h, methods=",".join(cfg.methods))

	with Progress(TextColumn("[bold]simulate"), BarColumn(), MofNCompleteColumn(), TimeElapsedColumn(), console=console, transient=True) as progress:
		task = progress.add_task("trials", total=trials)
		summary = run_monte_carlo(
			dgp, methods, trials, est,
			dict_spec=cfg.dictionary.to_spec(),
			jobs=cfg.jobs,
			retune_each_trial=cfg.simulation.retune_each_trial,
			progress=lambda: progress.advance(task),
		)

	write_records(summary.records, ctx.out_dir / "trials.csv")
	(ctx.out_dir / "summary.md").write_text(render_markdown(summary), encoding="utf-8")
	doc = build_summary_document(summary)
	(ctx.out_dir / "summary.json").write_text(json.dumps(doc.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")

	heads = [""] + [m.display for m in summary.methods]
	console.print(render_table(f"{summary.trials} trials, p={summary.p}, seed={ctx.seed}", heads, table_rows(summary)))
	if summary.r_L is not None:
		console.print(f"penalties: r_L={summary.r_L:g} r_alpha={summary.r_alpha:g}")
	console.print(f"[green]Wrote[/green] {ctx.out_dir}")
	failures = sum(s.failures for s in summary.methods.values())
	ctx.runlog.event("done", "simulate", failures=failures, out=ctx.out_dir)
	return EXIT_OK


def main(argv: list[str] | None = None) -> int:
	args, code = parse_or_exit_code(build_parser(), argv)
	if args is None:
		return code
	return guarded("simulate", lambda: run(args))


if __name__ == "__main__":
	sys.exit(main())
