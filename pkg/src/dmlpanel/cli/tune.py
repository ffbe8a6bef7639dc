import argparse
import json
import sys

from dmlpanel.cli.common import (
	EXIT_OK,
	add_common_arguments,
	add_data_arguments,
	add_model_arguments,
	console,
	fmt,
	guarded,
	parse_or_exit_code,
	prepare,
	render_table,
	setup_logging,
)
from dmlpanel.estimator import tune
from dmlpanel.models import build_tuning_document
from dmlpanel.panel import load_csv
from dmlpanel.simulation import generate_dataset


def build_parser(p: argparse.ArgumentParser | None = None) -> argparse.ArgumentParser:
	p = p or argparse.ArgumentParser(
		prog="dmlpanel-tune",
		description="Pick r_L and r_alpha by held-out loss; without --data the simulation DGP is drawn with --seed",
	)
	add_common_arguments(p)
	add_model_arguments(p)
	add_data_arguments(p)
	p.add_argument("--N", type=int, help="Units of the simulated panel")
	p.add_argument("--T", type=int, help="Periods of the simulated panel")
	p.add_argument("--h", type=int, help="Covariates of the simulated panel")
	return p


def run(args: argparse.Namespace) -> int:
	setup_logging(args.verbose)
	ctx = prepare(args, "tune")
	cfg = ctx.cfg
	if cfg.data:
		dataset = load_csv(cfg.data, cfg.columns.to_schema())
		source = cfg.data
	else:
		dataset = generate_dataset(cfg.dgp_config(ctx.seed))
		source = "simulated"
	ctx.runlog.event("loaded", "tune", source=source, units=dataset.n_units, obs=dataset.n_obs)

	result = tune(dataset, cfg.dictionary.to_spec(), cfg.estimator_config(ctx.seed))
	frame = result.to_frame()
	frame.to_csv(ctx.out_dir / "tuning_grid.csv", index=False, float_format="%.17g")
	doc = build_tuning_document(result, ctx.seed)
	(ctx.out_dir / "tuning.json").write_text(json.dumps(doc.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")

	rows = [[r.kind, f"{r.penalty:g}", fmt(r.loss, 6), "yes" if r.converged else "no", "*" if sel else ""]
			for r, sel in zip(result.rows, frame["selected"])]
	console.print(render_table(f"held-out loss by penalty ({source})", ["kind", "penalty", "loss", "converged", "selected"], rows))
	console.print(f"r_L={result.r_L:g} r_alpha={result.r_alpha:g}")
	ctx.runlog.event("done", "tune", r_L=result.r_L, r_alpha=result.r_alpha)
	return EXIT_OK


def main(argv: list[str] | None = None) -> int:
	args, code = parse_or_exit_code(build_parser(), argv)
	if args is None:
		return code
	return guarded("tune", lambda: run(args))


if __name__ == "__main__":
	sys.exit(main())
