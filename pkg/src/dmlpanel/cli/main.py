import argparse
import sys

from dmlpanel import __version__
from dmlpanel.cli import estimate, rolling, simulate, tune
from dmlpanel.cli.common import EXIT_USAGE, guarded, parse_or_exit_code

COMMANDS = {
	"simulate": (simulate, "Monte Carlo comparison on the simulation DGP"),
	"estimate": (estimate, "Estimate the average derivative from a panel CSV"),
	"tune": (tune, "Select penalties by held-out loss"),
	"rolling": (rolling, "Window-by-window estimates with a WLS trend"),
}


def build_parser() -> argparse.ArgumentParser:
	p = argparse.ArgumentParser(prog="dmlpanel", description="Debiased average-derivative estimation for fixed-effects panels")
	p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
	sub = p.add_subparsers(dest="command")
	for name, (module, help_text) in COMMANDS.items():
		module.build_parser(sub.add_parser(name, help=help_text, description=help_text))
	return p


def main(argv: list[str] | None = None) -> int:
	p = build_parser()
	args, code = parse_or_exit_code(p, argv)
	if args is None:
		return code
	if not args.command:
		p.print_usage(sys.stderr)
		return EXIT_USAGE
	module, _ = COMMANDS[args.command]
	return guarded(args.command, lambda: module.run(args))


if __name__ == "__main__":
	sys.exit(main())
