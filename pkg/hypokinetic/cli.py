"""
Command-line entry point.

Subcommands:
    solve                    Run the Cauchy solver (and the oracle for a = 1).
    verify <check>           Run one check of the catalogue.
    sweep <check>            Repeat a check over values of beta, N, q or corpus-size.
    defaults                 Print the full default configuration as JSON.
    inspect <snapshot>       Print the header and L2 norm of a HYPO snapshot.

Exit codes: 0 pass, 1 check failed, 2 configuration error, 3 convergence error.
Failures print one JSON object {"error", "message", "exit_code"} on stderr.

Example:
    hypo verify thm1 --config run.toml --grid 32,32,64 --beta 0.5
    hypo sweep exponent-fit --parameter beta --values 0.25,0.5,1
"""
import argparse
import json
import logging
import sys

from hypokinetic.config import CHECKS, SWEEP_PARAMETERS, ExperimentConfig, apply_overrides, load_config
from hypokinetic.errors import ConvergenceError, HypoError
from hypokinetic.harness import cmd_solve, cmd_sweep, cmd_verify
from hypokinetic.io_utils import read_snapshot
from hypokinetic.spectral import norm

EXIT_PASS = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3


def build_parser():
    parser = argparse.ArgumentParser(prog="hypo", description="Fractional kinetic solver and estimate harness.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="TOML or JSON config file")
    common.add_argument("--seed", type=int, default=None, help="Override corpus.seed")
    common.add_argument("--grid", type=str, default=None, help="Override grid sizes: N or N_t,N_x,N_v")
    common.add_argument("--beta", type=float, default=None, help="Override model.beta")
    common.add_argument("--verbose", action="store_true", help="Log progress at INFO level")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("solve", parents=[common], help="Solve the configured Cauchy problem")

    verify = commands.add_parser("verify", parents=[common], help="Run one check of the catalogue")
    verify.add_argument("check", type=str, help=f"One of: {', '.join(CHECKS)}")

    sweep = commands.add_parser("sweep", parents=[common], help="Repeat a check across parameter values")
    sweep.add_argument("check", type=str, help=f"One of: {', '.join(CHECKS)}")
    sweep.add_argument("--parameter", type=str, required=True, help=f"One of: {', '.join(SWEEP_PARAMETERS)}")
    sweep.add_argument("--values", type=str, required=True, help="Comma-separated values")

    commands.add_parser("defaults", help="Print the default configuration")

    inspect = commands.add_parser("inspect", help="Describe a snapshot file")
    inspect.add_argument("snapshot", type=str)
    return parser


def _parse_values(text):
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        number = float(item)
        values.append(int(number) if number.is_integer() and "." not in item else number)
    return values


def _config(args):
    config = load_config(args.config)
    return apply_overrides(config, seed=args.seed, grid=args.grid, beta=args.beta)


def _inspect(path):
    field = read_snapshot(path)
    grid = field.grid
    print(f"n={grid.n} N_t={grid.N_t} N_x={grid.N_x} N_v={grid.N_v}")
    print(f"L_t={grid.L_t:.6g} L_x={grid.L_x:.6g} L_v={grid.L_v:.6g}")
    print(f"axes={','.join(field.axis_names)} rep={','.join(field.rep)}")
    print(f"L2 norm={norm(field):.12g}")


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "defaults":
            print(ExperimentConfig().model_dump_json(indent=2))
            return EXIT_PASS
        if args.command == "inspect":
            _inspect(args.snapshot)
            return EXIT_PASS
        config = _config(args)
        if args.command == "solve":
            manifest = cmd_solve(config)
        elif args.command == "verify":
            manifest = cmd_verify(config, args.check)
        else:
            manifest = cmd_sweep(config, args.check, args.parameter, _parse_values(args.values))
    except ConvergenceError as exc:
        return _fail(exc, EXIT_CONVERGENCE)
    except (HypoError, ValueError, FileNotFoundError) as exc:
        return _fail(exc, EXIT_CONFIG)
    return EXIT_PASS if manifest.passed else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
