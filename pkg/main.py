import argparse
import logging
import sys

from dotenv import load_dotenv

from cli.commands import COMMANDS
from cli.runconfig import load_run_config
from utils.errors import CoderError
from utils.logger import log_event, setup_logger

# Load environment variables
load_dotenv()


def _float_list(text: str):
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coder-bench",
        description="Cyclic block-coordinate methods for generalized variational inequalities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--out", help="output CSV (or LIBSVM file for gen-data)")
    common.add_argument("--seed", type=int, help="seed for solver, sweep and data generation")
    common.add_argument("--jobs", type=int, help="independent runs executed concurrently")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--max-samples", type=int, dest="max_samples", help="truncate the dataset")
    solver.add_argument("--budget-passes", type=float, dest="budget_passes", help="budget in passes over the data")
    solver.add_argument("--L", type=float, dest="L", help="Lipschitz parameter")
    solver.add_argument("--L0", type=float, dest="L0", help="initial estimate for the parameter-free variant")
    solver.add_argument("--lambda", type=_float_list, dest="lam", help="regularization weight(s), comma separated")

    sub.add_parser("solve", parents=[common, solver], help="run one solver on one problem")
    sub.add_parser("bench", parents=[common, solver], help="compare variants across lambda values")
    sub.add_parser("lipschitz", parents=[common, solver], help="block Lipschitz constants and sweeps")
    gen = sub.add_parser("gen-data", parents=[common], help="write a synthetic LIBSVM dataset")
    gen.add_argument("--n", type=int, help="samples")
    gen.add_argument("--d", type=int, help="features")
    gen.add_argument("--density", type=float, help="fraction of nonzero features")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    problem = {"max_samples": get("max_samples"), "lam": get("lam"), "n": get("n"), "d": get("d"),
               "density": get("density")}
    if args.command == "gen-data":
        problem["data_seed"] = get("seed")
    return {
        "problem": problem,
        "solver": {"budget_passes": get("budget_passes"), "L": get("L"), "L0": get("L0"), "seed": get("seed")},
        "run": {"out": get("out"), "jobs": get("jobs")},
        "lipschitz": {"seed": get("seed")},
    }


def main(argv=None) -> int:
    setup_logger("")
    args = build_parser().parse_args(argv)
    defaults = {"problem": {"kind": "l1-svm"}, "run": {"out": "data.libsvm"}} if args.command == "gen-data" else None
    try:
        config = load_run_config(args.config, overrides_from_args(args), defaults=defaults)
        return COMMANDS[args.command](config)
    except CoderError as e:
        log_event(logging.ERROR, "command_failed", e.message, status=type(e).__name__)
        print(f"error: {e.message}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
