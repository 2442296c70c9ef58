"""Command-line entry points: the optimizer shell and the mock experiment."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import __version__
from .config import ConfigurationError, load_config
from .dcrab import EvaluatorFailure
from .exchange import FileExchangeEvaluator
from .mocknv import MockNVModel, serve
from .runtime import build_builtin_evaluator, run_optimization

EXIT_OK = 0
EXIT_INTERRUPTED = 2
EXIT_CONFIG_ERROR = 3
EXIT_EVALUATOR_FAILURE = 4

_REASON_EXIT_CODES = {
    "interrupted": EXIT_INTERRUPTED,
    "evaluator_failure": EXIT_EVALUATOR_FAILURE,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulseopt",
        description="Optimize control pulses with dCRAB or GRAPE.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute one optimization run")
    run.add_argument("--config", required=True, help="JSON configuration file")
    run.add_argument(
        "--fom",
        required=True,
        help="figure-of-merit source: builtin:<ising|qubit> or file-exchange:<dir>",
    )
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument(
        "--results-dir", default=None, help="base directory for the results folder"
    )
    return parser


def _make_evaluator(fom: str, config):
    if fom.startswith("builtin:"):
        return build_builtin_evaluator(fom.split(":", 1)[1], config), False
    if fom.startswith("file-exchange:"):
        session = fom.split(":", 1)[1]
        evaluator = FileExchangeEvaluator(
            session,
            pulse_names=[p.pulse_name for p in config.pulses],
            time_names=[p.time_name for p in config.pulses],
            parameter_names=[p.parameter_name for p in config.parameters],
        )
        return evaluator, True
    raise ConfigurationError(
        "--fom", f"expected builtin:<name> or file-exchange:<dir>, got {fom!r}"
    )


def _run(args) -> int:
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.algorithm.seed = args.seed
            config.defaults_applied.append(
                f"seed overridden to {args.seed} from the command line"
            )
        if config.algorithm.algorithm_name == "GRAPE" and args.fom.startswith(
            "file-exchange:"
        ):
            raise ConfigurationError(
                "--fom",
                "GRAPE needs the system Hamiltonians and cannot run against a "
                "file-exchange evaluator; use a built-in problem",
            )
        evaluator, is_remote = _make_evaluator(args.fom, config)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (OSError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        output = run_optimization(config, evaluator, results_base=args.results_dir)
    except EvaluatorFailure as err:
        print(f"evaluator failure: {err}", file=sys.stderr)
        return EXIT_EVALUATOR_FAILURE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    finally:
        if is_remote:
            evaluator.terminate()

    result = output.result
    print(f"results: {output.folder}")
    print(
        f"best FoM {result.best_FoM:.8g} after {result.total_iterations} "
        f"evaluations ({result.termination_reason})"
    )
    return _REASON_EXIT_CODES.get(result.termination_reason, EXIT_OK)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    return EXIT_CONFIG_ERROR  # pragma: no cover - argparse enforces commands


def mock_nv_main(argv=None) -> int:
    """Serve the mock spin-ensemble experiment on a session directory."""
    parser = argparse.ArgumentParser(
        prog="mock-nv",
        description="Mock two-level ensemble experiment over the file protocol.",
    )
    parser.add_argument("--dir", required=True, help="session directory")
    parser.add_argument("--inhomogeneity", type=float, default=0.15)
    parser.add_argument("--drift", type=float, default=0.002, help="contrast per minute")
    parser.add_argument("--noise", type=float, default=0.01)
    parser.add_argument("--ensemble", type=int, default=32)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--poll-ms", type=float, default=20.0)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    model = MockNVModel(
        rabi_inhomogeneity_std=args.inhomogeneity,
        drift_rate=args.drift,
        shot_noise_std=args.noise,
        ensemble_size=args.ensemble,
    )
    rng = np.random.default_rng(args.seed)
    try:
        serve(args.dir, model, rng=rng, poll_interval_ms=args.poll_ms)
    except KeyboardInterrupt:
        return EXIT_INTERRUPTED
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
