"""Command-line entry point.

Errors go to stderr as ``error: <kind>: <message>`` with a nonzero exit code:
2 configuration, 3 checkpoint, 4 output directory, 5 failed check, 1 other.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from ..checkpoint import CheckpointError
from .config import ConfigError, load_config
from .pipeline import GRAD_TOLERANCE, grad_check_suite
from .scenarios import OutputDirError, run_eval, run_experiment

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_OUTPUT_DIR = 4
EXIT_CHECK_FAILED = 5

# subcommand -> scenario it forces (None keeps the config's own scenario)
SCENARIO_COMMANDS = {
    "run": None,
    "decode-bench": "codec_bench",
    "encode-demo": "encode_demo",
    "plasticity-demo": "plasticity_demo",
    "train-emulator": "emulator",
    "train-ncp": "ncp",
    "coadapt": "coadapt",
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurocoproc", description="Closed-loop neural co-processor experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, scenario in SCENARIO_COMMANDS.items():
        what = "the configured scenario" if scenario is None else f"the {scenario} scenario"
        c = sub.add_parser(name, help=f"run {what}")
        c.add_argument("config", help="experiment config file")
        c.add_argument("--overwrite", action="store_true", help="replace a previous run in output_dir")
    e = sub.add_parser("eval", help="re-evaluate saved co-processors (seed_<s>/model.ckpt) into output_dir/eval/")
    e.add_argument("config")
    g = sub.add_parser("grad-check", help="finite-difference check of backprop on seeded networks")
    g.add_argument("--seed", type=int, default=0)
    return p


def _fail(kind: str, message: str, code: int) -> int:
    print(f"error: {kind}: {message}", file=sys.stderr)
    return code


def _grad_check(seed: int) -> int:
    worst = 0.0
    for name, n_params, err in grad_check_suite(seed):
        print(f"{name:24s} params={n_params:5d} max_rel_error={err:.3e}")
        worst = max(worst, err)
    if worst >= GRAD_TOLERANCE:
        return _fail("grad-check", f"max relative error {worst:.3e} >= {GRAD_TOLERANCE:g}", EXIT_CHECK_FAILED)
    print(f"ok: max relative error {worst:.3e} < {GRAD_TOLERANCE:g}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "grad-check":
            return _grad_check(args.seed)
        config = load_config(args.config)
        if args.command == "eval":
            entries = run_eval(config)
        else:
            forced = SCENARIO_COMMANDS[args.command]
            if forced is not None:
                config = config.with_scenario(forced)
            entries = run_experiment(config, overwrite=args.overwrite)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except CheckpointError as exc:
        return _fail("checkpoint", str(exc), EXIT_CHECKPOINT)
    except OutputDirError as exc:
        return _fail("output-dir", str(exc), EXIT_OUTPUT_DIR)
    except (FileNotFoundError, TypeError) as exc:
        return _fail("input", str(exc), 1)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    print(f"wrote {len(entries)} files to {config.output_dir} (see {config.output_dir / 'manifest.csv'})")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
