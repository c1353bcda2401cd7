"""Command-line interface: ``dynlio <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 registration
degeneracy abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

from dynlio.core.errors import (
    AlignmentError,
    AssociationError,
    ConfigError,
    CoverageError,
    DataFormatError,
    FrameOrderError,
    RegistrationDegeneracyError,
)
from dynlio.odometry.estimator import RegistrationMode

from .config import PipelineConfig, dump_config, load_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4

_MODES = [m.value for m in RegistrationMode]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """``--config FILE`` plus one ``--section.key VALUE`` flag per config field."""
    parser.add_argument("--config", type=Path, help="YAML config file")
    group = parser.add_argument_group("config overrides (take precedence over --config)")
    defaults = PipelineConfig()
    for section in dataclasses.fields(defaults):
        for f in dataclasses.fields(getattr(defaults, section.name)):
            name = f"{section.name}.{f.name}"
            group.add_argument(f"--{name}", dest=name, metavar="VALUE", default=None)


def _config_from_args(args: argparse.Namespace, extra: Sequence[str] = ()) -> PipelineConfig:
    overrides = [
        f"{key}={value}" for key, value in sorted(vars(args).items())
        if "." in key and value is not None
    ]
    return load_config(args.config, [*overrides, *extra])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynlio",
        description="Dynamic-aware lidar-inertial odometry and scene simulator",
    )
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-sim", help="Generate a simulated dataset")
    p.add_argument("--out", type=Path, required=True, help="Dataset directory to write")
    p.add_argument("--preset", help="Shorthand for --simulation.preset")
    p.add_argument("--seed", type=int, help="Shorthand for --simulation.seed")
    p.add_argument("--cache", action="store_true", help="Reuse and fill the dataset cache")
    _add_config_flags(p)

    p = sub.add_parser("run-odom", help="Run odometry on a dataset")
    p.add_argument("dataset", type=Path, help="Dataset directory")
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    p.add_argument("--mode", choices=_MODES, help="Shorthand for --registration.mode")
    _add_config_flags(p)

    p = sub.add_parser("run-eval", help="Score a trajectory and labeled map")
    p.add_argument("--estimate", type=Path, required=True, help="Estimated TUM trajectory")
    p.add_argument("--truth", type=Path, required=True, help="Ground-truth TUM trajectory")
    p.add_argument("--labeled-map", type=Path, help="labeled_map.txt of the run")
    p.add_argument("--dataset", type=Path, help="Dataset directory holding truth labels")
    p.add_argument("--diagnostics", type=Path, help="diagnostics.jsonl of the run")
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    _add_config_flags(p)

    p = sub.add_parser("run-bench", help="Ablation of registration modes over seeds")
    p.add_argument("--out", type=Path, required=True, help="Output directory")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--modes", nargs="+", choices=_MODES, default=_MODES)
    p.add_argument("--preset", help="Shorthand for --simulation.preset")
    _add_config_flags(p)

    p = sub.add_parser("config", help="Show the effective configuration")
    p.add_argument("--dump", action="store_true", help="Print the config as YAML")
    p.add_argument("--out", type=Path, help="Write the YAML here instead of stdout")
    _add_config_flags(p)

    sub.add_parser("presets", help="List scenario and lidar presets")
    sub.add_parser("sitrep", help="Report environment and cache state")
    sub.add_parser("clear-cache", help="Delete cached datasets")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    from . import runner

    if args.command == "presets":
        from dynlio.data.presets import get_preset, list_lidar_presets, list_presets

        for name in list_presets():
            print(f"{name}: {get_preset(name).description}")
        print(f"lidars: {', '.join(list_lidar_presets())}")
        return EXIT_OK
    if args.command == "sitrep":
        from dynlio.core.utils import sitrep

        sitrep()
        return EXIT_OK
    if args.command == "clear-cache":
        from dynlio.core.utils import clear_all_cache

        clear_all_cache()
        return EXIT_OK

    extra = []
    if getattr(args, "preset", None):
        extra.append(f"simulation.preset={args.preset}")
    if getattr(args, "seed", None) is not None:
        extra.append(f"simulation.seed={args.seed}")
    if getattr(args, "mode", None):
        extra.append(f"registration.mode={args.mode}")
    config = _config_from_args(args, extra)

    if args.command == "config":
        text = dump_config(config)
        if args.out:
            args.out.write_text(text, encoding="utf-8")
        else:
            print(text, end="")
        return EXIT_OK
    if args.command == "run-sim":
        from dynlio.core.cache import DatasetCache

        runner.run_sim(config, args.out, DatasetCache() if args.cache else None)
    elif args.command == "run-odom":
        runner.run_odom(args.dataset, config, args.out)
    elif args.command == "run-eval":
        metrics = runner.run_eval(
            args.estimate, args.truth, args.out, config,
            labeled_map_path=args.labeled_map, dataset_dir=args.dataset,
            diagnostics_path=args.diagnostics,
        )
        print(f"ATE RMSE: {metrics['ate_rmse']:.4f} m")
        if metrics.get("HA") is not None:
            print(f"SA {metrics['SA']:.2f}  DA {metrics['DA']:.2f}  HA {metrics['HA']:.2f}")
    elif args.command == "run-bench":
        runs = runner.run_bench(config, args.out, args.seeds, args.modes)
        print(runner.summarize_bench(runs).to_string(index=False))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the ``dynlio`` console script."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except RegistrationDegeneracyError as e:
        logger.error("Registration degenerate (%d constraints): %s", e.n_constraints, e)
        return EXIT_DEGENERATE
    except (DataFormatError, CoverageError, FrameOrderError, AssociationError,
            AlignmentError, OSError) as e:
        logger.error("Data error: %s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
