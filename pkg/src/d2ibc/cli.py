"""Command-line entry point: ``d2ibc <stage> --config cfg.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources

from .certify import AssumptionViolation
from .pipeline import STAGES, BoundViolation, ConfigError, Pipeline, PipelineConfig, StageError
from .signals import DataError

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_DATA, EXIT_ASSUMPTION, EXIT_BOUND = 0, 1, 2, 3, 4, 5


def demo_config_path() -> str:
    return str(resources.files("d2ibc") / "configs" / "demo.yaml")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2ibc", description="Data-driven inversion-based control pipeline.")
    p.add_argument("stage", choices=STAGES + ("all",), help="stage to run")
    p.add_argument("--config", default=None, help="YAML experiment file (default: bundled demo)")
    p.add_argument("--out", default=None, help="artifact directory (overrides the config)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, AssumptionViolation):
        return EXIT_ASSUMPTION
    if isinstance(exc, BoundViolation):
        return EXIT_BOUND
    if isinstance(exc, (DataError, FileNotFoundError)):
        return EXIT_DATA
    return EXIT_FAILURE


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = PipelineConfig.load(args.config or demo_config_path())
        if args.seed is not None:
            d = cfg.to_dict()
            d["seed"] = args.seed
            cfg = PipelineConfig.from_dict(d)
    except ConfigError as exc:
        print(f"error [stage config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    pipe = Pipeline(cfg, args.out)
    stages = STAGES if args.stage == "all" else (args.stage,)
    try:
        for s in stages:
            pipe.run(s)
            logging.info("stage %s done", s)
    except StageError as exc:
        print(f"error [stage {exc.stage}]: {type(exc.cause).__name__}: {exc.cause}", file=sys.stderr)
        return _code(exc.cause)
    print(f"ok: {', '.join(stages)} -> {pipe.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
