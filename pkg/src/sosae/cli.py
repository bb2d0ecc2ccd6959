"""Command-line entry point: ``sosae <command> [--config FILE] ...``.

Exit codes: 0 success, 1 config error, 2 runtime failure or divergence,
3 partial failure in a multi-model run.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .autoencoder import load_checkpoint
from .config import ConfigError, default_table, parse_config
from .experiments import PIPELINES, codes_summary

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("sosae")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sosae", description="Self-organizing sparse autoencoder experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--threads", type=int, default=1)
    inspect = sub.add_parser("inspect")
    inspect.add_argument("checkpoint", type=Path)
    sub.add_parser("defaults")
    return parser


def _setup_logging(run_log: Path | None) -> list[logging.Handler]:
    log.setLevel(logging.INFO)
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if run_log is not None:
        run_log.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(run_log, mode="w", encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
    return handlers


def _teardown_logging(handlers) -> None:
    for handler in handlers:
        log.removeHandler(handler)
        handler.close()


def _run_pipeline(args) -> int:
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
    cfg = parse_config(text)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be >= 0, got {args.seed}")
        cfg = cfg.with_overrides(seed=args.seed)
    if args.out is not None:
        cfg = cfg.with_overrides(output_dir=str(args.out))
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    out = Path(cfg["output_dir"])
    handlers = _setup_logging(out / "run.log")
    try:
        log.info("# sosae %s", args.command)
        log.info("# resolved config (seed = %d)", cfg["seed"])
        log.info("%s", cfg.echo().rstrip("\n"))
        log.info("# end config")
        result = PIPELINES[args.command](cfg, out, args.threads)
        for path in result.files:
            log.info("wrote %s", path)
        if result.partial:
            log.info("%d run(s) failed: %s", len(result.failures),
                     ", ".join(name for name, _ in result.failures))
            return EXIT_PARTIAL
        return EXIT_OK
    finally:
        _teardown_logging(handlers)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "defaults":
            sys.stdout.write(default_table())
            return EXIT_OK
        if args.command == "inspect":
            sys.stdout.write(codes_summary(load_checkpoint(args.checkpoint)))
            return EXIT_OK
        return _run_pipeline(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
