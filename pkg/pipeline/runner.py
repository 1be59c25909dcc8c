"""
runner.py — FolioGraph command-line entry point.

Usage:
    python -m pipeline.runner harvest --endpoint https://host/oai --prefix oai_dc --out store/
    python -m pipeline.runner ingest-detections --path detections/ --out store/
    python -m pipeline.runner enrich --out store/
    python -m pipeline.runner build-kg --out store/
    python -m pipeline.runner reconcile --out store/
    python -m pipeline.runner query --query "?r a jdlo:Stamp" --out store/
    python -m pipeline.runner stats --out store/
    python -m pipeline.runner verify --out store/
"""

import argparse
import logging
import os
import sys

from pipeline.config import default_store_root, load_config, with_overrides
from pipeline.errors import ConfigError
from pipeline.stage_loader import get_all_commands, load_stages
from pipeline.stage_router import StageContext, build_command_map, route_command
from pipeline.store import Store

_JSON_TYPES = {"string": str, "integer": int, "number": float}

# CLI flags that override config.thresholds
THRESHOLD_ARGS = ("min_confidence", "iou", "stained", "heavily_stained", "link", "review")

_LOG_FORMAT = "[%(name)s] %(levelname)s %(message)s"


class _StderrHandler(logging.Handler):
    """Writes to whatever sys.stderr is at emit time."""

    def emit(self, record):
        try:
            sys.stderr.write(self.format(record) + "\n")
        except Exception:
            self.handleError(record)


def configure_logging(verbosity: int = 0) -> None:
    if verbosity >= 2:
        level = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = getattr(logging, os.environ.get("FOLIOGRAPH_LOG_LEVEL", "WARNING").upper(), logging.WARNING)

    for name in ("pipeline", "stages"):
        logger = logging.getLogger(name)
        logger.setLevel(level)
        if not any(isinstance(h, _StderrHandler) for h in logger.handlers):
            handler = _StderrHandler()
            handler.setFormatter(logging.Formatter(_LOG_FORMAT))
            logger.addHandler(handler)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser(commands: list) -> argparse.ArgumentParser:
    """One subcommand per stage command; flags come from its JSON-schema parameters."""
    parser = argparse.ArgumentParser(
        prog="foliograph",
        description="FolioGraph — OAI-PMH records to an RDF knowledge graph",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", "--store", dest="store", default=None,
                        help="Store root (default: $FOLIOGRAPH_STORE or ./store)")
    common.add_argument("--config", default=None,
                        help="JSON config file (default: $FOLIOGRAPH_CONFIG)")
    common.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for INFO logging, -vv for DEBUG")

    subparsers = parser.add_subparsers(dest="command", metavar="<command>")
    for command in commands:
        sub = subparsers.add_parser(command["name"], help=command["description"],
                                    description=command["description"], parents=[common])
        schema = command.get("parameters", {})
        required = set(schema.get("required", []))
        for name, prop in schema.get("properties", {}).items():
            kwargs = {"dest": name, "help": prop.get("description")}
            if prop.get("type") == "boolean":
                kwargs["action"] = "store_true"
            else:
                kwargs["type"] = _JSON_TYPES.get(prop.get("type"), str)
                kwargs["required"] = name in required
                if "enum" in prop:
                    kwargs["choices"] = prop["enum"]
                if "default" in prop:
                    kwargs["default"] = prop["default"]
            sub.add_argument(_flag(name), **kwargs)
    return parser


def run(argv: list[str] | None = None, stages_dir: str | None = None) -> int:
    """Parse argv, run one command, return the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)

    stages = load_stages(stages_dir)
    command_map = build_command_map(stages)
    specs = {c["name"]: c for c in get_all_commands(stages)}
    parser = build_parser(list(specs.values()))

    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2

    configure_logging(ns.verbose)

    try:
        config = load_config(ns.config)
        config = with_overrides(config, **{k: getattr(ns, k, None) for k in THRESHOLD_ARGS})
    except ConfigError as e:
        print(f"❌ {e.code}: {e}", file=sys.stderr)
        return e.exit_code

    properties = specs[ns.command].get("parameters", {}).get("properties", {})
    args = {k: v for k, v in vars(ns).items() if k in properties}
    ctx = StageContext(
        store=Store(ns.store or default_store_root(), produced_by=ns.command),
        config=config,
    )
    return route_command(command_map, ns.command, args, ctx)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
