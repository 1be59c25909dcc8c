"""
stage_router.py — Routes CLI commands to the right stage.

The one place where stage exceptions become exit codes: a PipelineError
prints "❌ <code>: <message>" and yields its exit_code; anything else is
reported as E_INTERNAL.
"""

import logging
import sys
from dataclasses import dataclass

from pipeline.config import PipelineConfig
from pipeline.errors import PipelineError, UsageError
from pipeline.store import Store

logger = logging.getLogger(__name__)


@dataclass
class StageContext:
    store: Store
    config: PipelineConfig


def build_command_map(stages: dict) -> dict:
    """
    Build a mapping from command name → (stage_name, handle_function, writes_store).

    Args:
        stages: The dict returned by stage_loader.load_stages()
    """
    command_map = {}
    for stage_name, stage in stages.items():
        for command in stage["commands"]:
            name = command["name"]
            if name in command_map:
                existing = command_map[name][0]
                print(f"⚠️  Command name conflict: '{name}' in both "
                      f"'{existing}' and '{stage_name}'. Using '{stage_name}'.", file=sys.stderr)
            command_map[name] = (stage_name, stage["handle"], stage.get("writes_store", True))
    return command_map


def route_command(command_map: dict, command: str, args: dict, ctx: StageContext) -> int:
    """
    Execute a command by routing it to its stage; prints the stage's result.

    Stages that write take the store lock for the duration of the call.

    Returns:
        Process exit code (0 ok, 1 pipeline error, 2 usage/config error).
    """
    if command not in command_map:
        print(f"❌ {UsageError.code}: unknown command '{command}'. "
              f"Available commands: {sorted(command_map)}", file=sys.stderr)
        return UsageError.exit_code

    stage_name, handle_fn, writes_store = command_map[command]
    try:
        if writes_store:
            with ctx.store.lock():
                result = handle_fn(command, args, ctx)
        else:
            result = handle_fn(command, args, ctx)
    except PipelineError as e:
        print(f"❌ {e.code}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.debug("unexpected failure in %s", command, exc_info=True)
        print(f"❌ E_INTERNAL: {command} (stage: {stage_name}) failed: {e}", file=sys.stderr)
        return 1

    if result:
        text = result if isinstance(result, str) else str(result)
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0
