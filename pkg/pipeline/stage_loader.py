"""
stage_loader.py — Auto-discovers pipeline stages from the stages/ directory.

Scans each subfolder, imports stage.py, and collects COMMANDS + handle functions.
"""

import importlib.util
import sys
from pathlib import Path
from types import ModuleType

STAGES_DIR = Path(__file__).parent.parent / "stages"


def load_stage_module(folder: str | Path) -> ModuleType:
    """Import <folder>/stage.py under a package-unique module name."""
    folder = Path(folder)
    spec = importlib.util.spec_from_file_location(f"stages.{folder.name}.stage", str(folder / "stage.py"))
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    try:
        spec.loader.exec_module(module)
    except BaseException:
        sys.modules.pop(spec.name, None)
        raise
    return module


def _contract_problem(module: ModuleType) -> str | None:
    if not hasattr(module, "COMMANDS"):
        return "stage.py missing COMMANDS list"
    if not isinstance(module.COMMANDS, list):
        return "COMMANDS is not a list"
    if not hasattr(module, "handle"):
        return "stage.py missing handle() function"
    if not callable(module.handle):
        return "handle is not callable"
    return None


def load_stages(stages_dir: str | Path | None = None, verbose: bool = False) -> dict:
    """
    Scan the stages/ directory and load each stage.

    Returns a dict:
    {
        "stage_name": {
            "commands": [...],       # The COMMANDS list from stage.py
            "handle": <function>,    # The handle() function
            "writes_store": bool,    # WRITES_STORE, default True
            "path": "/abs/path"      # Path to the stage folder
        }
    }
    """
    stages_path = Path(stages_dir) if stages_dir else STAGES_DIR
    stages = {}

    if not stages_path.exists():
        print(f"⚠️  Stages directory not found: {stages_path}", file=sys.stderr)
        return stages

    for folder in sorted(stages_path.iterdir()):
        if not folder.is_dir() or folder.name.startswith(("_", ".")):
            continue

        if not (folder / "stage.py").exists():
            print(f"⚠️  Skipping {folder.name}/ — no stage.py found", file=sys.stderr)
            continue

        try:
            module = load_stage_module(folder)
        except Exception as e:
            print(f"⚠️  Error loading {folder.name}/: {e}", file=sys.stderr)
            continue

        problem = _contract_problem(module)
        if problem:
            print(f"⚠️  Skipping {folder.name}/ — {problem}", file=sys.stderr)
            continue

        stages[folder.name] = {
            "commands": module.COMMANDS,
            "handle": module.handle,
            "writes_store": bool(getattr(module, "WRITES_STORE", True)),
            "path": str(folder),
        }
        if verbose:
            print(f"✅ Loaded stage: {folder.name} ({len(module.COMMANDS)} commands)", file=sys.stderr)

    return stages


def get_all_commands(stages: dict) -> list:
    """Flatten all commands from all stages into one list."""
    commands = []
    for stage in stages.values():
        commands.extend(stage["commands"])
    return commands


if __name__ == "__main__":
    stages = load_stages(verbose=True)
    print(f"\n📦 Loaded {len(stages)} stage(s)")
    for name, s in stages.items():
        print(f"  {name}: {[c['name'] for c in s['commands']]}")
