"""
Store stage — read-only inspection of a pipeline store.

stats prints files per stage, region class totals and the triple count;
verify re-hashes the manifest and fails when anything was lost or edited.
"""

import json
from collections import Counter

from pipeline.annotations import load_detections
from pipeline.errors import StoreCorrupt
from pipeline.store import STAGE_DIRS, verify_store

WRITES_STORE = False

COMMANDS = [
    {
        "name": "stats",
        "description": "Summarize the store: files per stage, region class totals, triple count.",
        "parameters": {
            "type": "object",
            "properties": {},
        },
    },
    {
        "name": "verify",
        "description": "Re-hash every manifest entry; exit 1 when a file is missing or modified.",
        "parameters": {
            "type": "object",
            "properties": {},
        },
    },
]


def _stats(args: dict, ctx) -> str:
    store = ctx.store
    classes = Counter()
    for name in store.entries("detections", ".json"):
        for page in load_detections(store.read_bytes("detections", name)).pages:
            classes.update(r.class_label.value for r in page.regions)

    triples = sum(
        1
        for name in store.entries("graph", ".nt")
        for line in store.read_text("graph", name).splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    )

    stats = {
        "files": {stage: len(store.entries(stage)) for stage in STAGE_DIRS},
        "regions": dict(sorted(classes.items())),
        "triples": triples,
    }
    return json.dumps(stats, indent=2)


def _verify(args: dict, ctx) -> str:
    report = verify_store(ctx.store.root)
    if not report.clean:
        problems = [f"missing {rel}" for rel in report.missing]
        problems += [f"modified {rel}" for rel in report.modified]
        raise StoreCorrupt("; ".join(problems))

    tracked = len(ctx.store.manifest())
    lines = [f"✅ Store clean: {tracked} file(s) match the manifest"]
    for rel in report.untracked:
        lines.append(f"⚠️  untracked {rel}")
    return "\n".join(lines)


def handle(command: str, args: dict, ctx=None) -> str:
    if command == "stats":
        return _stats(args, ctx)
    if command == "verify":
        return _verify(args, ctx)
    return f"Unknown command: {command}"
