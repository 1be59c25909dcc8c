"""
Detections stage — validate detector output and file it per manuscript.

Each document must name a manuscript that was harvested; it is stored in
canonical interchange form at store/detections/<sanitized-id>.json.
"""

import logging
from pathlib import Path

from pipeline.annotations import load_detections, serialize_detections
from pipeline.errors import ManuscriptMismatch, UsageError, ValidationError
from pipeline.store import sanitize_id

logger = logging.getLogger(__name__)

COMMANDS = [
    {
        "name": "ingest-detections",
        "description": "Validate detection documents (schema 1.0) and store them next to their harvested records.",
        "parameters": {
            "type": "object",
            "properties": {
                "path": {
                    "type": "string",
                    "description": "A detection JSON file, or a directory of *.json files",
                },
            },
            "required": ["path"],
        },
    },
]


def _documents(path: Path) -> list[Path]:
    if path.is_dir():
        return sorted(p for p in path.glob("*.json") if p.is_file())
    if path.is_file():
        return [path]
    raise UsageError(f"no such file or directory: {path}")


def _ingest(args: dict, ctx) -> str:
    store = ctx.store
    known = set(store.require("record", ".json"))
    files = _documents(Path(args["path"]))
    if not files:
        raise UsageError(f"no *.json detection documents under {args['path']}")

    ingested, regions = [], 0
    for file in files:
        try:
            doc = load_detections(file.read_bytes())
        except ValidationError as e:
            # keep the error type, name the file
            e.message = f"{file.name}: {e.message}"
            raise
        sid = sanitize_id(doc.manuscript_id)
        if f"{sid}.json" not in known:
            raise ManuscriptMismatch(f"{file.name}: no harvested record for manuscript '{doc.manuscript_id}'")
        store.write("detections", f"{sid}.json", serialize_detections(doc.pages, doc.manuscript_id))
        ingested.append(doc.manuscript_id)
        regions += sum(len(p.regions) for p in doc.pages)
        logger.info("ingested %s (%d page(s))", file.name, len(doc.pages))

    return (f"✅ Ingested {len(files)} document(s) for {len(set(ingested))} manuscript(s), "
            f"{regions} region(s) → {store.root / 'detections'}")


def handle(command: str, args: dict, ctx=None) -> str:
    if command == "ingest-detections":
        return _ingest(args, ctx)
    return f"Unknown command: {command}"
