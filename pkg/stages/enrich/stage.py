"""
Enrich stage — derived layout/condition/provenance fields per manuscript.

Every harvested record is enriched; records without detections get zero
pages analysed.
"""

from concurrent.futures import ThreadPoolExecutor

from pipeline.annotations import load_detections
from pipeline.config import with_overrides
from pipeline.enrichment import clean_pages, enrich
from pipeline.metadata_model import DescriptiveRecord

COMMANDS = [
    {
        "name": "enrich",
        "description": "Combine harvested records with their detections into enriched records.",
        "parameters": {
            "type": "object",
            "properties": {
                "min_confidence": {
                    "type": "number",
                    "description": "Drop regions below this confidence (default 0.25)",
                },
                "iou": {
                    "type": "number",
                    "description": "Same-class IoU at which a weaker duplicate is suppressed (default 0.5)",
                },
                "stained": {
                    "type": "number",
                    "description": "Stain coverage above which a manuscript is flagged 'stained' (default 0.02)",
                },
                "heavily_stained": {
                    "type": "number",
                    "description": "Stain coverage above which it is flagged 'heavily_stained' (default 0.10)",
                },
            },
        },
    },
]


def _enrich_one(store, name: str, detections: set, thresholds):
    record = DescriptiveRecord.from_dict(store.read_json("record", name))
    pages = []
    if name in detections:
        pages = load_detections(store.read_bytes("detections", name)).pages
    pages = clean_pages(pages, thresholds.min_confidence, thresholds.iou)
    return name, enrich(record, pages, thresholds)


def _enrich(args: dict, ctx) -> str:
    store = ctx.store
    # checked first: enrich right after harvest must name the missing detections
    detections = set(store.require("detections", ".json"))
    records = store.require("record", ".json")
    flags = {k: args.get(k) for k in ("min_confidence", "iou", "stained", "heavily_stained")}
    thresholds = with_overrides(ctx.config, **flags).thresholds

    def work(name):
        return _enrich_one(store, name, detections, thresholds)

    if ctx.config.workers > 1:
        with ThreadPoolExecutor(max_workers=ctx.config.workers) as pool:
            results = list(pool.map(work, records))
    else:
        results = [work(name) for name in records]

    stamped = 0
    for name, enriched in results:
        store.write_json("enriched", name, enriched.to_dict())
        stamped += enriched.has_stamp

    with_pages = sum(1 for _, e in results if e.pages_analyzed)
    return (f"✅ Enriched {len(results)} record(s) ({with_pages} with detections, {stamped} with stamps) "
            f"→ {store.root / 'enriched'}")


def handle(command: str, args: dict, ctx=None) -> str:
    if command == "enrich":
        return _enrich(args, ctx)
    return f"Unknown command: {command}"
