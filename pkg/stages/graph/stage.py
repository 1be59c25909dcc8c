"""
Graph stage — one knowledge graph per enriched manuscript.

Writes store/graph/<sanitized-id>.nt (canonical N-Triples) and .ttl.
Detections are cleaned again with the thresholds recorded in the enriched
document, so graph regions match the enrichment exactly.
"""

from pipeline.annotations import load_detections
from pipeline.config import Thresholds
from pipeline.enrichment import EnrichedRecord, clean_pages
from pipeline.ontology_kg import build_graph, serialize_ntriples, serialize_turtle

COMMANDS = [
    {
        "name": "build-kg",
        "description": "Build RDF graphs (N-Triples + Turtle) from enriched records and their detections.",
        "parameters": {
            "type": "object",
            "properties": {},
        },
    },
]


def _build(args: dict, ctx) -> str:
    store = ctx.store
    names = store.require("enriched", ".json")
    detections = set(store.entries("detections", ".json"))

    triples = 0
    for name in names:
        enriched = EnrichedRecord.from_dict(store.read_json("enriched", name))
        pages = []
        if name in detections:
            thresholds = Thresholds.model_validate(enriched.thresholds) if enriched.thresholds else ctx.config.thresholds
            pages = clean_pages(load_detections(store.read_bytes("detections", name)).pages,
                                thresholds.min_confidence, thresholds.iou)
        graph = build_graph(enriched, pages)
        stem = name[: -len(".json")]
        store.write("graph", f"{stem}.nt", serialize_ntriples(graph))
        store.write("graph", f"{stem}.ttl", serialize_turtle(graph))
        triples += len(graph)

    return f"✅ Built {len(names)} graph(s), {triples} triple(s) → {store.root / 'graph'}"


def handle(command: str, args: dict, ctx=None) -> str:
    if command == "build-kg":
        return _build(args, ctx)
    return f"Unknown command: {command}"
