"""
Reconcile stage — owl:sameAs links for creators and subjects.

Writes store/links/creators.nt, store/links/subjects.nt and the review
candidates to store/links/candidates.json.
"""

import json

from pipeline.config import with_overrides
from pipeline.enrichment import EnrichedRecord
from pipeline.reconciliation import client_from_config, links_to_ntriples, reconcile

COMMANDS = [
    {
        "name": "reconcile",
        "description": "Link creators and subjects to an external registry (Wikidata search by default).",
        "parameters": {
            "type": "object",
            "properties": {
                "fixture": {
                    "type": "string",
                    "description": "JSON file of query → candidates to use instead of the live endpoint",
                },
                "link": {
                    "type": "number",
                    "description": "Score at or above which a link is accepted (default 0.92)",
                },
                "review": {
                    "type": "number",
                    "description": "Score at or above which candidates are kept for review (default 0.85)",
                },
            },
        },
    },
]


def _reconcile(args: dict, ctx) -> str:
    store = ctx.store
    store.require("graph", ".nt")

    creators, subjects = [], []
    for name in store.require("enriched", ".json"):
        base = EnrichedRecord.from_dict(store.read_json("enriched", name)).base
        creators.extend(base.creators)
        subjects.extend(base.subjects)

    client = client_from_config(ctx.config, args.get("fixture"))
    thresholds = with_overrides(ctx.config, link=args.get("link"), review=args.get("review")).thresholds
    workers = ctx.config.workers

    candidates, unavailable, linked = [], [], 0
    for kind, labels in (("creator", creators), ("subject", subjects)):
        result = reconcile(labels, client, thresholds, max_workers=workers)
        store.write("links", f"{kind}s.nt", links_to_ntriples(result.links, kind))
        candidates.extend({"kind": kind, **c.to_dict()} for c in result.candidates)
        unavailable.extend(result.unavailable)
        linked += len(result.links)

    store.write("links", "candidates.json",
                json.dumps(candidates, ensure_ascii=False, indent=2) + "\n")

    lines = [
        f"✅ Reconciled {len(set(creators))} creator(s) and {len(set(subjects))} subject(s): "
        f"{linked} link(s), {len(candidates)} candidate(s) for review → {store.root / 'links'}",
    ]
    if unavailable:
        lines.append(f"⚠️  E_RECON_CLIENT_UNAVAILABLE for: {', '.join(unavailable)}")
    return "\n".join(lines)


def handle(command: str, args: dict, ctx=None) -> str:
    if command == "reconcile":
        return _reconcile(args, ctx)
    return f"Unknown command: {command}"
