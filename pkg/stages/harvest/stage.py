"""
Harvest stage — ListRecords over OAI-PMH into store/raw and store/records.

Deleted records remove their raw and record files and any enriched or graph
output built from them. A partial harvest (expired resumption token) keeps
what it got and exits non-zero.
"""

import logging

from pipeline.errors import NoDcPayload, TokenExpired, TokenLoop, UsageError, XmlMalformed
from pipeline.metadata_model import parse_dc
from pipeline.oai_harvester import OaiClient, harvest, parse_datestamp
from pipeline.store import sanitize_id

logger = logging.getLogger(__name__)

# per-record artifacts of later stages, dropped with a deleted record
DERIVED = (("enriched", "{}.json"), ("graph", "{}.nt"), ("graph", "{}.ttl"))

COMMANDS = [
    {
        "name": "harvest",
        "description": "Harvest records from an OAI-PMH endpoint (URL, fixture directory or fixture:<dir>) into the store.",
        "parameters": {
            "type": "object",
            "properties": {
                "endpoint": {
                    "type": "string",
                    "description": "OAI-PMH base URL or fixture directory (default: config endpoints.oai)",
                },
                "prefix": {
                    "type": "string",
                    "description": "metadataPrefix (default: config harvest.metadata_prefix, 'oai_dc')",
                },
                "set": {
                    "type": "string",
                    "description": "setSpec for a selective harvest",
                },
                "from": {
                    "type": "string",
                    "description": "Lower datestamp bound, YYYY-MM-DD or YYYY-MM-DDThh:mm:ssZ",
                },
                "until": {
                    "type": "string",
                    "description": "Upper datestamp bound, YYYY-MM-DD or YYYY-MM-DDThh:mm:ssZ",
                },
            },
        },
    },
]


def _bound(args: dict, name: str):
    value = args.get(name)
    if not value:
        return None
    try:
        return parse_datestamp(value)
    except XmlMalformed as e:
        raise UsageError(f"--{name}: {e}")


def _harvest(args: dict, ctx) -> str:
    config = ctx.config
    endpoint = args.get("endpoint") or config.endpoints.oai
    if not endpoint:
        raise UsageError("no endpoint given (--endpoint or config endpoints.oai)")
    prefix = args.get("prefix") or config.harvest.metadata_prefix
    store = ctx.store

    stored, removed, skipped = [], [], []

    def sink(record):
        sid = sanitize_id(record.identifier)
        if record.deleted:
            store.remove("raw", f"{sid}.xml")
            store.remove("record", f"{sid}.json")
            for stage, name in DERIVED:
                store.remove(stage, name.format(sid))
            removed.append(record.identifier)
            return
        try:
            descriptive = parse_dc(record)
        except (NoDcPayload, XmlMalformed) as e:
            logger.warning("skipping %s: %s", record.identifier, e)
            skipped.append(record.identifier)
            return
        store.write("raw", f"{sid}.xml", record.metadata_xml)
        store.write_json("record", f"{sid}.json", descriptive.to_dict())
        stored.append(record.identifier)

    client = OaiClient.from_settings(endpoint, config.harvest)
    summary = harvest(endpoint, prefix, sink, args.get("set"), _bound(args, "from"), _bound(args, "until"),
                      client=client)

    if summary.error == TokenExpired.code:
        raise TokenExpired(
            f"resumption token rejected after {summary.pages_fetched} page(s); "
            f"kept {len(stored)} record(s), harvest incomplete"
        )
    if summary.error == TokenLoop.code:
        raise TokenLoop(f"resumption token repeated after {summary.pages_fetched} page(s); harvest incomplete")

    lines = [
        f"✅ Harvested {summary.records_received} record(s) in {summary.pages_fetched} page(s) "
        f"→ {store.root / 'records'}",
        f"   stored: {len(stored)}  deleted: {summary.records_deleted}  skipped: {len(skipped)}",
    ]
    if skipped:
        lines.append(f"⚠️  No Dublin Core payload: {', '.join(skipped)}")
    return "\n".join(lines)


def handle(command: str, args: dict, ctx=None) -> str:
    if command == "harvest":
        return _harvest(args, ctx)
    return f"Unknown command: {command}"
