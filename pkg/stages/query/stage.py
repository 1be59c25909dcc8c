"""
Query stage — basic graph pattern queries over every built graph plus links.

Prints a tab-separated table: a header of ?variables, then one row of
N-Triples terms per solution.
"""

from pathlib import Path

from pipeline.errors import UsageError
from pipeline.ontology_kg import KnowledgeGraph, parse_ntriples
from pipeline.query import format_tsv, run_query

WRITES_STORE = False

COMMANDS = [
    {
        "name": "query",
        "description": "Evaluate a triple-pattern query against the store's graphs and links.",
        "parameters": {
            "type": "object",
            "properties": {
                "query": {
                    "type": "string",
                    "description": "Query text, e.g. '?r a jdlo:Stamp'",
                },
                "file": {
                    "type": "string",
                    "description": "Read the query text from this file instead",
                },
            },
        },
    },
]


def load_store_graph(store) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    for name in store.require("graph", ".nt"):
        graph.merge(parse_ntriples(store.read_text("graph", name)))
    for name in store.entries("links", ".nt"):
        graph.merge(parse_ntriples(store.read_text("links", name)))
    return graph.freeze()


def _query(args: dict, ctx) -> str:
    text, file = args.get("query"), args.get("file")
    if bool(text) == bool(file):
        raise UsageError("give exactly one of --query or --file")
    if file:
        try:
            text = Path(file).read_text(encoding="utf-8")
        except OSError as e:
            raise UsageError(f"cannot read query file: {e}")
    return format_tsv(run_query(text, load_store_graph(ctx.store)))


def handle(command: str, args: dict, ctx=None) -> str:
    if command == "query":
        return _query(args, ctx)
    return f"Unknown command: {command}"
