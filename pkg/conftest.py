"""
conftest.py — Shared fixture builders for the FolioGraph test suites.

Builds an offline OAI-PMH repository (page files + manifest.json for
FixtureTransport) and detection documents in the interchange schema.
"""

import json
from pathlib import Path

import pytest
from lxml import etree
from lxml.builder import ElementMaker

from pipeline.config import PipelineConfig
from pipeline.stage_loader import load_stages
from pipeline.stage_router import StageContext, build_command_map
from pipeline.store import Store

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
OAI_DC_NS = "http://www.openarchives.org/OAI/2.0/oai_dc/"
DC_NS = "http://purl.org/dc/elements/1.1/"

BASE_URL = "https://repo.example.org/oai"

OAI = ElementMaker(namespace=OAI_NS, nsmap={None: OAI_NS})
OAI_DC = ElementMaker(namespace=OAI_DC_NS, nsmap={"oai_dc": OAI_DC_NS, "dc": DC_NS})
DC = ElementMaker(namespace=DC_NS)

CREATORS = ("Jan Długosz", "Mikołaj Kopernik", "Anonymous")


# ─── OAI-PMH documents ─────────────────────────────────────────────

def dc_payload(**fields) -> etree._Element:
    """<metadata><oai_dc:dc> with one dc:<name> element per value, in order."""
    dc = OAI_DC.dc()
    for name, values in fields.items():
        for value in values:
            dc.append(getattr(DC, name)(value))
    return OAI.metadata(dc)


def record_element(identifier: str, datestamp: str = "2024-01-15", sets=(), deleted: bool = False,
                   metadata: etree._Element | None = None) -> etree._Element:
    header = OAI.header(OAI.identifier(identifier), OAI.datestamp(datestamp),
                        *[OAI.setSpec(s) for s in sets])
    if deleted:
        header.set("status", "deleted")
        return OAI.record(header)
    if metadata is None:
        return OAI.record(header)
    return OAI.record(header, metadata)


def envelope(verb: str, *children, error: tuple[str, str] | None = None, **request_args) -> bytes:
    """A complete OAI-PMH response; ``error`` is (code, message)."""
    root = OAI("OAI-PMH",
               OAI.responseDate("2024-05-01T12:00:00Z"),
               OAI.request(BASE_URL, verb=verb, **request_args))
    if error:
        code, message = error
        root.append(OAI.error(message, code=code))
    else:
        root.append(OAI(verb, *children))
    return etree.tostring(root, xml_declaration=True, encoding="UTF-8")


def resumption_token(value: str, size: int, cursor: int) -> etree._Element:
    return OAI.resumptionToken(value, completeListSize=str(size), cursor=str(cursor))


def manuscript_id(n: int) -> str:
    return f"oai:jbc:{n}"


def manuscript_metadata(n: int) -> etree._Element:
    subjects = ["manuscripts", "incunabula"] if n % 2 == 0 else ["manuscripts"]
    return dc_payload(
        title=[f"Codex {n}"],
        creator=[CREATORS[n % len(CREATORS)]],
        date=["ca. 1480"],
        subject=subjects,
        type=["manuscript"],
        language=["lat"],
        identifier=[f"https://jbc.bj.uj.edu.pl/dlibra/publication/{n}"],
    )


class OaiRepository:
    """A fixture directory in the layout FixtureTransport reads."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.manifest: dict = {}

    def add_file(self, name: str, body: bytes) -> str:
        (self.directory / name).write_bytes(body)
        return name

    def serve(self, query: str, entry) -> None:
        self.manifest[query] = entry

    def save(self) -> Path:
        (self.directory / "manifest.json").write_text(json.dumps(self.manifest, indent=2), encoding="utf-8")
        return self.directory


def build_repository(directory: Path, pages: int = 3, per_page: int = 50, deleted=(),
                     retry_after: str | None = None, bad_token_page: int | None = None,
                     granularity: str = "YYYY-MM-DD", set_spec: str | None = None) -> OaiRepository:
    """
    ListRecords over ``pages`` × ``per_page`` records numbered from 1.

    ``deleted`` lists record numbers served as deleted headers.
    ``retry_after`` makes page 2 answer 503 once with that Retry-After.
    ``bad_token_page`` answers that page's request with badResumptionToken.
    """
    repo = OaiRepository(directory)
    total = pages * per_page
    deleted = set(deleted)

    repo.serve("verb=Identify", repo.add_file("identify.xml", envelope(
        "Identify",
        OAI.repositoryName("Fixture Library"),
        OAI.baseURL(BASE_URL),
        OAI.protocolVersion("2.0"),
        OAI.adminEmail("oai@repo.example.org"),
        OAI.earliestDatestamp("2000-01-01"),
        OAI.deletedRecord("persistent"),
        OAI.granularity(granularity),
    )))

    first_query = "verb=ListRecords&metadataPrefix=oai_dc"
    if set_spec:
        first_query += f"&set={set_spec}"

    for number in range(1, pages + 1):
        query = first_query if number == 1 else f"verb=ListRecords&resumptionToken=t-{number}"
        if number == bad_token_page:
            repo.serve(query, repo.add_file(f"page{number}.xml", envelope(
                "ListRecords", error=("badResumptionToken", "The resumptionToken has expired"),
                resumptionToken=f"t-{number}",
            )))
            continue

        numbers = range((number - 1) * per_page + 1, number * per_page + 1)
        records = [
            record_element(manuscript_id(n), deleted=n in deleted,
                           sets=(set_spec,) if set_spec else (),
                           metadata=None if n in deleted else manuscript_metadata(n))
            for n in numbers
        ]
        token_value = f"t-{number + 1}" if number < pages else ""
        token = resumption_token(token_value, total, (number - 1) * per_page)
        name = repo.add_file(f"page{number}.xml", envelope("ListRecords", *records, token))

        if number == 2 and retry_after is not None:
            repo.serve(query, [{"status": 503, "headers": {"Retry-After": retry_after}}, name])
        else:
            repo.serve(query, name)

    repo.save()
    return repo


# ─── Detection documents ───────────────────────────────────────────

def region(rid: str, label: str, bbox, confidence: float = 0.9) -> dict:
    return {"id": rid, "class": label, "bbox": list(bbox), "confidence": confidence}


def page(number: int, regions, width_px: int = 2480, height_px: int = 3508, image_uri: str | None = None) -> dict:
    return {
        "page_number": number,
        "image_uri": image_uri or f"https://images.example.org/ms/{number:04d}.jpg",
        "width_px": width_px,
        "height_px": height_px,
        "regions": list(regions),
    }


def detection_document(ms_id: str, pages) -> dict:
    return {"schema_version": "1.0", "manuscript_id": ms_id, "pages": list(pages)}


# header, two paragraphs, an initial opening the first paragraph, a stamp in
# the second one and an ornament below the text block
FIG1_REGIONS = (
    region("h1", "header", [0.1, 0.05, 0.8, 0.08], 0.95),
    region("p1", "paragraph", [0.1, 0.15, 0.8, 0.35], 0.93),
    region("p2", "paragraph", [0.1, 0.55, 0.8, 0.35], 0.90),
    region("i1", "initial", [0.1, 0.15, 0.08, 0.08], 0.88),
    region("s1", "stamp", [0.6, 0.7, 0.15, 0.1], 0.91),
    region("o1", "ornament", [0.3, 0.92, 0.4, 0.05], 0.85),
)


def fig1_document(ms_id: str = "oai:jbc:1") -> dict:
    return detection_document(ms_id, [page(1, FIG1_REGIONS, image_uri="https://images.example.org/ms/0001.jpg")])


# ─── pytest fixtures ───────────────────────────────────────────────

@pytest.fixture
def make_repository(tmp_path):
    """Factory: build_repository() under tmp_path/<name>."""
    def factory(name: str = "oai", **kwargs) -> OaiRepository:
        return build_repository(tmp_path / name, **kwargs)
    return factory


@pytest.fixture
def store(tmp_path) -> Store:
    return Store(tmp_path / "store", produced_by="test", clock=lambda: "2024-05-01T12:00:00Z")


@pytest.fixture
def ctx(store) -> StageContext:
    config = PipelineConfig.model_validate({"harvest": {"backoff_base": 0.0}})
    return StageContext(store=store, config=config)


@pytest.fixture
def detections_dir(tmp_path) -> Path:
    """Detection documents for manuscripts 1-3: 1 and 3 carry a stamp, 2 does not."""
    directory = tmp_path / "detections"
    directory.mkdir()
    docs = {
        "ms1.json": fig1_document(manuscript_id(1)),
        "ms2.json": detection_document(manuscript_id(2), [
            page(1, [region("p1", "paragraph", [0.1, 0.1, 0.8, 0.8], 0.97)]),
            page(2, [region("p1", "paragraph", [0.1, 0.1, 0.8, 0.4], 0.96),
                     region("st1", "stain", [0.0, 0.0, 0.25, 0.1], 0.8),
                     region("st2", "stain", [0.5, 0.5, 0.25, 0.1], 0.7)]),
        ]),
        "ms3.json": detection_document(manuscript_id(3), [
            page(1, [region("x1", "stamp", [0.05, 0.05, 0.1, 0.1], 0.99),
                     region("x2", "stamp", [0.05, 0.05, 0.1, 0.1], 0.60)]),
        ]),
    }
    for name, doc in docs.items():
        (directory / name).write_text(json.dumps(doc, ensure_ascii=False), encoding="utf-8")
    return directory


@pytest.fixture
def invoke(ctx):
    """Run a command the way the router does (writers hold the store lock), but let errors raise."""
    command_map = build_command_map(load_stages())

    def call(command: str, **args) -> str:
        _, handle, writes_store = command_map[command]
        if writes_store:
            with ctx.store.lock():
                return handle(command, args, ctx)
        return handle(command, args, ctx)
    return call


@pytest.fixture
def corpus(ctx, invoke, make_repository, detections_dir) -> StageContext:
    """Store holding a 3-record harvest and detections for all three manuscripts."""
    repo = make_repository(pages=1, per_page=3)
    invoke("harvest", endpoint=str(repo.directory))
    invoke("ingest-detections", path=str(detections_dir))
    return ctx
