"""Detections stage tests."""

import json
from pathlib import Path

import pytest

from conftest import fig1_document, region, page, detection_document
from pipeline.errors import (
    ManuscriptMismatch,
    MissingStageInput,
    SchemaVersionUnsupported,
    UnknownClassLabel,
    UsageError,
    ValidationError,
)
from pipeline.stage_loader import load_stage_module

stage = load_stage_module(Path(__file__).parent)
COMMANDS, handle = stage.COMMANDS, stage.handle


def ingest(ctx, path):
    with ctx.store.lock():
        return handle("ingest-detections", {"path": str(path)}, ctx)


def write_doc(directory: Path, name: str, doc: dict) -> Path:
    path = directory / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def harvested(ctx, invoke, make_repository):
    repo = make_repository(pages=1, per_page=3)
    invoke("harvest", endpoint=str(repo.directory))
    return ctx


class TestCommandDefinitions:
    def test_commands_is_list(self):
        assert isinstance(COMMANDS, list)

    def test_has_ingest(self):
        assert [c["name"] for c in COMMANDS] == ["ingest-detections"]

    def test_path_is_required(self):
        assert COMMANDS[0]["parameters"]["required"] == ["path"]


class TestHandle:
    def test_handle_unknown_command(self):
        assert isinstance(handle("nonexistent_command", {}), str)

    def test_requires_harvest(self, ctx, tmp_path):
        path = write_doc(tmp_path, "ms1.json", fig1_document("oai:jbc:1"))
        with pytest.raises(MissingStageInput) as e:
            ingest(ctx, path)
        assert e.value.code == "E_SCHEMA_MISSING_RECORDS"

    def test_ingests_directory(self, harvested, detections_dir):
        result = ingest(harvested, detections_dir)
        assert "3 document(s)" in result
        assert harvested.store.entries("detections", ".json") == [
            "oai%3Ajbc%3A1.json", "oai%3Ajbc%3A2.json", "oai%3Ajbc%3A3.json",
        ]

    def test_stored_document_is_canonical(self, harvested, tmp_path):
        path = write_doc(tmp_path, "ms1.json", fig1_document("oai:jbc:1"))
        ingest(harvested, path)
        stored = harvested.store.read_json("detections", "oai%3Ajbc%3A1.json")
        assert stored["schema_version"] == "1.0"
        assert [r["id"] for r in stored["pages"][0]["regions"]] == ["h1", "p1", "p2", "i1", "s1", "o1"]

    def test_unknown_manuscript(self, harvested, tmp_path):
        path = write_doc(tmp_path, "x.json", fig1_document("oai:jbc:999"))
        with pytest.raises(ManuscriptMismatch):
            ingest(harvested, path)

    def test_unknown_class_names_file(self, harvested, tmp_path):
        doc = detection_document("oai:jbc:1", [page(1, [region("b1", "border", [0.1, 0.1, 0.2, 0.2])])])
        path = write_doc(tmp_path, "bad.json", doc)
        with pytest.raises(UnknownClassLabel) as e:
            ingest(harvested, path)
        assert str(e.value).startswith("bad.json: $.pages[0].regions[0].class")

    def test_bbox_out_of_page(self, harvested, tmp_path):
        doc = detection_document("oai:jbc:1", [page(1, [region("s1", "stamp", [0.9, 0.9, 0.2, 0.05])])])
        path = write_doc(tmp_path, "wide.json", doc)
        with pytest.raises(ValidationError) as e:
            ingest(harvested, path)
        assert "$.pages[0].regions[0].bbox" in str(e.value)

    def test_schema_version(self, harvested, tmp_path):
        doc = fig1_document("oai:jbc:1") | {"schema_version": "2.0"}
        with pytest.raises(SchemaVersionUnsupported):
            ingest(harvested, write_doc(tmp_path, "v2.json", doc))

    def test_missing_path(self, harvested, tmp_path):
        with pytest.raises(UsageError):
            ingest(harvested, tmp_path / "nowhere")
