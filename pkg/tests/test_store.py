"""
test_store.py — Identifier sanitizing, manifest bookkeeping, locking and
verification.
"""

import json

import pytest

from pipeline.errors import EmptyIdentifier, ManifestMissing, MissingStageInput, StoreError, StoreLocked
from pipeline.store import LOCK_NAME, Store, sanitize_id, unsanitize_id, verify_store


class TestSanitizeId:
    @pytest.mark.parametrize("identifier, name", [
        ("oai:jbc:1", "oai%3Ajbc%3A1"),
        ("ms-1_a.b", "ms-1_a.b"),
        ("a/b", "a%2Fb"),
        ("Długosz", "D%C5%82ugosz"),
        ("..", "%2E%2E"),
        ("50%", "50%25"),
    ])
    def test_encoding(self, identifier, name):
        assert sanitize_id(identifier) == name
        assert unsanitize_id(name) == identifier

    def test_empty(self):
        with pytest.raises(EmptyIdentifier):
            sanitize_id("")


class TestStore:
    def test_write_records_manifest(self, store):
        with store.lock():
            assert store.write("record", "a.json", "{}")
        entry = json.loads(store.manifest_path.read_text())["records/a.json"]
        assert entry["stage"] == "record"
        assert entry["produced_by"] == "test"
        assert entry["timestamp"] == "2024-05-01T12:00:00Z"
        assert len(entry["sha256"]) == 64

    def test_identical_write_is_skipped(self, store):
        with store.lock():
            store.write("graph", "g.nt", "x\n")
            assert not store.write("graph", "g.nt", "x\n")
            assert store.write("graph", "g.nt", "y\n")

    def test_write_json_is_canonical(self, store):
        with store.lock():
            store.write_json("enriched", "e.json", {"b": 1, "a": "ł"})
        assert store.read_text("enriched", "e.json") == '{\n  "a": "ł",\n  "b": 1\n}\n'

    def test_remove(self, store):
        with store.lock():
            store.write("raw", "r.xml", b"<x/>")
            assert store.remove("raw", "r.xml")
            assert not store.remove("raw", "r.xml")
        assert store.entries("raw") == []
        assert not store.path("raw", "r.xml").exists()

    def test_entries_and_require(self, store):
        with store.lock():
            store.write("graph", "b.ttl", "")
            store.write("graph", "a.nt", "")
        assert store.entries("graph") == ["a.nt", "b.ttl"]
        assert store.entries("graph", ".nt") == ["a.nt"]
        with pytest.raises(MissingStageInput) as e:
            store.require("links")
        assert e.value.code == "E_SCHEMA_MISSING_LINKS"

    def test_unknown_stage(self, store):
        with pytest.raises(StoreError):
            store.path("thumbnails", "x")

    def test_lock_is_exclusive(self, store):
        with store.lock():
            with pytest.raises(StoreLocked):
                with Store(store.root).lock():
                    pass
        assert not (store.root / LOCK_NAME).exists()

    def test_lock_saves_manifest_on_error(self, store):
        with pytest.raises(RuntimeError):
            with store.lock():
                store.write("record", "a.json", "{}")
                raise RuntimeError("boom")
        assert "records/a.json" in json.loads(store.manifest_path.read_text())

    def test_no_temp_files_left(self, store):
        with store.lock():
            store.write("record", "a.json", "{}")
        assert [p.name for p in (store.root / "records").iterdir()] == ["a.json"]

    def test_unreadable_manifest(self, store):
        store.root.mkdir(parents=True)
        store.manifest_path.write_text("{", encoding="utf-8")
        with pytest.raises(StoreError):
            store.manifest()


class TestVerifyStore:
    @pytest.fixture
    def filled(self, store):
        with store.lock():
            store.write("record", "a.json", "{}")
            store.write("graph", "a.nt", "")
        return store

    def test_clean(self, filled):
        report = verify_store(filled.root)
        assert report.clean
        assert report.to_dict() == {"missing": [], "modified": [], "untracked": []}

    def test_problems(self, filled):
        filled.path("record", "a.json").write_text("{\"x\": 1}")
        filled.path("graph", "a.nt").unlink()
        (filled.root / "links").mkdir()
        (filled.root / "links" / "extra.nt").write_text("")
        report = verify_store(filled.root)
        assert not report.clean
        assert report.modified == ["records/a.json"]
        assert report.missing == ["graph/a.nt"]
        assert report.untracked == ["links/extra.nt"]

    def test_untracked_alone_is_clean(self, filled):
        (filled.root / "records" / "stray.json").write_text("{}")
        assert verify_store(filled.root).clean

    def test_no_manifest(self, tmp_path):
        with pytest.raises(ManifestMissing):
            verify_store(tmp_path)
