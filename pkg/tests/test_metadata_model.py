"""
test_metadata_model.py — oai_dc payloads to normalized descriptive records.
"""

import random
from datetime import datetime, timezone
from pathlib import Path

import pytest
from lxml import etree

from conftest import dc_payload
from pipeline.errors import NoDcPayload, SchemaError, XmlMalformed
from pipeline.metadata_model import DescriptiveRecord, normalize, normalize_text, parse_dc
from pipeline.oai_harvester import OaiRecord, parse_response

FIXTURES = Path(__file__).parent / "fixtures"
STAMP = datetime(2024, 1, 15, tzinfo=timezone.utc)


def oai_record(metadata, identifier="oai:jbc:1"):
    xml = metadata if isinstance(metadata, bytes) else etree.tostring(metadata)
    return OaiRecord(identifier=identifier, datestamp=STAMP, metadata_xml=xml)


class TestParseDc:
    @pytest.fixture
    def fixture_records(self):
        return parse_response((FIXTURES / "listrecords_page1.xml").read_bytes(), "ListRecords").records

    def test_fixture_record(self, fixture_records):
        record = parse_dc(fixture_records[0])
        assert record.source_identifier == "oai:jbc:1"
        assert record.titles == ("Psalterium Davidis",)
        assert record.creators == ("Jan Długosz",)
        assert record.dates == ("ca. 1480",)
        assert record.subjects == ("manuscripts", "incunabula")
        assert record.identifiers == ("https://jbc.bj.uj.edu.pl/dlibra/publication/1", "BJ Rkp. 5")
        assert record.extras == {
            "publisher": ("Biblioteka Jagiellońska",),
            "description": ("Parchment, 212 leaves.",),
        }

    def test_deleted_record_has_no_payload(self, fixture_records):
        with pytest.raises(NoDcPayload):
            parse_dc(fixture_records[1])

    def test_provenance_only_for_present_fields(self):
        record = parse_dc(oai_record(dc_payload(title=["Missale"], date=["saec. XV"])))
        assert record.field_provenance == {"titles": "harvested", "dates": "harvested"}
        assert record.creators == ()

    def test_empty_values_are_dropped(self):
        record = parse_dc(oai_record(dc_payload(creator=["   ", "Anonymous", "Anonymous "])))
        assert record.creators == ("Anonymous",)

    def test_nfc_normalization(self):
        record = parse_dc(oai_record(dc_payload(subject=["Krako\u0301w"])))
        assert record.subjects == ("Kraków",)

    def test_bare_dc_root(self):
        dc = dc_payload(title=["Graduale"])[0]
        assert parse_dc(oai_record(dc)).titles == ("Graduale",)

    def test_metadata_without_dc(self):
        with pytest.raises(NoDcPayload):
            parse_dc(oai_record(b"<metadata><mods/></metadata>"))

    def test_malformed_metadata(self):
        with pytest.raises(XmlMalformed):
            parse_dc(oai_record(b"<metadata><oai_dc:dc>"))


class TestDescriptiveRecord:
    def test_identifier_required(self):
        with pytest.raises(ValueError):
            DescriptiveRecord(source_identifier="")

    def test_dict_form_survives_store(self):
        record = parse_dc(oai_record(dc_payload(title=["Codex"], creator=["Jan Długosz"])))
        assert DescriptiveRecord.from_dict(record.to_dict()) == record

    def test_from_dict_rejects_garbage(self):
        with pytest.raises(SchemaError):
            DescriptiveRecord.from_dict({"titles": ["x"]})

    def test_normalize_keeps_first_occurrence(self):
        record = normalize(DescriptiveRecord("ms-1", titles=("B", " A", "B", "A")))
        assert record.titles == ("B", "A")

    def test_normalize_text(self):
        assert normalize_text("  Psalterium \n\t Davidis ") == "Psalterium Davidis"

    def test_normalize_is_idempotent(self):
        rng = random.Random(71)
        pieces = ["Psalterium", " ", "\t", "\n", "e\u0301", "\u00e9", "\u0141", "", "  Davidis  "]

        def values():
            return tuple("".join(rng.choice(pieces) for _ in range(rng.randint(0, 5)))
                         for _ in range(rng.randint(0, 4)))

        for _ in range(200):
            record = DescriptiveRecord(
                "ms-1", titles=values(), creators=values(), subjects=values(),
                field_provenance={"titles": "harvested", "creators": "harvested"},
                extras={"description": values()},
            )
            once = normalize(record)
            assert normalize(once) == once
