"""
test_enrichment.py — Coverage, condition flags, provenance markers and
section assignments derived from cleaned detections.
"""

import numpy as np
import pytest

from conftest import detection_document, fig1_document, page, region
from pipeline.annotations import BBox, RegionClass, load_detections
from pipeline.config import Thresholds
from pipeline.enrichment import (
    TEXT_CLASSES,
    EnrichedRecord,
    class_counts,
    clean_pages,
    enrich,
    page_coverage,
    round6,
    union_area,
)
from pipeline.errors import ManuscriptMismatch, SchemaError
from pipeline.metadata_model import DescriptiveRecord

GRID = 50
FINE = 4096


def pages_of(doc):
    return load_detections(doc).pages


def record(ms_id="ms-1"):
    return DescriptiveRecord(ms_id, titles=("Psalterium Davidis",), field_provenance={"titles": "harvested"})


def raster_area(cells) -> float:
    """Area covered by grid-aligned boxes, counted cell by cell."""
    mask = np.zeros((GRID, GRID), dtype=bool)
    for x, y, w, h in cells:
        mask[y:y + h, x:x + w] = True
    return mask.sum() / GRID ** 2


class TestUnionArea:
    def test_empty(self):
        assert union_area([]) == 0.0

    def test_overlap_counted_once(self):
        boxes = [BBox(0.0, 0.0, 0.5, 0.5), BBox(0.25, 0.25, 0.5, 0.5)]
        assert union_area(boxes) == pytest.approx(0.4375)

    def test_matches_raster(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            cells = []
            for _ in range(rng.integers(1, 7)):
                x, y = rng.integers(0, GRID - 1, size=2)
                w = rng.integers(1, GRID - x + 1)
                h = rng.integers(1, GRID - y + 1)
                cells.append((int(x), int(y), int(w), int(h)))
            boxes = [BBox(x / GRID, y / GRID, w / GRID, h / GRID) for x, y, w, h in cells]
            assert union_area(boxes) == pytest.approx(raster_area(cells), abs=1e-9)

    def test_matches_fine_raster_for_arbitrary_boxes(self):
        rng = np.random.default_rng(8)
        mask = np.zeros((FINE, FINE), dtype=bool)
        for _ in range(200):
            boxes = []
            for _ in range(rng.integers(1, 21)):
                w, h = rng.uniform(0.01, 0.3, size=2)
                x, y = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
                boxes.append(BBox(float(x), float(y), float(w), float(h)))
            mask[:] = False
            for b in boxes:
                x0, x1 = round(b.x * FINE), round(b.x2 * FINE)
                y0, y1 = round(b.y * FINE), round(b.y2 * FINE)
                mask[y0:y1, x0:x1] = True
            assert union_area(boxes) == pytest.approx(np.count_nonzero(mask) / FINE ** 2, abs=2e-3)

    def test_bounds_and_monotonicity(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            boxes = []
            previous = 0.0
            for _ in range(rng.integers(1, 21)):
                w, h = rng.uniform(0.01, 0.6, size=2)
                boxes.append(BBox(float(rng.uniform(0.0, 1.0 - w)), float(rng.uniform(0.0, 1.0 - h)),
                                  float(w), float(h)))
                area = union_area(boxes)
                assert area >= previous - 1e-12
                previous = area
            assert max(b.area for b in boxes) - 1e-12 <= previous <= sum(b.area for b in boxes) + 1e-12
            assert previous <= 1.0


class TestRound6:
    def test_half_even(self):
        assert round6(0.0000125) == 0.000012
        assert round6(0.0000135) == 0.000014

    def test_float_noise(self):
        assert round6(0.2 * 0.1) == 0.02


class TestCleanPages:
    def test_filter_then_dedupe_in_page_order(self):
        doc = detection_document("ms-1", [page(1, [
            region("a", "stamp", [0.1, 0.1, 0.1, 0.1], 0.6),
            region("b", "paragraph", [0.1, 0.3, 0.5, 0.5], 0.1),
            region("c", "stamp", [0.1, 0.1, 0.1, 0.1], 0.9),
            region("d", "initial", [0.7, 0.7, 0.1, 0.1], 0.5),
        ])])
        (cleaned,) = clean_pages(pages_of(doc), 0.25, 0.5)
        assert [r.id for r in cleaned.regions] == ["c", "d"]


class TestClassCounts:
    def test_every_class_present(self):
        counts = class_counts(pages_of(fig1_document("ms-1")))
        assert set(counts) == set(RegionClass)
        assert counts[RegionClass.PARAGRAPH] == 2
        assert counts[RegionClass.STAIN] == 0
        assert sum(counts.values()) == 6

    def test_sums_over_pages(self):
        doc = detection_document("ms-1", [
            page(1, [region("s1", "stamp", [0.1, 0.1, 0.1, 0.1])]),
            page(2, [region("s1", "stamp", [0.5, 0.5, 0.1, 0.1])]),
        ])
        assert class_counts(pages_of(doc))[RegionClass.STAMP] == 2


class TestPageCoverage:
    def test_text_classes_only(self):
        (fig1,) = pages_of(fig1_document("ms-1"))
        assert page_coverage(fig1, TEXT_CLASSES) == pytest.approx(0.624)
        assert page_coverage(fig1, {RegionClass.STAMP}) == pytest.approx(0.015)

    def test_no_matching_regions(self):
        (fig1,) = pages_of(fig1_document("ms-1"))
        assert page_coverage(fig1, {RegionClass.STAIN}) == 0.0


class TestEnrich:
    def test_fig1_page(self):
        enriched = enrich(record(), pages_of(fig1_document("ms-1")))
        assert enriched.pages_analyzed == 1
        assert enriched.text_coverage == pytest.approx(0.624)
        assert enriched.stain_coverage == 0.0
        assert enriched.condition_flags == frozenset()
        assert enriched.has_stamp
        assert enriched.class_counts[RegionClass.PARAGRAPH] == 2
        assert enriched.section_assignments == (("p1/i1", "p1/p1"), ("p1/s1", "p1/p2"))
        assert enriched.provenance_markers == ("stamp",)

    def test_field_provenance(self):
        provenance = enrich(record(), []).base.field_provenance
        assert provenance["titles"] == "harvested"
        assert provenance["text_coverage"] == "enriched"

    def test_no_pages(self):
        enriched = enrich(record(), [])
        assert enriched.pages_analyzed == 0
        assert enriched.text_coverage == enriched.stain_coverage == 0.0
        assert not enriched.has_stamp
        assert set(enriched.class_counts.values()) == {0}

    @pytest.mark.parametrize("stain, flags", [
        ([0.0, 0.0, 0.2, 0.1], set()),
        ([0.0, 0.0, 0.5, 0.1], {"stained"}),
        ([0.0, 0.0, 0.5, 0.3], {"stained", "heavily_stained"}),
    ])
    def test_condition_flags(self, stain, flags):
        doc = detection_document("ms-1", [page(1, [region("st", "stain", stain)])])
        assert enrich(record(), pages_of(doc)).condition_flags == flags

    def test_custom_stain_thresholds(self):
        doc = detection_document("ms-1", [page(1, [region("st", "stain", [0.0, 0.0, 0.2, 0.1])])])
        thresholds = Thresholds(stained=0.01, heavily_stained=0.015)
        assert enrich(record(), pages_of(doc), thresholds).condition_flags == {"stained", "heavily_stained"}

    def test_coverage_is_a_page_mean(self):
        doc = detection_document("ms-1", [
            page(1, [region("p", "paragraph", [0.0, 0.0, 1.0, 0.5])]),
            page(2, []),
        ])
        assert enrich(record(), pages_of(doc)).text_coverage == 0.25

    def test_assignments_follow_page_numbers(self):
        doc = detection_document("ms-1", [
            page(2, [region("p", "paragraph", [0.0, 0.0, 0.5, 0.5]), region("s", "stamp", [0.1, 0.1, 0.1, 0.1])]),
            page(1, [region("h", "header", [0.0, 0.0, 0.5, 0.2]), region("i", "initial", [0.0, 0.0, 0.1, 0.1])]),
        ])
        assert enrich(record(), pages_of(doc)).section_assignments == (("p1/i", "p1/h"), ("p2/s", "p2/p"))

    def test_description_is_text_and_provenance(self):
        doc = detection_document("ms-1", [page(1, [region("d", "description", [0.0, 0.0, 0.5, 0.2])])])
        enriched = enrich(record(), pages_of(doc))
        assert enriched.text_coverage == 0.1
        assert enriched.provenance_markers == ("description",)

    def test_foreign_page(self):
        with pytest.raises(ManuscriptMismatch):
            enrich(record("ms-1"), pages_of(fig1_document("ms-2")))

    def test_dict_form(self):
        enriched = enrich(record(), pages_of(fig1_document("ms-1")))
        assert EnrichedRecord.from_dict(enriched.to_dict()) == enriched

    def test_from_dict_rejects_garbage(self):
        with pytest.raises(SchemaError):
            EnrichedRecord.from_dict({"base": {"source_identifier": "x"}})
