"""
enrichment.py — Layout, condition and provenance indicators per manuscript.

Turns validated detections into the derived fields of an EnrichedRecord:
region counts per class, text and stain coverage (mean over pages of the
union area of the relevant boxes), condition flags and section assignments.
"""

import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal

from pipeline.annotations import (
    PageDetections,
    RegionClass,
    assign_sections,
    dedupe_regions,
    filter_regions,
)
from pipeline.config import Thresholds
from pipeline.errors import ManuscriptMismatch, SchemaError
from pipeline.metadata_model import ENRICHED, DescriptiveRecord

TEXT_CLASSES = frozenset({RegionClass.PARAGRAPH, RegionClass.HEADER, RegionClass.DESCRIPTION})
STAIN_CLASSES = frozenset({RegionClass.STAIN})
# stamps, seals and marginal notes carry ownership and usage history
PROVENANCE_CLASSES = frozenset({
    RegionClass.STAMP, RegionClass.SIGNATURE, RegionClass.SIGN, RegionClass.DESCRIPTION,
})

STAINED = "stained"
HEAVILY_STAINED = "heavily_stained"

DERIVED_FIELDS = (
    "class_counts",
    "text_coverage",
    "stain_coverage",
    "condition_flags",
    "has_stamp",
    "section_assignments",
    "pages_analyzed",
    "provenance_markers",
)

_SIX_DP = Decimal("0.000001")


def round6(value: float) -> float:
    """Round to 6 decimal places, half-even on the shortest decimal repr."""
    return float(Decimal(repr(float(value))).quantize(_SIX_DP, rounding=ROUND_HALF_EVEN))


@dataclass(frozen=True)
class EnrichedRecord:
    base: DescriptiveRecord
    class_counts: dict[RegionClass, int]
    text_coverage: float = 0.0
    stain_coverage: float = 0.0
    condition_flags: frozenset[str] = frozenset()
    has_stamp: bool = False
    section_assignments: tuple[tuple[str, str], ...] = ()
    pages_analyzed: int = 0
    provenance_markers: tuple[str, ...] = ()
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "class_counts": {c.value: self.class_counts.get(c, 0) for c in RegionClass},
            "text_coverage": round6(self.text_coverage),
            "stain_coverage": round6(self.stain_coverage),
            "condition_flags": sorted(self.condition_flags),
            "has_stamp": self.has_stamp,
            "section_assignments": [list(pair) for pair in self.section_assignments],
            "pages_analyzed": self.pages_analyzed,
            "provenance_markers": list(self.provenance_markers),
            "thresholds": dict(sorted(self.thresholds.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnrichedRecord":
        try:
            counts = {RegionClass(k): int(v) for k, v in data["class_counts"].items()}
            return cls(
                base=DescriptiveRecord.from_dict(data["base"]),
                class_counts={c: counts.get(c, 0) for c in RegionClass},
                text_coverage=float(data["text_coverage"]),
                stain_coverage=float(data["stain_coverage"]),
                condition_flags=frozenset(data["condition_flags"]),
                has_stamp=bool(data["has_stamp"]),
                section_assignments=tuple((m, s) for m, s in data["section_assignments"]),
                pages_analyzed=int(data["pages_analyzed"]),
                provenance_markers=tuple(data.get("provenance_markers", ())),
                thresholds=dict(data.get("thresholds", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"not an enriched record: {e}")


def class_counts(pages) -> dict[RegionClass, int]:
    counts = {c: 0 for c in RegionClass}
    for page in pages:
        for region in page.regions:
            counts[region.class_label] += 1
    return counts


def _covered_length(intervals) -> float:
    covered = 0.0
    start = end = None
    for lo, hi in sorted(intervals):
        if end is None or lo > end:
            if end is not None:
                covered += end - start
            start, end = lo, hi
        elif hi > end:
            end = hi
    if end is not None:
        covered += end - start
    return covered


def union_area(boxes) -> float:
    """
    Exact area of the union of boxes.

    The distinct x-edges cut the plane into vertical slabs; inside each slab
    the covered y-extent is the merged length of the boxes spanning it.
    """
    boxes = list(boxes)
    if not boxes:
        return 0.0
    xs = sorted({b.x for b in boxes} | {b.x2 for b in boxes})
    total = 0.0
    for left, right in zip(xs, xs[1:]):
        spanning = [(b.y, b.y2) for b in boxes if b.x <= left and b.x2 >= right]
        if spanning:
            total += (right - left) * _covered_length(spanning)
    return min(1.0, total)


def page_coverage(page: PageDetections, classes) -> float:
    return union_area(r.bbox for r in page.regions if r.class_label in classes)


def clean_pages(pages, min_confidence: float, iou_threshold: float) -> list[PageDetections]:
    """Confidence filter plus per-class suppression; surviving regions keep page order."""
    cleaned = []
    for page in pages:
        confident = filter_regions(page.regions, min_confidence)
        survivors = {r.id for r in dedupe_regions(confident, iou_threshold)}
        cleaned.append(replace(page, regions=tuple(r for r in confident if r.id in survivors)))
    return cleaned


def enrich(record: DescriptiveRecord, pages, thresholds: Thresholds | None = None) -> EnrichedRecord:
    """
    Derive every EnrichedRecord field from a record and its (cleaned) pages.

    Raises:
        ManuscriptMismatch: a page belongs to another manuscript.
    """
    thresholds = thresholds or Thresholds()
    for page in pages:
        if page.manuscript_id != record.source_identifier:
            raise ManuscriptMismatch(
                f"page {page.page_number} belongs to {page.manuscript_id!r}, "
                f"not {record.source_identifier!r}"
            )

    ordered = sorted(pages, key=lambda p: p.page_number)
    analyzed = len(ordered)
    counts = class_counts(ordered)

    text_coverage = stain_coverage = 0.0
    if analyzed:
        text_coverage = round6(math.fsum(page_coverage(p, TEXT_CLASSES) for p in ordered) / analyzed)
        stain_coverage = round6(math.fsum(page_coverage(p, STAIN_CLASSES) for p in ordered) / analyzed)

    flags = set()
    if stain_coverage > thresholds.stained:
        flags.add(STAINED)
    if stain_coverage > thresholds.heavily_stained:
        flags.add(HEAVILY_STAINED)

    assignments = []
    for page in ordered:
        prefix = f"p{page.page_number}/"
        assignments.extend((prefix + m, prefix + s) for m, s in assign_sections(page.regions))

    provenance = dict(record.field_provenance)
    provenance.update({name: ENRICHED for name in DERIVED_FIELDS})

    return EnrichedRecord(
        base=replace(record, field_provenance=provenance),
        class_counts=counts,
        text_coverage=text_coverage,
        stain_coverage=stain_coverage,
        condition_flags=frozenset(flags),
        has_stamp=counts[RegionClass.STAMP] > 0,
        section_assignments=tuple(assignments),
        pages_analyzed=analyzed,
        provenance_markers=tuple(sorted(c.value for c in PROVENANCE_CLASSES if counts[c] > 0)),
        thresholds=thresholds.model_dump(),
    )
