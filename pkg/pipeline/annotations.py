"""
annotations.py — Detected page regions.

Validates detector output delivered in the interchange JSON schema (version
"1.0") and provides the box geometry used downstream: IoU, per-class
suppression of duplicate detections, and assignment of regions to the text
section (paragraph or header) they sit in.
"""

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError
from pydantic_core import PydanticCustomError

from pipeline.errors import ManuscriptMismatch, SchemaVersionUnsupported, UnknownClassLabel, ValidationError

SCHEMA_VERSION = "1.0"
EPSILON = 1e-9
MIN_SECTION_OVERLAP = 0.5


class RegionClass(str, Enum):
    PARAGRAPH = "paragraph"
    STAIN = "stain"
    STAMP = "stamp"
    DESCRIPTION = "description"
    SIGN = "sign"
    SIGNATURE = "signature"
    IMAGE = "image"
    ORNAMENT = "ornament"
    INITIAL = "initial"
    HEADER = "header"


SECTION_CLASSES = frozenset({RegionClass.PARAGRAPH, RegionClass.HEADER})

_LABELS = {c.value for c in RegionClass}


# ─── Geometry ───────────────────────────────────────────────────────

def _bbox_problem(x: float, y: float, w: float, h: float) -> str | None:
    if not all(math.isfinite(v) for v in (x, y, w, h)):
        return "coordinates must be finite"
    if x < 0 or y < 0:
        return "x and y must be >= 0"
    if w <= 0 or h <= 0:
        return "w and h must be > 0"
    if x + w > 1 + EPSILON:
        return "x + w exceeds 1"
    if y + h > 1 + EPSILON:
        return "y + h exceeds 1"
    return None


@dataclass(frozen=True)
class BBox:
    """Normalized [x, y, w, h]; origin top-left, y grows downward."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        problem = _bbox_problem(self.x, self.y, self.w, self.h)
        if problem:
            raise ValueError(f"invalid bbox {self.to_list()}: {problem}")

    @classmethod
    def from_list(cls, values) -> "BBox":
        x, y, w, h = values
        return cls(float(x), float(y), float(w), float(h))

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h


def intersection_area(a: BBox, b: BBox) -> float:
    dx = min(a.x2, b.x2) - max(a.x, b.x)
    dy = min(a.y2, b.y2) - max(a.y, b.y)
    if dx <= 0 or dy <= 0:
        return 0.0
    return dx * dy


def iou(a: BBox, b: BBox) -> float:
    if a == b:
        return 1.0
    inter = intersection_area(a, b)
    if inter <= 0:
        return 0.0
    return min(1.0, inter / (a.area + b.area - inter))


# ─── Regions and pages ──────────────────────────────────────────────

@dataclass(frozen=True)
class Region:
    id: str
    class_label: RegionClass
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not self.id:
            raise ValueError("Region.id must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"region {self.id}: confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class PageDetections:
    manuscript_id: str
    page_number: int
    image_uri: str
    width_px: int
    height_px: int
    regions: tuple[Region, ...] = ()

    def __post_init__(self):
        if self.page_number < 1:
            raise ValueError("page_number must be >= 1")
        ids = [r.id for r in self.regions]
        if len(ids) != len(set(ids)):
            raise ValueError(f"page {self.page_number}: region ids are not unique")


@dataclass(frozen=True)
class DetectionDocument:
    manuscript_id: str
    pages: tuple[PageDetections, ...] = ()


# ─── Interchange schema ─────────────────────────────────────────────

class _RegionDoc(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True, allow_inf_nan=False)

    id: str = Field(min_length=1)
    class_: str = Field(alias="class")
    bbox: list[float]
    confidence: float = Field(ge=0.0, le=1.0)

    @field_validator("class_")
    @classmethod
    def _known_class(cls, value: str) -> str:
        if value not in _LABELS:
            raise PydanticCustomError("unknown_class_label", "unknown region class '{label}'", {"label": value})
        return value

    @field_validator("bbox")
    @classmethod
    def _valid_bbox(cls, value: list[float]) -> list[float]:
        if len(value) != 4:
            raise ValueError("bbox must be [x, y, w, h]")
        problem = _bbox_problem(*value)
        if problem:
            raise ValueError(problem)
        return value


class _PageDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    page_number: int = Field(ge=1)
    image_uri: str
    width_px: int = Field(gt=0)
    height_px: int = Field(gt=0)
    regions: list[_RegionDoc]


class _DetectionDoc(BaseModel):
    # unknown top-level keys are ignored
    model_config = ConfigDict(extra="ignore")

    schema_version: str
    manuscript_id: str = Field(min_length=1)
    pages: list[_PageDoc]


def _json_path(loc) -> str:
    path = "$"
    for part in loc:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def load_detections(doc: bytes | str | dict) -> DetectionDocument:
    """
    Validate an interchange document and return it with its manuscript id.

    Raises:
        SchemaVersionUnsupported: schema_version is not "1.0".
        UnknownClassLabel: a region class outside the ten labels.
        ValidationError: any other violation; ``path`` points at the first one.
    """
    if isinstance(doc, (bytes, str)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise ValidationError("$", f"not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise ValidationError("$", "top level must be an object")

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionUnsupported(f"schema_version {version!r} is not supported (expected '{SCHEMA_VERSION}')")

    try:
        parsed = _DetectionDoc.model_validate(doc)
    except PydanticValidationError as e:
        first = e.errors()[0]
        path = _json_path(first["loc"])
        if first["type"] == "unknown_class_label":
            raise UnknownClassLabel(path, first["ctx"]["label"])
        raise ValidationError(path, first["msg"])

    seen_pages = set()
    pages = []
    for i, page in enumerate(parsed.pages):
        if page.page_number in seen_pages:
            raise ValidationError(f"$.pages[{i}].page_number", f"duplicate page number {page.page_number}")
        seen_pages.add(page.page_number)

        seen_ids = set()
        regions = []
        for j, region in enumerate(page.regions):
            if region.id in seen_ids:
                raise ValidationError(f"$.pages[{i}].regions[{j}].id", f"duplicate region id '{region.id}'")
            seen_ids.add(region.id)
            regions.append(Region(
                id=region.id,
                class_label=RegionClass(region.class_),
                bbox=BBox.from_list(region.bbox),
                confidence=float(region.confidence),
            ))

        pages.append(PageDetections(
            manuscript_id=parsed.manuscript_id,
            page_number=page.page_number,
            image_uri=page.image_uri,
            width_px=page.width_px,
            height_px=page.height_px,
            regions=tuple(regions),
        ))

    return DetectionDocument(parsed.manuscript_id, tuple(pages))


def parse_detections(doc: bytes | str | dict) -> list[PageDetections]:
    return list(load_detections(doc).pages)


def serialize_detections(pages, manuscript_id: str | None = None) -> bytes:
    """Interchange JSON for pages of one manuscript (inverse of parse_detections)."""
    pages = list(pages)
    ids = {p.manuscript_id for p in pages}
    if manuscript_id is not None:
        ids.add(manuscript_id)
    if len(ids) != 1:
        raise ManuscriptMismatch(f"pages must belong to exactly one manuscript, got {sorted(ids)}")

    doc = {
        "schema_version": SCHEMA_VERSION,
        "manuscript_id": ids.pop(),
        "pages": [
            {
                "page_number": p.page_number,
                "image_uri": p.image_uri,
                "width_px": p.width_px,
                "height_px": p.height_px,
                "regions": [
                    {"id": r.id, "class": r.class_label.value, "bbox": r.bbox.to_list(), "confidence": r.confidence}
                    for r in p.regions
                ],
            }
            for p in pages
        ],
    }
    return (json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


# ─── Post-processing ────────────────────────────────────────────────

def filter_regions(regions, min_confidence: float) -> list[Region]:
    return [r for r in regions if r.confidence >= min_confidence]


def dedupe_regions(regions, iou_threshold: float) -> list[Region]:
    """
    Greedy per-class suppression.

    Regions are visited by (confidence desc, id asc); one is kept iff its IoU
    with every kept region of the same class is below the threshold. The
    survivors come back in visiting order.
    """
    kept: list[Region] = []
    kept_by_class: dict[RegionClass, list[Region]] = defaultdict(list)
    for region in sorted(regions, key=lambda r: (-r.confidence, r.id)):
        same_class = kept_by_class[region.class_label]
        if all(iou(region.bbox, other.bbox) < iou_threshold for other in same_class):
            same_class.append(region)
            kept.append(region)
    return kept


def assign_sections(regions) -> list[tuple[str, str]]:
    """
    Pair each non-section region with the paragraph or header holding at least
    half of its area. Best overlap fraction wins; ties go to the smaller
    section, then the smaller id. Pairs follow input order.
    """
    regions = list(regions)
    sections = [r for r in regions if r.class_label in SECTION_CLASSES]
    pairs = []
    for member in regions:
        if member.class_label in SECTION_CLASSES:
            continue
        best = None
        for section in sections:
            fraction = intersection_area(member.bbox, section.bbox) / member.bbox.area
            if fraction < MIN_SECTION_OVERLAP:
                continue
            key = (-fraction, section.bbox.area, section.id)
            if best is None or key < best[0]:
                best = (key, section.id)
        if best is not None:
            pairs.append((member.id, best[1]))
    return pairs
