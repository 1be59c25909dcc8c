"""
metadata_model.py — Normalized Dublin Core descriptive records.

Parses the oai_dc payload of a harvested OaiRecord into a DescriptiveRecord.
Dates stay verbatim ("ca. 1480", "saec. XV" do not survive ISO coercion).
"""

import unicodedata
from dataclasses import dataclass, field, fields, replace

from lxml import etree

from pipeline.errors import NoDcPayload, SchemaError, XmlMalformed
from pipeline.oai_harvester import OaiRecord

OAI_DC_NS = "http://www.openarchives.org/OAI/2.0/oai_dc/"
DC_NS = "http://purl.org/dc/elements/1.1/"

HARVESTED = "harvested"
ENRICHED = "enriched"

# dc element → DescriptiveRecord field
DC_FIELDS = {
    "title": "titles",
    "creator": "creators",
    "date": "dates",
    "subject": "subjects",
    "type": "types",
    "language": "languages",
    "rights": "rights",
    "identifier": "identifiers",
}

EXTRA_ELEMENTS = ("contributor", "coverage", "description", "format", "publisher", "relation", "source")

LIST_FIELDS = tuple(DC_FIELDS.values())

_PARSER = etree.XMLParser(resolve_entities=False, no_network=True, remove_comments=True)


@dataclass(frozen=True)
class DescriptiveRecord:
    source_identifier: str
    titles: tuple[str, ...] = ()
    creators: tuple[str, ...] = ()
    dates: tuple[str, ...] = ()
    subjects: tuple[str, ...] = ()
    types: tuple[str, ...] = ()
    languages: tuple[str, ...] = ()
    rights: tuple[str, ...] = ()
    identifiers: tuple[str, ...] = ()
    field_provenance: dict[str, str] = field(default_factory=dict)
    extras: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.source_identifier:
            raise ValueError("DescriptiveRecord.source_identifier must be non-empty")

    def to_dict(self) -> dict:
        data = {"source_identifier": self.source_identifier}
        for name in LIST_FIELDS:
            data[name] = list(getattr(self, name))
        data["field_provenance"] = dict(sorted(self.field_provenance.items()))
        data["extras"] = {k: list(v) for k, v in sorted(self.extras.items())}
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "DescriptiveRecord":
        try:
            return cls(
                source_identifier=data["source_identifier"],
                field_provenance=dict(data.get("field_provenance", {})),
                extras={k: tuple(v) for k, v in data.get("extras", {}).items()},
                **{name: tuple(data.get(name, ())) for name in LIST_FIELDS},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"not a descriptive record: {e}")


def normalize_text(value: str) -> str:
    """NFC, trimmed, internal whitespace runs collapsed to one space."""
    return " ".join(unicodedata.normalize("NFC", value).split())


def _clean(values) -> tuple[str, ...]:
    cleaned = (normalize_text(v) for v in values)
    return tuple(dict.fromkeys(v for v in cleaned if v))


def normalize(record: DescriptiveRecord) -> DescriptiveRecord:
    lists = {name: _clean(getattr(record, name)) for name in LIST_FIELDS}
    extras = {k: _clean(v) for k, v in record.extras.items()}
    extras = {k: v for k, v in extras.items() if v}
    # provenance only for fields that still hold values
    provenance = {
        k: v for k, v in record.field_provenance.items()
        if k not in lists or lists[k]
    }
    return replace(record, field_provenance=provenance, extras=extras, **lists)


def _find_dc(root):
    if root.tag == f"{{{OAI_DC_NS}}}dc":
        return root
    return root.find(f".//{{{OAI_DC_NS}}}dc")


def parse_dc(record: OaiRecord) -> DescriptiveRecord:
    """
    Map the oai_dc payload of a record to a normalized DescriptiveRecord.

    Repeated elements keep document order. Unmapped DC elements land in
    ``extras``.

    Raises:
        NoDcPayload: deleted record, no metadata, or no oai_dc:dc element.
        XmlMalformed: the metadata bytes are not well-formed XML.
    """
    if record.deleted or record.metadata_xml is None:
        raise NoDcPayload(f"{record.identifier}: record carries no metadata")

    try:
        root = etree.fromstring(record.metadata_xml, parser=_PARSER)
    except etree.XMLSyntaxError as e:
        raise XmlMalformed(f"{record.identifier}: {e}")

    dc = _find_dc(root)
    if dc is None:
        raise NoDcPayload(f"{record.identifier}: no oai_dc:dc element in metadata")

    mapped = {name: [] for name in LIST_FIELDS}
    extras = {}
    for child in dc:
        if not isinstance(child.tag, str):
            continue
        qname = etree.QName(child)
        if qname.namespace != DC_NS:
            continue
        text = "".join(child.itertext())
        if qname.localname in DC_FIELDS:
            mapped[DC_FIELDS[qname.localname]].append(text)
        elif qname.localname in EXTRA_ELEMENTS:
            extras.setdefault(qname.localname, []).append(text)

    parsed = normalize(DescriptiveRecord(
        source_identifier=record.identifier,
        extras={k: tuple(v) for k, v in extras.items()},
        **{name: tuple(values) for name, values in mapped.items()},
    ))
    provenance = {name: HARVESTED for name in LIST_FIELDS if getattr(parsed, name)}
    return replace(parsed, field_provenance=provenance)


def field_names() -> list[str]:
    return [f.name for f in fields(DescriptiveRecord)]
