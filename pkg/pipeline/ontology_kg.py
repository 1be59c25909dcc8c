"""
ontology_kg.py — RDF terms, an indexed triple set, and the manuscript graph.

Three ontology modules shape what build_graph emits for a manuscript:
provenance (descriptive dcterms fields, creators, subjects), physical
(page count, coverage, condition) and visual (pages, typed regions,
coordinates, section membership). Serialization is canonical: N-Triples
lines sorted as UTF-8 bytes, Turtle with a fixed prefix block.
"""

import math
import re
from collections import defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Iterator, NamedTuple
from urllib.parse import quote

from pipeline.annotations import RegionClass
from pipeline.errors import EmptyPart, GraphError, InvalidTerm, NTriplesParseError

RESOURCE_BASE = "https://example.org/jdl/resource/"
ONTOLOGY_BASE = "https://example.org/jdl/ontology#"

RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"
XSD_NS = "http://www.w3.org/2001/XMLSchema#"
DCTERMS_NS = "http://purl.org/dc/terms/"
OWL_NS = "http://www.w3.org/2002/07/owl#"

# Turtle prefix block and query prefix table, in output order
PREFIXES = {
    "jdlo": ONTOLOGY_BASE,
    "jdlr": RESOURCE_BASE,
    "dcterms": DCTERMS_NS,
    "rdf": RDF_NS,
    "xsd": XSD_NS,
    "owl": OWL_NS,
    "rdfs": RDFS_NS,
}

ONTOLOGY_PATH = Path(__file__).parent.parent / "ontology" / "jdlo.ttl"

_IRI_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*:[^\x00-\x20<>\"{}|^`\\]*$")
_BNODE_RE = re.compile(r"^[A-Za-z0-9_](?:[A-Za-z0-9_.\-]*[A-Za-z0-9_\-])?$")
_LANG_RE = re.compile(r"^[A-Za-z]+(?:-[A-Za-z0-9]+)*$")
_LOCAL_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")


# ─── Terms ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class IRI:
    value: str

    def __post_init__(self):
        if not isinstance(self.value, str) or not _IRI_RE.match(self.value):
            raise InvalidTerm(f"not an absolute IRI: {self.value!r}")

    def n3(self) -> str:
        return f"<{self.value}>"


@dataclass(frozen=True)
class BlankNode:
    label: str

    def __post_init__(self):
        if not isinstance(self.label, str) or not _BNODE_RE.match(self.label):
            raise InvalidTerm(f"not a blank node label: {self.label!r}")

    def n3(self) -> str:
        return f"_:{self.label}"


_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_ESCAPE_RE = re.compile(r'[\\"\n\r\t]')


def escape_literal(text: str) -> str:
    return _ESCAPE_RE.sub(lambda m: _ESCAPES[m.group(0)], text)


@dataclass(frozen=True)
class Literal:
    """Plain literals get xsd:string; a language tag implies rdf:langString."""

    lexical: str
    datatype: IRI | None = None
    language: str | None = None

    def __post_init__(self):
        if not isinstance(self.lexical, str):
            raise InvalidTerm(f"literal lexical form must be a string: {self.lexical!r}")
        if self.language is not None:
            if not _LANG_RE.match(self.language):
                raise InvalidTerm(f"bad language tag {self.language!r}")
            if self.datatype not in (None, RDF_LANGSTRING):
                raise InvalidTerm("a literal has a datatype or a language tag, not both")
            object.__setattr__(self, "datatype", RDF_LANGSTRING)
        elif self.datatype is None:
            object.__setattr__(self, "datatype", XSD_STRING)
        elif self.datatype == RDF_LANGSTRING:
            raise InvalidTerm("rdf:langString literal without a language tag")

    def n3(self) -> str:
        quoted = f'"{escape_literal(self.lexical)}"'
        if self.language is not None:
            return f"{quoted}@{self.language}"
        if self.datatype == XSD_STRING:
            return quoted
        return f"{quoted}^^{self.datatype.n3()}"


Term = IRI | BlankNode | Literal

RDF_TYPE = IRI(RDF_NS + "type")
RDF_LANGSTRING = IRI(RDF_NS + "langString")
RDFS_LABEL = IRI(RDFS_NS + "label")
XSD_STRING = IRI(XSD_NS + "string")
XSD_INTEGER = IRI(XSD_NS + "integer")
XSD_DECIMAL = IRI(XSD_NS + "decimal")
XSD_ANYURI = IRI(XSD_NS + "anyURI")
OWL_SAME_AS = IRI(OWL_NS + "sameAs")


def jdlo(name: str) -> IRI:
    return IRI(ONTOLOGY_BASE + name)


def dcterms(name: str) -> IRI:
    return IRI(DCTERMS_NS + name)


_SIX_DP = Decimal("0.000001")


def decimal_literal(value: float) -> Literal:
    """xsd:decimal with a fixed 6-dp lexical form."""
    if not math.isfinite(value):
        raise InvalidTerm(f"xsd:decimal has no lexical form for {value!r}")
    quantized = Decimal(repr(float(value))).quantize(_SIX_DP, rounding=ROUND_HALF_EVEN)
    if quantized.is_zero():
        quantized = abs(quantized)
    return Literal(f"{quantized:f}", XSD_DECIMAL)


def integer_literal(value: int) -> Literal:
    return Literal(str(int(value)), XSD_INTEGER)


class Triple(NamedTuple):
    subject: IRI | BlankNode
    predicate: IRI
    object: Term


# ─── Graph ──────────────────────────────────────────────────────────

def _nested():
    return defaultdict(set)


class KnowledgeGraph:
    """A set of triples with SPO, POS and OSP indexes."""

    def __init__(self, triples=()):
        self._triples: set[Triple] = set()
        self._spo = defaultdict(_nested)
        self._pos = defaultdict(_nested)
        self._osp = defaultdict(_nested)
        self._frozen = False
        for triple in triples:
            self.add(*triple)

    def add(self, subject, predicate, obj) -> bool:
        """Insert one triple; returns False when it was already present."""
        if self._frozen:
            raise GraphError("graph is frozen")
        if not isinstance(subject, (IRI, BlankNode)):
            raise InvalidTerm(f"subject must be an IRI or blank node: {subject!r}")
        if not isinstance(predicate, IRI):
            raise InvalidTerm(f"predicate must be an IRI: {predicate!r}")
        if not isinstance(obj, (IRI, BlankNode, Literal)):
            raise InvalidTerm(f"object must be an RDF term: {obj!r}")

        triple = Triple(subject, predicate, obj)
        if triple in self._triples:
            return False
        self._triples.add(triple)
        self._spo[subject][predicate].add(obj)
        self._pos[predicate][obj].add(subject)
        self._osp[obj][subject].add(predicate)
        return True

    def merge(self, other: "KnowledgeGraph") -> int:
        return sum(self.add(*t) for t in other)

    def freeze(self) -> "KnowledgeGraph":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def copy(self) -> "KnowledgeGraph":
        return KnowledgeGraph(self._triples)

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self._triples

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._triples == other._triples

    def triples(self, subject=None, predicate=None, obj=None) -> Iterator[Triple]:
        """Triples matching a pattern; None is a wildcard."""
        if subject is not None:
            by_pred = self._spo.get(subject, {})
            if predicate is not None:
                objects = by_pred.get(predicate, ())
                if obj is not None:
                    if obj in objects:
                        yield Triple(subject, predicate, obj)
                    return
                for o in list(objects):
                    yield Triple(subject, predicate, o)
                return
            if obj is not None:
                for p in list(self._osp.get(obj, {}).get(subject, ())):
                    yield Triple(subject, p, obj)
                return
            for p, objects in list(by_pred.items()):
                for o in list(objects):
                    yield Triple(subject, p, o)
            return

        if predicate is not None:
            by_obj = self._pos.get(predicate, {})
            if obj is not None:
                for s in list(by_obj.get(obj, ())):
                    yield Triple(s, predicate, obj)
                return
            for o, subjects in list(by_obj.items()):
                for s in list(subjects):
                    yield Triple(s, predicate, o)
            return

        if obj is not None:
            for s, preds in list(self._osp.get(obj, {}).items()):
                for p in list(preds):
                    yield Triple(s, p, obj)
            return

        yield from list(self._triples)

    def count(self, subject=None, predicate=None, obj=None) -> int:
        """Number of matching triples, answered from the indexes."""
        if subject is not None and predicate is not None and obj is not None:
            return int(Triple(subject, predicate, obj) in self._triples)
        if subject is not None and predicate is not None:
            return len(self._spo.get(subject, {}).get(predicate, ()))
        if predicate is not None and obj is not None:
            return len(self._pos.get(predicate, {}).get(obj, ()))
        if subject is not None and obj is not None:
            return len(self._osp.get(obj, {}).get(subject, ()))
        if subject is not None:
            return sum(len(v) for v in self._spo.get(subject, {}).values())
        if predicate is not None:
            return sum(len(v) for v in self._pos.get(predicate, {}).values())
        if obj is not None:
            return sum(len(v) for v in self._osp.get(obj, {}).values())
        return len(self._triples)


# ─── IRIs ───────────────────────────────────────────────────────────

_ENTITY_TEMPLATES = {
    "manuscript": (1, "ms/{0}"),
    "page": (2, "ms/{0}/page/{1}"),
    "region": (3, "ms/{0}/page/{1}/region/{2}"),
    "creator": (1, "creator/{0}"),
    "subject": (1, "subject/{0}"),
}


def mint_iri(kind: str, *parts) -> IRI:
    """
    Mint an entity IRI (resource base) or a vocabulary IRI (ontology base).

    Each part is percent-encoded; RFC 3986 unreserved characters are kept.

    Raises:
        EmptyPart: no parts, or an empty part.
    """
    if not parts or any(p is None or str(p) == "" for p in parts):
        raise EmptyPart(f"mint_iri({kind!r}) needs non-empty parts, got {parts!r}")
    encoded = [quote(str(p), safe="") for p in parts]

    if kind in ("class", "property"):
        if len(parts) != 1:
            raise GraphError(f"{kind} IRIs take one part")
        return IRI(ONTOLOGY_BASE + encoded[0])

    if kind not in _ENTITY_TEMPLATES:
        raise GraphError(f"unknown IRI kind {kind!r}")
    arity, template = _ENTITY_TEMPLATES[kind]
    if len(parts) != arity:
        raise GraphError(f"{kind} IRIs take {arity} part(s), got {len(parts)}")
    return IRI(RESOURCE_BASE + template.format(*encoded))


def class_iri(label: RegionClass) -> IRI:
    return mint_iri("class", label.value.capitalize())


# ─── Graph construction ─────────────────────────────────────────────

_DCTERMS_FIELDS = (
    ("titles", "title"),
    ("creators", "creator"),
    ("dates", "date"),
    ("subjects", "subject"),
    ("types", "type"),
    ("languages", "language"),
    ("rights", "rights"),
    ("identifiers", "identifier"),
)


def _split_scoped(scoped: str) -> tuple[int, str]:
    """'p3/s1' → (3, 's1')."""
    head, _, rid = scoped.partition("/")
    if not head.startswith("p") or not head[1:].isdigit() or not rid:
        raise GraphError(f"malformed page-scoped region id {scoped!r}")
    return int(head[1:]), rid


def build_graph(enriched, pages) -> KnowledgeGraph:
    """Graph for one enriched manuscript and its (cleaned) detection pages."""
    base = enriched.base
    ms_id = base.source_identifier
    ms = mint_iri("manuscript", ms_id)
    g = KnowledgeGraph()

    # provenance
    g.add(ms, RDF_TYPE, jdlo("Manuscript"))
    for field_name, term in _DCTERMS_FIELDS:
        for value in getattr(base, field_name):
            g.add(ms, dcterms(term), Literal(value))
    for kind, values, link, cls in (
        ("creator", base.creators, "hasCreator", "Creator"),
        ("subject", base.subjects, "hasSubject", "Topic"),
    ):
        for value in values:
            entity = mint_iri(kind, value)
            g.add(ms, jdlo(link), entity)
            g.add(entity, RDF_TYPE, jdlo(cls))
            g.add(entity, RDFS_LABEL, Literal(value))

    # physical
    g.add(ms, jdlo("pageCount"), integer_literal(enriched.pages_analyzed))
    if enriched.pages_analyzed:
        g.add(ms, jdlo("stainCoverage"), decimal_literal(enriched.stain_coverage))
        g.add(ms, jdlo("textCoverage"), decimal_literal(enriched.text_coverage))
        for marker in enriched.provenance_markers:
            g.add(ms, jdlo("provenanceMarker"), Literal(marker))
    for flag in sorted(enriched.condition_flags):
        g.add(ms, jdlo("conditionFlag"), Literal(flag))

    # visual
    for page in sorted(pages, key=lambda p: p.page_number):
        page_iri = mint_iri("page", ms_id, page.page_number)
        g.add(ms, jdlo("hasPage"), page_iri)
        g.add(page_iri, RDF_TYPE, jdlo("Page"))
        g.add(page_iri, jdlo("pageNumber"), integer_literal(page.page_number))
        g.add(page_iri, jdlo("widthPx"), integer_literal(page.width_px))
        g.add(page_iri, jdlo("heightPx"), integer_literal(page.height_px))
        if page.image_uri:
            g.add(page_iri, jdlo("imageUri"), Literal(page.image_uri, XSD_ANYURI))

        for region in page.regions:
            r = mint_iri("region", ms_id, page.page_number, region.id)
            g.add(page_iri, jdlo("hasRegion"), r)
            g.add(r, RDF_TYPE, class_iri(region.class_label))
            g.add(r, jdlo("x"), decimal_literal(region.bbox.x))
            g.add(r, jdlo("y"), decimal_literal(region.bbox.y))
            g.add(r, jdlo("width"), decimal_literal(region.bbox.w))
            g.add(r, jdlo("height"), decimal_literal(region.bbox.h))
            g.add(r, jdlo("confidence"), decimal_literal(region.confidence))

    for member, section in enriched.section_assignments:
        page_no, member_id = _split_scoped(member)
        section_page, section_id = _split_scoped(section)
        g.add(
            mint_iri("region", ms_id, page_no, member_id),
            jdlo("belongsToSection"),
            mint_iri("region", ms_id, section_page, section_id),
        )
    return g


# ─── N-Triples ──────────────────────────────────────────────────────

def serialize_ntriples(graph: KnowledgeGraph) -> str:
    """Canonical N-Triples: one line per triple, lines sorted as UTF-8 bytes."""
    lines = sorted(
        f"{t.subject.n3()} {t.predicate.n3()} {t.object.n3()} .\n".encode("utf-8")
        for t in graph
    )
    return b"".join(lines).decode("utf-8")


_UNESCAPES = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}


class _LineReader:
    def __init__(self, line: str, lineno: int):
        self.line = line
        self.lineno = lineno
        self.pos = 0

    def fail(self, message: str):
        raise NTriplesParseError(self.lineno, f"column {self.pos + 1}: {message}")

    def skip_ws(self):
        while self.pos < len(self.line) and self.line[self.pos] in " \t":
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.line) or self.line[self.pos] == "#"

    def expect(self, char: str):
        self.skip_ws()
        if not self.line.startswith(char, self.pos):
            self.fail(f"expected {char!r}")
        self.pos += len(char)

    def _uchar(self, width: int) -> str:
        digits = self.line[self.pos:self.pos + width]
        if len(digits) != width or not all(c in "0123456789abcdefABCDEF" for c in digits):
            self.fail("bad unicode escape")
        self.pos += width
        return chr(int(digits, 16))

    def iri(self) -> IRI:
        self.expect("<")
        out = []
        while True:
            if self.pos >= len(self.line):
                self.fail("unterminated IRI")
            c = self.line[self.pos]
            self.pos += 1
            if c == ">":
                break
            if c == "\\":
                kind = self.line[self.pos:self.pos + 1]
                self.pos += 1
                if kind == "u":
                    out.append(self._uchar(4))
                elif kind == "U":
                    out.append(self._uchar(8))
                else:
                    self.fail("bad escape in IRI")
            else:
                out.append(c)
        try:
            return IRI("".join(out))
        except InvalidTerm as e:
            self.fail(str(e))

    def blank(self) -> BlankNode:
        self.expect("_:")
        start = self.pos
        while self.pos < len(self.line) and self.line[self.pos] not in " \t<\"":
            self.pos += 1
        label = self.line[start:self.pos]
        if label.endswith("."):
            label = label[:-1]
            self.pos -= 1
        try:
            return BlankNode(label)
        except InvalidTerm as e:
            self.fail(str(e))

    def literal(self) -> Literal:
        self.expect('"')
        out = []
        while True:
            if self.pos >= len(self.line):
                self.fail("unterminated literal")
            c = self.line[self.pos]
            self.pos += 1
            if c == '"':
                break
            if c == "\\":
                kind = self.line[self.pos:self.pos + 1]
                self.pos += 1
                if kind in _UNESCAPES:
                    out.append(_UNESCAPES[kind])
                elif kind == "u":
                    out.append(self._uchar(4))
                elif kind == "U":
                    out.append(self._uchar(8))
                else:
                    self.fail(f"bad escape \\{kind}")
            else:
                out.append(c)
        lexical = "".join(out)

        if self.line.startswith("@", self.pos):
            self.pos += 1
            start = self.pos
            while self.pos < len(self.line) and (self.line[self.pos].isalnum() or self.line[self.pos] == "-"):
                self.pos += 1
            language = self.line[start:self.pos]
            try:
                return Literal(lexical, language=language)
            except InvalidTerm as e:
                self.fail(str(e))
        if self.line.startswith("^^", self.pos):
            self.pos += 2
            datatype = self.iri()
            try:
                return Literal(lexical, datatype)
            except InvalidTerm as e:
                self.fail(str(e))
        return Literal(lexical)

    def term(self, allowed: str):
        self.skip_ws()
        head = self.line[self.pos:self.pos + 2]
        if head.startswith("<"):
            return self.iri()
        if head == "_:" and "b" in allowed:
            return self.blank()
        if head.startswith('"') and "l" in allowed:
            return self.literal()
        self.fail("unexpected term")


def parse_ntriples(text: str) -> KnowledgeGraph:
    """
    Parse N-Triples text.

    Raises:
        NTriplesParseError: carries the 1-based line number.
    """
    graph = KnowledgeGraph()
    for lineno, raw in enumerate(text.split("\n"), start=1):
        reader = _LineReader(raw.rstrip("\r"), lineno)
        if reader.at_end():
            continue
        subject = reader.term("b")
        predicate = reader.term("")
        obj = reader.term("bl")
        reader.expect(".")
        if not reader.at_end():
            reader.fail("trailing content after '.'")
        graph.add(subject, predicate, obj)
    return graph


# ─── Turtle ─────────────────────────────────────────────────────────

def _turtle_iri(iri: IRI) -> str:
    for prefix, namespace in PREFIXES.items():
        if iri.value.startswith(namespace):
            local = iri.value[len(namespace):]
            if _LOCAL_NAME_RE.match(local):
                return f"{prefix}:{local}"
    return iri.n3()


def _turtle_term(term) -> str:
    if isinstance(term, IRI):
        return _turtle_iri(term)
    if isinstance(term, Literal) and term.language is None and term.datatype != XSD_STRING:
        return f'"{escape_literal(term.lexical)}"^^{_turtle_iri(term.datatype)}'
    return term.n3()


def prefix_block() -> str:
    return "".join(f"@prefix {p}: <{ns}> .\n" for p, ns in PREFIXES.items())


def serialize_turtle(graph: KnowledgeGraph) -> str:
    """
    Turtle with the fixed prefix block. Subjects ordered by their N-Triples
    form, `a` first, then predicates by IRI; objects comma-separated.
    """
    out = [prefix_block()]
    subjects = sorted({t.subject for t in graph}, key=lambda s: s.n3().encode("utf-8"))
    for subject in subjects:
        by_predicate = defaultdict(list)
        for t in graph.triples(subject):
            by_predicate[t.predicate].append(t.object)
        predicates = sorted(by_predicate, key=lambda p: (p != RDF_TYPE, p.value))

        parts = []
        for predicate in predicates:
            objects = sorted(by_predicate[predicate], key=lambda o: o.n3().encode("utf-8"))
            verb = "a" if predicate == RDF_TYPE else _turtle_iri(predicate)
            parts.append(f"{verb} {', '.join(_turtle_term(o) for o in objects)}")
        out.append(f"\n{_turtle_term(subject)} " + " ;\n    ".join(parts) + " .\n")
    return "".join(out)


def sameas_graph(links, kind: str) -> KnowledgeGraph:
    """owl:sameAs triples from (label, external IRI) pairs for creators or subjects."""
    g = KnowledgeGraph()
    for label, external in links:
        g.add(mint_iri(kind, label), OWL_SAME_AS, external if isinstance(external, IRI) else IRI(external))
    return g
