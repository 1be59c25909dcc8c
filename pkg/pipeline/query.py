"""
query.py — Basic graph pattern queries over a KnowledgeGraph.

Grammar: triple patterns separated by " . ", terms being <IRI>, prefixed
names from the fixed prefix table, "literals" (optionally @lang or ^^type),
`a` for rdf:type, or ?variables.
"""

import re
from dataclasses import dataclass, field
from typing import NamedTuple

from pipeline.errors import InvalidTerm, QuerySyntaxError
from pipeline.ontology_kg import (
    IRI,
    PREFIXES,
    RDF_TYPE,
    BlankNode,
    KnowledgeGraph,
    Literal,
    Term,
)


@dataclass(frozen=True)
class Variable:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


class TriplePattern(NamedTuple):
    subject: Term | Variable
    predicate: Term | Variable
    object: Term | Variable

    def variables(self) -> list[str]:
        return [t.name for t in self if isinstance(t, Variable)]


@dataclass
class BindingSet:
    variables: tuple[str, ...] = ()
    solutions: list[dict[str, Term]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.solutions)

    def __iter__(self):
        return iter(self.solutions)


# ─── Parsing ────────────────────────────────────────────────────────

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<iri><[^<>"{}|^`\\\s]*>)
  | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<literal>"(?:[^"\\\n\r]|\\.)*")
  | (?P<bnode>_:[A-Za-z0-9_](?:[A-Za-z0-9_\-]|\.(?=[A-Za-z0-9_\-]))*)
  | (?P<pname>[A-Za-z][A-Za-z0-9_\-]*:(?:[A-Za-z0-9_\-]|\.(?=[A-Za-z0-9_\-]))*)
  | (?P<a>a(?![A-Za-z0-9_:\-]))
  | (?P<dot>\.)
""", re.VERBOSE)

_LANG_RE = re.compile(r"@[A-Za-z]+(?:-[A-Za-z0-9]+)*")
_LITERAL_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", '"': '"', "\\": "\\", "'": "'", "b": "\b", "f": "\f"}


def _expand(pname: str, position: int) -> IRI:
    prefix, _, local = pname.partition(":")
    if prefix not in PREFIXES:
        raise QuerySyntaxError(position, f"unknown prefix '{prefix}:'")
    try:
        return IRI(PREFIXES[prefix] + local)
    except InvalidTerm as e:
        raise QuerySyntaxError(position, str(e))


def _unescape(body: str, position: int) -> str:
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        kind = body[i + 1]
        if kind in _LITERAL_ESCAPES:
            out.append(_LITERAL_ESCAPES[kind])
            i += 2
        elif kind in "uU":
            width = 4 if kind == "u" else 8
            digits = body[i + 2:i + 2 + width]
            try:
                out.append(chr(int(digits, 16)))
            except ValueError:
                raise QuerySyntaxError(position + i, "bad unicode escape in literal")
            if len(digits) != width:
                raise QuerySyntaxError(position + i, "bad unicode escape in literal")
            i += 2 + width
        else:
            raise QuerySyntaxError(position + i, f"bad escape \\{kind} in literal")
    return "".join(out)


def _tokenize(text: str) -> list[tuple[str, object, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise QuerySyntaxError(pos, f"unexpected character {text[pos]!r}")
        kind, start = m.lastgroup, pos
        pos = m.end()
        lexeme = m.group(0)

        if kind == "ws":
            continue
        if kind == "iri":
            try:
                tokens.append(("term", IRI(lexeme[1:-1]), start))
            except InvalidTerm as e:
                raise QuerySyntaxError(start, str(e))
        elif kind == "var":
            tokens.append(("term", Variable(lexeme[1:]), start))
        elif kind == "bnode":
            tokens.append(("term", BlankNode(lexeme[2:]), start))
        elif kind == "pname":
            tokens.append(("term", _expand(lexeme, start), start))
        elif kind == "a":
            tokens.append(("term", RDF_TYPE, start))
        elif kind == "dot":
            tokens.append(("dot", None, start))
        else:
            lexical = _unescape(lexeme[1:-1], start + 1)
            lang = _LANG_RE.match(text, pos)
            if lang:
                pos = lang.end()
                tokens.append(("literal", Literal(lexical, language=lang.group(0)[1:]), start))
                continue
            if text.startswith("^^", pos):
                dt = _TOKEN_RE.match(text, pos + 2)
                if not dt or dt.lastgroup not in ("iri", "pname"):
                    raise QuerySyntaxError(pos, "expected a datatype IRI after '^^'")
                dt_text = dt.group(0)
                try:
                    datatype = IRI(dt_text[1:-1]) if dt.lastgroup == "iri" else _expand(dt_text, pos + 2)
                    literal = Literal(lexical, datatype)
                except InvalidTerm as e:
                    raise QuerySyntaxError(pos, str(e))
                pos = dt.end()
                tokens.append(("literal", literal, start))
                continue
            tokens.append(("literal", Literal(lexical), start))
    return tokens


def parse_query(text: str) -> list[TriplePattern]:
    """
    Parse a BGP.

    Raises:
        QuerySyntaxError: with the character position of the problem.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise QuerySyntaxError(0, "empty query")

    patterns = []
    i = 0
    while i < len(tokens):
        terms = []
        while i < len(tokens) and tokens[i][0] != "dot":
            terms.append(tokens[i])
            i += 1
        end_pos = tokens[i][2] if i < len(tokens) else len(text)
        if len(terms) != 3:
            where = terms[3][2] if len(terms) > 3 else end_pos
            raise QuerySyntaxError(where, f"a pattern needs 3 terms, got {len(terms)}")

        (s_kind, s, s_pos), (p_kind, p, p_pos), (_, o, _) = terms
        if s_kind == "literal":
            raise QuerySyntaxError(s_pos, "a literal cannot be a subject")
        if p_kind == "literal" or isinstance(p, BlankNode):
            raise QuerySyntaxError(p_pos, "predicate must be an IRI or a variable")
        patterns.append(TriplePattern(s, p, o))

        if i < len(tokens):
            i += 1  # the dot
            if i == len(tokens):
                break  # trailing " ."
            if tokens[i][0] == "dot":
                raise QuerySyntaxError(tokens[i][2], "empty pattern between dots")
    return patterns


# ─── Evaluation ─────────────────────────────────────────────────────

def _constant(term):
    return None if isinstance(term, Variable) else term


def plan(patterns: list[TriplePattern], graph: KnowledgeGraph) -> list[TriplePattern]:
    """
    Join order: patterns sorted by matching-triple count; start with the most
    selective, then repeatedly take the first remaining pattern that shares a
    variable with those already placed (or the first remaining one).
    """
    remaining = sorted(
        enumerate(patterns),
        key=lambda ip: (graph.count(*(_constant(t) for t in ip[1])), ip[0]),
    )
    remaining = [p for _, p in remaining]
    if not remaining:
        return []

    ordered = [remaining.pop(0)]
    bound = set(ordered[0].variables())
    while remaining:
        index = next((k for k, p in enumerate(remaining) if bound & set(p.variables())), 0)
        chosen = remaining.pop(index)
        ordered.append(chosen)
        bound |= set(chosen.variables())
    return ordered


def _bind(pattern: TriplePattern, triple, binding: dict) -> dict | None:
    new = dict(binding)
    for slot, value in zip(pattern, triple):
        if isinstance(slot, Variable):
            if slot.name in new:
                if new[slot.name] != value:
                    return None
            else:
                new[slot.name] = value
    return new


def _solutions(order, graph, index: int, binding: dict):
    if index == len(order):
        yield binding
        return
    pattern = order[index]
    lookup = [
        binding.get(t.name) if isinstance(t, Variable) else t
        for t in pattern
    ]
    for triple in graph.triples(*lookup):
        extended = _bind(pattern, triple, binding)
        if extended is not None:
            yield from _solutions(order, graph, index + 1, extended)


def query_variables(patterns) -> tuple[str, ...]:
    """Variables in order of first appearance."""
    names = []
    for pattern in patterns:
        for name in pattern.variables():
            if name not in names:
                names.append(name)
    return tuple(names)


def evaluate(patterns: list[TriplePattern], graph: KnowledgeGraph) -> BindingSet:
    """
    Index-backed nested-loop join. Solutions are duplicate-free and sorted
    by the N-Triples form of the selected variables' terms.
    """
    variables = query_variables(patterns)
    order = plan(patterns, graph)

    unique = {}
    for binding in _solutions(order, graph, 0, {}):
        row = tuple(binding[v] for v in variables)
        unique.setdefault(row, binding)

    rows = sorted(unique, key=lambda row: tuple(term.n3() for term in row))
    return BindingSet(variables, [dict(zip(variables, row)) for row in rows])


def format_tsv(bindings: BindingSet) -> str:
    lines = ["\t".join(f"?{v}" for v in bindings.variables)]
    for solution in bindings.solutions:
        lines.append("\t".join(solution[v].n3() for v in bindings.variables))
    return "\n".join(lines) + "\n"


def run_query(text: str, graph: KnowledgeGraph) -> BindingSet:
    return evaluate(parse_query(text), graph)
