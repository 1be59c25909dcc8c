"""
reconciliation.py — Link creators and subjects to external registries.

Labels are searched through a SearchClient (live HTTP endpoint or a JSON
fixture) and candidates scored by Jaro–Winkler similarity of normalized
names. A top score at or above the link threshold becomes an owl:sameAs
link; a top score in [review, link) yields candidates for human review.
"""

import json
import logging
import threading
import time
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol
from urllib.parse import quote

import jellyfish
import requests

from pipeline.config import ReconciliationEndpoint, Thresholds
from pipeline.errors import ClientUnavailable, InvalidTerm
from pipeline.ontology_kg import IRI, sameas_graph, serialize_ntriples

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconCandidate:
    query: str
    external_iri: str
    external_label: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "external_iri": self.external_iri,
            "external_label": self.external_label,
            "score": round(self.score, 6),
        }


@dataclass
class ReconResult:
    links: list[tuple[str, str]] = field(default_factory=list)
    candidates: list[ReconCandidate] = field(default_factory=list)
    unavailable: list[str] = field(default_factory=list)


def normalize_name(s: str) -> str:
    """Lowercase, compatibility-decompose, drop combining marks, collapse whitespace."""
    decomposed = unicodedata.normalize("NFKD", s.lower())
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return " ".join(stripped.split())


PREFIX_SCALE = 0.1
MAX_PREFIX = 4


def similarity(a: str, b: str) -> float:
    """
    Jaro–Winkler: Jaro plus a boost of 0.1 per shared leading character
    (up to 4). The boost applies at every Jaro score.
    """
    if a == b:
        return 1.0
    jaro = jellyfish.jaro_similarity(a, b)
    prefix = 0
    for ca, cb in zip(a[:MAX_PREFIX], b[:MAX_PREFIX]):
        if ca != cb:
            break
        prefix += 1
    return min(1.0, jaro + prefix * PREFIX_SCALE * (1.0 - jaro))


# ─── Search clients ─────────────────────────────────────────────────

class SearchClient(Protocol):
    def search(self, query: str) -> list[tuple[str, str]]:
        """Candidate (iri, label) pairs for a label."""
        ...


class FixtureSearchClient:
    """
    Offline client backed by a JSON map of query → candidates.

    A candidate is {"iri": ..., "label": ...} or an [iri, label] pair. A null
    entry simulates an outage for that query; unknown queries return nothing.
    """

    def __init__(self, mapping: dict | str | Path):
        if not isinstance(mapping, dict):
            try:
                mapping = json.loads(Path(mapping).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ClientUnavailable(f"unusable reconciliation fixture {mapping}: {e}")
        self.mapping = mapping

    def search(self, query: str) -> list[tuple[str, str]]:
        if query in self.mapping and self.mapping[query] is None:
            raise ClientUnavailable(f"fixture marks '{query}' unavailable")
        results = []
        for item in self.mapping.get(query, []):
            if isinstance(item, dict):
                results.append((item["iri"], item.get("label", "")))
            else:
                iri, label = item
                results.append((iri, label))
        return results


class RateLimiter:
    """Spaces calls at least 1/rate seconds apart; safe across threads."""

    def __init__(self, per_second: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / per_second
        self._clock = clock
        self._sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self):
        with self._lock:
            now = self._clock()
            delay = self._next - now
            if delay > 0:
                self._sleep(delay)
                now += delay
            self._next = now + self.interval


def _dig(data, path: str):
    for key in filter(None, path.split(".")):
        if isinstance(data, dict):
            data = data.get(key, [])
        else:
            return []
    return data


class HttpSearchClient:
    """Live search endpoint (Wikidata wbsearchentities by default)."""

    def __init__(self, endpoint: ReconciliationEndpoint | None = None, per_second: float = 2.0,
                 timeout: float = 30.0, session: requests.Session | None = None,
                 limiter: RateLimiter | None = None):
        self.endpoint = endpoint or ReconciliationEndpoint()
        self.timeout = timeout
        self.session = session or requests.Session()
        self.session.headers.update({"User-Agent": "FolioGraph/1.0 (reconciliation)"})
        self.limiter = limiter or RateLimiter(per_second)

    def search(self, query: str) -> list[tuple[str, str]]:
        url = self.endpoint.url.replace("{query}", quote(query, safe=""))
        self.limiter.wait()
        try:
            resp = self.session.get(url, timeout=self.timeout)
        except requests.exceptions.RequestException as e:
            raise ClientUnavailable(f"search for '{query}' failed: {e}")
        if resp.status_code != 200:
            raise ClientUnavailable(f"search for '{query}' returned HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError as e:
            raise ClientUnavailable(f"search for '{query}' returned non-JSON: {e}")

        items = _dig(payload, self.endpoint.results_path)
        if not isinstance(items, list):
            return []
        results = []
        for item in items[: self.endpoint.max_candidates]:
            if isinstance(item, dict) and item.get(self.endpoint.iri_field):
                results.append((item[self.endpoint.iri_field], str(item.get(self.endpoint.label_field, ""))))
        return results


def client_from_config(config, fixture: str | None = None) -> SearchClient:
    fixture = fixture or config.endpoints.reconciliation_fixture
    if fixture:
        return FixtureSearchClient(fixture)
    return HttpSearchClient(config.endpoints.reconciliation, config.rate_limits.reconciliation_per_second)


# ─── Reconcile ──────────────────────────────────────────────────────

def _score(label: str, raw) -> list[ReconCandidate]:
    query = normalize_name(label)
    seen = set()
    scored = []
    for iri, ext_label in raw:
        if iri in seen:
            continue
        seen.add(iri)
        try:
            IRI(iri)
        except InvalidTerm:
            logger.warning("ignoring candidate with invalid IRI %r for '%s'", iri, label)
            continue
        scored.append(ReconCandidate(label, iri, ext_label, similarity(query, normalize_name(ext_label))))
    return scored


def decide(scored: list[ReconCandidate], thresholds: Thresholds):
    """(link or None, review candidates) for one label's scored candidates."""
    if not scored:
        return None, []
    best = min(scored, key=lambda c: (-c.score, c.external_iri))
    if best.score >= thresholds.link:
        return (best.query, best.external_iri), []
    if best.score >= thresholds.review:
        review = [c for c in scored if c.score >= thresholds.review]
        return None, sorted(review, key=lambda c: (-c.score, c.external_iri))
    return None, []


def reconcile(labels, client: SearchClient, thresholds: Thresholds | None = None,
              max_workers: int = 1) -> ReconResult:
    """
    Reconcile labels against a search client.

    A label whose search raises ClientUnavailable is skipped and listed in
    ``unavailable``; the run continues. Output order follows the first
    occurrence of each label.
    """
    thresholds = thresholds or Thresholds()
    unique = list(dict.fromkeys(labels))

    def search(label):
        try:
            return _score(label, client.search(label))
        except ClientUnavailable as e:
            logger.warning("reconciliation skipped '%s': %s", label, e)
            return None

    if max_workers > 1 and len(unique) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            scored_all = list(pool.map(search, unique))
    else:
        scored_all = [search(label) for label in unique]

    result = ReconResult()
    for label, scored in zip(unique, scored_all):
        if scored is None:
            result.unavailable.append(label)
            continue
        link, review = decide(scored, thresholds)
        if link:
            result.links.append(link)
        result.candidates.extend(review)
    return result


def links_to_ntriples(links, kind: str) -> str:
    """Accepted links as canonical `<entity> owl:sameAs <external>` lines."""
    return serialize_ntriples(sameas_graph(links, kind))
