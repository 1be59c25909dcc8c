"""
oai_harvester.py — OAI-PMH 2.0 client.

Builds deterministic requests, parses response envelopes, and harvests whole
ListRecords result sets by following resumption tokens. Network access goes
through a small Transport seam so a directory of canned responses can stand in
for a live repository.
"""

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from email.utils import parsedate_to_datetime
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, Protocol
from urllib.parse import quote, urljoin, urlparse

import requests
from lxml import etree

from pipeline.errors import (
    HttpStatusError,
    IllegalArgumentCombination,
    InvalidHarvestWindow,
    MissingArgument,
    OaiError,
    ProtocolError,
    RedirectError,
    TokenExpired,
    TokenLoop,
    TransportError,
    TransportExhausted,
    VerbMismatch,
    XmlMalformed,
)

logger = logging.getLogger(__name__)

OAI_NS = "http://www.openarchives.org/OAI/2.0/"
NS = {"oai": OAI_NS}

DAY_GRANULARITY = "YYYY-MM-DD"
SECONDS_GRANULARITY = "YYYY-MM-DDThh:mm:ssZ"

RETRYABLE_STATUSES = {429, 500, 502, 503, 504}
_REDIRECT_STATUSES = {301, 302, 303, 307, 308}

_DAY_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_SECONDS_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")

_PARSER = etree.XMLParser(resolve_entities=False, no_network=True, remove_comments=True)


class OaiVerb(str, Enum):
    IDENTIFY = "Identify"
    LIST_METADATA_FORMATS = "ListMetadataFormats"
    LIST_SETS = "ListSets"
    LIST_IDENTIFIERS = "ListIdentifiers"
    LIST_RECORDS = "ListRecords"
    GET_RECORD = "GetRecord"


_LIST_ARGS = frozenset({"metadataPrefix", "from", "until", "set", "resumptionToken"})

ALLOWED_ARGS = {
    OaiVerb.IDENTIFY: frozenset(),
    OaiVerb.LIST_METADATA_FORMATS: frozenset({"identifier"}),
    OaiVerb.LIST_SETS: frozenset({"resumptionToken"}),
    OaiVerb.LIST_IDENTIFIERS: _LIST_ARGS,
    OaiVerb.LIST_RECORDS: _LIST_ARGS,
    OaiVerb.GET_RECORD: frozenset({"identifier", "metadataPrefix"}),
}

# resumptionToken is an exclusive argument
_EXCLUSIVE_WITH_TOKEN = ("from", "until", "set", "metadataPrefix")


# ─── Data types ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class OaiRecord:
    identifier: str
    datestamp: datetime
    set_specs: tuple[str, ...] = ()
    metadata_xml: bytes | None = None
    deleted: bool = False

    def __post_init__(self):
        if not self.identifier:
            raise ValueError("OaiRecord.identifier must be non-empty")
        if self.deleted and self.metadata_xml is not None:
            raise ValueError(f"deleted record {self.identifier} cannot carry metadata")


@dataclass(frozen=True)
class ResumptionToken:
    value: str
    complete_list_size: int | None = None
    cursor: int | None = None
    expiration_date: str | None = None

    @property
    def is_final(self) -> bool:
        """An empty token marks the last page of a list."""
        return not self.value


@dataclass(frozen=True)
class OaiSet:
    spec: str
    name: str


@dataclass(frozen=True)
class MetadataFormat:
    prefix: str
    schema: str
    namespace: str


@dataclass
class OaiResponse:
    verb: OaiVerb
    response_date: str | None = None
    records: list[OaiRecord] = field(default_factory=list)
    sets: list[OaiSet] = field(default_factory=list)
    metadata_formats: list[MetadataFormat] = field(default_factory=list)
    identify: dict | None = None
    resumption_token: ResumptionToken | None = None


@dataclass
class HarvestSummary:
    records_received: int = 0
    records_deleted: int = 0
    pages_fetched: int = 0
    resumption_tokens_seen: list[str] = field(default_factory=list)
    completed: bool = False
    error: str | None = None


# ─── Requests ───────────────────────────────────────────────────────

def build_request(endpoint: str, verb: OaiVerb | str, args: dict | None = None) -> str:
    """
    Build a request URL: verb first, remaining arguments sorted by key,
    values percent-encoded per RFC 3986.

    Raises:
        IllegalArgumentCombination: argument not allowed for the verb, or
            resumptionToken combined with another list argument.
        MissingArgument: a required argument for the verb is absent.
    """
    verb = OaiVerb(verb)
    args = {k: v for k, v in (args or {}).items() if v is not None}

    unknown = sorted(set(args) - ALLOWED_ARGS[verb])
    if unknown:
        raise IllegalArgumentCombination(f"{verb.value} does not accept {', '.join(unknown)}")

    if "resumptionToken" in args:
        clash = [k for k in _EXCLUSIVE_WITH_TOKEN if k in args]
        if clash:
            raise IllegalArgumentCombination(
                f"resumptionToken is exclusive; drop {', '.join(clash)}"
            )

    if verb is OaiVerb.GET_RECORD:
        missing = [k for k in ("identifier", "metadataPrefix") if not args.get(k)]
        if missing:
            raise MissingArgument(f"GetRecord requires {', '.join(missing)}")
    elif verb in (OaiVerb.LIST_RECORDS, OaiVerb.LIST_IDENTIFIERS):
        if "resumptionToken" not in args and not args.get("metadataPrefix"):
            raise MissingArgument(f"{verb.value} requires metadataPrefix")

    parts = [f"verb={verb.value}"]
    parts.extend(f"{k}={quote(str(args[k]), safe='')}" for k in sorted(args))
    separator = "&" if "?" in endpoint else "?"
    return f"{endpoint}{separator}{'&'.join(parts)}"


def canonical_query(url: str) -> str:
    """The query-string part of a request URL (fixture manifest key)."""
    return url.split("?", 1)[1] if "?" in url else ""


def parse_datestamp(text: str | None) -> datetime:
    """Parse a day- or second-granularity UTC datestamp."""
    text = (text or "").strip()
    try:
        if _DAY_RE.match(text):
            return datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
        if _SECONDS_RE.match(text):
            return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    except ValueError:
        pass
    raise XmlMalformed(f"datestamp '{text}' is neither YYYY-MM-DD nor YYYY-MM-DDThh:mm:ssZ")


def _as_datetime(value: date | datetime) -> datetime:
    if isinstance(value, datetime):
        return value if value.tzinfo else value.replace(tzinfo=timezone.utc)
    return datetime(value.year, value.month, value.day, tzinfo=timezone.utc)


def format_datestamp(value: date | datetime, granularity: str = DAY_GRANULARITY) -> str:
    moment = _as_datetime(value).astimezone(timezone.utc)
    if granularity == SECONDS_GRANULARITY:
        return moment.strftime("%Y-%m-%dT%H:%M:%SZ")
    return moment.strftime("%Y-%m-%d")


# ─── Responses ──────────────────────────────────────────────────────

def _int_or_none(value: str | None) -> int | None:
    try:
        return int(value) if value not in (None, "") else None
    except ValueError:
        return None


def _text(element, path: str) -> str:
    return (element.findtext(path, namespaces=NS) or "").strip()


def _parse_record(element, with_metadata: bool = True) -> OaiRecord:
    header = element if etree.QName(element).localname == "header" else element.find("oai:header", NS)
    if header is None:
        raise XmlMalformed("record without <header>")

    identifier = _text(header, "oai:identifier")
    if not identifier:
        raise XmlMalformed("record header without <identifier>")

    deleted = header.get("status") == "deleted"
    set_specs = tuple(
        s.text.strip() for s in header.findall("oai:setSpec", NS) if s.text and s.text.strip()
    )

    metadata_xml = None
    if with_metadata and not deleted:
        metadata = element.find("oai:metadata", NS)
        if metadata is not None:
            metadata_xml = etree.tostring(metadata, with_tail=False)

    return OaiRecord(
        identifier=identifier,
        datestamp=parse_datestamp(header.findtext("oai:datestamp", namespaces=NS)),
        set_specs=set_specs,
        metadata_xml=metadata_xml,
        deleted=deleted,
    )


def _parse_identify(body) -> dict:
    info = {"adminEmail": []}
    for child in body:
        name = etree.QName(child).localname
        if name == "adminEmail":
            info["adminEmail"].append((child.text or "").strip())
        elif name in ("repositoryName", "baseURL", "protocolVersion",
                      "earliestDatestamp", "deletedRecord", "granularity"):
            info[name] = (child.text or "").strip()
    return info


def parse_response(xml: bytes, expected_verb: OaiVerb | str) -> OaiResponse:
    """
    Parse an OAI-PMH response envelope.

    Raises:
        XmlMalformed: not XML, not an OAI-PMH envelope, or a broken record.
        ProtocolError: the envelope carries an <error> element.
        VerbMismatch: the envelope answers a different verb.
    """
    verb = OaiVerb(expected_verb)
    try:
        root = etree.fromstring(xml, parser=_PARSER)
    except etree.XMLSyntaxError as e:
        raise XmlMalformed(f"response is not well-formed XML: {e}")

    if root.tag != f"{{{OAI_NS}}}OAI-PMH":
        raise XmlMalformed(f"unexpected root element {root.tag}")

    error = root.find("oai:error", NS)
    if error is not None:
        raise ProtocolError(error.get("code", ""), (error.text or "").strip())

    verb_names = {v.value for v in OaiVerb}
    bodies = [c for c in root if c.tag.startswith(f"{{{OAI_NS}}}")
              and etree.QName(c).localname in verb_names]
    if not bodies:
        raise XmlMalformed("envelope carries no verb element")
    body = bodies[0]
    answered = etree.QName(body).localname
    if answered != verb.value:
        raise VerbMismatch(f"expected {verb.value}, envelope answers {answered}")

    request = root.find("oai:request", NS)
    if request is not None and request.get("verb") not in (None, verb.value):
        raise VerbMismatch(f"expected {verb.value}, request echo says {request.get('verb')}")

    response = OaiResponse(verb=verb, response_date=_text(root, "oai:responseDate") or None)

    if verb is OaiVerb.IDENTIFY:
        response.identify = _parse_identify(body)
    elif verb is OaiVerb.LIST_METADATA_FORMATS:
        response.metadata_formats = [
            MetadataFormat(_text(f, "oai:metadataPrefix"), _text(f, "oai:schema"),
                           _text(f, "oai:metadataNamespace"))
            for f in body.findall("oai:metadataFormat", NS)
        ]
    elif verb is OaiVerb.LIST_SETS:
        response.sets = [
            OaiSet(_text(s, "oai:setSpec"), _text(s, "oai:setName"))
            for s in body.findall("oai:set", NS)
        ]
    elif verb is OaiVerb.LIST_IDENTIFIERS:
        response.records = [_parse_record(h, with_metadata=False) for h in body.findall("oai:header", NS)]
    else:
        response.records = [_parse_record(r) for r in body.findall("oai:record", NS)]

    token = body.find("oai:resumptionToken", NS)
    if token is not None:
        response.resumption_token = ResumptionToken(
            value=(token.text or "").strip(),
            complete_list_size=_int_or_none(token.get("completeListSize")),
            cursor=_int_or_none(token.get("cursor")),
            expiration_date=token.get("expirationDate"),
        )
    return response


# ─── Transports ─────────────────────────────────────────────────────

@dataclass(frozen=True)
class HttpResponse:
    status: int
    body: bytes = b""
    headers: dict = field(default_factory=dict)  # lower-cased names


class Transport(Protocol):
    def get(self, url: str) -> HttpResponse: ...


class HttpTransport:
    """requests-based transport; follows same-scheme redirects only."""

    def __init__(self, timeout: float = 60.0, max_redirects: int = 5,
                 user_agent: str = "FolioGraph/1.0", session: requests.Session | None = None):
        self.timeout = timeout
        self.max_redirects = max_redirects
        self.session = session or requests.Session()
        self.session.headers.update({
            "User-Agent": user_agent,
            "Accept": "application/xml, text/xml, */*",
        })

    def get(self, url: str) -> HttpResponse:
        current = url
        for _ in range(self.max_redirects + 1):
            try:
                resp = self.session.get(current, timeout=self.timeout, allow_redirects=False)
            except requests.exceptions.RequestException as e:
                raise TransportError(f"{current}: {e}")

            location = resp.headers.get("Location")
            if resp.status_code in _REDIRECT_STATUSES and location:
                target = urljoin(current, location)
                if urlparse(target).scheme != urlparse(current).scheme:
                    raise RedirectError(f"refusing cross-scheme redirect {current} -> {target}")
                logger.debug("redirect %s -> %s", current, target)
                current = target
                continue

            headers = {k.lower(): v for k, v in resp.headers.items()}
            return HttpResponse(resp.status_code, resp.content, headers)

        raise RedirectError(f"more than {self.max_redirects} redirects starting at {url}")


class FixtureTransport:
    """
    Serves canned responses from a directory.

    ``manifest.json`` maps a canonical query string to either a filename, an
    object ``{"status", "headers", "body", "raise"}``, or a list of those served
    in order (the last one repeats).
    """

    MANIFEST = "manifest.json"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        manifest_path = self.directory / self.MANIFEST
        try:
            self.manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise OaiError(f"unusable fixture manifest {manifest_path}: {e}")
        self.requests: list[str] = []
        self._calls: dict[str, int] = {}
        self._lock = threading.Lock()

    def get(self, url: str) -> HttpResponse:
        key = canonical_query(url)
        with self._lock:
            self.requests.append(key)
            entry = self.manifest.get(key)
            if isinstance(entry, list):
                served = self._calls.get(key, 0)
                self._calls[key] = served + 1
                entry = entry[min(served, len(entry) - 1)]

        if entry is None:
            return HttpResponse(404)
        if isinstance(entry, str):
            return HttpResponse(200, (self.directory / entry).read_bytes())
        if entry.get("raise"):
            raise TransportError(entry["raise"])
        body = entry.get("body")
        return HttpResponse(
            status=int(entry.get("status", 200)),
            body=(self.directory / body).read_bytes() if body else b"",
            headers={k.lower(): str(v) for k, v in entry.get("headers", {}).items()},
        )


def open_transport(endpoint: str, timeout: float = 60.0, max_redirects: int = 5,
                   user_agent: str = "FolioGraph/1.0") -> Transport:
    """Fixture directories (plain path or ``fixture:<dir>``) get a FixtureTransport."""
    if endpoint.startswith("fixture:"):
        return FixtureTransport(endpoint[len("fixture:"):])
    if "://" not in endpoint and Path(endpoint).is_dir():
        return FixtureTransport(endpoint)
    return HttpTransport(timeout=timeout, max_redirects=max_redirects, user_agent=user_agent)


# ─── Client ─────────────────────────────────────────────────────────

def _retry_after_seconds(value: str, now: datetime) -> float | None:
    """Retry-After is either delta-seconds or an HTTP-date."""
    value = value.strip()
    if value.isdigit():
        return float(value)
    try:
        when = parsedate_to_datetime(value)
    except (TypeError, ValueError):
        return None
    if when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    return max(0.0, (when - now).total_seconds())


class OaiClient:
    """One repository endpoint plus a retry policy."""

    def __init__(self, endpoint: str, transport: Transport | None = None, *,
                 max_retries: int = 5, backoff_base: float = 1.0, backoff_factor: float = 2.0,
                 retry_after_cap: float = 60.0,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], datetime] | None = None):
        self.endpoint = endpoint
        self.transport = transport or open_transport(endpoint)
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.retry_after_cap = retry_after_cap
        self._sleep = sleep
        self._now = clock or (lambda: datetime.now(timezone.utc))

    @classmethod
    def from_settings(cls, endpoint: str, settings, **kwargs) -> "OaiClient":
        """Build a client from a config.HarvestSettings section."""
        transport = kwargs.pop("transport", None) or open_transport(
            endpoint, settings.timeout, settings.max_redirects, settings.user_agent)
        return cls(
            endpoint, transport,
            max_retries=settings.max_retries,
            backoff_base=settings.backoff_base,
            backoff_factor=settings.backoff_factor,
            retry_after_cap=settings.retry_after_cap,
            **kwargs,
        )

    def _backoff(self, attempt: int) -> float:
        return self.backoff_base * (self.backoff_factor ** attempt)

    def fetch(self, url: str) -> bytes:
        """
        GET a URL, retrying transport failures and retryable statuses.

        Raises:
            TransportExhausted: still failing after max_retries retries.
            HttpStatusError: a non-retryable, non-200 status.
        """
        attempt = 0
        while True:
            try:
                response = self.transport.get(url)
            except TransportError as e:
                reason = str(e)
                delay = self._backoff(attempt)
            else:
                if response.status == 200:
                    return response.body
                if response.status not in RETRYABLE_STATUSES:
                    raise HttpStatusError(response.status, url)
                reason = f"HTTP {response.status}"
                seconds = None
                retry_after = response.headers.get("retry-after")
                if response.status == 503 and retry_after:
                    seconds = _retry_after_seconds(retry_after, self._now())
                if seconds is not None:
                    delay = min(seconds, self.retry_after_cap)
                else:
                    delay = self._backoff(attempt)

            if attempt >= self.max_retries:
                raise TransportExhausted(f"{url}: gave up after {attempt + 1} attempts ({reason})")
            attempt += 1
            logger.warning("%s; retry %d/%d in %.1fs", reason, attempt, self.max_retries, delay)
            self._sleep(delay)

    def request(self, verb: OaiVerb | str, args: dict | None = None) -> OaiResponse:
        url = build_request(self.endpoint, verb, args)
        logger.debug("GET %s", url)
        return parse_response(self.fetch(url), verb)

    def identify(self) -> dict:
        return self.request(OaiVerb.IDENTIFY).identify or {}

    def granularity(self) -> str:
        """Datestamp granularity reported by Identify; day when unavailable."""
        try:
            reported = self.identify().get("granularity")
        except OaiError as e:
            logger.info("Identify unavailable (%s); using day granularity", e)
            return DAY_GRANULARITY
        return SECONDS_GRANULARITY if reported == SECONDS_GRANULARITY else DAY_GRANULARITY

    def list_metadata_formats(self, identifier: str | None = None) -> list[MetadataFormat]:
        args = {"identifier": identifier} if identifier else {}
        return self.request(OaiVerb.LIST_METADATA_FORMATS, args).metadata_formats

    def list_sets(self) -> list[OaiSet]:
        sets, args = [], {}
        while True:
            response = self.request(OaiVerb.LIST_SETS, args)
            sets.extend(response.sets)
            token = response.resumption_token
            if token is None or token.is_final:
                return sets
            args = {"resumptionToken": token.value}

    def get_record(self, identifier: str, metadata_prefix: str) -> OaiRecord:
        response = self.request(OaiVerb.GET_RECORD,
                                {"identifier": identifier, "metadataPrefix": metadata_prefix})
        if not response.records:
            raise XmlMalformed(f"GetRecord for {identifier} returned no record")
        return response.records[0]

    def list_records(self, metadata_prefix: str, set_spec: str | None = None,
                     from_: date | None = None, until: date | None = None) -> Iterator[OaiRecord]:
        """
        Lazily yield every record of a selective harvest, one page at a time.

        Raises:
            TokenExpired: the repository rejected a resumption token mid-list.
            TokenLoop: the repository handed back a token it already issued.
        """
        summary = HarvestSummary()
        yield from _records(self, _list_args(self, metadata_prefix, set_spec, from_, until), summary)
        if summary.error == TokenExpired.code:
            raise TokenExpired(f"resumption token rejected after {summary.pages_fetched} page(s); "
                               f"{summary.records_received} record(s) listed")
        if summary.error == TokenLoop.code:
            raise TokenLoop(f"resumption token repeated after {summary.pages_fetched} page(s)")


# ─── Harvest ────────────────────────────────────────────────────────

def _list_args(client: OaiClient, metadata_prefix: str, set_spec: str | None,
               from_: date | datetime | None, until: date | datetime | None) -> dict:
    if from_ is not None and until is not None and _as_datetime(from_) > _as_datetime(until):
        raise InvalidHarvestWindow(f"from ({from_}) is after until ({until})")

    args = {"metadataPrefix": metadata_prefix}
    if set_spec:
        args["set"] = set_spec
    if from_ is not None or until is not None:
        granularity = client.granularity()
        if from_ is not None:
            args["from"] = format_datestamp(from_, granularity)
        if until is not None:
            args["until"] = format_datestamp(until, granularity)
    return args


def _records(client: OaiClient, args: dict, summary: HarvestSummary) -> Iterator[OaiRecord]:
    """ListRecords pages as a record stream; ends early with ``summary.error`` set."""
    seen_ids: set[str] = set()
    seen_tokens: set[str] = set()

    while True:
        try:
            response = client.request(OaiVerb.LIST_RECORDS, args)
        except ProtocolError as e:
            if e.protocol_code == "noRecordsMatch":
                logger.info("noRecordsMatch from %s", client.endpoint)
                summary.completed = True
                return
            if e.protocol_code == "badResumptionToken" and "resumptionToken" in args:
                logger.warning("resumption token rejected after %d page(s); harvest is partial",
                               summary.pages_fetched)
                summary.error = TokenExpired.code
                return
            raise

        summary.pages_fetched += 1
        for record in response.records:
            if record.identifier in seen_ids:
                logger.debug("skipping repeated identifier %s", record.identifier)
                continue
            seen_ids.add(record.identifier)
            summary.records_received += 1
            if record.deleted:
                summary.records_deleted += 1
            yield record

        token = response.resumption_token
        if token is None or token.is_final:
            summary.completed = True
            return
        if token.value in seen_tokens:
            logger.warning("resumption token %r repeated; stopping", token.value)
            summary.error = TokenLoop.code
            return

        seen_tokens.add(token.value)
        summary.resumption_tokens_seen.append(token.value)
        args = {"resumptionToken": token.value}


def harvest(endpoint: str, metadata_prefix: str, sink: Callable[[OaiRecord], None],
            set_spec: str | None = None, from_: date | datetime | None = None,
            until: date | datetime | None = None, *, client: OaiClient | None = None) -> HarvestSummary:
    """
    Run a ListRecords harvest, following resumption tokens until the list ends.

    Every record reaches ``sink`` exactly once. noRecordsMatch yields an empty,
    completed summary. A badResumptionToken mid-harvest stops with
    completed=False and error E_OAI_TOKEN_EXPIRED rather than restarting,
    since a restart would deliver records twice.
    """
    client = client or OaiClient(endpoint)
    summary = HarvestSummary()
    for record in _records(client, _list_args(client, metadata_prefix, set_spec, from_, until), summary):
        sink(record)
    return summary
