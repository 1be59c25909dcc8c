"""
errors.py — Exception hierarchy for every pipeline stage.

Each error carries a stable, prefix-tagged ``code`` (E_OAI_*, E_SCHEMA_*,
E_KG_*, E_RECON_*, E_QUERY_*, E_STORE_*) that the router prints on stderr.
"""

import re


class PipelineError(Exception):
    """Base class for all expected pipeline failures."""

    code = "E_PIPELINE"
    exit_code = 1

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message or self.code


# ─── OAI-PMH ────────────────────────────────────────────────────────

class OaiError(PipelineError):
    code = "E_OAI_ERROR"


class IllegalArgumentCombination(OaiError):
    code = "E_OAI_ILLEGAL_ARGUMENTS"


class MissingArgument(OaiError):
    code = "E_OAI_MISSING_ARGUMENT"


class InvalidHarvestWindow(OaiError):
    code = "E_OAI_BAD_WINDOW"


class XmlMalformed(OaiError):
    code = "E_OAI_XML_MALFORMED"


class VerbMismatch(OaiError):
    code = "E_OAI_VERB_MISMATCH"


class TransportError(OaiError):
    """A single failed HTTP exchange (connection reset, timeout, ...)."""

    code = "E_OAI_TRANSPORT"


class TransportExhausted(OaiError):
    code = "E_OAI_TRANSPORT_EXHAUSTED"


class HttpStatusError(OaiError):
    code = "E_OAI_HTTP_STATUS"

    def __init__(self, status: int, url: str):
        super().__init__(f"HTTP {status} for {url}")
        self.status = status
        self.url = url


class RedirectError(OaiError):
    code = "E_OAI_REDIRECT"


class TokenExpired(OaiError):
    code = "E_OAI_TOKEN_EXPIRED"


class TokenLoop(OaiError):
    code = "E_OAI_TOKEN_LOOP"


PROTOCOL_ERROR_CODES = (
    "badArgument",
    "badResumptionToken",
    "badVerb",
    "cannotDisseminateFormat",
    "idDoesNotExist",
    "noRecordsMatch",
    "noMetadataFormats",
    "noSetHierarchy",
)


class ProtocolError(OaiError):
    """An <error code="..."> element returned by the repository."""

    def __init__(self, protocol_code: str, message: str = ""):
        super().__init__(message or protocol_code)
        self.protocol_code = protocol_code
        snake = re.sub(r"(?<!^)(?=[A-Z])", "_", protocol_code).upper()
        self.code = f"E_OAI_{snake}"


# ─── Schema / records / detections ──────────────────────────────────

class SchemaError(PipelineError):
    code = "E_SCHEMA_ERROR"


class NoDcPayload(SchemaError):
    code = "E_SCHEMA_NO_DC_PAYLOAD"


class SchemaVersionUnsupported(SchemaError):
    code = "E_SCHEMA_VERSION_UNSUPPORTED"


class ValidationError(SchemaError):
    """Detection document failed validation; ``path`` is a JSON path."""

    code = "E_SCHEMA_INVALID"

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownClassLabel(ValidationError):
    code = "E_SCHEMA_UNKNOWN_CLASS"

    def __init__(self, path: str, label: str):
        super().__init__(path, f"unknown region class '{label}'")
        self.label = label


class ManuscriptMismatch(SchemaError):
    code = "E_SCHEMA_MANUSCRIPT_MISMATCH"


class MissingStageInput(SchemaError):
    """A stage ran before the stage that produces its input."""

    _NAMES = {
        "raw": "RAW",
        "record": "RECORDS",
        "detections": "DETECTIONS",
        "enriched": "ENRICHED",
        "graph": "GRAPH",
        "links": "LINKS",
    }

    def __init__(self, stage: str, hint: str = ""):
        name = self._NAMES.get(stage, stage.upper())
        super().__init__(hint or f"no {name.lower()} entries in store")
        self.stage = stage
        self.code = f"E_SCHEMA_MISSING_{name}"


# ─── Knowledge graph ────────────────────────────────────────────────

class GraphError(PipelineError):
    code = "E_KG_ERROR"


class EmptyPart(GraphError):
    code = "E_KG_EMPTY_PART"


class InvalidTerm(GraphError):
    code = "E_KG_INVALID_TERM"


class NTriplesParseError(GraphError):
    code = "E_KG_PARSE"

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ─── Reconciliation ─────────────────────────────────────────────────

class ClientUnavailable(PipelineError):
    code = "E_RECON_CLIENT_UNAVAILABLE"


# ─── Query ──────────────────────────────────────────────────────────

class QuerySyntaxError(PipelineError):
    code = "E_QUERY_SYNTAX"

    def __init__(self, position: int, message: str):
        super().__init__(f"at position {position}: {message}")
        self.position = position


# ─── Store ──────────────────────────────────────────────────────────

class StoreError(PipelineError):
    code = "E_STORE_ERROR"


class EmptyIdentifier(StoreError):
    code = "E_STORE_EMPTY_IDENTIFIER"


class ManifestMissing(StoreError):
    code = "E_STORE_MANIFEST_MISSING"


class StoreLocked(StoreError):
    code = "E_STORE_LOCKED"


class StoreCorrupt(StoreError):
    """verify found missing or modified files."""

    code = "E_STORE_CORRUPT"


# ─── Usage / config ─────────────────────────────────────────────────

class UsageError(PipelineError):
    code = "E_USAGE"
    exit_code = 2


class ConfigError(PipelineError):
    code = "E_CONFIG_INVALID"
    exit_code = 2
