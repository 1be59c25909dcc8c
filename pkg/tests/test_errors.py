"""
test_errors.py — Error codes and exit codes.
"""

import pytest

from pipeline.errors import (
    PROTOCOL_ERROR_CODES,
    ConfigError,
    MissingStageInput,
    NTriplesParseError,
    PipelineError,
    ProtocolError,
    QuerySyntaxError,
    StoreCorrupt,
    UnknownClassLabel,
    UsageError,
    ValidationError,
)


@pytest.mark.parametrize("protocol_code, code", [
    ("badArgument", "E_OAI_BAD_ARGUMENT"),
    ("badResumptionToken", "E_OAI_BAD_RESUMPTION_TOKEN"),
    ("cannotDisseminateFormat", "E_OAI_CANNOT_DISSEMINATE_FORMAT"),
    ("idDoesNotExist", "E_OAI_ID_DOES_NOT_EXIST"),
    ("noRecordsMatch", "E_OAI_NO_RECORDS_MATCH"),
])
def test_protocol_codes(protocol_code, code):
    assert protocol_code in PROTOCOL_ERROR_CODES
    assert ProtocolError(protocol_code).code == code


@pytest.mark.parametrize("stage, code", [
    ("record", "E_SCHEMA_MISSING_RECORDS"),
    ("detections", "E_SCHEMA_MISSING_DETECTIONS"),
    ("enriched", "E_SCHEMA_MISSING_ENRICHED"),
    ("graph", "E_SCHEMA_MISSING_GRAPH"),
])
def test_missing_stage_codes(stage, code):
    assert MissingStageInput(stage).code == code


def test_exit_codes():
    assert PipelineError().exit_code == 1
    assert StoreCorrupt("x").exit_code == 1
    assert UsageError("x").exit_code == 2
    assert ConfigError("x").exit_code == 2


def test_messages_carry_location():
    assert str(ValidationError("$.pages[0].bbox", "w and h must be > 0")) == "$.pages[0].bbox: w and h must be > 0"
    assert str(UnknownClassLabel("$.pages[0].regions[0].class", "border")).endswith("unknown region class 'border'")
    assert str(QuerySyntaxError(7, "empty query")) == "at position 7: empty query"
    assert NTriplesParseError(3, "bad").line == 3


def test_code_is_the_fallback_message():
    assert str(StoreCorrupt()) == "E_STORE_CORRUPT"


def test_unknown_class_is_a_validation_error():
    assert issubclass(UnknownClassLabel, ValidationError)
