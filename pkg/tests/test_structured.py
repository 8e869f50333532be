from __future__ import annotations

import pytest

from spacesynth.errors import MalformedReplyError, SchemaViolationError
from spacesynth.structured import extract_structured

CLEAN = """```json
{"dimension": "numerical types", "rationale": "varies most", "values": ["Integer", "Fraction"], "assignment": ["Integer", "Fraction"]}
```"""


def test_clean_fenced_block():
    payload = extract_structured(CLEAN, "dimension-spec")
    assert payload["dimension"] == "numerical types"
    assert [v["label"] for v in payload["values"]] == ["Integer", "Fraction"]
    assert payload["assignment"] == ["Integer", "Fraction"]


def test_prose_around_block_changes_nothing():
    noisy = "Sure! Here is the analysis you asked for.\n\n" + CLEAN + "\n\nHope that helps."
    assert extract_structured(noisy, "dimension-spec") == extract_structured(
        CLEAN, "dimension-spec"
    )


def test_no_block_is_malformed():
    with pytest.raises(MalformedReplyError):
        extract_structured("I could not produce the requested format.", "pivot-list")


def test_bare_json_without_fence_is_found():
    raw = 'The list follows: {"samples": ["a", "b"]} -- done'
    assert extract_structured(raw, "pivot-list")["samples"] == ["a", "b"]


def test_first_wellformed_block_is_the_one_validated():
    # an earlier parseable-but-empty object is THE block; its schema failure
    # is reported (and triggers the reprompt cycle) rather than skipped
    raw = 'noise ] { } {"answer": "42"}'
    with pytest.raises(SchemaViolationError):
        extract_structured(raw, "answer")


def test_first_parseable_block_wins():
    raw = "```\nnot json at all\n```\n" + CLEAN
    assert extract_structured(raw, "dimension-spec")["dimension"] == "numerical types"


def test_extraction_is_pure():
    noisy = "prefix " + CLEAN
    first = extract_structured(noisy, "dimension-spec")
    second = extract_structured(noisy, "dimension-spec")
    assert first == second
    with pytest.raises(MalformedReplyError) as err_a:
        extract_structured("nothing here", "answer")
    with pytest.raises(MalformedReplyError) as err_b:
        extract_structured("nothing here", "answer")
    assert str(err_a.value) == str(err_b.value)


def test_unknown_schema_is_a_programming_error():
    with pytest.raises(ValueError):
        extract_structured(CLEAN, "no-such-schema")


@pytest.mark.parametrize(
    "raw, schema",
    [
        ('```json\n{"samples": []}\n```', "pivot-list"),
        ('```json\n{"samples": ["ok", ""]}\n```', "sample-list"),
        ('```json\n{"samples": "not a list"}\n```', "pivot-list"),
        ('```json\n{"values": ["a"], "unbounded": "yes"}\n```', "value-list"),
        ('```json\n{"values": []}\n```', "value-list"),
        ('```json\n{"dimension": "d", "values": ["a"], "assignment": []}\n```', "dimension-spec"),
        ('```json\n{"dimension": "", "values": ["a"], "assignment": ["a"]}\n```', "dimension-spec"),
        ('```json\n{"dimension": "d", "values": [7], "assignment": ["a"]}\n```', "dimension-spec"),
        ('```json\n{"answer": ""}\n```', "answer"),
        ('```json\n["just", "a", "list"]\n```', "answer"),
    ],
)
def test_schema_violations(raw, schema):
    with pytest.raises(SchemaViolationError):
        extract_structured(raw, schema)


def test_value_entries_accept_label_objects():
    raw = '```json\n{"values": [{"label": "Integer", "description": "whole numbers"}, "Fraction"], "unbounded": false}\n```'
    payload = extract_structured(raw, "value-list")
    assert payload["values"][0] == {"label": "Integer", "description": "whole numbers"}
    assert payload["values"][1] == {"label": "Fraction", "description": None}
    assert payload["unbounded"] is False
