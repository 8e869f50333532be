"""Locate and validate structured blocks in raw model text.

Every stage asks the model for a single fenced JSON block. Models decorate
replies with prose anyway, so extraction scans for the first block that both
parses and satisfies the schema registered for the call site. Extraction is
pure: the same (raw, schema) pair always yields the same payload or the same
error.
"""

from __future__ import annotations

import json
import re
from typing import Any, Callable

from .errors import MalformedReplyError, SchemaViolationError

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*[ \t]*\n(.*?)```", re.DOTALL)


def _candidate_blocks(raw: str) -> list[str]:
    """Parseable-looking regions in document order: fenced blocks first, then
    bare JSON objects/arrays embedded in prose."""
    blocks = [m.group(1).strip() for m in _FENCE_RE.finditer(raw)]
    decoder = json.JSONDecoder()
    for idx, ch in enumerate(raw):
        if ch not in "{[":
            continue
        try:
            _, _ = decoder.raw_decode(raw, idx)
        except ValueError:
            continue
        blocks.append(raw[idx:])
        break
    return blocks


def _non_empty_str(value: Any, where: str) -> str:
    if not isinstance(value, str) or not value.strip():
        raise SchemaViolationError(f"{where} must be a non-empty string")
    return value.strip()


def _string_list(value: Any, where: str) -> list[str]:
    if not isinstance(value, list) or not value:
        raise SchemaViolationError(f"{where} must be a non-empty list")
    return [_non_empty_str(item, f"{where}[{i}]") for i, item in enumerate(value)]


def _value_entry(value: Any, where: str) -> dict:
    """Attribute values arrive either as bare labels or {label, description}."""
    if isinstance(value, str):
        return {"label": _non_empty_str(value, where), "description": None}
    if isinstance(value, dict):
        label = _non_empty_str(value.get("label"), f"{where}.label")
        description = value.get("description")
        if description is not None and not isinstance(description, str):
            raise SchemaViolationError(f"{where}.description must be a string")
        return {"label": label, "description": description}
    raise SchemaViolationError(f"{where} must be a string or an object with a label")


def _validate_pivot_list(obj: Any) -> dict:
    if not isinstance(obj, dict):
        raise SchemaViolationError("reply must be a JSON object")
    return {"samples": _string_list(obj.get("samples"), "samples")}


def _validate_sample_list(obj: Any) -> dict:
    if not isinstance(obj, dict):
        raise SchemaViolationError("reply must be a JSON object")
    return {"samples": _string_list(obj.get("samples"), "samples")}


def _validate_dimension_spec(obj: Any) -> dict:
    if not isinstance(obj, dict):
        raise SchemaViolationError("reply must be a JSON object")
    name = _non_empty_str(obj.get("dimension"), "dimension")
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        raise SchemaViolationError("rationale must be a string")
    values = obj.get("values")
    if not isinstance(values, list) or not values:
        raise SchemaViolationError("values must be a non-empty list")
    values = [_value_entry(v, f"values[{i}]") for i, v in enumerate(values)]
    assignment = obj.get("assignment")
    if not isinstance(assignment, list) or not assignment:
        raise SchemaViolationError("assignment must list one value label per sample")
    assignment = [
        _non_empty_str(a, f"assignment[{i}]") for i, a in enumerate(assignment)
    ]
    return {
        "dimension": name,
        "rationale": rationale,
        "values": values,
        "assignment": assignment,
    }


def _validate_value_list(obj: Any) -> dict:
    if not isinstance(obj, dict):
        raise SchemaViolationError("reply must be a JSON object")
    values = obj.get("values")
    if not isinstance(values, list) or not values:
        raise SchemaViolationError("values must be a non-empty list")
    values = [_value_entry(v, f"values[{i}]") for i, v in enumerate(values)]
    unbounded = obj.get("unbounded", False)
    if not isinstance(unbounded, bool):
        raise SchemaViolationError("unbounded must be a boolean")
    return {"values": values, "unbounded": unbounded}


def _validate_answer(obj: Any) -> dict:
    if not isinstance(obj, dict):
        raise SchemaViolationError("reply must be a JSON object")
    return {"answer": _non_empty_str(obj.get("answer"), "answer")}


SCHEMAS: dict[str, Callable[[Any], dict]] = {
    "pivot-list": _validate_pivot_list,
    "sample-list": _validate_sample_list,
    "dimension-spec": _validate_dimension_spec,
    "value-list": _validate_value_list,
    "answer": _validate_answer,
}


def extract_structured(raw: str, schema_id: str) -> dict:
    """Parse the first well-formed structured block in ``raw`` and validate it
    against the registered schema.

    Raises ``MalformedReplyError`` when nothing parses at all and
    ``SchemaViolationError`` when a block parses but breaks the schema. Both
    are worth exactly one corrective reprompt upstream.
    """
    try:
        validator = SCHEMAS[schema_id]
    except KeyError:
        raise ValueError(f"unknown reply schema {schema_id!r}") from None

    blocks = _candidate_blocks(raw)
    if not blocks:
        snippet = raw.strip()[:120]
        raise MalformedReplyError(f"no structured block found in reply: {snippet!r}")

    last_error: Exception | None = None
    decoder = json.JSONDecoder()
    for block in blocks:
        try:
            obj, _ = decoder.raw_decode(block)
        except ValueError as exc:
            last_error = MalformedReplyError(f"block does not parse: {exc}")
            continue
        return validator(obj)
    raise last_error  # every block failed to parse


def corrective_suffix(error: Exception) -> str:
    """Feedback appended to a prompt after an unusable reply."""
    return (
        "\n\nYour previous reply could not be used: "
        f"{error}. Reply again with exactly one fenced JSON block in the "
        "required format and no other JSON in the message."
    )


__all__ = ["SCHEMAS", "extract_structured", "corrective_suffix"]
