"""Strict JSON parsing of model output with a single bounded repair pass."""
from __future__ import annotations

import copy
import json
import re
from typing import Any, Mapping

import jsonschema

from ..errors import ProviderError

_FENCE = re.compile(r"```[A-Za-z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


class ParseError(ProviderError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class SchemaViolation(ProviderError):
    def __init__(self, field: str, constraint: str, message: str):
        super().__init__(f"field {field!r} violates {constraint}: {message}")
        self.field = field
        self.constraint = constraint


def first_json_object(text: str) -> str | None:
    """Return the first balanced ``{...}`` span, honoring JSON string escapes."""
    start = text.find("{")
    while start != -1:
        depth, in_str, escaped = 0, False, False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def repair(raw: str) -> str | None:
    text = raw.strip()
    fenced = _FENCE.search(text)
    if fenced:
        text = fenced.group(1).strip()
    return first_json_object(text)


def _bind_schema(schema: Mapping, params: Mapping[str, Any]) -> dict:
    bound = copy.deepcopy(dict(schema))

    def walk(node):
        if isinstance(node, dict):
            for k, v in node.items():
                if isinstance(v, str) and v.startswith("$"):
                    node[k] = params[v[1:]]
                else:
                    walk(v)
        elif isinstance(node, list):
            for v in node:
                walk(v)

    walk(bound)
    return bound


def parse_response(raw: str, schema: Mapping | None = None, params: Mapping[str, Any] | None = None) -> dict:
    """Parse ``raw`` into a dict and validate it.

    Raises :class:`ParseError` if no JSON object survives one repair round and
    :class:`SchemaViolation` naming the first offending field otherwise.
    """
    try:
        data = json.loads(raw)
    except (ValueError, TypeError):
        candidate = repair(raw or "")
        if candidate is None:
            raise ParseError("no JSON object found in response", raw) from None
        try:
            data = json.loads(candidate)
        except ValueError as exc:
            raise ParseError(f"response is not valid JSON after repair: {exc}", raw) from None
    if not isinstance(data, dict):
        raise ParseError("response JSON is not an object", raw)
    if schema is not None:
        bound = _bind_schema(schema, params or {})
        error = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(bound).iter_errors(data))
        if error is not None:
            if error.validator == "required":
                field = re.search(r"'([^']+)'", error.message)
                name = field.group(1) if field else "?"
            else:
                name = ".".join(str(p) for p in error.absolute_path) or "?"
            raise SchemaViolation(name, f"{error.validator}={error.validator_value!r}", error.message)
    return data
