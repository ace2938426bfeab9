"""Prompt template registry and rendering."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Mapping

from ..errors import ConfigError

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class UnboundPlaceholder(ConfigError):
    def __init__(self, template_id: str, name: str):
        super().__init__(f"template {template_id!r}: placeholder {name!r} is unbound")
        self.template_id = template_id
        self.name = name


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    placeholders: tuple[str, ...]
    response_schema: dict | None = None


def fill(text: str, bindings: Mapping[str, Any], names: tuple[str, ...] | None = None, template_id: str = "") -> str:
    """Substitute ``{name}`` markers in one pass; bound values are never rescanned.

    Markers whose name is not in ``names`` (when given) are left untouched,
    which keeps literal JSON examples in template bodies intact.
    """
    wanted = set(names) if names is not None else set(_PLACEHOLDER.findall(text))
    for name in sorted(wanted):
        if name not in bindings:
            raise UnboundPlaceholder(template_id, name)

    def sub(m: re.Match) -> str:
        name = m.group(1)
        return str(bindings[name]) if name in wanted else m.group(0)

    return _PLACEHOLDER.sub(sub, text)


class PromptRegistry:
    def __init__(self, templates: dict[str, PromptTemplate], fragments: dict[str, Any]):
        self.templates = templates
        self.fragments = fragments

    @classmethod
    def load_default(cls) -> "PromptRegistry":
        return _default_registry()

    @classmethod
    def from_directory(cls, files) -> "PromptRegistry":
        manifest = json.loads(files.joinpath("manifest.json").read_text(encoding="utf-8"))
        schemas = json.loads(files.joinpath("schemas.json").read_text(encoding="utf-8"))
        templates = {}
        for tid, entry in manifest["templates"].items():
            body = files.joinpath(entry["file"]).read_text(encoding="utf-8")
            declared = tuple(entry["placeholders"])
            stray = set(_PLACEHOLDER.findall(body)) - set(declared)
            if stray:
                raise ConfigError(f"template {tid!r} has undeclared placeholders {sorted(stray)}")
            schema_name = entry.get("schema")
            templates[tid] = PromptTemplate(tid, body, declared, schemas.get(schema_name) if schema_name else None)
        return cls(templates, manifest.get("fragments", {}))

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self.templates[template_id]
        except KeyError:
            raise ConfigError(f"unknown prompt template {template_id!r}") from None

    def render(self, template_id: str, bindings: Mapping[str, Any] | None = None) -> str:
        tpl = self.get(template_id)
        return fill(tpl.body, bindings or {}, tpl.placeholders, template_id)

    def fragment(self, name: str, bindings: Mapping[str, Any] | None = None, key: str | None = None) -> str:
        value = self.fragments[name]
        if key is not None:
            value = value[key]
        return fill(value, bindings or {}, template_id=f"fragment:{name}") if bindings is not None else value


@lru_cache(maxsize=1)
def _default_registry() -> PromptRegistry:
    return PromptRegistry.from_directory(resources.files("postrade.agents").joinpath("templates"))


def render(template_id: str, bindings: Mapping[str, Any] | None = None) -> str:
    return _default_registry().render(template_id, bindings)
