"""LLM-facing layer: prompt registry, providers, analysis and decision agents."""

from .parsing import ParseError, SchemaViolation, parse_response
from .prompts import PromptRegistry, UnboundPlaceholder, render
from .provider import ProviderConfig, RemoteProvider, StubProvider, make_provider
from .schemas import AnalysisInsight

__all__ = [
    "AnalysisInsight",
    "ParseError",
    "PromptRegistry",
    "ProviderConfig",
    "RemoteProvider",
    "SchemaViolation",
    "StubProvider",
    "UnboundPlaceholder",
    "make_provider",
    "parse_response",
    "render",
]
