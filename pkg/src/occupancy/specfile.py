"""Model specification files (JSON or TOML) and their round trip."""

from __future__ import annotations

import json
import os
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .models import (
    DoublingBlocks,
    Explicit,
    FrequencyModel,
    Geometric,
    Merged,
    ModelError,
    NegativeBinomial,
    PoissonWeights,
    PowerLaw,
    QuasiBinomial,
    RepeatedGeometric,
)

__all__ = ["dump_json", "load_model", "model_from_spec", "parse_model_text"]

# kind -> (class, required fields, optional fields)
_KINDS: dict[str, tuple[type, tuple[str, ...], tuple[str, ...]]] = {
    "geometric": (Geometric, ("q",), ()),
    "poisson_weights": (PoissonWeights, ("lambda",), ()),
    "negative_binomial": (NegativeBinomial, ("lambda", "q"), ()),
    "quasi_binomial": (QuasiBinomial, ("lambda", "q"), ()),
    "power_law": (PowerLaw, ("alpha",), ("cutoff",)),
    "repeated_geometric": (RepeatedGeometric, ("q",), ()),
    "doubling_blocks": (DoublingBlocks, (), ("levels",)),
    "explicit": (Explicit, ("values",), ("tail",)),
    "merged": (Merged, ("parts",), ()),
}
# spec field name -> constructor keyword
_ARG = {"lambda": "lam"}


def _number(field: str, value: Any) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelError(f"field '{field}': expected a number, got {value!r}")
    return value


def model_from_spec(spec: Any) -> FrequencyModel:
    """Build a model from a decoded specification mapping."""
    if not isinstance(spec, dict):
        raise ModelError(f"model specification must be a mapping, got {type(spec).__name__}")
    kind = spec.get("kind")
    if kind not in _KINDS:
        raise ModelError(f"field 'kind': unknown model kind {kind!r}; expected one of {sorted(_KINDS)}")
    cls, required, optional = _KINDS[kind]
    allowed = {"kind", "normalized", *required, *optional}
    extra = sorted(set(spec) - allowed)
    if extra:
        raise ModelError(f"field '{extra[0]}': not valid for kind {kind!r}")
    normalized = spec.get("normalized", False)
    if not isinstance(normalized, bool):
        raise ModelError(f"field 'normalized': expected true/false, got {normalized!r}")
    kwargs: dict[str, Any] = {}
    for field in required + optional:
        if field not in spec:
            if field in required:
                raise ModelError(f"field '{field}': required for kind {kind!r}")
            continue
        value = spec[field]
        if field == "values":
            if not isinstance(value, list):
                raise ModelError("field 'values': expected a list of numbers")
            value = [_number("values", v) for v in value]
        elif field == "tail":
            value = model_from_spec(value)
        elif field == "parts":
            if not isinstance(value, list) or not value:
                raise ModelError("field 'parts': expected a non-empty list of models")
            value = [model_from_spec(v) for v in value]
        else:
            value = _number(field, value)
        kwargs[_ARG.get(field, field)] = value
    return cls(normalized=normalized, **kwargs)


def parse_model_text(text: str) -> FrequencyModel:
    """Parse JSON, falling back to TOML."""
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as jerr:
        try:
            spec = tomllib.loads(text)
        except tomllib.TOMLDecodeError as terr:
            raise ModelError(f"not valid JSON ({jerr}) or TOML ({terr})") from None
    return model_from_spec(spec)


def load_model(source: str) -> FrequencyModel:
    """Load a model from a file path or an inline JSON/TOML string.

    Raises
    ------
    OSError
        When ``source`` looks like a path but cannot be read.
    ModelError
        When the specification is malformed.
    """
    text = source.strip()
    if text.startswith("{") or "=" in text and not os.path.exists(source):
        return parse_model_text(text)
    with open(source, encoding="utf-8") as fh:
        content = fh.read()
    if source.endswith(".toml"):
        try:
            return model_from_spec(tomllib.loads(content))
        except tomllib.TOMLDecodeError as err:
            raise ModelError(f"{source}: {err}") from None
    return parse_model_text(content)


def dump_json(model: FrequencyModel, **kwargs) -> str:
    return json.dumps(model.to_spec(), **kwargs)
