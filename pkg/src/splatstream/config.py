"""Run configuration: JSON files layered under dotted-key overrides.

A config document has two sections, "pipeline" and "synth", whose keys mirror
the corresponding dataclasses (nested sections for the hash grid, addition,
loss, and rasterizer settings). Overrides are `dotted.key=value` strings with
JSON-parsed values; unknown keys are rejected with the list of valid keys at
that level, so typos fail loudly instead of silently training with defaults.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .adaptive import AdditionConfig
from .errors import DataError
from .losses import LossConfig
from .ntc import HashGridConfig
from .pipeline import PipelineConfig
from .rasterizer import RasterSettings
from .synth import SynthConfig

_NESTED = {
    "grid": HashGridConfig,
    "addition": AdditionConfig,
    "loss": LossConfig,
    "raster": RasterSettings,
}


def _to_plain(value):
    if dataclasses.is_dataclass(value):
        return {
            f.name: _to_plain(getattr(value, f.name))
            for f in dataclasses.fields(value)
        }
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    return value


def default_config() -> dict:
    return {
        "pipeline": _to_plain(PipelineConfig()),
        "synth": _to_plain(SynthConfig()),
    }


def load_config(path: str | Path) -> dict:
    """Defaults overlaid with the document's (partial) sections."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config is not valid JSON: {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"config root must be an object: {path}")
    merged = default_config()
    _merge(merged, doc, trail="")
    return merged


def _merge(base: dict, overlay: dict, trail: str) -> None:
    for key, value in overlay.items():
        here = f"{trail}{key}"
        if key not in base:
            raise DataError(
                f"unknown config key {here!r}; valid keys here: "
                f"{sorted(base)}"
            )
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, trail=f"{here}.")
        else:
            base[key] = value


def apply_overrides(config: dict, pairs: list[str]) -> dict:
    """`a.b.c=value` assignments; values parse as JSON, else raw strings."""
    for pair in pairs:
        if "=" not in pair:
            raise DataError(f"override {pair!r} is not of the form key=value")
        dotted, raw = pair.split("=", 1)
        keys = dotted.strip().split(".")
        node = config
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise DataError(
                    f"unknown config key {dotted!r}; valid keys here: "
                    f"{sorted(node) if isinstance(node, dict) else '(leaf)'}"
                )
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise DataError(
                f"unknown config key {dotted!r}; valid keys here: "
                f"{sorted(node) if isinstance(node, dict) else '(leaf)'}"
            )
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[leaf] = value
    return config


def _build(cls, section: dict, trail: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise DataError(
            f"unknown config key {trail}{sorted(unknown)[0]!r}; "
            f"valid keys here: {sorted(names)}"
        )
    defaults = cls()
    kwargs = {}
    for key, value in section.items():
        if key in _NESTED and isinstance(value, dict):
            value = _build(_NESTED[key], value, trail=f"{trail}{key}.")
        elif isinstance(getattr(defaults, key), tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise DataError(f"invalid config under {trail or 'root'}: {exc}") from exc


def build_pipeline_config(config: dict) -> PipelineConfig:
    return _build(PipelineConfig, config.get("pipeline", {}), trail="pipeline.")


def build_synth_config(config: dict) -> SynthConfig:
    return _build(SynthConfig, config.get("synth", {}), trail="synth.")
