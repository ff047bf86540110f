"""JSON run configuration.

One optional file with one optional section per stage; every key has a
default, unknown sections or keys are rejected so typos fail loudly:

    {
      "swing":  {"mean_threshold": 55.0, "var_threshold": 480.0},
      "impact": {"gate_px": 30.0},
      "locate": {"ransac_seed": 7},
      "speed":  {"gate_px": 60.0}
    }
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .impact_time import ImpactConfig
from .location import LocateConfig
from .speed import SpeedConfig
from .swing import DetectorConfig


@dataclass(frozen=True)
class PipelineConfig:
    swing: DetectorConfig = field(default_factory=DetectorConfig)
    impact: ImpactConfig = field(default_factory=ImpactConfig)
    locate: LocateConfig = field(default_factory=LocateConfig)
    speed: SpeedConfig = field(default_factory=SpeedConfig)


_SECTIONS = {
    "swing": DetectorConfig,
    "impact": ImpactConfig,
    "locate": LocateConfig,
    "speed": SpeedConfig,
}


def _build_section(cls, raw: dict, name: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(
            f"unknown key(s) in config section {name!r}: {sorted(unknown)}"
        )
    return cls(**raw)


def config_from_dict(raw: dict) -> PipelineConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be an object")
        kwargs[name] = _build_section(cls, section, name)
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    return config_from_dict(raw)
