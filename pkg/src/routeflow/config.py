"""Pipeline configuration: nested parameter blocks with strict JSON round-tripping."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from .bundling import BundlingParams
from .core import PreprocessConfig
from .errors import ParseError
from .layout import LayoutParams
from .metrics import RasterConfig
from .synthgen import SynthConfig


@dataclass(frozen=True)
class TimingConfig:
    easing: bool = True
    dwell: float = 0.02  # hold at rearranging hotspots, before rescaling to [0,1]
    speed_limit: float = 2.0
    max_speed_iterations: int = 1000

    def __post_init__(self):
        if self.speed_limit <= 1.0:
            raise ValueError("speed_limit must exceed 1")
        if self.dwell < 0:
            raise ValueError("dwell must be >= 0")
        if self.max_speed_iterations < 0:
            raise ValueError("max_speed_iterations must be >= 0")


@dataclass(frozen=True)
class HotspotConfig:
    unify_radius: float | None = None  # None: the bundling merge distance


@dataclass(frozen=True)
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    bundling: BundlingParams = field(default_factory=BundlingParams)
    hotspots: HotspotConfig = field(default_factory=HotspotConfig)
    layout: LayoutParams = field(default_factory=LayoutParams)
    timing: TimingConfig = field(default_factory=TimingConfig)
    raster: RasterConfig = field(default_factory=RasterConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 42
    frame_count: int = 240

    def __post_init__(self):
        if self.frame_count < 2:
            raise ValueError("frame_count must be >= 2")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    def synth_config(self) -> SynthConfig:
        """The synth block with the pipeline seed applied."""
        return dataclasses.replace(self.synth, seed=self.seed)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                out[f.name] = {k: x for k, x in dataclasses.asdict(v).items() if k not in _HIDDEN.get(f.name, ())}
            else:
                out[f.name] = v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# the synth seed is driven by the top-level seed
_HIDDEN = {"synth": ("seed",)}


def _check_value(where: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif default is None:
        ok = value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
    else:
        ok = True
    if not ok:
        raise ParseError(f"wrong type {type(value).__name__}", field=where)
    return value


def _block(cls, name: str, raw: Any):
    if not isinstance(raw, Mapping):
        raise ParseError("expected an object", field=name)
    base = cls()
    known = {f.name for f in dataclasses.fields(cls)} - set(_HIDDEN.get(name, ()))
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ParseError("unknown key", field=f"{name}.{unknown[0]}")
    values = {k: _check_value(f"{name}.{k}", getattr(base, k), v) for k, v in raw.items()}
    try:
        return dataclasses.replace(base, **values)
    except ValueError as exc:
        raise ParseError(str(exc), field=name) from None


def config_from_dict(doc: Any) -> PipelineConfig:
    if not isinstance(doc, Mapping):
        raise ParseError("config must be a JSON object")
    base = PipelineConfig()
    top = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(doc) - set(top))
    if unknown:
        raise ParseError("unknown key", field=unknown[0])
    values = {}
    for name, raw in doc.items():
        default = getattr(base, name)
        if dataclasses.is_dataclass(default):
            values[name] = _block(type(default), name, raw)
        else:
            values[name] = _check_value(name, default, raw)
    try:
        return dataclasses.replace(base, **values)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    from .core import load_json

    return config_from_dict(load_json(path))
