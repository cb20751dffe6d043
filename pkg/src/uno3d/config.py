"""YAML run configuration with schema checks and line-numbered diagnostics.

A config file holds up to seven sections (``geology``, ``simulation``,
``source``, ``model``, ``training``, ``evaluation``, ``run``) plus an optional
``preset: desk | full`` that selects the defaults the sections override.
"""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .geology import GeologyConfig
from .operator import UnoSchedule, desk_schedule, full_scale_schedule
from .source import SourceSpec
from .training import TrainingConfig
from .wavesim import SimConfig

__all__ = [
    "ConfigError",
    "ModelConfig",
    "EvalConfig",
    "RunConfig",
    "PipelineConfig",
    "preset_config",
    "load_config",
    "dump_config",
]


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line`` when known."""


@dataclass(frozen=True)
class ModelConfig:
    schedule: str = "desk"
    entry: tuple[int, int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.schedule not in ("desk", "full"):
            raise ValueError(f"schedule must be 'desk' or 'full', got {self.schedule!r}")
        if self.entry is not None:
            object.__setattr__(self, "entry", tuple(int(n) for n in self.entry))
            if len(self.entry) != 3 or any(n < 1 for n in self.entry):
                raise ValueError(f"entry must be three positive extents, got {self.entry}")

    def build(self, grid) -> UnoSchedule:
        entry = self.entry or tuple(grid)
        if self.schedule == "full":
            sched = full_scale_schedule()
            if tuple(entry) != sched.entry:
                raise ValueError(f"the full-scale schedule needs a {sched.entry} grid, got {tuple(entry)}")
            return sched
        return desk_schedule(entry)


@dataclass(frozen=True)
class EvalConfig:
    band_hz: tuple[float, float] = (0.2, 5.0)
    n_freqs: int = 32
    trace_sensors: tuple = ((0.5, 0.5),)

    def __post_init__(self):
        object.__setattr__(self, "band_hz", tuple(float(v) for v in self.band_hz))
        object.__setattr__(self, "trace_sensors", tuple(tuple(float(v) for v in s) for s in self.trace_sensors))
        lo, hi = self.band_hz
        if not 0 < lo < hi:
            raise ValueError(f"band_hz must satisfy 0 < low < high, got {self.band_hz}")
        if self.n_freqs < 2:
            raise ValueError("n_freqs must be >= 2")
        for s in self.trace_sensors:
            if len(s) != 2 or not all(0 <= v <= 1 for v in s):
                raise ValueError("trace_sensors are (x, y) fractions of the grid in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    count: int = 64
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    geology: GeologyConfig = field(default_factory=GeologyConfig)
    simulation: SimConfig = field(default_factory=SimConfig)
    source: SourceSpec = field(default_factory=SourceSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)
    preset: str = "full"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kw = {name: _SECTIONS[name](**d[name]) for name in _SECTIONS if name in d}
        return cls(preset=d.get("preset", "full"), **kw)


_SECTIONS = {
    "geology": GeologyConfig,
    "simulation": SimConfig,
    "source": SourceSpec,
    "model": ModelConfig,
    "training": TrainingConfig,
    "evaluation": EvalConfig,
    "run": RunConfig,
}

# fields whose default is None, with the kind of value they accept otherwise
_OPTIONAL = {
    ("simulation", "spacing_m"): float,
    ("simulation", "dt"): float,
    ("simulation", "duration_s"): float,
    ("training", "micro_batch"): int,
    ("model", "entry"): tuple,
}


def preset_config(name: str = "desk") -> PipelineConfig:
    """``desk``: 32^3 grids, 10 Hz records, 50 epochs.  ``full``: 64^3, 20 Hz, 110 epochs."""
    if name == "full":
        return PipelineConfig(evaluation=EvalConfig(band_hz=(0.2, 5.0)), preset="full")
    if name == "desk":
        return PipelineConfig(
            geology=GeologyConfig(grid=(32, 32, 32)),
            simulation=SimConfig(record_rate_hz=10.0, sponge_width=10),
            model=ModelConfig(schedule="desk"),
            training=TrainingConfig(epochs=50, batch_size=8),
            evaluation=EvalConfig(band_hz=(0.2, 1.0)),
            run=RunConfig(count=64),
            preset="desk",
        )
    raise ConfigError(f"unknown preset {name!r}; use 'desk' or 'full'")


def _where(path, node) -> str:
    return f"{path}:{node.start_mark.line + 1}"


def _check_value(path, section, key, default, node, value):
    kind = _OPTIONAL.get((section, key))
    if kind is None:
        kind = type(default)
    if value is None:
        if (section, key) in _OPTIONAL:
            return None
        raise ConfigError(f"{_where(path, node)}: {section}.{key} may not be null")
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif kind is tuple:
        ok = isinstance(value, list)
        if ok and isinstance(default, tuple) and default and not isinstance(default[0], tuple):
            ok = len(value) == len(default) and all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
        value = tuple(tuple(v) if isinstance(v, list) else v for v in value) if ok else value
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(
            f"{_where(path, node)}: {section}.{key} expects {kind.__name__}"
            + (f" of length {len(default)}" if isinstance(default, tuple) and default else "")
            + f", got {value!r}")
    return value


def load_config(path=None, text: str | None = None) -> PipelineConfig:
    """Parse and validate a config file (or ``text``); errors name the offending line."""
    if text is None:
        if path is None:
            return preset_config("desk")
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"{p}: config file not found")
        text = p.read_text()
    path = str(path) if path is not None else "<config>"
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{line}: invalid YAML ({getattr(exc, 'problem', exc)})") from exc
    if root is None:
        return preset_config("desk")
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{_where(path, root)}: top level must be a mapping of sections")

    constructor = yaml.constructor.SafeConstructor()
    preset = "desk"
    sections = {}
    for knode, vnode in root.value:
        key = knode.value
        if key == "preset":
            preset = vnode.value
            if preset not in ("desk", "full"):
                raise ConfigError(f"{_where(path, vnode)}: preset must be 'desk' or 'full', got {preset!r}")
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"{_where(path, knode)}: unknown section {key!r} "
                              f"(expected one of {', '.join(['preset', *_SECTIONS])})")
        if key in sections:
            raise ConfigError(f"{_where(path, knode)}: duplicate section {key!r}")
        if not isinstance(vnode, yaml.MappingNode):
            raise ConfigError(f"{_where(path, vnode)}: section {key!r} must be a mapping")
        sections[key] = (knode, vnode)

    base = preset_config(preset)
    updates = {}
    for name, (knode, vnode) in sections.items():
        current = getattr(base, name)
        defaults = {f.name: getattr(current, f.name) for f in dataclasses.fields(current)}
        kw = {}
        for fk, fv in vnode.value:
            if fk.value not in defaults:
                raise ConfigError(f"{_where(path, fk)}: unknown key {fk.value!r} in section {name!r} "
                                  f"(allowed: {', '.join(defaults)})")
            if fk.value in kw:
                raise ConfigError(f"{_where(path, fk)}: duplicate key {name}.{fk.value}")
            value = constructor.construct_object(fv, deep=True)
            kw[fk.value] = _check_value(path, name, fk.value, defaults[fk.value], fv, value)
        try:
            updates[name] = replace(current, **kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{_where(path, knode)}: section {name!r}: {exc}") from exc
    return replace(base, preset=preset, **updates)


def dump_config(cfg: PipelineConfig) -> str:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    return yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False)
