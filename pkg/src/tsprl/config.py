"""Scenario configuration: nested dataclasses read from flat ``section.key`` text.

Files are INI-style; every key is addressed as ``section.key`` and unknown
keys are rejected by name::

    [demand]
    volume_scale = 0.6316
    buses = false
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from tsprl.rl import TrainerConfig
from tsprl.signals import ActuatedConfig, SignalTiming
from tsprl.sim.core import SimConfig
from tsprl.sim.demand import DemandConfig
from tsprl.sim.geometry import NetworkGeometry
from tsprl.sim.idm import IdmParams

# Demand scale realising the lower-saturation scenario from the base volumes.
SCENARIO_SCALES = {"vc095": 1.0, "vc060": 0.6 / 0.95}


class ConfigError(ValueError):
    """Bad configuration; the message names the offending key."""


@dataclass(frozen=True)
class RewardConfig:
    side_queue_penalty: float = 100.0  # N
    switch_queue_penalty: float = 100.0  # M
    side_queue_threshold: int = 10  # ql_Thr1, vehicles
    phase_queue_threshold: int = 5  # ql_Thr2, vehicles

    def __post_init__(self):
        if self.side_queue_penalty <= 0 or self.switch_queue_penalty <= 0:
            raise ValueError("penalties must be positive")
        if self.side_queue_threshold < 1 or self.phase_queue_threshold < 1:
            raise ValueError("queue thresholds must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    episodes: int = 150
    episode_s: float = 600.0
    eval_duration_s: float = 3600.0
    warmup_s: float = 900.0
    impact_window_s: float = 300.0
    replicates: int = 10


@dataclass(frozen=True)
class ScenarioConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    geometry: NetworkGeometry = field(default_factory=NetworkGeometry)
    idm: IdmParams = field(default_factory=IdmParams)
    demand: DemandConfig = field(default_factory=DemandConfig)
    signal: SignalTiming = field(default_factory=SignalTiming)
    actuated: ActuatedConfig = field(default_factory=ActuatedConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    reward_tsp: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    trainer_tsp: TrainerConfig = field(default_factory=TrainerConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def with_overrides(self, overrides: dict[str, str]) -> "ScenarioConfig":
        return apply_overrides(self, overrides)

    def for_scenario(self, name: str) -> "ScenarioConfig":
        if name not in SCENARIO_SCALES:
            raise ConfigError(f"unknown scenario {name!r}; valid: {', '.join(SCENARIO_SCALES)}")
        return replace(self, demand=replace(self.demand, volume_scale=SCENARIO_SCALES[name]))

    def digest(self) -> bytes:
        return hashlib.sha256(dumps(self).encode()).digest()


SECTIONS = tuple(f.name for f in fields(ScenarioConfig))


def _parse_value(raw: str, tp, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if origin is tuple:
            inner = typing.get_args(tp)[0]
            parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
            return tuple(_parse_value(p, inner, key) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from exc
    raise ConfigError(f"{key}: unsupported type {tp}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def apply_overrides(cfg: ScenarioConfig, overrides: dict[str, str]) -> ScenarioConfig:
    """Apply ``{"section.key": "text"}`` overrides, validating every key."""
    grouped: dict[str, dict] = {}
    for dotted, raw in overrides.items():
        if "." not in dotted:
            raise ConfigError(f"{dotted}: keys must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"{dotted}: unknown section {section!r}")
        types = _field_types(type(getattr(cfg, section)))
        if key not in types:
            raise ConfigError(f"{dotted}: unknown key")
        value = raw if not isinstance(raw, str) else _parse_value(raw, types[key], dotted)
        grouped.setdefault(section, {})[key] = value
    updates = {}
    for section, values in grouped.items():
        try:
            updates[section] = replace(getattr(cfg, section), **values)
        except ValueError as exc:
            raise ConfigError(f"{section}: {exc}") from exc
    return replace(cfg, **updates)


def loads(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    overrides = {f"{s}.{k}": v for s in parser.sections() for k, v in parser.items(s)}
    return apply_overrides(base or ScenarioConfig(), overrides)


def load(path_or_profile: str | Path) -> ScenarioConfig:
    """Read a config file, or a shipped profile by name (e.g. ``desk-sc``)."""
    path = Path(path_or_profile)
    if path.exists():
        return loads(path.read_text())
    name = str(path_or_profile).replace("-", "_")
    res = resources.files("tsprl.profiles") / f"{name}.ini"
    if not res.is_file():
        raise ConfigError(f"config {path_or_profile!r} is neither a file nor a known profile "
                          f"({', '.join(profile_names())})")
    return loads(res.read_text())


def profile_names() -> list[str]:
    root = resources.files("tsprl.profiles")
    return sorted(p.name[:-4].replace("_", "-") for p in root.iterdir() if p.name.endswith(".ini"))


def dumps(cfg: ScenarioConfig) -> str:
    lines = []
    for section in SECTIONS:
        sub = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(sub):
            lines.append(f"{f.name} = {_format_value(getattr(sub, f.name))}")
        lines.append("")
    return "\n".join(lines)


def as_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)
