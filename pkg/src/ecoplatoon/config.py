"""Scenario configuration: TOML files, override merging, and env assembly.

Precedence is command-line overrides, then the scenario file, then dataclass
defaults. Validation failures collect field-level messages and raise one
ConfigError so a bad file reports everything wrong at once.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ars import ArsConfig
from .energy import EvParams
from .env import PlatoonEnv, RewardConfig, RewardMode
from .traffic import IdmParams, SignalProgram, WorldConfig


class ConfigError(ValueError):
    """Invalid configuration; message lists every offending field."""


@dataclass(frozen=True)
class EvalConfig:
    """Episode counts and seeds for evaluation drivers."""

    episodes: int = 5
    seed: int = 1000  # base seed for evaluation episode draws
    agents: int = 5  # independently trained agents in comparative studies

    def __post_init__(self) -> None:
        if self.episodes <= 0:
            raise ValueError("eval.episodes must be positive")
        if self.seed < 0:
            raise ValueError("eval.seed must be >= 0")
        if self.agents <= 0:
            raise ValueError("eval.agents must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce a run."""

    world: WorldConfig = WorldConfig()
    idm: IdmParams = IdmParams()
    signal: SignalProgram = SignalProgram()
    ev: EvParams = EvParams()
    reward: RewardConfig = RewardConfig()
    ars: ArsConfig = ArsConfig()
    eval: EvalConfig = EvalConfig()

    def to_dict(self) -> dict:
        """JSON-ready nested dict mirroring the TOML schema."""
        out: dict[str, Any] = {}
        for name, obj in (("world", self.world), ("idm", self.idm),
                          ("signal", self.signal), ("ev", self.ev),
                          ("reward", self.reward), ("ars", self.ars),
                          ("eval", self.eval)):
            section = dataclasses.asdict(obj)
            if name == "signal":
                section["green_durations"] = list(section["green_durations"])
            if name == "reward":
                section["mode"] = self.reward.mode.value
            out[name] = section
        return out

    def digest(self) -> str:
        """Stable hash of the resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_SECTION_TYPES = {
    "world": WorldConfig,
    "idm": IdmParams,
    "signal": SignalProgram,
    "ev": EvParams,
    "reward": RewardConfig,
    "ars": ArsConfig,
    "eval": EvalConfig,
}


def _coerce(section: str, cls, data: dict, errors: list[str]):
    """Build one config dataclass from a mapping, collecting field errors."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            errors.append(f"{section}.{key}: unknown field")
            continue
        ftype = known[key].type
        if key == "green_durations":
            if (not isinstance(value, (list, tuple)) or not value
                    or any(isinstance(v, bool) or not isinstance(v, (int, float))
                           for v in value)):
                errors.append(f"{section}.{key}: expected a list of durations")
                continue
            value = tuple(float(v) for v in value)
        elif key == "mode":
            try:
                value = RewardMode(value)
            except ValueError:
                choices = ", ".join(m.value for m in RewardMode)
                errors.append(f"{section}.{key}: must be one of {choices}")
                continue
        elif ftype == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                errors.append(f"{section}.{key}: expected an integer")
                continue
        elif ftype == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{section}.{key}: expected a number")
                continue
            value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(str(exc))
        return None


def load_scenario(path: Optional[Path | str] = None,
                  overrides: Optional[dict[str, dict[str, Any]]] = None
                  ) -> ScenarioConfig:
    """Resolve a scenario from an optional TOML file plus override mapping.

    ``overrides`` is {section: {field: value}} and wins over the file.
    Raises ConfigError with one line per offending field.
    """
    data: dict[str, Any] = {}
    errors: list[str] = []
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    for section in data:
        if section not in _SECTION_TYPES:
            errors.append(f"{section}: unknown section")
    if overrides:
        for section, fields in overrides.items():
            if section not in _SECTION_TYPES:
                errors.append(f"{section}: unknown section")
                continue
            data.setdefault(section, {})
            data[section] = {**data[section], **fields}

    built = {}
    for section, cls in _SECTION_TYPES.items():
        built[section] = _coerce(section, cls, data.get(section, {}), errors)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return ScenarioConfig(**built)


@dataclass(frozen=True)
class EnvBuilder:
    """Picklable factory producing identically configured environments."""

    scenario: ScenarioConfig
    record_trajectory: bool = False
    reward_mode: Optional[RewardMode] = None  # overrides the scenario reward mode

    def __call__(self) -> PlatoonEnv:
        reward = self.scenario.reward
        if self.reward_mode is not None and reward.mode is not self.reward_mode:
            reward = dataclasses.replace(reward, mode=self.reward_mode)
        return PlatoonEnv(
            self.scenario.world, self.scenario.idm, self.scenario.signal,
            self.scenario.ev, reward, horizon=self.scenario.ars.horizon,
            record_trajectory=self.record_trajectory,
        )
