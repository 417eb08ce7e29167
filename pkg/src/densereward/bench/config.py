"""Experiment configuration and its TOML form."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli_w

from ..errors import ConfigError
from ..physim import KINDS
from ..replearn import ReprConfig, TrainConfig
from ..sacrl import SOURCES, SacHyper
from ..tvfs import SamplingConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class DemoConfig:
    env: str = "block-insertion"
    seed: int = 7
    horizon: int = 500
    stop_on_success: bool = False  # keep recording after success so T equals the horizon

    def __post_init__(self):
        if self.env not in KINDS:
            raise ConfigError(f"unknown env {self.env!r}; expected one of {KINDS}")
        if self.horizon < 1:
            raise ConfigError("demo horizon must be >= 1")


@dataclass(frozen=True)
class ScheduleConfig:
    theta_min: float = math.pi / 12
    theta_max: float = math.pi / 4

    def __post_init__(self):
        if not 0 <= self.theta_min <= self.theta_max <= math.pi:
            raise ConfigError("need 0 <= theta_min <= theta_max <= pi")


@dataclass(frozen=True)
class EvalConfig:
    heldout_seed: int = 11
    move_away_seed: int = 11
    move_away_horizon: int = 300


@dataclass(frozen=True)
class BenchConfig:
    sources: tuple[str, ...] = SOURCES
    seeds: tuple[int, ...] = (0, 1, 2)
    episodes: int = 500
    horizon: int = 50
    action_repeat: int = 10
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        bad = [s for s in self.sources if s not in SOURCES]
        if bad or not self.sources:
            raise ConfigError(f"reward sources must be a non-empty subset of {SOURCES}, got {bad}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list without repeats")
        if self.episodes < 1 or self.horizon < 1 or self.action_repeat < 1 or self.workers < 1:
            raise ConfigError("episodes, horizon, action_repeat and workers must be >= 1")


_SECTIONS = {
    "demo": DemoConfig,
    "sampling": SamplingConfig,
    "schedule": ScheduleConfig,
    "model": ReprConfig,
    "train": TrainConfig,
    "sac": SacHyper,
    "bench": BenchConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    demo: DemoConfig = field(default_factory=DemoConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ReprConfig = field(default_factory=ReprConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sac: SacHyper = field(default_factory=SacHyper)
    bench: BenchConfig = field(default_factory=BenchConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("global seed must be an unsigned 64-bit integer")

    # ------------------------------------------------------------ seeds

    def derived_seed(self, purpose: str) -> int:
        """Stable 32-bit seed for one pipeline component, mixed from the global seed."""
        digest = hashlib.sha256(purpose.encode()).digest()
        ss = np.random.SeedSequence([self.seed, int.from_bytes(digest[:4], "little")])
        return int(ss.generate_state(1, dtype=np.uint32)[0])

    def effective_sampling(self) -> SamplingConfig:
        return replace(self.sampling, seed=self.derived_seed(f"tvfs:{self.sampling.seed}"))

    def effective_model(self) -> ReprConfig:
        return replace(self.model, init_seed=self.derived_seed(f"init:{self.model.init_seed}"))

    def effective_train(self) -> TrainConfig:
        return replace(self.train, seed=self.derived_seed(f"train:{self.train.seed}"))

    def rl_seed(self, seed: int) -> int:
        return self.derived_seed(f"rl:{seed}")

    # ------------------------------------------------------------ serialisation

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "out": self.out}
        for name in _SECTIONS:
            out[name] = _plain(asdict(getattr(self, name)))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        data = dict(data)
        unknown = set(data) - {"seed", "out", *_SECTIONS}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        kw = {}
        for name, typ in _SECTIONS.items():
            section = data.pop(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"[{name}] must be a table")
            allowed = {f.name for f in fields(typ)}
            extra = set(section) - allowed
            if extra:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
            try:
                kw[name] = typ(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
            except TypeError as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        return cls(seed=int(data.get("seed", 0)), out=str(data.get("out", "runs/default")), **kw)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> ExperimentConfig:
        try:
            return cls.from_dict(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid config file: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        return cls.loads(p.read_text())

    def digest(self, *sections: str) -> str:
        """sha256 over the named sections (all when none given) plus the global seed."""
        d = self.to_dict()
        keys = sections or tuple(d)
        sub = {k: d[k] for k in keys}
        sub["seed"] = self.seed
        return hashlib.sha256(json.dumps(sub, sort_keys=True).encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
