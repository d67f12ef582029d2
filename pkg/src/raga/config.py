"""Run configuration: one JSON file plus command-line overrides (flags win)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, Optional

from .encoder import Ablation, HyperParams

MATCHERS = ("local", "daa", "hungarian")


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_entities: int = 300
    n_relations: int = 20
    n_triples: int = 1500
    edge_noise: float = 0.1
    embed_noise: float = 0.5
    seed_ratio: float = 0.3
    dim: int = 8


@dataclass
class RunConfig:
    """Relative paths in a config file resolve against the file's directory."""

    triples1: Optional[str] = None
    triples2: Optional[str] = None
    seeds: Optional[str] = None
    tests: Optional[str] = None
    embeddings1: Optional[str] = None
    embeddings2: Optional[str] = None
    output_dir: str = "run"
    hyper: HyperParams = field(default_factory=HyperParams)
    no_bna: bool = False
    no_rgat: bool = False
    no_fine_grained: bool = False
    aggregate_self: bool = False
    matcher: str = "daa"
    rng_seed: int = 0
    threads: int = 1
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    PATH_KEYS = ("triples1", "triples2", "seeds", "tests", "embeddings1", "embeddings2")

    @property
    def ablation(self) -> Ablation:
        return Ablation(no_bna=self.no_bna, no_rgat=self.no_rgat, aggregate_self=self.aggregate_self)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            hyper = HyperParams(**data.pop("hyper", {}))
            synthetic = SyntheticSpec(**data.pop("synthetic", {}))
            cfg = cls(hyper=hyper, synthetic=synthetic, **data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path=None, overrides: Optional[Dict[str, object]] = None) -> "RunConfig":
        data: dict = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config {path} not found")
            try:
                data = json.loads(p.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path}: {exc}") from None
            base = p.parent
            for key in cls.PATH_KEYS + ("output_dir",):
                if data.get(key) and not Path(data[key]).is_absolute():
                    data[key] = str(base / data[key])
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if name:
                data.setdefault(section, {})[name] = value
            else:
                data[key] = value
        return cls.from_dict(data)

    def check(self) -> None:
        if self.matcher not in MATCHERS:
            raise ConfigError(f"matcher must be one of {MATCHERS}, got {self.matcher!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def require_paths(self, *keys: str) -> None:
        for key in keys:
            value = getattr(self, key)
            if not value:
                raise ConfigError(f"{key} not given")
            if not Path(value).exists():
                raise ConfigError(f"{key} not found: {value}")
