"""Run configuration: one JSON document describing memory geometry, placement and tiers."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .hasher import NGramConfig, choose_table_sizes
from .store import SparseAdam, TierConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems) if isinstance(problems, (list, tuple)) else [str(problems)]
        super().__init__("; ".join(self.problems))


@dataclass
class EngramConfig:
    orders: tuple = (2, 3)
    heads: int = 8
    global_seed: int = 0
    budget: int | None = None
    table_sizes: tuple | None = None
    d: int = 64
    d_mem: int = 128
    branches: int = 1
    placements: tuple = (1,)
    kernel_width: int = 4
    vocab: str | None = None
    projection: str | None = None
    optimizer: dict = field(default_factory=dict)
    tiers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.orders = tuple(int(n) for n in self.orders)
        self.placements = tuple(int(p) for p in self.placements)
        if self.table_sizes is not None:
            self.table_sizes = tuple(int(m) for m in self.table_sizes)

    @property
    def num_tables(self) -> int:
        return len(self.orders) * self.heads

    @property
    def d_sub(self) -> int:
        return self.d_mem // self.num_tables

    def problems(self) -> list[str]:
        out = []
        if not self.orders or any(n < 2 for n in self.orders):
            out.append(f"orders must be non-empty and >= 2, got {list(self.orders)}")
        elif list(self.orders) != sorted(set(self.orders)):
            out.append("orders must be strictly ascending")
        if self.heads < 1:
            out.append("heads must be >= 1")
        elif self.d_mem <= 0 or self.d_mem % self.num_tables:
            out.append(f"d_mem={self.d_mem} is not divisible by orders x heads = {self.num_tables}")
        if self.budget is None and self.table_sizes is None:
            out.append("give either budget or table_sizes")
        if self.budget is not None and self.table_sizes is not None:
            out.append("budget and table_sizes are mutually exclusive")
        if not self.placements:
            out.append("at least one placement is required")
        elif any(b <= a for a, b in zip(self.placements, self.placements[1:])):
            out.append(f"placements must be strictly increasing, got {list(self.placements)}")
        elif self.placements[0] < 0:
            out.append("placements must be non-negative")
        if self.d < 1 or self.branches < 1 or self.kernel_width < 1:
            out.append("d, branches and kernel_width must be positive")
        try:
            self.optimizer_config()
        except (TypeError, ValueError) as exc:
            out.append(f"optimizer: {exc}")
        try:
            self.tier_config()
        except (TypeError, ValueError) as exc:
            out.append(f"tiers: {exc}")
        if not out:
            try:
                self.hash_config()
            except ValueError as exc:
                out.append(f"hashing: {exc}")
        return out

    def validate(self) -> "EngramConfig":
        bad = self.problems()
        if bad:
            raise ConfigError(bad)
        return self

    def hash_config(self, layer: int = 0) -> NGramConfig:
        sizes = self.table_sizes
        if sizes is None:
            sizes, _ = choose_table_sizes(self.budget, self.num_tables)
        return NGramConfig(self.orders, self.heads, tuple(sizes), self.global_seed, layer)

    def optimizer_config(self) -> SparseAdam:
        return SparseAdam(**self.optimizer)

    def tier_config(self) -> TierConfig:
        unknown = set(self.tiers) - set(TierConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown keys {sorted(unknown)}")
        return TierConfig(**self.tiers)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("orders", "placements", "table_sizes"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "EngramConfig":
        d = dict(d)
        if "K" in d:  # short spelling used by hash configs
            d.setdefault("heads", d.pop("K"))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError([f"unknown config keys: {sorted(unknown)}"])
        try:
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError([str(exc)]) from exc
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "EngramConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        if not isinstance(raw, dict):
            raise ConfigError(["config must be a JSON object"])
        return cls.from_dict(raw)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()
