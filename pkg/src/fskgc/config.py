"""Training configuration: file-backed dataclass with CLI overrides.

Precedence is CLI flag > config file > built-in default.  Defaults follow
the full-dataset recipe (dim 100, lr 0.001, batch 1024, 30k steps); the
bundled ``configs/synthetic-desk.toml`` shrinks everything to desk scale.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ContractError, FormatError


@dataclass
class TrainConfig:
    shots: int = 5
    dim: int = 100
    margin: float = 1.0
    lam: float = 0.05
    tau: float = 0.5
    wl_depth: int = 2
    lr: float = 0.001
    inner_lr: float = 0.1
    batch: int = 1024
    warmup_steps: int = 0
    max_steps: int = 30000
    eval_every: int = 1000
    seed: int = 0
    transfer: bool = True
    meta: bool = True
    queries: int = 10
    context_cap: int = 50
    false_contexts: int = 1
    heads: int = 4
    msa_heads: int = 4
    pretrain_epochs: int = 0

    def validate(self) -> None:
        if self.shots < 1:
            raise ContractError("shots must be >= 1")
        if self.dim < 1:
            raise ContractError("dim must be >= 1")
        for name in ("lr", "inner_lr", "tau"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.margin < 0 or self.lam < 0:
            raise ContractError("margin and lambda must be nonnegative")
        if self.wl_depth < 0:
            raise ContractError("wl_depth must be >= 0")
        if self.batch < 1:
            raise ContractError("batch must be >= 1")
        if self.max_steps < 0 or self.warmup_steps < 0:
            raise ContractError("step counts must be nonnegative")
        if self.warmup_steps > self.max_steps:
            raise ContractError("warmup_steps cannot exceed max_steps")
        if self.eval_every < 1:
            raise ContractError("eval_every must be >= 1")
        if self.false_contexts < 1:
            raise ContractError("false_contexts must be >= 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_toml(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise FormatError(f"config file {path} not found") from None
        except tomllib.TOMLDecodeError as e:
            raise FormatError(f"{path}: invalid TOML ({e})") from e
        known = set(cls.field_names())
        unknown = set(raw) - known
        if unknown:
            raise FormatError(
                f"{path}: unknown config keys {sorted(unknown)}"
            )
        config = cls(**raw)
        config.validate()
        return config

    def override(self, **kwargs) -> "TrainConfig":
        """New config with non-None overrides applied, then validated."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        config = dataclasses.replace(self, **updates)
        config.validate()
        return config

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
