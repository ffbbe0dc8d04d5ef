"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

MODES = ("dao", "constant", "single_task")


@dataclass
class TrainConfig:
    mode: str = "dao"
    w_r: float = 0.9
    w_c: float = 0.1
    epochs: int = 100
    batch_size: int = 10
    base_lr: float = 1e-5
    eps: float = 1e-8
    warmup_steps: int = 100
    weight_decay: float = 0.01
    dao_lr: float = 1e-3
    dao_hidden: int = 16
    dao_fc2_init: str = "zeros"
    alpha_init: float = 0.1
    beta_init: float = 1.0
    alpha_max: float = 10.0
    beta_max: float = 5.0
    grad_norm_scope: str = "trunk"
    lora_rank: int = 0
    lora_alpha: float = 0.0
    vocab_size: int = 32768
    d_embed: int = 64
    d_hidden: int = 64
    d_mid: int = 32
    head_dropout: float = 0.1
    zero_init_heads: bool = False
    max_len: int = 512
    seed: int = 42
    data: str = ""
    synth_n: int = 2200
    synth_mix: tuple = (0.05, 0.15, 0.60, 0.15, 0.05)
    synth_noise: float = 0.3
    synth_seed: int = 42
    split_ratio: float = 0.9
    clamp_eval: bool = False
    keep_epoch_checkpoints: bool = False
    eval_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "constant" and abs(self.w_r + self.w_c - 1.0) > 1e-9:
            raise ConfigError(f"constant weights must sum to 1, got w_r={self.w_r}, w_c={self.w_c}")
        if not (0.0 <= self.w_c <= 1.0 and 0.0 <= self.w_r <= 1.0):
            raise ConfigError("constant weights must lie in [0, 1]")
        for name in ("base_lr", "eps", "dao_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.grad_norm_scope not in ("trunk", "all"):
            raise ConfigError("grad_norm_scope must be 'trunk' or 'all'")
        if self.lora_rank < 0:
            raise ConfigError("lora_rank must be >= 0")
        if len(self.synth_mix) != 5:
            raise ConfigError("synth_mix needs five proportions")
        return self

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["synth_mix"] = list(self.synth_mix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "synth_mix" in d:
            d["synth_mix"] = tuple(float(x) for x in d["synth_mix"])
        return cls(**d).validate()


def _coerce(raw: str, typ, key):
    try:
        if typ in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if typ in (tuple, "tuple"):
            return tuple(float(x) for x in raw.replace(" ", ",").split(",") if x)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; keys are TrainConfig fields."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(raw, types[key], key)
    return TrainConfig(**values).validate()


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = ",".join(repr(float(x)) for x in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


__all__ = ["TrainConfig", "MODES", "parse_config_text", "load_config", "dump_config"]
