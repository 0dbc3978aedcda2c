"""Flat ``key=value`` run configuration shared by the CLI and checkpoints."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .data import SPLIT, SyntheticConfig
from .encoder import DEFAULT_LAYERS, KINDS, EncoderConfig
from .errors import ConfigError
from .mtl import TrainConfig


def parse_kv_lines(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{n}: empty key")
        out[k] = v
    return out


def read_kv_file(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_kv_lines(text, str(path))


def parse_overrides(items) -> dict[str, str]:
    return parse_kv_lines("\n".join(items or []), "--set")


def _bool(key: str, v: str) -> bool:
    low = v.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {v!r}")


def _int(key: str, v: str) -> int:
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from None


def _float(key: str, v: str) -> float:
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None


def _floats(key: str, v: str) -> tuple[float, ...]:
    return tuple(_float(key, x) for x in v.split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    encoder: str = "gin"
    layers: int | None = None
    hidden_dim: int = 64
    mlp_depth: int = 2
    virtual_node: bool = True
    dtp: bool = True
    alpha: float = 0.9
    gamma: float = 1.0
    kpi_source: str = "batch"
    lr: float = 0.01
    batch_size: int = 32
    epochs: int = 100
    lr_decay_factor: float = 0.5
    lr_decay_period: int = 20
    seed: int = 0
    split: tuple[float, float, float] = SPLIT
    tasks: tuple[str, ...] = ()  # empty: every label__ column, in header order

    def __post_init__(self):
        if self.encoder not in KINDS:
            raise ConfigError(f"encoder must be one of {KINDS}, got {self.encoder!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigError(f"split must be three non-negative proportions summing to 1, got {self.split}")
        # delegate the remaining range checks
        self.encoder_config()
        self.train_config()

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "RunConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - fields)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kw = {}
        for k, v in values.items():
            if k in ("encoder", "kpi_source"):
                kw[k] = v.strip()
            elif k == "tasks":
                kw[k] = tuple(x.strip() for x in v.split(",") if x.strip())
            elif k == "layers":
                kw[k] = None if v.strip() in ("", "auto") else _int(k, v)
            elif k in ("hidden_dim", "mlp_depth", "batch_size", "epochs", "lr_decay_period", "seed"):
                kw[k] = _int(k, v)
            elif k in ("virtual_node", "dtp"):
                kw[k] = _bool(k, v)
            elif k == "split":
                kw[k] = _floats(k, v)
            else:
                kw[k] = _float(k, v)
        return cls(**kw)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def merged(self, values: Mapping[str, str]) -> "RunConfig":
        base = self.to_mapping()
        base.update(values)
        return RunConfig.from_mapping(base)

    @property
    def label_names(self) -> list[str] | None:
        return list(self.tasks) if self.tasks else None

    @property
    def n_layers(self) -> int:
        return DEFAULT_LAYERS[self.encoder] if self.layers is None else self.layers

    def to_mapping(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "layers" and v is None:
                v = "auto"
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, tuple):
                v = ",".join(x if isinstance(x, str) else repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out[f.name] = str(v)
        return out

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.encoder, self.layers, self.hidden_dim, self.mlp_depth, self.virtual_node)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            lr_decay_factor=self.lr_decay_factor, lr_decay_period=self.lr_decay_period,
            dtp_enabled=self.dtp, alpha=self.alpha, gamma=self.gamma,
            kpi_source=self.kpi_source, seed=self.seed,
        )


def load_run_config(path=None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    values = read_kv_file(path) if path else {}
    values.update(overrides or {})
    return RunConfig.from_mapping(values)


_SYNTH_KEYS = {
    "n_patients": int, "n_events": int, "n_windows": int, "events_per_patient_mean": float,
    "task_count": int, "positive_rates": "floats", "seed": int, "label_noise": float,
    "task_names": "names",
}


def synthetic_config(values: Mapping[str, str]) -> SyntheticConfig:
    unknown = sorted(set(values) - set(_SYNTH_KEYS))
    if unknown:
        raise ConfigError(f"unknown synthetic config key(s): {', '.join(unknown)}")
    kw = {}
    for k, v in values.items():
        kind = _SYNTH_KEYS[k]
        if kind is int:
            kw[k] = _int(k, v)
        elif kind is float:
            kw[k] = _float(k, v)
        elif kind == "floats":
            kw[k] = _floats(k, v)
        else:
            kw[k] = tuple(x.strip() for x in v.split(",") if x.strip())
    if "positive_rates" in kw and "task_count" not in kw:
        kw["task_count"] = len(kw["positive_rates"])
    return SyntheticConfig(**kw)
