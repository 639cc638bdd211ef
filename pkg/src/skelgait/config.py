"""Run configuration as flat ``dotted.key = value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .gcn import DEFAULT_CHANNELS, DEFAULT_KT, DEFAULT_STRIDES
from .jrpm import DEFAULT_SCALES, POOL_MODES
from .skeleton import LAYOUT_NAMES


class ValidationError(ValueError):
    pass


# dataclass field -> dotted key
KEYS = {
    "layout": "model.layout",
    "scales": "model.scales",
    "pool_mode": "model.pool_mode",
    "channels": "model.channels",
    "kt": "model.kt",
    "strides": "model.strides",
    "alpha": "model.alpha",
    "out_dim": "model.out_dim",
    "frames": "data.frames",
    "P": "batch.P",
    "K": "batch.K",
    "lam": "loss.lambda",
    "triplet_margin": "loss.triplet_margin",
    "arcface_margin": "loss.arcface_margin",
    "arcface_scale": "loss.arcface_scale",
    "lr": "optim.lr",
    "beta1": "optim.beta1",
    "beta2": "optim.beta2",
    "iterations": "train.iterations",
    "checkpoint_every": "train.checkpoint_every",
    "threads": "train.threads",
    "seed": "train.seed",
    "dataset_root": "data.root",
    "dataset_format": "data.format",
    "protocol": "data.protocol",
    "output_dir": "output.dir",
}
INT_TUPLES = {"scales", "channels", "strides"}


@dataclass
class TrainConfig:
    layout: str = "openpose18"
    scales: tuple[int, ...] = DEFAULT_SCALES
    pool_mode: str = "learned_kernel"
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    kt: int = DEFAULT_KT
    strides: tuple[int, ...] = DEFAULT_STRIDES
    alpha: float = 0.001
    out_dim: int = 512
    frames: int = 120
    P: int = 8
    K: int = 16
    lam: float = 0.9
    triplet_margin: float = 0.2
    arcface_margin: float = 0.35
    arcface_scale: float = 30.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 80000
    checkpoint_every: int = 1000
    threads: int = 1
    seed: int = 0
    dataset_root: str = ""
    dataset_format: str = "openpose_json"
    protocol: str = "casiab"
    output_dir: str = "run"
    extra: dict = field(default_factory=dict, repr=False)

    def reduced(self, blocks: int) -> "TrainConfig":
        """Same config with only the first ``blocks`` backbone blocks."""
        return dataclasses.replace(self, channels=tuple(self.channels[:blocks]),
                                   strides=tuple(self.strides[:blocks]))

    def validate(self) -> "TrainConfig":
        errs = []
        if self.layout not in LAYOUT_NAMES:
            errs.append(f"layout must be one of {LAYOUT_NAMES}")
        if not self.scales or not set(self.scales) <= set(range(1, 7)):
            errs.append(f"scales must be a nonempty subset of 1..6, got {list(self.scales)}")
        if self.pool_mode not in POOL_MODES:
            errs.append(f"pool_mode must be one of {POOL_MODES}")
        if not 0.0 <= self.lam <= 1.0:
            errs.append(f"lambda must lie in [0, 1], got {self.lam}")
        if self.P * self.K < 4:
            errs.append(f"P*K must be at least 4, got {self.P * self.K}")
        if self.P < 2 or self.K < 2:
            errs.append("batch-hard mining needs P >= 2 and K >= 2")
        if len(self.channels) != len(self.strides) or not self.channels:
            errs.append("channels and strides must be nonempty and of equal length")
        if self.kt < 1 or self.kt % 2 == 0:
            errs.append(f"kt must be odd, got {self.kt}")
        if min(self.triplet_margin, self.arcface_margin, self.arcface_scale) < 0:
            errs.append("margins and arcface scale must be nonnegative")
        if self.frames < 1 or self.iterations < 0 or self.out_dim < 1 or self.threads < 1:
            errs.append("frames, out_dim and threads must be positive; iterations nonnegative")
        if self.checkpoint_every < 1:
            errs.append("checkpoint_every must be positive")
        if errs:
            raise ValidationError("; ".join(errs))
        return self

    def to_text(self) -> str:
        lines = []
        for name, key in KEYS.items():
            val = getattr(self, name)
            if name in INT_TUPLES:
                val = ",".join(map(str, val))
            lines.append(f"{key} = {val}")
        for key, val in self.extra.items():
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "TrainConfig":
        by_key = {v: k for k, v in KEYS.items()}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults = cls()
        kwargs, extra = {}, {}
        for key, raw in kv.items():
            name = by_key.get(key)
            if name is None:
                extra[key] = raw
                continue
            default = getattr(defaults, name)
            try:
                if name in INT_TUPLES:
                    kwargs[name] = tuple(int(x) for x in raw.split(",") if x.strip())
                elif isinstance(default, bool):
                    kwargs[name] = raw.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    kwargs[name] = int(raw)
                elif isinstance(default, float):
                    kwargs[name] = float(raw)
                else:
                    kwargs[name] = raw
            except ValueError as exc:
                raise ValidationError(f"{key}: cannot parse {raw!r} as {types[name]}") from exc
        return cls(**kwargs, extra=extra)


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {n}: expected 'key = value'")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def load_config(path, overrides: dict[str, str] | None = None) -> TrainConfig:
    kv = parse_kv(Path(path).read_text()) if path else {}
    kv.update(overrides or {})
    return TrainConfig.from_mapping(kv)
