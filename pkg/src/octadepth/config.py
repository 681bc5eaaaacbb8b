"""Pipeline configuration: one JSON file, strict keys, flag overrides on top."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .losses import LossWeights
from .phantom import PhantomConfig
from .recon3d import ReconConfig
from .train import TOY_PHANTOM, TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration values."""


@dataclass(frozen=True)
class DatasetConfig:
    n: int = 80
    noise_level: float = 0.05
    phantom: PhantomConfig = TOY_PHANTOM

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    threads: int | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)

    def to_dict(self) -> dict:
        ph = self.dataset.phantom.to_dict()
        return {
            "seed": self.seed,
            "threads": self.threads,
            "dataset": {"n": self.dataset.n, "noise_level": self.dataset.noise_level,
                        "phantom": ph},
            "train": {**{f.name: getattr(self.train, f.name) for f in fields(self.train)
                         if f.name != "weights"},
                      "weights": {"vessel": self.train.weights.vessel,
                                  "background": self.train.weights.background}},
            "recon": self.recon.to_dict(),
        }


def _build(cls, data, where: str, nested=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kw = dict(data)
    for key, sub in (nested or {}).items():
        if key in kw:
            kw[key] = sub(kw[key], f"{where}.{key}")
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _phantom(d, where):
    if isinstance(d, dict) and "canvas" in d:
        d = {**d, "canvas": tuple(d["canvas"])}
    return _build(PhantomConfig, d, where)


def from_dict(d: dict) -> PipelineConfig:
    return _build(PipelineConfig, d, "config", {
        "dataset": lambda v, w: _build(DatasetConfig, v, w, {"phantom": _phantom}),
        "train": lambda v, w: _build(TrainConfig, v, w,
                                     {"weights": lambda x, ww: _build(LossWeights, x, ww)}),
        "recon": lambda v, w: _build(ReconConfig, v, w),
    })


def load_config(path=None) -> tuple[PipelineConfig, str]:
    """Parse ``path`` (or defaults) and return the config with the SHA-256 of
    the file bytes (of the empty string when no file is given)."""
    if path is None:
        return PipelineConfig(), hashlib.sha256(b"").hexdigest()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file {p} not found")
    raw = p.read_bytes()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return from_dict(data), hashlib.sha256(raw).hexdigest()


def override(cfg: PipelineConfig, **kw) -> PipelineConfig:
    """Apply flag values (``None`` means not given) to the matching section."""
    top = {k: kw.pop(k) for k in ("seed", "threads") if k in kw and kw[k] is not None}
    sections = {"dataset": {}, "train": {}, "recon": {}}
    for key, value in kw.items():
        if value is None:
            continue
        section, name = key.split(".", 1)
        sections[section][name] = value
    try:
        return replace(cfg, **top,
                       dataset=replace(cfg.dataset, **sections["dataset"]),
                       train=replace(cfg.train, **sections["train"]),
                       recon=replace(cfg.recon, **sections["recon"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
