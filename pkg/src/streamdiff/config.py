"""Resolved experiment configuration: YAML file + defaults + flag overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .online import EngineConfig
from .synthgen import SynthConfig
from .training import NoiseRobustConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    n_train: int = 2000
    n_test: int = 200


@dataclass
class EvalConfig:
    modes: tuple = ("online", "online_no_stab", "offline_fullwindow", "resample_baseline")
    noise_level: float = 0.0
    n_sequences: int = 20
    plots: bool = True


@dataclass
class Config:
    synth: SynthConfig = field(default_factory=SynthConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


SECTIONS = {
    "synth": SynthConfig,
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "engine": EngineConfig,
    "eval": EvalConfig,
}


def _known(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def resolve(raw: dict | None = None, overrides: dict | None = None) -> Config:
    """Merge ``raw`` (parsed file) and dotted ``overrides`` over defaults.

    Every unknown key and every invalid value is reported together.
    """
    raw = {k: dict(v or {}) for k, v in (raw or {}).items()}
    errors = []
    for key in raw:
        if key not in SECTIONS:
            errors.append(f"unknown section {key!r}")
    for dotted, value in (overrides or {}).items():
        section, _, name = dotted.partition(".")
        raw.setdefault(section, {})[name] = value
    built = {}
    for name, cls in SECTIONS.items():
        values = raw.get(name, {})
        for key in values:
            if key not in _known(cls):
                errors.append(f"unknown key {name}.{key}")
        values = {k: v for k, v in values.items() if k in _known(cls)}
        if name == "train" and isinstance(values.get("noise_robust"), dict):
            bad = set(values["noise_robust"]) - _known(NoiseRobustConfig)
            errors.extend(f"unknown key train.noise_robust.{k}" for k in sorted(bad))
            values["noise_robust"] = {k: v for k, v in values["noise_robust"].items() if k not in bad}
        try:
            built[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            errors.append(f"{name}: {exc}")
    if not errors:
        tr, en = built["train"], built["engine"]
        for key in ("h", "f", "K"):
            if getattr(tr, key) != getattr(en, key):
                errors.append(f"engine.{key} must equal train.{key}")
        if tr.noise_robust.k_star != en.k_star:
            errors.append("engine.k_star must equal train.noise_robust.k_star")
        if tr.window > built["synth"].n_frames:
            errors.append("synth.n_frames shorter than the training window")
    if errors:
        raise ConfigError("; ".join(errors))
    return Config(**built)


def load_config(path=None, overrides: dict | None = None) -> Config:
    raw = {}
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return resolve(raw, overrides)


def write_resolved(cfg: Config, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.resolved.yaml"
    path.write_text(f"# config hash: {cfg.hash()}\n" + yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    (out_dir / "config.hash").write_text(cfg.hash() + "\n")
    return path
