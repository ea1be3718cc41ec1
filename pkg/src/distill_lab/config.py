"""Experiment configuration: one JSON document, one section per module.

Every section is optional and falls back to defaults; unknown sections or
keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .distill import RgsdConfig, SdsConfig
from .nncore import DenoiserConfig, TrainConfig
from .rgnv import RgnvConfig
from .toyworld import Pose


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SchedulerSection:
    kind: str = "cosine"

    def __post_init__(self) -> None:
        if self.kind not in ("cosine", "linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


@dataclass(frozen=True)
class ToyworldSection:
    train_scenes: int = 64
    views_per_scene: int = 8
    data_seed: int = 0
    scene_seed: int = 3000
    reference_azimuth: float = 0.0
    target_azimuth: float = math.pi / 4
    severity: float = 1.0
    degrade_seed: int = 0


@dataclass(frozen=True)
class RgnvSection:
    config: RgnvConfig = field(default_factory=RgnvConfig)
    sdedit_strength: float = 0.6


@dataclass(frozen=True)
class RepfieldSection:
    grid: int = 48
    init: str = "gray"

    def __post_init__(self) -> None:
        if self.init not in ("gray", "from_reference"):
            raise ValueError(f"unknown field init {self.init!r}")


@dataclass(frozen=True)
class DistillSection:
    sds: SdsConfig = field(default_factory=SdsConfig)
    rgsd: RgsdConfig = field(default_factory=RgsdConfig)
    coarse_T: int = 50
    coarse_iters: int = 400
    refine_iters: int = 200
    loss_kind: str = "rgsd"
    score_every: int = 20
    checkpoint_every: int = 100

    def __post_init__(self) -> None:
        if self.loss_kind not in ("rgsd", "sds", "image"):
            raise ValueError(f"unknown refine loss {self.loss_kind!r}")
        if min(self.coarse_iters, self.refine_iters) < 0 or self.score_every < 1 or self.checkpoint_every < 0:
            raise ValueError("iteration counts must be >= 0 and score_every >= 1")


@dataclass(frozen=True)
class MetricsSection:
    ssim: bool = True


@dataclass(frozen=True)
class CliSection:
    seed: int = 0
    out: str = "runs/default"
    # None: the weights shipped with the package; otherwise a path, relative to the config file
    weights: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    scheduler: SchedulerSection = field(default_factory=SchedulerSection)
    nncore: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    toyworld: ToyworldSection = field(default_factory=ToyworldSection)
    rgnv: RgnvSection = field(default_factory=RgnvSection)
    repfield: RepfieldSection = field(default_factory=RepfieldSection)
    distill: DistillSection = field(default_factory=DistillSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    cli: CliSection = field(default_factory=CliSection)
    base_dir: Path = Path(".")

    def weights_path(self) -> Path | None:
        if self.cli.weights is None:
            return None
        p = Path(self.cli.weights)
        return p if p.is_absolute() else self.base_dir / p

    def out_dir(self, override: str | None = None) -> Path:
        p = Path(override if override is not None else self.cli.out)
        return p if p.is_absolute() or override is not None else self.base_dir / p


def _strict(cls, data: Any, where: str, **converted):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: v for k, v in data.items() if k not in converted}
    kwargs.update({k: v for k, v in converted.items() if v is not None})
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _rgsd(data: dict, where: str) -> RgsdConfig:
    poses = None
    if isinstance(data, dict) and "fixed_azimuths" in data:
        data = dict(data)
        poses = tuple(Pose.from_azimuth(float(a)) for a in data.pop("fixed_azimuths"))
        data["fixed_poses"] = None
    elif isinstance(data, dict) and "fixed_poses" in data:
        raise ConfigError(f"{where}: give fixed poses as 'fixed_azimuths'")
    return _strict(RgsdConfig, data, where, fixed_poses=poses)


def _nested(section: str, data: Any):
    where = f"[{section}]"
    if section == "rgnv":
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object")
        data = dict(data)
        strength = data.pop("sdedit_strength", RgnvSection.sdedit_strength)
        return RgnvSection(_strict(RgnvConfig, data, where), float(strength))
    if section == "distill":
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object")
        sds = _strict(SdsConfig, data.get("sds", {}), f"{where}.sds")
        rgsd = _rgsd(data.get("rgsd", {}), f"{where}.rgsd")
        return _strict(DistillSection, data, where, sds=sds, rgsd=rgsd)
    if section == "nncore":
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected an object")
        data = dict(data)
        train = data.pop("train", {})
        return _strict(DenoiserConfig, data, where), _strict(TrainConfig, train, f"{where}.train")
    cls = {"scheduler": SchedulerSection, "toyworld": ToyworldSection, "repfield": RepfieldSection,
           "metrics": MetricsSection, "cli": CliSection}[section]
    return _strict(cls, data, where)


SECTIONS = ("scheduler", "nncore", "toyworld", "rgnv", "repfield", "distill", "metrics", "cli")


def parse_config(doc: Any, base_dir: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}; expected {', '.join(SECTIONS)}")
    kw: dict[str, Any] = {"base_dir": base_dir}
    for name in SECTIONS:
        if name not in doc:
            continue
        value = _nested(name, doc[name])
        if name == "nncore":
            kw["nncore"], kw["train"] = value
        else:
            kw[name] = value
    return ExperimentConfig(**kw)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)
