"""Run configuration: nested dataclasses, JSON files, dotted overrides, presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import InputError
from ..thresholds import MODES as THRESHOLD_MODES


@dataclass
class TaskConfig:
    n_majority: int = 15
    n_minority: int = 5
    labeled_per_majority: int = 500
    labeled_per_minority: int = 10
    n_unlabeled_images: int = 2000
    proposals_per_image: int = 8
    max_objects_per_image: int = 3
    scenario: str = "abundant"  # abundant | scarce
    # relative frequency of a minority class vs a majority class among unlabeled objects
    abundant_minority_ratio: float = 0.6
    dim: int = 16
    separation: float = 5.0
    # > 0 places each minority center this far from a random majority center
    minority_lookalike: float = 0.0
    # probability that each further object in an unlabeled image repeats the first object's class
    instance_repeat: float = 0.0
    noise: float = 1.0
    background_noise: float = 1.0
    eval_per_class: int = 200


@dataclass
class ModuleToggles:
    crs: bool = False
    gbt: bool = False
    gbr: bool = False
    focal: bool = False


@dataclass
class TrainConfig:
    generations: int = 10
    steps_per_generation: int = 500
    burn_in_steps: int = 1000
    labeled_images_per_step: int = 2
    unlabeled_images_per_step: int = 8
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    eta_p: float = 0.9995
    init_scale: float = 0.01
    pseudo_refresh: str = "generation"  # generation | step
    # unlabeled proposals predicted foreground below threshold: ignore | background
    uncertain_unlabeled: str = "ignore"


@dataclass
class LossConfig:
    gamma_focal: float = 2.0


@dataclass
class ReweightConfig:
    eta_g: float = 0.9995
    lr_align: float = 0.01
    beta: float = 0.5
    diag_floor: float = 1e-8
    w_min: float = 1e-3
    w_max_fraction: float = 0.999


@dataclass
class ThresholdConfig:
    # mode used when the gbt toggle is on; "fixed" otherwise
    mode: str = "gbt"
    theta_base: float = 0.9
    theta_min: float = 0.05
    refresh_every: int = 100
    score_quantile: float = 0.95
    score_window: int = 10_000
    score_min_samples: int = 20


@dataclass
class SamplerConfig:
    gamma: float = 0.5
    s_cap: float = 20.0
    tau: float = 0.001
    unlabeled_rule: str = "crs"  # crs | frequency
    labeled_rfs: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    task: TaskConfig = field(default_factory=TaskConfig)
    modules: ModuleToggles = field(default_factory=ModuleToggles)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    reweight: ReweightConfig = field(default_factory=ReweightConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def validate(self) -> "RunConfig":
        t = self.task
        if t.n_majority + t.n_minority <= 0:
            raise InputError("task needs at least one foreground class")
        for name in ("labeled_per_majority", "labeled_per_minority", "n_unlabeled_images",
                     "proposals_per_image", "max_objects_per_image", "dim", "eval_per_class"):
            if getattr(t, name) <= 0:
                raise InputError(f"task.{name} must be positive")
        if t.max_objects_per_image > t.proposals_per_image:
            raise InputError("task.max_objects_per_image exceeds proposals_per_image")
        if t.scenario not in ("abundant", "scarce"):
            raise InputError(f"task.scenario must be 'abundant' or 'scarce', got {t.scenario!r}")
        if self.thresholds.mode not in THRESHOLD_MODES:
            raise InputError(f"thresholds.mode must be one of {THRESHOLD_MODES}")
        if self.train.pseudo_refresh not in ("generation", "step"):
            raise InputError("train.pseudo_refresh must be 'generation' or 'step'")
        if self.train.uncertain_unlabeled not in ("ignore", "background"):
            raise InputError("train.uncertain_unlabeled must be 'ignore' or 'background'")
        if self.sampler.unlabeled_rule not in ("crs", "frequency"):
            raise InputError("sampler.unlabeled_rule must be 'crs' or 'frequency'")
        if self.train.generations <= 0:
            raise InputError("train.generations must be positive")
        return self

    @property
    def threshold_mode(self) -> str:
        return self.thresholds.mode if self.modules.gbt else "fixed"

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, path: str = ""):
    if not isinstance(data, dict):
        raise InputError(f"{path or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise InputError(f"unknown config key(s): {', '.join(path + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}{name}.")
        else:
            kwargs[name] = _coerce(value, default, path + name)
    return cls(**kwargs)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InputError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InputError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise InputError(f"{key}: expected a string, got {value!r}")
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return from_dict(data)


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings; values parse as JSON, else as bare strings."""
    data = cfg.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise InputError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise InputError(f"unknown config key: {key}")
            node = node[part]
        if parts[-1] not in node:
            raise InputError(f"unknown config key: {key}")
        node[parts[-1]] = value
    return from_dict(data)


TOGGLE_NAMES = ("crs", "gbt", "gbr", "focal")

# rows of the component ablation: baseline, single modules, pairs, full
PRESETS = {
    "baseline": (),
    "fl": ("focal",),
    "crs": ("crs",),
    "gbt": ("gbt",),
    "gbr": ("gbr",),
    "crs+gbt": ("crs", "gbt"),
    "crs+gbr": ("crs", "gbr"),
    "gbt+gbr": ("gbt", "gbr"),
    "full": ("crs", "gbt", "gbr", "focal"),
}


def parse_toggles(text: str) -> tuple[str, ...]:
    text = text.strip().lower()
    if text in ("", "none"):
        return ()
    names = tuple(part.strip() for part in text.split(",") if part.strip())
    bad = [n for n in names if n not in TOGGLE_NAMES]
    if bad:
        raise InputError(f"unknown toggle(s) {bad}; expected from {TOGGLE_NAMES}")
    return names


def with_toggles(cfg: RunConfig, names) -> RunConfig:
    data = cfg.to_dict()
    data["modules"] = {name: name in names for name in TOGGLE_NAMES}
    return from_dict(data)


def preset(name: str, base: RunConfig | None = None) -> RunConfig:
    if name not in PRESETS:
        raise InputError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return with_toggles(base or RunConfig(), PRESETS[name])


def schema() -> dict:
    """Nested mapping of every config key to its default value and type name."""

    def walk(obj):
        out = {}
        for f in fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                out[f.name] = walk(value)
            else:
                out[f.name] = {"type": type(value).__name__, "default": value}
        return out

    return walk(RunConfig())
