"""Experiment configuration: strict JSON parsing into typed config objects."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core_math import derive_seed
from .encoder import Architecture, BclMethod, MethodKind, TrainConfig
from .errors import ConfigError
from .losses import LossConfig
from .ndpp import NdppConfig
from .odpp import OdppConfig
from .synth import SynthConfig

ARCH_KEYS = ("hidden", "embed_dim", "logit_mode", "logit_tau")
SWEEP_PARAMS = ("alpha1", "alpha2", "K", "theta_old", "theta_new", "gamma", "lambda", "tau")


@dataclass(frozen=True)
class StageConfig:
    train: TrainConfig
    hidden: tuple
    embed_dim: int
    logit_mode: str = "cosine"
    logit_tau: float = 0.07

    def arch(self, input_dim: int) -> Architecture:
        return Architecture(input_dim, self.hidden, self.embed_dim, self.logit_mode, self.logit_tau)


@dataclass(frozen=True)
class EvalConfig:
    pca: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: Path
    data: SynthConfig
    old_train: StageConfig
    new_train: StageConfig
    method: BclMethod
    eval: EvalConfig = field(default_factory=EvalConfig)

    def stage_seed(self, *labels) -> int:
        return derive_seed(self.seed, *labels)

    def old_stage(self) -> TrainConfig:
        return replace(self.old_train.train, seed=self.stage_seed("old_train"))

    def new_stage(self) -> TrainConfig:
        return replace(self.new_train.train, seed=self.stage_seed("new_train"))

    def with_method(self, name: str) -> "ExperimentConfig":
        m = self.method
        return replace(self, method=BclMethod.named(name, ndpp=m.ndpp, odpp=m.odpp, loss=m.loss))

    def with_param(self, name: str, value) -> "ExperimentConfig":
        m = self.method
        if name in ("alpha1", "alpha2", "K"):
            v = int(value) if name == "K" else float(value)
            m = replace(m, ndpp=replace(m.ndpp, **{name: v}))
        elif name in ("theta_old", "theta_new", "gamma"):
            m = replace(m, odpp=replace(m.odpp, **{name: float(value)}))
        elif name == "lambda":
            m = replace(m, loss=replace(m.loss, lam=float(value)))
        elif name == "tau":
            m = replace(m, loss=replace(m.loss, tau=float(value)))
        else:
            raise ConfigError(f"unknown sweep parameter {name!r}; choose from {SWEEP_PARAMS}", "param")
        return replace(self, method=m)


def _fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _strict(section: str, d, allowed) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object", section)
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}", f"{section}.{unknown[0]}")
    return d


def _build(section: str, cls, d: dict, **extra):
    try:
        return cls(**d, **extra)
    except ConfigError as e:
        raise ConfigError(f"{section}.{e.field}: {e}", f"{section}.{e.field}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}", section) from None


DEFAULTS = {
    "seed": 17,
    "output_dir": "runs/default",
    "data": {},
    "old_train": {"epochs": 5, "hidden": [16], "embed_dim": 32},
    "new_train": {"epochs": 30, "hidden": [128], "embed_dim": 32},
    "method": {"name": "ndpp", "tau": 0.07, "lambda": 1.0,
               "ndpp": {"alpha1": 0.5, "alpha2": 0.5, "K": 1},
               "odpp": {"inner_lr": 0.01}},
    "eval": {"pca": True},
}


def _stage(section: str, d: dict) -> StageConfig:
    d = dict(_strict(section, d, _fields(TrainConfig) - {"seed"} | set(ARCH_KEYS)))
    arch = {k: d.pop(k) for k in ARCH_KEYS if k in d}
    train = _build(section, TrainConfig, d)
    try:
        stage = StageConfig(train, tuple(arch.get("hidden", (64,))), int(arch.get("embed_dim", 32)),
                            arch.get("logit_mode", "cosine"), float(arch.get("logit_tau", 0.07)))
        stage.arch(2)
    except ConfigError as e:
        raise ConfigError(f"{section}.{e.field}: {e}", f"{section}.{e.field}") from None
    return stage


def _method(d: dict) -> BclMethod:
    d = _strict("method", d, {"name", "tau", "lambda", "ndpp", "odpp"})
    nd = _strict("method.ndpp", d.get("ndpp", {}), _fields(NdppConfig) - {"use_joint"})
    od = _strict("method.odpp", d.get("odpp", {}), _fields(OdppConfig) - {"use_joint"})
    name = d.get("name", "baseline")
    try:
        MethodKind(str(name).replace("_", "-"))
    except ValueError:
        raise ConfigError(f"method.name {name!r} is not one of "
                          f"{[k.value for k in MethodKind]}", "method.name") from None
    loss = _build("method", LossConfig, {}, tau=d.get("tau", 0.07), lam=d.get("lambda", 1.0))
    return BclMethod.named(name, ndpp=_build("method.ndpp", NdppConfig, nd),
                           odpp=_build("method.odpp", OdppConfig, od), loss=loss)


def _merged(raw: dict, key: str) -> dict:
    base = dict(DEFAULTS[key])
    user = raw.get(key, {})
    if not isinstance(user, dict):
        raise ConfigError(f"section {key!r} must be an object", key)
    for k, v in user.items():
        base[k] = {**base[k], **v} if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return base


def from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a raw config document; missing keys fall back to :data:`DEFAULTS`."""
    raw = _strict("config", raw, set(DEFAULTS))
    seed = raw.get("seed", DEFAULTS["seed"])
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer", "seed")
    data = dict(_strict("data", raw.get("data", {}), _fields(SynthConfig) - {"seed"}))
    synth = _build("data", SynthConfig, data, seed=derive_seed(seed, "data"))
    try:
        synth.validate()
    except ConfigError as e:
        raise ConfigError(f"data.{e.field}: {e}", f"data.{e.field}") from None
    out = Path(raw.get("output_dir", DEFAULTS["output_dir"]))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    ev = _strict("eval", raw.get("eval", {}), _fields(EvalConfig))
    return ExperimentConfig(
        seed=seed, output_dir=out, data=synth,
        old_train=_stage("old_train", _merged(raw, "old_train")),
        new_train=_stage("new_train", _merged(raw, "new_train")),
        method=_method(_merged(raw, "method")),
        eval=_build("eval", EvalConfig, ev))


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", "config") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}", "config") from None
    return from_dict(raw, path.parent)


def default_config(**overrides) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    cfg.update(overrides)
    return cfg
