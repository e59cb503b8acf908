"""Structured-text run configuration with a strict schema.

A run file is TOML with the sections below; every key has a default, unknown
keys are fatal (misspelled hyperparameters must not silently fall back), and
parse -> serialize -> parse is the identity on resolved configs.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .correct import RSampler
from .datasets import Checkerboard, Dataset2D, Gmm, Moons, Rings, ring_gmm
from .errors import ConfigurationError
from .flowmap import DeltaGrid
from .optim import OptimizerConfig
from .predict import DeltaSampler, PredictConfig, WarmupSchedule
from .teacher import SolverConfig
from .trainer import BalanceConfig, DistillConfig, MeanFlowConfig, SplitConfig


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "ring_gmm"
    k: int = 8
    radius: float = 4.0
    sigma: float = 0.3

    def build(self) -> Dataset2D:
        if self.kind == "ring_gmm":
            return ring_gmm(k=self.k, radius=self.radius, sigma=self.sigma)
        if self.kind == "checkerboard":
            return Checkerboard()
        if self.kind == "rings":
            return Rings()
        if self.kind == "moons":
            return Moons()
        raise ConfigurationError(f"unknown dataset kind {self.kind!r}")


@dataclass(frozen=True)
class TeacherSection:
    hidden_dims: list = field(default_factory=lambda: [64, 64, 64])
    embed_dim: int = 32
    n_frequencies: int = 16
    steps: int = 8000
    batch_size: int = 256
    lr: float = 1e-3
    class_dropout: float = 0.1
    ema_decay: float = 0.999


@dataclass(frozen=True)
class SolverSection:
    method: str = "heun"
    steps: int = 50

    def build(self) -> SolverConfig:
        return SolverConfig(method=self.method, steps=self.steps)


@dataclass(frozen=True)
class OptimizerDefaults:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.0

    def build(self, lr: float) -> OptimizerConfig:
        return OptimizerConfig(
            lr=lr, betas=(self.beta1, self.beta2), eps=self.eps,
            weight_decay=self.weight_decay,
        )


@dataclass(frozen=True)
class PredictSection:
    mode: str = "discrete"  # discrete | continuous
    n_intervals: int = 8
    delta_mean: float = 0.0
    delta_std: float = 1.0
    zero_prob: float = 0.1
    warmup_steps: int = 500
    weight_power: float = 1.0
    weight_eps: float = 1e-4
    teacher_method: str = "heun"
    interval_lo: float = 0.0
    interval_hi: float = 1.0

    def build(self) -> PredictConfig:
        if self.mode not in ("discrete", "continuous"):
            raise ConfigurationError(f"unknown prediction mode {self.mode!r}")
        grid = DeltaGrid.uniform(self.n_intervals) if self.mode == "discrete" else None
        return PredictConfig(
            delta_sampler=DeltaSampler(
                mean=self.delta_mean, std=self.delta_std,
                zero_prob=self.zero_prob, grid=grid,
            ),
            warmup=WarmupSchedule(duration=self.warmup_steps),
            weight_power=self.weight_power,
            weight_eps=self.weight_eps,
            guidance_interval=(self.interval_lo, self.interval_hi),
            teacher_method=self.teacher_method,
        )


@dataclass(frozen=True)
class CorrectSection:
    r_mean: float = 0.8
    r_std: float = 1.6
    r_lo: float = 0.0
    r_hi: float = 1.0
    interval_lo: float = 0.0
    interval_hi: float = 0.7

    def build(self) -> RSampler:
        return RSampler(mean=self.r_mean, std=self.r_std, lo=self.r_lo, hi=self.r_hi)


@dataclass(frozen=True)
class BalanceSection:
    alpha_ref: float = 0.3
    t_delay: int = 500
    t_warmup: int = 500
    t_decay: int = 0  # 0 means no decay
    eps: float = 1e-6

    def build(self) -> BalanceConfig:
        return BalanceConfig(
            alpha_ref=self.alpha_ref, t_delay=self.t_delay,
            t_warmup=self.t_warmup,
            t_decay=self.t_decay if self.t_decay > 0 else None,
            eps=self.eps,
        )


@dataclass(frozen=True)
class DistillSection:
    steps: int = 3000
    batch_size: int = 256
    objective: str = "combined"
    prediction_fraction: float = 0.75
    theta_lr: float = 3e-4
    psi_lr: float = 1e-3
    ema_decay: float = 0.999
    gamma_lo: float = 1.0
    gamma_hi: float = 1.0
    conditional: bool = False
    class_dropout: float = 0.1
    ikl_every: int = 0


@dataclass(frozen=True)
class MeanflowSection:
    steps: int = 3000
    batch_size: int = 256
    lr: float = 3e-4
    aug_level: int = 0
    endpoint_prob: float = 0.25
    ema_decay: float = 0.999


@dataclass(frozen=True)
class EvalSection:
    n_samples: int = 65536
    n_projections: int = 128


_SECTIONS = {
    "dataset": DatasetSection,
    "teacher": TeacherSection,
    "solver": SolverSection,
    "optimizer": OptimizerDefaults,
    "predict": PredictSection,
    "correct": CorrectSection,
    "balance": BalanceSection,
    "distill": DistillSection,
    "meanflow": MeanflowSection,
    "eval": EvalSection,
}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection = DatasetSection()
    teacher: TeacherSection = TeacherSection()
    solver: SolverSection = SolverSection()
    optimizer: OptimizerDefaults = OptimizerDefaults()
    predict: PredictSection = PredictSection()
    correct: CorrectSection = CorrectSection()
    balance: BalanceSection = BalanceSection()
    distill: DistillSection = DistillSection()
    meanflow: MeanflowSection = MeanflowSection()
    eval: EvalSection = EvalSection()

    def distill_config(self, seed: int, **overrides) -> DistillConfig:
        d = self.distill
        kw = dict(
            steps=d.steps,
            seed=seed,
            batch_size=d.batch_size,
            objective=d.objective,
            split=SplitConfig(prediction_fraction=d.prediction_fraction),
            predict=self.predict.build(),
            r_sampler=self.correct.build(),
            corr_interval=(self.correct.interval_lo, self.correct.interval_hi),
            balance=self.balance.build(),
            theta_opt=self.optimizer.build(d.theta_lr),
            psi_opt=self.optimizer.build(d.psi_lr),
            ema_decay=d.ema_decay,
            gamma_range=(d.gamma_lo, d.gamma_hi),
            conditional=d.conditional,
            class_dropout=d.class_dropout,
            ikl_every=d.ikl_every,
        )
        kw.update(overrides)
        return DistillConfig(**kw)

    def meanflow_config(self, seed: int, aug_level: int | None = None) -> MeanFlowConfig:
        m = self.meanflow
        return MeanFlowConfig(
            steps=m.steps,
            seed=seed,
            batch_size=m.batch_size,
            aug_level=m.aug_level if aug_level is None else aug_level,
            endpoint_prob=m.endpoint_prob,
            opt=self.optimizer.build(m.lr),
            ema_decay=m.ema_decay,
        )

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}


def _section_from_dict(cls, data: dict, prefix: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigurationError(f"unknown config key {prefix}.{key}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config section [{sorted(unknown)[0]}]")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigurationError(f"config section [{name}] must be a table")
        parts[name] = _section_from_dict(cls, section, name)
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"{path}: {e}") from e
    return config_from_dict(data)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigurationError(f"cannot serialize config value {v!r}")


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, value in asdict(getattr(cfg, name)).items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(
        json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    ).hexdigest()


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """CLI ``--set section.key=value`` overrides; values parse as TOML."""
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not section.key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigurationError(f"override key {key!r} is not section.key")
        section, name = parts
        try:
            parsed = tomllib.loads(f"v = {raw.strip()}")["v"]
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"cannot parse override value {raw!r}: {e}") from e
        if section not in data:
            raise ConfigurationError(f"unknown config section [{section}]")
        data[section][name] = parsed
    return config_from_dict(data)
