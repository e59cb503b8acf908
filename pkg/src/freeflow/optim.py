"""Adam, EMA, and the per-step RNG discipline shared by all training loops.

Every step of every loop draws from a fresh generator keyed by
(run seed, step index, purpose tag), so a run is reproducible from its seed
alone and resumable from any step without replaying the stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigurationError("betas must lie in [0, 1)")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: AdamState, cfg: OptimizerConfig
) -> np.ndarray:
    """One Adam update; mutates ``state`` and returns the new parameter vector."""
    b1, b2 = cfg.betas
    if cfg.weight_decay:
        grad = grad + cfg.weight_decay * params
    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad**2
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    return params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def ema_update(ema: np.ndarray, params: np.ndarray, decay: float) -> np.ndarray:
    """ema_n = decay * ema_{n-1} + (1 - decay) * theta_n."""
    return decay * ema + (1.0 - decay) * params


# Purpose tags for per-step generator derivation.
TAG_TEACHER = 0
TAG_PREDICT = 1
TAG_CORRECT = 2
TAG_AUX = 3
TAG_EVAL = 4
TAG_MEANFLOW = 5
TAG_INIT = 6


def step_rng(seed: int, step: int, tag: int = 0) -> np.random.Generator:
    """Independent generator for (seed, step, tag); order of use is free."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, step, tag])))


@dataclass
class LossLog:
    """Append-only per-step records with a fixed column set."""

    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def append(self, **values):
        if set(values) != set(self.columns):
            raise ConfigurationError(
                f"log row keys {sorted(values)} != columns {sorted(self.columns)}"
            )
        self.rows.append(tuple(values[c] for c in self.columns))

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.asarray([r[i] for r in self.rows])
