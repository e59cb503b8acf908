"""The data-free prediction objective.

The student's generating velocity is pulled toward the teacher's velocity at
the student's own predicted state. Per sample: draw a jump duration delta
(logit-normal with a point mass at zero, floored onto the grid in discrete
mode), form the residual

    Delta = v_G(f(z, delta), 1 - delta) - u(f(z, delta), 1 - delta),

optionally move the teacher-evaluation point to a higher noise level t_c
early in training (confident-region warmup), apply a dimension-invariant
power-law weight, and push the weighted residual through the network as a
stop-gradient cotangent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainError
from .flowmap import DeltaGrid, FlowMapModel
from .interpolant import transition
from .net import apply_net, forward, grad_params, jvp_scalar, mean_dot, sg
from .teacher import VelocityField, guided_velocity, heun_slope


@dataclass(frozen=True)
class DeltaSampler:
    """Mixture of LogitNormal(mean, std) and a point mass at delta = 0;
    discrete mode floors draws onto a fixed grid."""

    mean: float = 0.0
    std: float = 1.0
    zero_prob: float = 0.10
    grid: DeltaGrid | None = None

    def __post_init__(self):
        if not 0.0 <= self.zero_prob <= 1.0:
            raise ConfigurationError("zero_prob must lie in [0, 1]")
        if self.std <= 0:
            raise ConfigurationError("std must be positive")

    @property
    def discrete(self) -> bool:
        return self.grid is not None


def sample_delta(
    sampler: DeltaSampler, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray | None]:
    """Draw n jump durations; in discrete mode also return 1-based node
    indices i with delta(i) equal to the floored duration."""
    raw = expit(sampler.mean + sampler.std * rng.standard_normal(n))
    zero = rng.uniform(0.0, 1.0, n) < sampler.zero_prob
    raw = np.where(zero, 0.0, raw)
    if not sampler.discrete:
        return raw, None
    idx = sampler.grid.floor_index(raw)
    return sampler.grid.delta(idx), idx


@dataclass(frozen=True)
class WarmupSchedule:
    """t_c falls linearly from 1 to 0 over ``duration`` steps; duration 0
    disables the warmup entirely."""

    duration: int = 1000

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigurationError("warmup duration must be >= 0")

    def t_c(self, step: int) -> float:
        if self.duration == 0:
            return 0.0
        return max(0.0, 1.0 - step / self.duration)


def confident_eval_point(f_pred, n_noise, delta, t_c):
    """Teacher-query point for the warmup: for t_c above the sample's own
    noise level 1 - delta, move it there with the transition kernel."""
    if not 0.0 <= t_c <= 1.0:
        raise DomainError("t_c must lie in [0, 1]")
    f_pred = np.atleast_2d(np.asarray(f_pred, dtype=np.float64))
    b = f_pred.shape[0]
    t = 1.0 - np.broadcast_to(np.asarray(delta, dtype=np.float64), (b,))
    if t_c == 0.0:
        return f_pred, t
    # transition() treats t = 1 rows as singular; they are inactive anyway
    t_safe = np.minimum(t, 1.0 - 1e-12)
    x_eval = transition(f_pred, n_noise, t_safe, t_c)
    t_eval = np.maximum(t, t_c)
    return x_eval, t_eval


@dataclass(frozen=True)
class PredictConfig:
    delta_sampler: DeltaSampler
    warmup: WarmupSchedule = WarmupSchedule()
    weight_power: float = 1.0
    weight_eps: float = 1e-4
    guidance_interval: tuple[float, float] = (0.0, 1.0)
    teacher_method: str = "heun"

    def __post_init__(self):
        if self.weight_power < 0:
            raise ConfigurationError("weight power k must be >= 0")


def prediction_target_cont(
    model: FlowMapModel,
    u: VelocityField,
    z,
    delta,
    class_ids=None,
    gamma=1.0,
    t_c: float = 0.0,
    n_noise=None,
    interval=(0.0, 1.0),
):
    """Continuous-time target u(f, 1-delta) - delta * dF/ddelta (detached)
    plus the pieces needed for the gradient: (target, F, residual)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    d = np.broadcast_to(np.asarray(delta, dtype=np.float64), (z.shape[0],))
    f_avg, df = jvp_scalar(
        model.spec, model.params, z, {"delta": d, "gamma": gamma}, class_ids, wrt="delta"
    )
    f_pred = z + d[:, None] * f_avg
    if n_noise is None:
        n_noise = np.zeros_like(z)
    x_eval, t_eval = confident_eval_point(f_pred, n_noise, d, t_c)
    u_val = guided_velocity(u, x_eval, t_eval, class_ids, gamma, interval)
    target = u_val - d[:, None] * df
    residual = (f_avg + d[:, None] * df) - u_val  # equals f_avg - target
    return target, f_avg, residual


def prediction_target_disc(
    model: FlowMapModel,
    u: VelocityField,
    z,
    grid: DeltaGrid,
    i,
    class_ids=None,
    gamma=1.0,
    t_c: float = 0.0,
    n_noise=None,
    interval=(0.0, 1.0),
    method: str = "heun",
):
    """Discrete-time target at node i+1; the teacher is queried with a one
    interval solver slope (Euler or Heun) starting at f(z, delta_i).

    Returns (target, F at delta_{i+1}, residual, generating velocity)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    b = z.shape[0]
    idx = np.broadcast_to(np.asarray(i, dtype=np.int64), (b,))
    d_lo = grid.delta(idx)
    d_hi = grid.delta(idx + 1)
    gap = grid.gap(idx)[:, None]

    f_lo = forward(
        model.spec, model.params, z, {"delta": d_lo, "gamma": gamma}, class_ids
    )
    f_hi = forward(
        model.spec, model.params, z, {"delta": d_hi, "gamma": gamma}, class_ids
    )
    x_lo = z + d_lo[:, None] * f_lo
    if n_noise is None:
        n_noise = np.zeros_like(z)
    x_eval, t_eval = confident_eval_point(x_lo, n_noise, d_lo, t_c)
    t_next = np.maximum(t_eval - gap[:, 0], 0.0)
    u_val = heun_slope(u, x_eval, t_eval, t_next, class_ids, gamma, interval, method)

    fd_term = d_lo[:, None] * (f_hi - f_lo) / gap
    target = u_val - fd_term
    residual = f_hi - target
    v_gen = ((z + d_hi[:, None] * f_hi) - x_lo) / gap
    return target, f_hi, residual, v_gen


def weight_and_reduce(
    residuals: np.ndarray, k: float, eps: float = 1e-4
) -> np.ndarray:
    """Per-sample power-law weights 1 / ((|Delta|^2 / d) + eps)^k; the norm is
    divided by sqrt(d) first so the weighting is dimension invariant."""
    if k < 0:
        raise ConfigurationError("weight power k must be >= 0")
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    d = r.shape[1]
    sq = np.sum(r**2, axis=1) / d
    return 1.0 / (sq + eps) ** k


@dataclass
class PredictionBatchStats:
    """Residual summary for one prediction sub-batch."""

    residual_norms: np.ndarray
    weights: np.ndarray
    mean_norm: float
    mean_sq: float
    n_skipped: int


def prediction_grad(
    model: FlowMapModel,
    u: VelocityField,
    cfg: PredictConfig,
    z,
    class_ids,
    gamma,
    t_c: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, PredictionBatchStats]:
    """Parameter gradient of E[F^T sg(weighted Delta)] over one sub-batch.

    Non-finite residual rows are skipped (zeroed and counted), not fatal:
    early in training the student can land far off-manifold.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    b = z.shape[0]
    deltas, idx = sample_delta(cfg.delta_sampler, b, rng)
    n_noise = rng.standard_normal(z.shape)  # drawn even when warmup is over

    if cfg.delta_sampler.discrete:
        _, _, residual, _ = prediction_target_disc(
            model, u, z, cfg.delta_sampler.grid, idx, class_ids, gamma,
            t_c, n_noise, cfg.guidance_interval, cfg.teacher_method,
        )
        grad_delta = cfg.delta_sampler.grid.delta(idx + 1)
    else:
        _, _, residual = prediction_target_cont(
            model, u, z, deltas, class_ids, gamma, t_c, n_noise, cfg.guidance_interval
        )
        grad_delta = deltas

    keep = np.isfinite(residual).all(axis=1)
    n_skipped = int(b - keep.sum())
    residual = np.where(keep[:, None], residual, 0.0)
    weights = weight_and_reduce(residual, cfg.weight_power, cfg.weight_eps)
    weights = np.where(keep, weights, 0.0)
    cotangent = weights[:, None] * residual

    def loss_fn(p):
        f_var = apply_net(
            model.spec, p, z, {"delta": grad_delta, "gamma": gamma}, class_ids
        )
        return mean_dot(f_var, sg(cotangent))

    grad = grad_params(loss_fn, model.params)
    norms = np.linalg.norm(residual, axis=1)
    kept = max(int(keep.sum()), 1)
    stats = PredictionBatchStats(
        residual_norms=norms[keep],
        weights=weights[keep],
        mean_norm=float(norms[keep].sum() / kept),
        mean_sq=float((norms[keep] ** 2).sum() / kept),
        n_skipped=n_skipped,
    )
    return grad, stats
