"""The correction objective: align the noising velocity of the student's
generated distribution with the teacher.

An auxiliary network g_psi tracks the noising velocity of the student's
one-step outputs (trained online with the flow-matching loss on pairs
(f(z, 1), n)). The student's correction gradient pushes F(z, 1) along the
stop-gradient residual g_psi - u evaluated at a noised sample I_r(f(z,1), n),
with r drawn from a logit-normal favoring high noise levels. The raw
integral-KL weighting (1-r)^2/r is dropped from the gradient but kept as an
optional diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainError
from .flowmap import FlowMapModel
from .interpolant import interpolate
from .net import NetworkSpec, apply_net, forward, grad_params, mean_dot, mean_sq, sg, transfer_params
from .teacher import TeacherModel, VelocityField, guided_velocity


@dataclass(frozen=True)
class RSampler:
    """LogitNormal(mean, std) noise-level sampler with optional truncation;
    out-of-range draws are rejected and redrawn."""

    mean: float = 0.8
    std: float = 1.6
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.std <= 0:
            raise ConfigurationError("std must be positive")
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ConfigurationError(f"empty truncation range [{self.lo}, {self.hi}]")


def sample_r(sampler: RSampler, n: int, rng: np.random.Generator) -> np.ndarray:
    out = expit(sampler.mean + sampler.std * rng.standard_normal(n))
    bad = (out < sampler.lo) | (out > sampler.hi)
    tries = 0
    while np.any(bad):
        out[bad] = expit(sampler.mean + sampler.std * rng.standard_normal(int(bad.sum())))
        bad = (out < sampler.lo) | (out > sampler.hi)
        tries += 1
        if tries > 10_000:
            raise ConfigurationError("rejection sampling stalled; range too narrow")
    return out


@dataclass
class AuxModel:
    """g_psi(x, t, c, gamma): the student-distribution noising velocity.
    Conditioned on gamma because each guidance strength induces its own
    generated distribution."""

    spec: NetworkSpec
    params: np.ndarray


def aux_spec_like(teacher_spec: NetworkSpec) -> NetworkSpec:
    return NetworkSpec(
        input_dim=teacher_spec.input_dim,
        hidden_dims=teacher_spec.hidden_dims,
        output_dim=teacher_spec.output_dim,
        scalar_conditions=("t", "gamma"),
        class_count=teacher_spec.class_count,
        embed_dim=teacher_spec.embed_dim,
        n_frequencies=teacher_spec.n_frequencies,
    )


def aux_from_teacher(teacher: TeacherModel, rng: np.random.Generator) -> AuxModel:
    """Initialize g_psi from the trained teacher; the new gamma path starts
    inert so g_psi begins exactly at the teacher's velocity."""
    spec = aux_spec_like(teacher.spec)
    return AuxModel(
        spec=spec, params=transfer_params(spec, teacher.spec, teacher.ema, rng)
    )


def aux_loss(
    aux: AuxModel, f_pred, n_noise, r, class_ids=None, gamma=1.0
) -> float:
    """Flow-matching loss of g_psi on pairs (f_pred, n): the conditional
    noising velocity target is f_pred - n. ``f_pred`` must already be
    detached from the student."""
    f_pred = np.atleast_2d(np.asarray(f_pred, dtype=np.float64))
    if f_pred.shape[0] == 0:
        raise DomainError("empty batch")
    x_r = interpolate(f_pred, n_noise, r)
    pred = forward(aux.spec, aux.params, x_r, {"t": r, "gamma": gamma}, class_ids)
    return float(np.mean(np.sum((pred - (f_pred - n_noise)) ** 2, axis=1)))


def aux_grad(
    aux: AuxModel, f_pred, n_noise, r, class_ids=None, gamma=1.0
) -> tuple[float, np.ndarray]:
    f_pred = np.atleast_2d(np.asarray(f_pred, dtype=np.float64))
    if f_pred.shape[0] == 0:
        raise DomainError("empty batch")
    x_r = interpolate(f_pred, n_noise, r)
    target = f_pred - n_noise
    val = {}

    def loss_fn(p):
        out = mean_sq(apply_net(aux.spec, p, x_r, {"t": r, "gamma": gamma}, class_ids) - target)
        val["v"] = float(out.value)
        return out

    grad = grad_params(loss_fn, aux.params)
    return val["v"], grad


@dataclass
class CorrectionBatchStats:
    residual_norms: np.ndarray
    mean_norm: float
    mean_sq: float


def correction_grad(
    model: FlowMapModel,
    aux: AuxModel,
    u: VelocityField,
    z,
    n_noise,
    r,
    class_ids=None,
    gamma=1.0,
    interval: tuple[float, float] = (0.0, 0.7),
) -> tuple[np.ndarray, CorrectionBatchStats]:
    """Gradient of E[F(z,1)^T sg(g_psi - u_gamma)] at noised student samples.

    No gradient flows into g_psi here, and aux_grad never touches the
    student: the two sides only meet through detached residuals.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    f_avg = forward(
        model.spec, model.params, z, {"delta": 1.0, "gamma": gamma}, class_ids
    )
    f_pred = z + f_avg
    x_r = interpolate(f_pred, n_noise, r)
    v_noising = forward(aux.spec, aux.params, x_r, {"t": r, "gamma": gamma}, class_ids)
    u_val = guided_velocity(u, x_r, r, class_ids, gamma, interval)
    residual = v_noising - u_val

    def loss_fn(p):
        f_var = apply_net(model.spec, p, z, {"delta": 1.0, "gamma": gamma}, class_ids)
        return mean_dot(f_var, sg(residual))

    grad = grad_params(loss_fn, model.params)
    norms = np.linalg.norm(residual, axis=1)
    stats = CorrectionBatchStats(
        residual_norms=norms,
        mean_norm=float(norms.mean()),
        mean_sq=float((norms**2).mean()),
    )
    return grad, stats


class IklDiagnostic(NamedTuple):
    """Monte-Carlo surrogate for the integral KL gap: mean squared residual
    between the tracked noising velocity and the teacher, with and without
    the exact-gradient weighting (1-r)^2 / r."""

    unweighted: float
    weighted: float


def ikl_monitor(
    model: FlowMapModel,
    aux: AuxModel,
    u: VelocityField,
    r_sampler: RSampler,
    rng: np.random.Generator,
    n_probe: int = 512,
    class_ids=None,
    gamma=1.0,
    interval: tuple[float, float] = (0.0, 1.0),
) -> IklDiagnostic:
    z = rng.standard_normal((n_probe, model.spec.input_dim))
    n_noise = rng.standard_normal((n_probe, model.spec.input_dim))
    r = sample_r(r_sampler, n_probe, rng)
    f_pred = z + forward(
        model.spec, model.params, z, {"delta": 1.0, "gamma": gamma}, class_ids
    )
    x_r = interpolate(f_pred, n_noise, r)
    v_noising = forward(aux.spec, aux.params, x_r, {"t": r, "gamma": gamma}, class_ids)
    u_val = guided_velocity(u, x_r, r, class_ids, gamma, interval)
    sq = np.sum((v_noising - u_val) ** 2, axis=1)
    w = (1.0 - r) ** 2 / np.maximum(r, 1e-6)
    return IklDiagnostic(unweighted=float(sq.mean()), weighted=float((w * sq).mean()))
