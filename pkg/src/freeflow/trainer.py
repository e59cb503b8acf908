"""Joint distillation loop and the data-based baseline.

One outer step: update the auxiliary noising-velocity net on fresh student
outputs, then update the student with the prediction gradient plus the
correction gradient scaled by an adaptive lambda. Per-purpose RNG streams are
derived from (seed, step, tag), so every arm of a study consumes identical
draws and an alpha = 0 run reproduces prediction-only training bit for bit.

Gradients are normalized by the full batch size, so with the default 75/25
split an alpha of 0.3 puts the correction contribution near 10% of the
prediction contribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .correct import (
    AuxModel,
    RSampler,
    aux_from_teacher,
    aux_grad,
    correction_grad,
    ikl_monitor,
    sample_r,
)
from .datasets import Dataset2D, augment, sample_data
from .errors import ConfigurationError, TrainingDiverged
from .flowmap import DeltaGrid, FlowMapModel, flowmap_apply, student_from_teacher
from .net import NetworkSpec, apply_net, forward, forward_jvp, grad_params, mean_sq, sg
from .optim import (
    TAG_AUX,
    TAG_CORRECT,
    TAG_INIT,
    TAG_MEANFLOW,
    TAG_PREDICT,
    AdamState,
    LossLog,
    OptimizerConfig,
    adam_step,
    ema_update,
    step_rng,
)
from .predict import DeltaSampler, PredictConfig, WarmupSchedule, prediction_grad
from .teacher import TeacherModel, VelocityField


@dataclass(frozen=True)
class BalanceConfig:
    """Inverse-square-root alpha schedule with delay and linear warmup;
    decay None means no decay."""

    alpha_ref: float = 0.3
    t_delay: int = 1000
    t_warmup: int = 1000
    t_decay: int | None = None
    eps: float = 1e-6

    def __post_init__(self):
        if self.alpha_ref < 0:
            raise ConfigurationError("alpha_ref must be >= 0")
        if self.t_delay < 0 or self.t_warmup < 0:
            raise ConfigurationError("schedule steps must be >= 0")
        if self.t_decay is not None and self.t_decay <= 0:
            raise ConfigurationError("t_decay must be positive or None")


def alpha_at(cfg: BalanceConfig, n: int) -> float:
    if n < cfg.t_delay:
        return 0.0
    if cfg.t_warmup == 0:
        ramp = 1.0
    else:
        ramp = min(max((n - cfg.t_delay) / cfg.t_warmup, 0.0), 1.0)
    decay = 1.0 if cfg.t_decay is None else math.sqrt(max(n / cfg.t_decay, 1.0))
    return cfg.alpha_ref * ramp / decay


def balance_lambda(
    pred_mean_norm: float, corr_mean_norm: float, alpha: float, eps: float = 1e-6
) -> float:
    """lambda = alpha * E|Delta_pred| / (E|Delta_corr| + eps)."""
    return alpha * pred_mean_norm / (corr_mean_norm + eps)


@dataclass(frozen=True)
class SplitConfig:
    prediction_fraction: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.prediction_fraction < 1.0:
            raise ConfigurationError("prediction fraction must lie in (0, 1)")

    def sizes(self, batch: int) -> tuple[int, int]:
        n_pred = int(round(batch * self.prediction_fraction))
        n_corr = batch - n_pred
        if n_pred < 1 or n_corr < 1:
            raise ConfigurationError(f"batch {batch} leaves an empty sub-batch")
        return n_pred, n_corr


@dataclass(frozen=True)
class DistillConfig:
    """Everything one distillation run depends on."""

    steps: int
    seed: int = 0
    batch_size: int = 256
    objective: str = "combined"  # combined | prediction | correction
    split: SplitConfig = SplitConfig()
    predict: PredictConfig = field(
        default_factory=lambda: PredictConfig(
            delta_sampler=DeltaSampler(grid=DeltaGrid.uniform(8)),
            warmup=WarmupSchedule(duration=1000),
        )
    )
    r_sampler: RSampler = RSampler()
    corr_interval: tuple[float, float] = (0.0, 0.7)
    balance: BalanceConfig = BalanceConfig()
    theta_opt: OptimizerConfig = OptimizerConfig(lr=3e-4)
    psi_opt: OptimizerConfig = OptimizerConfig(lr=1e-3)
    ema_decay: float = 0.999
    gamma_range: tuple[float, float] = (1.0, 1.0)
    conditional: bool = False
    class_dropout: float = 0.1
    ikl_every: int = 0  # 0 disables the diagnostic

    def __post_init__(self):
        if self.objective not in ("combined", "prediction", "correction"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if not 1.0 <= self.gamma_range[0] <= self.gamma_range[1]:
            raise ConfigurationError("gamma range must satisfy 1 <= lo <= hi")


METRIC_COLUMNS = (
    "step", "alpha", "lambda", "t_c",
    "pred_mean_norm", "pred_mean_sq", "pred_skipped",
    "corr_mean_norm", "corr_mean_sq", "aux_loss",
    "grad_norm",
)


@dataclass
class DistillState:
    student: FlowMapModel
    aux: AuxModel | None
    theta_state: AdamState
    psi_state: AdamState | None
    step: int = 0
    metrics: LossLog = field(default_factory=lambda: LossLog(columns=METRIC_COLUMNS))
    ikl_log: LossLog = field(
        default_factory=lambda: LossLog(columns=("step", "ikl", "ikl_weighted"))
    )


def distill_init(teacher: TeacherModel, cfg: DistillConfig) -> DistillState:
    init_rng = step_rng(cfg.seed, 0, TAG_INIT)
    student = student_from_teacher(teacher, init_rng)
    aux = psi_state = None
    if cfg.objective != "prediction":
        aux = aux_from_teacher(teacher, init_rng)
        psi_state = AdamState.zeros(aux.params.size)
    return DistillState(
        student=student,
        aux=aux,
        theta_state=AdamState.zeros(student.params.size),
        psi_state=psi_state,
    )


def _draw_conditioning(cfg: DistillConfig, n: int, class_count: int, rng):
    gamma = rng.uniform(cfg.gamma_range[0], cfg.gamma_range[1], n)
    if not cfg.conditional:
        return None, gamma
    ids = rng.integers(0, class_count, n)
    drop = rng.uniform(0.0, 1.0, n) < cfg.class_dropout
    return np.where(drop, class_count, ids), gamma


def distill_step(
    state: DistillState, cfg: DistillConfig, u: VelocityField
) -> DistillState:
    """One outer step; fully reproducible from (cfg.seed, state.step)."""
    n = state.step
    dim = state.student.spec.input_dim
    classes = state.student.spec.class_count
    n_pred, n_corr = cfg.split.sizes(cfg.batch_size)
    alpha = alpha_at(cfg.balance, n)
    t_c = cfg.predict.warmup.t_c(n)

    g_total = np.zeros_like(state.student.params)
    lam = 0.0
    row = dict.fromkeys(METRIC_COLUMNS, float("nan"))
    row.update(step=n, alpha=alpha, t_c=t_c)

    if cfg.objective != "correction":
        rng_p = step_rng(cfg.seed, n, TAG_PREDICT)
        z_p = rng_p.standard_normal((n_pred, dim))
        ids_p, gamma_p = _draw_conditioning(cfg, n_pred, classes, rng_p)
        g_pred, p_stats = prediction_grad(
            state.student, u, cfg.predict, z_p, ids_p, gamma_p, t_c, rng_p
        )
        g_total += (n_pred / cfg.batch_size) * g_pred
        row.update(
            pred_mean_norm=p_stats.mean_norm,
            pred_mean_sq=p_stats.mean_sq,
            pred_skipped=p_stats.n_skipped,
        )

    if cfg.objective != "prediction":
        rng_c = step_rng(cfg.seed, n, TAG_CORRECT)
        z_c = rng_c.standard_normal((n_corr, dim))
        ids_c, gamma_c = _draw_conditioning(cfg, n_corr, classes, rng_c)
        n_corr_noise = rng_c.standard_normal((n_corr, dim))
        r_corr = sample_r(cfg.r_sampler, n_corr, rng_c)

        rng_a = step_rng(cfg.seed, n, TAG_AUX)
        n_aux = rng_a.standard_normal((n_corr, dim))
        r_aux = sample_r(cfg.r_sampler, n_corr, rng_a)

        # psi first, on the same detached student outputs the correction uses
        f_pred = flowmap_apply(state.student, z_c, 1.0, ids_c, gamma_c)
        loss_aux, g_aux = aux_grad(state.aux, f_pred, n_aux, r_aux, ids_c, gamma_c)
        state.aux.params = adam_step(state.aux.params, g_aux, state.psi_state, cfg.psi_opt)

        g_corr, c_stats = correction_grad(
            state.student, state.aux, u, z_c, n_corr_noise, r_corr,
            ids_c, gamma_c, cfg.corr_interval,
        )
        if cfg.objective == "correction":
            lam = 1.0
        else:
            lam = balance_lambda(
                row["pred_mean_norm"], c_stats.mean_norm, alpha, cfg.balance.eps
            )
        if lam != 0.0:
            g_total += lam * (n_corr / cfg.batch_size) * g_corr
        row.update(
            corr_mean_norm=c_stats.mean_norm,
            corr_mean_sq=c_stats.mean_sq,
            aux_loss=loss_aux,
        )

    if not np.isfinite(g_total).all():
        raise TrainingDiverged(f"non-finite student gradient at step {n}")
    state.student.params = adam_step(
        state.student.params, g_total, state.theta_state, cfg.theta_opt
    )
    state.student.ema = ema_update(state.student.ema, state.student.params, cfg.ema_decay)

    row.update(**{"lambda": lam, "grad_norm": float(np.linalg.norm(g_total))})
    state.metrics.append(**row)

    if cfg.ikl_every and state.aux is not None and n % cfg.ikl_every == 0:
        diag = ikl_monitor(
            state.student, state.aux, u, cfg.r_sampler,
            step_rng(cfg.seed, n, TAG_AUX + 100),
        )
        state.ikl_log.append(step=n, ikl=diag.unweighted, ikl_weighted=diag.weighted)

    state.step += 1
    return state


def distill_run(
    teacher: TeacherModel,
    cfg: DistillConfig,
    *,
    u: VelocityField | None = None,
    callback=None,
) -> DistillState:
    """Run cfg.steps outer steps against a frozen teacher (EMA weights by
    default). ``callback(state)`` fires after every step when given."""
    state = distill_init(teacher, cfg)
    u = teacher.velocity() if u is None else u
    for _ in range(cfg.steps):
        state = distill_step(state, cfg, u)
        if callback is not None:
            callback(state)
    return state


# ---------------------------------------------------------------------------
# Data-based MeanFlow baseline for the mismatch study.


@dataclass(frozen=True)
class MeanFlowConfig:
    steps: int
    seed: int = 0
    batch_size: int = 256
    aug_level: int = 0
    endpoint_prob: float = 0.25  # fraction of draws pinned to (t, s) = (1, 0)
    opt: OptimizerConfig = OptimizerConfig(lr=3e-4)
    ema_decay: float = 0.999


@dataclass
class MeanFlowModel:
    """Data-based student f(x_t, t, s) = x_t + (t - s) * F(x_t, t, s)."""

    spec: NetworkSpec
    params: np.ndarray
    ema: np.ndarray


def meanflow_from_teacher(
    teacher: TeacherModel, rng: np.random.Generator
) -> MeanFlowModel:
    from .net import transfer_params

    spec = NetworkSpec(
        input_dim=teacher.spec.input_dim,
        hidden_dims=teacher.spec.hidden_dims,
        output_dim=teacher.spec.output_dim,
        scalar_conditions=("t", "s"),
        class_count=teacher.spec.class_count,
        embed_dim=teacher.spec.embed_dim,
        n_frequencies=teacher.spec.n_frequencies,
    )
    params = transfer_params(spec, teacher.spec, teacher.ema, rng)
    return MeanFlowModel(spec=spec, params=params, ema=params.copy())


def meanflow_sample(model: MeanFlowModel, z, use_ema: bool = True) -> np.ndarray:
    """One-NFE generation: f(z, 1, 0) = z + F(z, 1, 0)."""
    params = model.ema if use_ema else model.params
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return z + forward(model.spec, params, z, {"t": 1.0, "s": 0.0}, None)


def meanflow_target(
    model: MeanFlowModel, u: VelocityField, x_t, t, s
) -> tuple[np.ndarray, np.ndarray]:
    """Stop-gradient target u(x_t, t) - (t - s) * dF/dt, with the total
    derivative taken along the noising flow direction (dx/dt = -u, dt = 1).
    Returns (F, target)."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    b = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (b,))
    u_val = u(x_t, t, None)
    f_avg, df_total = forward_jvp(
        model.spec, model.params, x_t, {"t": t, "s": s}, None,
        x_tangent=-u_val, scalar_tangents={"t": 1.0},
    )
    target = u_val - ((t - s)[:, None]) * df_total
    return f_avg, target


def meanflow_step(
    model: MeanFlowModel,
    state: AdamState,
    cfg: MeanFlowConfig,
    u: VelocityField,
    dataset: Dataset2D,
    step: int,
    log: LossLog,
) -> None:
    """One data-based distillation step on (augmented) dataset samples."""
    rng = step_rng(cfg.seed, step, TAG_MEANFLOW)
    x = sample_data(dataset, None, cfg.batch_size, rng)
    x = augment(x, cfg.aug_level, rng)
    z = rng.standard_normal(x.shape)
    a = rng.uniform(0.0, 1.0, cfg.batch_size)
    b = rng.uniform(0.0, 1.0, cfg.batch_size)
    t, s = np.maximum(a, b), np.minimum(a, b)
    pin = rng.uniform(0.0, 1.0, cfg.batch_size) < cfg.endpoint_prob
    t, s = np.where(pin, 1.0, t), np.where(pin, 0.0, s)

    x_t = (1.0 - t)[:, None] * x + t[:, None] * z
    _, target = meanflow_target(model, u, x_t, t, s)

    val = {}

    def loss_fn(p):
        out = mean_sq(apply_net(model.spec, p, x_t, {"t": t, "s": s}, None) - sg(target))
        val["v"] = float(out.value)
        return out

    grad = grad_params(loss_fn, model.params)
    if not np.isfinite(grad).all():
        raise TrainingDiverged(f"non-finite baseline gradient at step {step}")
    model.params = adam_step(model.params, grad, state, cfg.opt)
    model.ema = ema_update(model.ema, model.params, cfg.ema_decay)
    log.append(step=step, loss=val["v"])


def meanflow_run(
    teacher: TeacherModel, cfg: MeanFlowConfig, dataset: Dataset2D
) -> tuple[MeanFlowModel, LossLog]:
    model = meanflow_from_teacher(teacher, step_rng(cfg.seed, 0, TAG_INIT))
    state = AdamState.zeros(model.params.size)
    log = LossLog(columns=("step", "loss"))
    u = teacher.velocity()
    for n in range(cfg.steps):
        meanflow_step(model, state, cfg, u, dataset, n, log)
    return model, log
