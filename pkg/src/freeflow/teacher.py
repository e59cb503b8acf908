"""Velocity fields, classifier-free guidance, ODE solving, and conditional
flow-matching training of the teacher.

A velocity field maps (x, t, class_ids) to the marginal velocity of the
noising process; sampling integrates dx = -u dt backward from t=1 to t=0.
Three implementations: a conditional MLP, the exact posterior velocity of an
isotropic Gaussian mixture (the analytic oracle), and arbitrary callables for
solver tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .datasets import Dataset2D, Gmm, sample_labeled
from .errors import ConfigurationError, DomainError, IntegrationError, TrainingDiverged
from .net import NetworkSpec, apply_net, forward, grad_params, init_params, mean_sq, sg
from .optim import (
    TAG_TEACHER,
    AdamState,
    LossLog,
    OptimizerConfig,
    adam_step,
    ema_update,
    step_rng,
)


@dataclass(frozen=True)
class NetVelocity:
    """Learned marginal velocity u(x, t | c); class None or the null index
    selects the unconditional branch."""

    spec: NetworkSpec
    params: np.ndarray

    def __call__(self, x, t, class_ids=None) -> np.ndarray:
        return forward(self.spec, self.params, x, {"t": t}, class_ids)


@dataclass(frozen=True)
class GmmVelocity:
    """Exact marginal velocity for isotropic-GMM data under the linear bridge.

    Per component: posterior mean of (x0 - z) given x_t, mixed by the
    component responsibilities of the noised marginal. Conditioning on a
    class restricts to that component.
    """

    gmm: Gmm

    def __call__(self, x, t, class_ids=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        b, d = x.shape
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
        mu = self.gmm.means
        sig2 = self.gmm.sigmas**2
        one_m_t = (1.0 - t)[:, None]
        m = one_m_t[:, :, None] * mu[None, :, :]  # (b, k, d)
        v = one_m_t**2 * sig2[None, :] + (t**2)[:, None]  # (b, k)
        diff = x[:, None, :] - m
        coeff = (one_m_t * sig2[None, :] - t[:, None]) / v
        u_k = mu[None, :, :] + coeff[:, :, None] * diff  # (b, k, d)

        log_resp = (
            -0.5 * np.sum(diff**2, axis=2) / v
            - 0.5 * d * np.log(v)
            + np.log(self.gmm.weights)[None, :]
        )
        log_resp -= log_resp.max(axis=1, keepdims=True)
        resp = np.exp(log_resp)
        resp /= resp.sum(axis=1, keepdims=True)
        u_mix = np.einsum("bk,bkd->bd", resp, u_k)

        if class_ids is None:
            return u_mix
        ids = np.broadcast_to(np.asarray(class_ids, dtype=np.int64), (b,))
        k = self.gmm.class_count
        if ids.min() < 0 or ids.max() > k:
            raise DomainError("class id outside [0, class_count]")
        cond = u_k[np.arange(b), np.clip(ids, 0, k - 1)]
        return np.where((ids == k)[:, None], u_mix, cond)


@dataclass(frozen=True)
class CallableVelocity:
    """Wrap a plain f(x, t) -> velocity; ignores class conditioning."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, x, t, class_ids=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return np.asarray(self.fn(x, t), dtype=np.float64)


VelocityField = Callable  # anything with (x, t, class_ids=None) -> (b, d)


def guided_velocity(
    u: VelocityField,
    x,
    t,
    class_ids,
    gamma,
    interval: tuple[float, float] = (0.0, 1.0),
) -> np.ndarray:
    """gamma * u(.|c) + (1 - gamma) * u(.|null), active only inside the
    guidance interval; outside it (or at gamma = 1) the conditional branch is
    returned unchanged."""
    lo, hi = interval
    if not 0.0 <= lo <= hi <= 1.0:
        raise DomainError(f"bad guidance interval [{lo}, {hi}]")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    b = x.shape[0]
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    g = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (b,))
    if np.any(g < 1.0):
        raise DomainError("guidance strength must be >= 1")

    cond = u(x, t_arr, class_ids)
    active = (g != 1.0) & (t_arr >= lo) & (t_arr <= hi)
    if class_ids is None or not np.any(active):
        return cond
    uncond = u(x, t_arr, None)
    mixed = g[:, None] * cond + (1.0 - g)[:, None] * uncond
    return np.where(active[:, None], mixed, cond)


@dataclass(frozen=True)
class SolverConfig:
    """Time grid 1 = t_1 > ... > t_{N+1} = 0 plus the update stencil."""

    method: str = "heun"
    steps: int = 50
    schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.method not in ("euler", "heun"):
            raise ConfigurationError(f"unknown solver method {self.method!r}")
        if self.steps < 1:
            raise ConfigurationError("solver needs at least one step")
        if self.schedule is not None:
            s = np.asarray(self.schedule, dtype=np.float64)
            if s[0] != 1.0 or s[-1] != 0.0 or np.any(np.diff(s) >= 0):
                raise ConfigurationError(
                    "schedule must decrease strictly from exactly 1 to exactly 0"
                )
            if len(s) != self.steps + 1:
                raise ConfigurationError("schedule length must be steps + 1")

    def grid(self) -> np.ndarray:
        if self.schedule is not None:
            return np.asarray(self.schedule, dtype=np.float64)
        g = np.linspace(1.0, 0.0, self.steps + 1)
        g[0], g[-1] = 1.0, 0.0
        return g


def _restrict_grid(grid: np.ndarray, t_from: float, t_to: float) -> np.ndarray:
    inner = grid[(grid < t_from) & (grid > t_to)]
    return np.concatenate([[t_from], inner, [t_to]])


def heun_slope(
    u: VelocityField,
    x,
    t,
    t_next,
    class_ids=None,
    gamma=1.0,
    interval=(0.0, 1.0),
    method: str = "heun",
) -> np.ndarray:
    """Effective velocity of one solver step from t down to t_next.

    Euler returns the instantaneous guided velocity at (x, t); Heun averages
    it with the velocity at the predicted endpoint. Times may be per-sample.
    """
    k1 = guided_velocity(u, x, t, class_ids, gamma, interval)
    if method == "euler":
        return k1
    if method != "heun":
        raise ConfigurationError(f"unknown solver method {method!r}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    b = x.shape[0]
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    tn = np.broadcast_to(np.asarray(t_next, dtype=np.float64), (b,))
    dt = (t_arr - tn)[:, None]
    x_pred = x + dt * k1
    k2 = guided_velocity(u, x_pred, tn, class_ids, gamma, interval)
    return 0.5 * (k1 + k2)


def solve(
    u: VelocityField,
    z: np.ndarray,
    t_from: float,
    t_to: float,
    cfg: SolverConfig,
    *,
    class_ids=None,
    gamma=1.0,
    interval=(0.0, 1.0),
    record: bool = False,
):
    """Integrate dx = -u dt from t_from down to t_to on the restricted grid.

    Returns the final state, or (times, states) for every visited node when
    ``record`` is set. Non-finite field output aborts with the step index.
    """
    if not (1.0 >= t_from > t_to >= 0.0):
        raise DomainError(f"need 1 >= t_from > t_to >= 0, got {t_from}, {t_to}")
    x = np.atleast_2d(np.asarray(z, dtype=np.float64)).copy()
    nodes = _restrict_grid(cfg.grid(), t_from, t_to)
    states = [x.copy()] if record else None
    for i in range(len(nodes) - 1):
        t_i, t_n = nodes[i], nodes[i + 1]
        vel = heun_slope(u, x, t_i, t_n, class_ids, gamma, interval, cfg.method)
        if not np.isfinite(vel).all():
            raise IntegrationError(f"non-finite velocity at step {i}", step_index=i)
        x = x + (t_i - t_n) * vel
        if record:
            states.append(x.copy())
    if record:
        return nodes, np.stack(states)
    return x


def cfm_loss(spec: NetworkSpec, psi: np.ndarray, x, z, t, class_ids) -> float:
    """Mean squared error between g_psi(I_t(x, z), t, c) and x - z."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise DomainError("empty batch")
    z = np.asarray(z, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    x_t = (1.0 - t)[:, None] * x + t[:, None] * z
    pred = forward(spec, psi, x_t, {"t": t}, class_ids)
    return float(np.mean(np.sum((pred - (x - z)) ** 2, axis=1)))


def cfm_grad(
    spec: NetworkSpec, psi: np.ndarray, x, z, t, class_ids
) -> tuple[float, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise DomainError("empty batch")
    z = np.asarray(z, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    x_t = (1.0 - t)[:, None] * x + t[:, None] * z
    target = x - z

    loss_val = {}

    def loss_fn(p):
        out = mean_sq(apply_net(spec, p, x_t, {"t": t}, class_ids) - target)
        loss_val["v"] = float(out.value)
        return out

    grad = grad_params(loss_fn, psi)
    return loss_val["v"], grad


@dataclass
class TeacherModel:
    spec: NetworkSpec
    params: np.ndarray
    ema: np.ndarray

    def velocity(self, use_ema: bool = True) -> NetVelocity:
        return NetVelocity(self.spec, self.ema if use_ema else self.params)


def teacher_spec(
    data_dim: int,
    class_count: int,
    hidden_dims: Sequence[int] = (64, 64, 64),
    embed_dim: int = 32,
    n_frequencies: int = 16,
) -> NetworkSpec:
    return NetworkSpec(
        input_dim=data_dim,
        hidden_dims=tuple(hidden_dims),
        output_dim=data_dim,
        scalar_conditions=("t",),
        class_count=class_count,
        embed_dim=embed_dim,
        n_frequencies=n_frequencies,
    )


def train_teacher(
    dataset: Dataset2D,
    spec: NetworkSpec,
    opt: OptimizerConfig,
    steps: int,
    *,
    batch_size: int = 256,
    class_dropout: float = 0.1,
    ema_decay: float = 0.999,
    seed: int = 0,
    log_every: int = 1,
    run_dir=None,
) -> tuple[TeacherModel, LossLog]:
    """Conditional flow matching on exact dataset samples.

    Per step: labeled data batch, prior batch, t ~ U(0, 1), 10% of labels
    dropped to the null class so the unconditional branch is trained for CFG.
    A non-finite loss aborts with the last finite parameters checkpointed
    (when a run directory is given).
    """
    if steps < 0:
        raise ConfigurationError("steps must be >= 0")
    init_rng = step_rng(seed, 0, TAG_TEACHER)
    params = init_params(spec, init_rng)
    ema = params.copy()
    state = AdamState.zeros(params.size)
    log = LossLog(columns=("step", "loss"))

    for n in range(steps):
        rng = step_rng(seed, n + 1, TAG_TEACHER)
        x, labels = sample_labeled(dataset, batch_size, rng)
        z = rng.standard_normal(x.shape)
        t = rng.uniform(0.0, 1.0, batch_size)
        drop = rng.uniform(0.0, 1.0, batch_size) < class_dropout
        labels = np.where(drop, spec.null_class, labels)

        loss, grad = cfm_grad(spec, params, x, z, t, labels)
        if not np.isfinite(loss):
            path = None
            if run_dir is not None:
                from .checkpoint import Checkpoint, save_checkpoint

                path = str(run_dir / "diverged.ckpt")
                save_checkpoint(
                    path,
                    Checkpoint(
                        spec=spec,
                        blocks={"psi": params, "psi_ema": ema},
                        seed=seed,
                        step=n,
                        config_hash="",
                    ),
                )
            raise TrainingDiverged(f"teacher loss non-finite at step {n}", path)
        params = adam_step(params, grad, state, opt)
        ema = ema_update(ema, params, ema_decay)
        if n % log_every == 0 or n == steps - 1:
            log.append(step=n, loss=loss)

    return TeacherModel(spec=spec, params=params, ema=ema), log


def sample_teacher(
    teacher: TeacherModel | VelocityField,
    n: int,
    solver: SolverConfig,
    rng: np.random.Generator,
    *,
    class_ids=None,
    gamma=1.0,
    interval=(0.0, 1.0),
    use_ema: bool = True,
    chunk: int = 8192,
) -> np.ndarray:
    """Draw prior noise and integrate the generating flow to t = 0."""
    u = teacher.velocity(use_ema) if isinstance(teacher, TeacherModel) else teacher
    dim = teacher.spec.output_dim if isinstance(teacher, TeacherModel) else 2
    outs = []
    done = 0
    while done < n:
        m = min(chunk, n - done)
        z = rng.standard_normal((m, dim))
        ids = class_ids[done : done + m] if isinstance(class_ids, np.ndarray) else class_ids
        outs.append(
            solve(u, z, 1.0, 0.0, solver, class_ids=ids, gamma=gamma, interval=interval)
        )
        done += m
    return np.concatenate(outs, axis=0)
