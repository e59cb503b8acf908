"""The one-step student: f(z, delta) = z + delta * F(z, delta, c, gamma).

F is the average velocity over the jump from t=1 down to t=1-delta, so the
boundary identity f(z, 0) = z holds by construction. Its generating velocity
d f / d delta = F + delta * dF/ddelta comes either from an exact forward-mode
derivative or from finite differences on a fixed time grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .net import NetworkSpec, forward, jvp_scalar, transfer_params
from .teacher import TeacherModel


@dataclass(frozen=True)
class DeltaGrid:
    """Jump-time grid 1 = t_1 > ... > t_{N+1} = 0 with durations
    delta(i) = t_1 - t_i, indexed 1-based like the node times."""

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or len(b) < 2:
            raise ConfigurationError("grid needs at least two boundary points")
        if b[0] != 1.0 or b[-1] != 0.0 or np.any(np.diff(b) >= 0):
            raise ConfigurationError(
                "boundaries must decrease strictly from exactly 1 to exactly 0"
            )
        object.__setattr__(self, "boundaries", tuple(float(v) for v in b))

    @staticmethod
    def uniform(n: int) -> "DeltaGrid":
        if n < 1:
            raise ConfigurationError("grid needs at least one interval")
        b = np.linspace(1.0, 0.0, n + 1)
        b[0], b[-1] = 1.0, 0.0
        return DeltaGrid(boundaries=tuple(b))

    @property
    def n_intervals(self) -> int:
        return len(self.boundaries) - 1

    def time(self, i) -> np.ndarray:
        """Node time t_i (1-based, valid for 1 <= i <= N+1); vectorized."""
        idx = self._check_index(i, self.n_intervals + 1)
        return np.asarray(self.boundaries)[idx - 1]

    def delta(self, i) -> np.ndarray:
        """Jump duration t_1 - t_i from the start of the horizon to node i."""
        return 1.0 - self.time(i)

    def gap(self, i) -> np.ndarray:
        """Interval length t_i - t_{i+1} (valid for 1 <= i <= N)."""
        idx = self._check_index(i, self.n_intervals)
        b = np.asarray(self.boundaries)
        return b[idx - 1] - b[idx]

    def floor_index(self, delta) -> np.ndarray:
        """Largest node index i with delta(i) <= delta (flooring onto the grid)."""
        d = np.asarray(delta, dtype=np.float64)
        if np.any(d < 0.0) or np.any(d > 1.0):
            raise DomainError("delta must lie in [0, 1]")
        deltas = 1.0 - np.asarray(self.boundaries)  # increasing 0 .. 1
        idx = np.searchsorted(deltas, d, side="right")
        return np.minimum(idx, self.n_intervals)  # keep i <= N so i+1 exists

    def _check_index(self, i, upper: int) -> np.ndarray:
        idx = np.asarray(i, dtype=np.int64)
        if np.any(idx < 1) or np.any(idx > upper):
            raise DomainError(f"node index out of range [1, {upper}]")
        return idx


@dataclass
class FlowMapModel:
    """Student parameters plus their EMA copy."""

    spec: NetworkSpec
    params: np.ndarray
    ema: np.ndarray

    def __post_init__(self):
        for name in ("delta", "gamma"):
            if name not in self.spec.scalar_conditions:
                raise ConfigurationError(f"student spec must condition on {name!r}")


def student_spec(
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
        scalar_conditions=("delta", "gamma"),
        class_count=class_count,
        embed_dim=embed_dim,
        n_frequencies=n_frequencies,
    )


def student_from_teacher(
    teacher: TeacherModel, rng: np.random.Generator
) -> FlowMapModel:
    """Initialize the student from teacher weights; the new delta and gamma
    embedding paths start inert (zeroed output layer) so the initial output
    ignores them, but remain trainable."""
    spec = student_spec(
        teacher.spec.input_dim,
        teacher.spec.class_count,
        hidden_dims=teacher.spec.hidden_dims,
        embed_dim=teacher.spec.embed_dim,
        n_frequencies=teacher.spec.n_frequencies,
    )
    params = transfer_params(spec, teacher.spec, teacher.ema, rng)
    return FlowMapModel(spec=spec, params=params, ema=params.copy())


def _check_delta(delta):
    d = np.asarray(delta, dtype=np.float64)
    if np.any(d < 0.0) or np.any(d > 1.0):
        raise DomainError("delta must lie in [0, 1]")
    return d


def average_velocity(
    model: FlowMapModel, z, delta, class_ids=None, gamma=1.0, use_ema: bool = False
) -> np.ndarray:
    """Raw network output F(z, delta, c, gamma)."""
    params = model.ema if use_ema else model.params
    return forward(
        model.spec, params, z, {"delta": _check_delta(delta), "gamma": gamma}, class_ids
    )


def flowmap_apply(
    model: FlowMapModel, z, delta, class_ids=None, gamma=1.0, use_ema: bool = False
) -> np.ndarray:
    """f(z, delta) = z + delta * F(z, delta); exact identity at delta = 0."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    d = _check_delta(delta)
    f_avg = average_velocity(model, z, d, class_ids, gamma, use_ema)
    dcol = d[:, None] if np.ndim(d) == 1 else d
    return z + dcol * f_avg


def generating_velocity_cont(
    model: FlowMapModel, z, delta, class_ids=None, gamma=1.0, use_ema: bool = False
) -> np.ndarray:
    """Exact d f / d delta = F + delta * dF/ddelta via forward mode."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    d = _check_delta(delta)
    params = model.ema if use_ema else model.params
    f_avg, df = jvp_scalar(
        model.spec, params, z, {"delta": d, "gamma": gamma}, class_ids, wrt="delta"
    )
    dcol = d[:, None] if np.ndim(d) == 1 else d
    return f_avg + dcol * df


def generating_velocity_disc(
    model: FlowMapModel,
    z,
    grid: DeltaGrid,
    i,
    class_ids=None,
    gamma=1.0,
    use_ema: bool = False,
) -> np.ndarray:
    """Forward finite difference (f(z, delta_{i+1}) - f(z, delta_i)) / gap_i."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    idx = np.asarray(i, dtype=np.int64)
    f_lo = flowmap_apply(model, z, grid.delta(idx), class_ids, gamma, use_ema)
    f_hi = flowmap_apply(model, z, grid.delta(idx + 1), class_ids, gamma, use_ema)
    gap = grid.gap(idx)
    gcol = gap[:, None] if np.ndim(gap) == 1 else gap
    return (f_hi - f_lo) / gcol
