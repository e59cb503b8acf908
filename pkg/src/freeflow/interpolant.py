"""Linear interpolation bridge, its conditional velocity, the generalized
transition kernel, and the score/velocity bijection.

Convention: time t runs from 0 (data) to 1 (prior). The bridge is
x_t = (1-t)*x + t*z with conditional velocity x - z, pointing from prior to
data. Everything here is a stateless pure function over (batches of)
d-vectors; scalar time arguments may also be per-sample arrays.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import DomainError

log = logging.getLogger(__name__)


def _check_unit(name: str, value, lo_open=False, hi_open=False):
    v = np.asarray(value, dtype=np.float64)
    lo_bad = (v <= 0.0) if lo_open else (v < 0.0)
    hi_bad = (v >= 1.0) if hi_open else (v > 1.0)
    if np.any(lo_bad) or np.any(hi_bad):
        lo, hi = "(" if lo_open else "[", ")" if hi_open else "]"
        raise DomainError(f"{name} must lie in {lo}0, 1{hi}")
    return v


def _col(t, x):
    """Broadcast a scalar-or-(batch,) time against (batch, d) states."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0 or x.ndim == 1:
        return t
    return t[:, None]


def interpolate(x, z, t):
    """(1-t)*x + t*z."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DomainError(f"shape mismatch {x.shape} vs {z.shape}")
    t = _col(_check_unit("t", t), x)
    return (1.0 - t) * x + t * z


def cond_velocity(x, z):
    """Conditional velocity of the linear bridge: x - z (t-independent)."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise DomainError(f"shape mismatch {x.shape} vs {z.shape}")
    return x - z


def transition(x_t, n, t, t_c):
    """Move bridge samples from noise level t to t_c >= t with fresh noise n.

    For t_c > t returns ((1-t_c)/(1-t)) * x_t + sqrt(t_c^2 - ((1-t_c)^2/(1-t)^2) t^2) * n,
    whose marginal law matches re-interpolating the underlying clean point at
    t_c. For t_c <= t the sample is returned unchanged. A numerically negative
    radicand is clamped to zero with a warning.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if x_t.shape != n.shape:
        raise DomainError(f"shape mismatch {x_t.shape} vs {n.shape}")
    t = _check_unit("t", t, hi_open=True)
    t_c = _check_unit("t_c", t_c, hi_open=False)

    active = t_c > t
    t_eff = np.where(active, t, 0.0)  # inactive rows pass through anyway
    ratio = (1.0 - t_c) / (1.0 - t_eff)
    radicand = t_c**2 - ratio**2 * t_eff**2
    if np.any(radicand < 0.0):
        worst = float(np.min(radicand))
        if worst < -1e-12:
            log.warning("transition radicand clamped to 0 (min %.3e)", worst)
        radicand = np.maximum(radicand, 0.0)
    moved = _col(ratio, x_t) * x_t + _col(np.sqrt(radicand), n) * n
    return np.where(_col(np.asarray(active), x_t), moved, x_t)


def score_from_velocity(u_val, x_r, r):
    """Score of the interpolating marginal from its velocity:
    grad log p_r = ((1-r)/r) * u - x_r / r, valid for r in (0, 1)."""
    r = _check_unit("r", r, lo_open=True, hi_open=True)
    u_val = np.asarray(u_val, dtype=np.float64)
    x_r = np.asarray(x_r, dtype=np.float64)
    rc = _col(r, x_r)
    return (1.0 - rc) / rc * u_val - x_r / rc


def velocity_from_score(s_val, x_r, r):
    """Inverse map: u = (r/(1-r)) * grad log p_r + x_r / (1-r)."""
    r = _check_unit("r", r, lo_open=True, hi_open=True)
    s_val = np.asarray(s_val, dtype=np.float64)
    x_r = np.asarray(x_r, dtype=np.float64)
    rc = _col(r, x_r)
    return rc / (1.0 - rc) * s_val + x_r / (1.0 - rc)
