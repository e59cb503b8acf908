"""Class-conditional synthetic 2D distributions with exact samplers.

Every dataset is sampled exactly (no MCMC) and reproducibly from a passed
Generator. The Gaussian-mixture kind additionally exposes the exact
log-density, score, component posteriors, and its noised marginal under the
linear bridge — these are the analytic oracles the rest of the package tests
itself against. Classes map one-to-one onto mixture components / clusters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigurationError, DomainError

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Gmm:
    """Isotropic Gaussian mixture; component index doubles as class id."""

    means: np.ndarray  # (k, d)
    sigmas: np.ndarray  # (k,)
    weights: np.ndarray  # (k,)

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "sigmas", np.asarray(self.sigmas, dtype=np.float64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        if self.means.ndim != 2:
            raise ConfigurationError("means must be (k, d)")
        k = self.means.shape[0]
        if self.sigmas.shape != (k,) or self.weights.shape != (k,):
            raise ConfigurationError("sigmas/weights must be (k,)")
        if np.any(self.sigmas <= 0):
            raise ConfigurationError("sigmas must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ConfigurationError("weights must be nonnegative and sum to 1")

    @property
    def class_count(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logdensity(self, x: np.ndarray) -> np.ndarray:
        """(n, k) per-component log N(x; mu_k, sigma_k^2 I)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d = self.dim
        diff = x[:, None, :] - self.means[None, :, :]
        sq = np.sum(diff**2, axis=2)
        return (
            -0.5 * sq / self.sigmas[None, :] ** 2
            - d * np.log(self.sigmas)[None, :]
            - 0.5 * d * _LOG_2PI
        )

    def logdensity(self, x: np.ndarray) -> np.ndarray:
        comp = self.component_logdensity(x) + np.log(self.weights)[None, :]
        m = comp.max(axis=1, keepdims=True)
        return (m + np.log(np.sum(np.exp(comp - m), axis=1, keepdims=True)))[:, 0]

    def posterior(self, x: np.ndarray) -> np.ndarray:
        """(n, k) component responsibilities."""
        comp = self.component_logdensity(x) + np.log(self.weights)[None, :]
        comp -= comp.max(axis=1, keepdims=True)
        w = np.exp(comp)
        return w / w.sum(axis=1, keepdims=True)

    def score(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        post = self.posterior(x)
        diff = self.means[None, :, :] - x[:, None, :]
        return np.einsum("nk,nkd->nd", post / self.sigmas[None, :] ** 2, diff)

    def noised(self, t: float) -> "Gmm":
        """Marginal at bridge time t: means scaled by (1-t), variance
        (1-t)^2 sigma^2 + t^2 per component."""
        if not 0.0 <= t <= 1.0:
            raise DomainError("t must lie in [0, 1]")
        var = (1.0 - t) ** 2 * self.sigmas**2 + t**2
        return Gmm(
            means=(1.0 - t) * self.means, sigmas=np.sqrt(var), weights=self.weights
        )

    def sample(self, n: int, rng: np.random.Generator, class_id=None) -> np.ndarray:
        if class_id is None:
            comp = rng.choice(self.class_count, size=n, p=self.weights)
        else:
            comp = np.full(n, _check_class(self, class_id), dtype=np.int64)
        return self.means[comp] + self.sigmas[comp, None] * rng.standard_normal(
            (n, self.dim)
        )

    def sample_labeled(self, n, rng) -> tuple[np.ndarray, np.ndarray]:
        comp = rng.choice(self.class_count, size=n, p=self.weights)
        x = self.means[comp] + self.sigmas[comp, None] * rng.standard_normal(
            (n, self.dim)
        )
        return x, comp


@dataclass(frozen=True)
class Checkerboard:
    """Uniform over the dark cells of a square grid; one class per dark cell."""

    cells_per_side: int = 4
    extent: float = 4.0

    @property
    def class_count(self) -> int:
        return self.cells_per_side**2 // 2

    @property
    def dim(self) -> int:
        return 2

    def _dark_cells(self) -> np.ndarray:
        idx = [
            (i, j)
            for i in range(self.cells_per_side)
            for j in range(self.cells_per_side)
            if (i + j) % 2 == 0
        ]
        return np.asarray(idx, dtype=np.int64)

    def contains(self, x: np.ndarray) -> np.ndarray:
        size = 2 * self.extent / self.cells_per_side
        ij = np.floor((np.asarray(x) + self.extent) / size).astype(np.int64)
        inside = np.all((ij >= 0) & (ij < self.cells_per_side), axis=1)
        return inside & ((ij[:, 0] + ij[:, 1]) % 2 == 0)

    def sample(self, n, rng, class_id=None) -> np.ndarray:
        cells = self._dark_cells()
        if class_id is None:
            pick = rng.integers(0, len(cells), n)
        else:
            pick = np.full(n, _check_class(self, class_id), dtype=np.int64)
        size = 2 * self.extent / self.cells_per_side
        corner = -self.extent + size * cells[pick]
        return corner + size * rng.uniform(0, 1, (n, 2))

    def sample_labeled(self, n, rng):
        labels = rng.integers(0, self.class_count, n)
        cells = self._dark_cells()
        size = 2 * self.extent / self.cells_per_side
        corner = -self.extent + size * cells[labels]
        return corner + size * rng.uniform(0, 1, (n, 2)), labels


@dataclass(frozen=True)
class Rings:
    """Concentric circles with Gaussian radial jitter; one class per ring."""

    radii: tuple[float, ...] = (1.5, 3.0, 4.5)
    sigma: float = 0.15

    @property
    def class_count(self) -> int:
        return len(self.radii)

    @property
    def dim(self) -> int:
        return 2

    def sample(self, n, rng, class_id=None) -> np.ndarray:
        if class_id is None:
            ring = rng.integers(0, self.class_count, n)
        else:
            ring = np.full(n, _check_class(self, class_id), dtype=np.int64)
        r = np.asarray(self.radii)[ring] + self.sigma * rng.standard_normal(n)
        ang = rng.uniform(0, 2 * np.pi, n)
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)

    def sample_labeled(self, n, rng):
        labels = rng.integers(0, self.class_count, n)
        r = np.asarray(self.radii)[labels] + self.sigma * rng.standard_normal(n)
        ang = rng.uniform(0, 2 * np.pi, n)
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1), labels


@dataclass(frozen=True)
class Moons:
    """Two interleaved half-circles, scaled to match the other benchmarks."""

    noise: float = 0.15
    scale: float = 2.5

    @property
    def class_count(self) -> int:
        return 2

    @property
    def dim(self) -> int:
        return 2

    def _clean(self, labels, theta):
        x = np.where(labels == 0, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(labels == 0, np.sin(theta), 0.5 - np.sin(theta))
        return self.scale * (np.stack([x, y], axis=1) - [0.5, 0.25])

    def sample(self, n, rng, class_id=None) -> np.ndarray:
        if class_id is None:
            labels = rng.integers(0, 2, n)
        else:
            labels = np.full(n, _check_class(self, class_id), dtype=np.int64)
        pts = self._clean(labels, rng.uniform(0, np.pi, n))
        return pts + self.noise * rng.standard_normal((n, 2))

    def sample_labeled(self, n, rng):
        labels = rng.integers(0, 2, n)
        pts = self._clean(labels, rng.uniform(0, np.pi, n))
        return pts + self.noise * rng.standard_normal((n, 2)), labels


Dataset2D = Union[Gmm, Checkerboard, Rings, Moons]


def _check_class(ds, class_id) -> int:
    c = int(class_id)
    if not 0 <= c < ds.class_count:
        raise DomainError(f"unknown class {c} for {type(ds).__name__}")
    return c


def ring_gmm(k: int = 8, radius: float = 4.0, sigma: float = 0.3) -> Gmm:
    """The default benchmark: k equally weighted modes on a circle."""
    ang = 2 * np.pi * np.arange(k) / k
    means = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    return Gmm(means=means, sigmas=np.full(k, sigma), weights=np.full(k, 1.0 / k))


def sample_data(ds: Dataset2D, class_id, n: int, rng: np.random.Generator):
    """Exact i.i.d. samples; class_id None means unconditional."""
    return ds.sample(n, rng, class_id=class_id)


def sample_labeled(ds: Dataset2D, n: int, rng: np.random.Generator):
    """(samples, class labels) with classes drawn from the mixture weights."""
    return ds.sample_labeled(n, rng)


def gmm_logdensity(ds: Dataset2D, x) -> np.ndarray:
    if not isinstance(ds, Gmm):
        raise ConfigurationError(f"log-density unsupported for {type(ds).__name__}")
    return ds.logdensity(x)


def gmm_score(ds: Dataset2D, x) -> np.ndarray:
    if not isinstance(ds, Gmm):
        raise ConfigurationError(f"score unsupported for {type(ds).__name__}")
    return ds.score(x)


# Augmentation ladder for the teacher-data mismatch study: max rotation
# (radians), isotropic scale jitter, additive noise sigma. Level 0 is the
# identity and consumes no randomness.
AUG_LEVELS: tuple[tuple[float, float, float], ...] = (
    (0.0, 0.0, 0.0),
    (np.deg2rad(15.0), 0.05, 0.05),
    (np.deg2rad(45.0), 0.15, 0.15),
    (np.deg2rad(90.0), 0.30, 0.30),
)


def augment(batch: np.ndarray, level: int, rng: np.random.Generator) -> np.ndarray:
    """Random per-sample rotation, scale jitter, and additive Gaussian noise."""
    if not 0 <= level < len(AUG_LEVELS):
        raise DomainError(f"augmentation level {level} not in [0, {len(AUG_LEVELS) - 1}]")
    if level == 0:
        return np.asarray(batch, dtype=np.float64).copy()
    theta_max, s_max, noise = AUG_LEVELS[level]
    x = np.asarray(batch, dtype=np.float64)
    n = x.shape[0]
    ang = rng.uniform(-theta_max, theta_max, n)
    c, s = np.cos(ang), np.sin(ang)
    rotated = np.stack(
        [c * x[:, 0] - s * x[:, 1], s * x[:, 0] + c * x[:, 1]], axis=1
    )
    scale = rng.uniform(1.0 - s_max, 1.0 + s_max, n)[:, None]
    return scale * rotated + noise * rng.standard_normal(x.shape)
