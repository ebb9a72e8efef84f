"""Gaussian random fields defined by theoretical variograms.

Fields are realized at arbitrary 2-D points by Cholesky factorization of the
covariance matrix implied by the variogram. Pairs whose covariance is exactly
zero (beyond the model's numerical support) split the points into independent
groups, which are factored separately; this keeps large, weakly correlated
point sets cheap without approximating anything.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

MODELS = ("spherical", "exponential", "gaussian")
BASE_JITTER = 1e-10
JITTER_GROWTH = 10.0
JITTER_RETRIES = 3

# Normalized lag beyond which the covariance is exactly 0.0 in float64.
_SUPPORT = {"spherical": 1.0, "exponential": 250.0, "gaussian": 16.0}


class FieldError(ValueError):
    pass


def anisotropy_transform(angle_deg: float = 0.0, ratio: float = 1.0) -> np.ndarray:
    """Coordinate transform for geometric anisotropy.

    The major axis points ``angle_deg`` counter-clockwise from +x and keeps the
    variogram range; the minor axis range is ``ratio`` times the major range.
    """
    if not ratio > 0:
        raise FieldError("anisotropy ratio must be > 0")
    t = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    return np.diag([1.0, 1.0 / ratio]) @ rot


@dataclass(frozen=True)
class Variogram:
    model: str = "exponential"
    nugget: float = 0.0
    sill: float = 1.0
    range: float = 1.0
    anisotropy: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        if self.model not in MODELS:
            raise FieldError(f"unknown variogram model {self.model!r}; expected one of {MODELS}")
        if self.nugget < 0:
            raise FieldError("nugget must be >= 0")
        if self.sill < 0:
            raise FieldError("sill must be >= 0")
        if not self.range > 0:
            raise FieldError("range must be > 0")
        a = np.asarray(self.anisotropy, dtype=float)
        if a.shape != (2, 2) or not np.all(np.isfinite(a)) or abs(np.linalg.det(a)) < 1e-300:
            raise FieldError("anisotropy must be an invertible 2x2 matrix")
        object.__setattr__(self, "anisotropy", a)

    @property
    def total_variance(self) -> float:
        return self.nugget + self.sill

    def structure(self, u) -> np.ndarray:
        """Normalized structure function, 0 at ``u = 0`` rising to 1."""
        u = np.asarray(u, dtype=float)
        if self.model == "spherical":
            v = np.minimum(u, 1.0)
            return 1.5 * v - 0.5 * v**3
        if self.model == "exponential":
            return -np.expm1(-3.0 * u)
        return -np.expm1(-3.0 * u * u)

    def __call__(self, h) -> np.ndarray:
        """Semivariance at (already transformed) lag distance ``h``."""
        h = np.asarray(h, dtype=float)
        g = self.nugget + self.sill * self.structure(h / self.range)
        return np.where(h > 0, g, 0.0)

    def scaled(self, factor: float) -> "Variogram":
        return Variogram(self.model, self.nugget * factor, self.sill * factor, self.range, self.anisotropy)


@dataclass(frozen=True)
class FieldSpec:
    mean: float = 0.0
    variogram: Variogram = field(default_factory=Variogram)


def _as_points(points) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
        raise FieldError("points must be an (n, 2) array with n >= 1")
    if not np.all(np.isfinite(p)):
        raise FieldError("points must have finite coordinates")
    return p


def covariance(points, v: Variogram, jitter: bool = True) -> np.ndarray:
    """Covariance ``sill_total - gamma(|T (p_i - p_j)|)`` between all point pairs."""
    p = _as_points(points) @ v.anisotropy.T
    diff = p[:, None, :] - p[None, :, :]
    h = np.hypot(diff[..., 0], diff[..., 1])
    c = v.total_variance - v(h)
    if jitter:
        c[np.diag_indices_from(c)] += BASE_JITTER * v.total_variance
    return c


def _cholesky(c: np.ndarray, scale: float) -> np.ndarray:
    extra = 0.0
    step = BASE_JITTER * scale
    for attempt in range(JITTER_RETRIES + 1):
        try:
            if extra:
                c = c + extra * np.eye(len(c))
            return np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            if attempt == JITTER_RETRIES:
                break
            step *= JITTER_GROWTH
            extra = step
            log.warning("covariance not positive definite; adding diagonal jitter %.3g", step)
    raise FieldError("covariance factorization failed after jitter escalation")


class GaussianField:
    """Zero-mean Gaussian process restricted to a fixed set of points.

    The factorization is computed once, so repeated draws are cheap.
    """

    def __init__(self, points, variogram: Variogram):
        self.points = _as_points(points)
        self.variogram = variogram
        self.n = len(self.points)
        self._blocks: list[tuple[np.ndarray, np.ndarray]] = []
        if variogram.total_variance == 0:
            return
        tp = self.points @ variogram.anisotropy.T
        cutoff = _SUPPORT[variogram.model] * variogram.range
        pairs = cKDTree(tp).query_pairs(cutoff, output_type="ndarray")
        graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(self.n, self.n))
        _, labels = connected_components(graph, directed=False)
        counts = np.bincount(labels)
        lone = np.flatnonzero(counts[labels] == 1)
        if len(lone):
            sd = np.sqrt(variogram.total_variance * (1.0 + BASE_JITTER))
            self._blocks.append((lone, sd))
        for lab in np.flatnonzero(counts > 1):
            idx = np.flatnonzero(labels == lab)
            c = covariance(self.points[idx], variogram)
            self._blocks.append((idx, _cholesky(c, variogram.total_variance)))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        k = 1 if size is None else size
        z = rng.standard_normal((k, self.n))
        out = np.zeros_like(z)
        for idx, chol in self._blocks:
            out[:, idx] = z[:, idx] * chol if np.ndim(chol) == 0 else z[:, idx] @ chol.T
        return out[0] if size is None else out


def realize_field(points, spec: FieldSpec, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One (or ``size``) realizations of ``spec`` at ``points``."""
    return spec.mean + GaussianField(points, spec.variogram).sample(rng, size)


def check_correlation(rho) -> np.ndarray:
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    if rho.shape[0] != rho.shape[1]:
        raise FieldError("cross-correlation matrix must be square")
    if not np.array_equal(rho, rho.T):
        raise FieldError("cross-correlation matrix must be symmetric")
    if not np.allclose(np.diag(rho), 1.0, atol=0, rtol=0):
        raise FieldError("cross-correlation matrix must have a unit diagonal")
    if np.any(np.abs(rho) > 1):
        raise FieldError("cross-correlation coefficients must lie in [-1, 1]")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise FieldError("cross-correlation matrix is not positive semidefinite")
    return rho


def semidefinite_cholesky(a: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower factor ``L`` with ``L @ L.T == a`` for a PSD matrix (singular allowed)."""
    n = len(a)
    low = np.zeros_like(a, dtype=float)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if d > tol:
            low[j, j] = np.sqrt(d)
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return low


def realize_cross_correlated(
    points, specs: Sequence[FieldSpec], rho, rng: np.random.Generator
) -> np.ndarray:
    """Correlated multi-element field, shape ``(n_points, n_elements)``.

    Independent unit-variance latent fields (one per element, each with that
    element's variogram shape) are mixed by the Cholesky factor of ``rho``,
    then scaled to each element's variance and shifted to its mean.
    """
    rho = check_correlation(rho)
    if len(specs) != len(rho):
        raise FieldError("one FieldSpec per row of the cross-correlation matrix is required")
    mix = semidefinite_cholesky(rho)
    latent = []
    cache: dict[tuple, GaussianField] = {}
    for spec in specs:
        var = spec.variogram.total_variance
        if var == 0:
            latent.append(np.zeros(len(_as_points(points))))
            continue
        v = spec.variogram.scaled(1.0 / var)
        key = (v.model, v.nugget, v.sill, v.range, v.anisotropy.tobytes())
        if key not in cache:
            cache[key] = GaussianField(points, v)
        latent.append(cache[key].sample(rng))
    u = np.stack(latent, axis=1)
    y = u @ mix.T
    means = np.array([s.mean for s in specs])
    sds = np.sqrt([s.variogram.total_variance for s in specs])
    return means + y * sds
