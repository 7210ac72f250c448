"""Gaussian and Gaussian-mixture data model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import (AsymmetricCovariance, DimensionMismatch, InvalidMixture,
                     NotPositiveDefinite, SingularTransform)
from .rng import make_rng

SYMMETRY_TOL = 1e-10
PIVOT_REL_TOL = 1e-12
WEIGHT_SUM_TOL = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _cholesky(cov: np.ndarray) -> np.ndarray:
    if not np.allclose(cov, cov.T, rtol=0.0, atol=SYMMETRY_TOL):
        raise AsymmetricCovariance("covariance is not symmetric")
    cov = 0.5 * (cov + cov.T)
    scale = np.trace(cov)
    if not np.isfinite(scale) or scale <= 0:
        raise NotPositiveDefinite("covariance trace is not positive")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.min(np.diag(chol)) ** 2 <= PIVOT_REL_TOL * scale:
        raise NotPositiveDefinite("covariance is numerically singular")
    return chol


@dataclass(frozen=True, eq=False)
class Gaussian:
    """A d-dimensional normal distribution with a cached Cholesky factor."""

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x) -> Union[float, np.ndarray]:
        return log_density(self, x)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def gaussian_create(mean, cov) -> Gaussian:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if mean.ndim != 1 or mean.size < 1:
        raise DimensionMismatch("mean must be a non-empty vector")
    d = mean.size
    if cov.shape != (d, d):
        raise DimensionMismatch(f"cov has shape {cov.shape}, expected {(d, d)}")
    chol = _cholesky(cov)
    return Gaussian(_frozen(mean), _frozen(0.5 * (cov + cov.T)), _frozen(chol))


@dataclass(frozen=True, eq=False)
class Mixture:
    weights: np.ndarray
    components: tuple

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    def log_density(self, x):
        return log_density(self, x)


def mixture_create(weights: Sequence[float], components: Sequence[Gaussian]) -> Mixture:
    w = np.asarray(weights, dtype=float).ravel()
    comps = tuple(components)
    if len(comps) == 0 or w.size != len(comps):
        raise InvalidMixture("need one weight per component and at least one component")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidMixture("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise InvalidMixture(f"weights sum to {w.sum():.15g}, not 1")
    d = comps[0].dim
    if any(c.dim != d for c in comps):
        raise DimensionMismatch("components have different dimensions")
    return Mixture(_frozen(w), comps)


def as_mixture(g: Union[Gaussian, Mixture]) -> Mixture:
    if isinstance(g, Mixture):
        return g
    return Mixture(_frozen([1.0]), (g,))


@dataclass(frozen=True, eq=False)
class Dataset:
    points: np.ndarray
    seed: Optional[int] = None

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.points[start:stop], self.seed)


def make_dataset(points, seed: Optional[int] = None) -> Dataset:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise DimensionMismatch("points must form an (n, d) array")
    return Dataset(_frozen(pts), seed)


@dataclass(frozen=True, eq=False)
class DenseDecomposition:
    gamma: float
    dense_part: Mixture
    residual: Optional[Mixture]


def _as_points(x, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and (x.ndim == 0 or d > 1 or x.size == 1)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if single else x.reshape(-1, 1)
    if x.shape[1] != d:
        raise DimensionMismatch(f"points have dimension {x.shape[1]}, model has {d}")
    return x, single


def _gaussian_logpdf(g: Gaussian, x: np.ndarray) -> np.ndarray:
    z = solve_triangular(g.chol, (x - g.mean).T, lower=True, check_finite=False)
    return -0.5 * (np.sum(z * z, axis=0) + g.dim * _LOG_2PI + g.logdet())


def log_density(g: Union[Gaussian, Mixture], x):
    """Log density at one point (returns a float) or at rows of an (n, d) array.

    A 1-D array is read as a single point when d > 1 and as n scalar points when d = 1.
    """
    x, single = _as_points(x, g.dim)
    if isinstance(g, Gaussian):
        out = _gaussian_logpdf(g, x)
    else:
        with np.errstate(divide="ignore"):
            logw = np.log(g.weights)
        terms = np.stack([lw + _gaussian_logpdf(c, x)
                          for lw, c in zip(logw, g.components)])
        out = logsumexp(terms, axis=0)
    return float(out[0]) if single else out


def sample(g: Union[Gaussian, Mixture], n: int, rng=None) -> Dataset:
    """Draw ``n`` i.i.d. points; mixtures pick the component first, then draw from it."""
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = make_rng(rng)
    n = int(n)
    d = g.dim
    if n <= 0:
        return make_dataset(np.empty((0, d)), seed)
    if isinstance(g, Gaussian):
        z = rng.standard_normal((n, d))
        return make_dataset(g.mean + z @ g.chol.T, seed)
    labels = rng.choice(g.n_components, size=n, p=g.weights)
    pts = np.empty((n, d))
    for i, c in enumerate(g.components):
        idx = np.flatnonzero(labels == i)
        z = rng.standard_normal((idx.size, d))
        pts[idx] = c.mean + z @ c.chol.T
    return make_dataset(pts, seed)


def affine_transform(g: Gaussian, A, b) -> Gaussian:
    """Law of ``A X + b`` for ``X ~ g``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    d = g.dim
    if A.shape != (d, d) or b.shape != (d,):
        raise DimensionMismatch("transform does not match the Gaussian's dimension")
    if np.linalg.matrix_rank(A) < d:
        raise SingularTransform("transform matrix is singular")
    cov = A @ g.cov @ A.T
    return gaussian_create(A @ g.mean + b, 0.5 * (cov + cov.T))


def dense_decompose(m: Mixture, k: int, alpha: float) -> DenseDecomposition:
    """Split off the components lighter than ``alpha / k``."""
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    if m.n_components > k:
        raise ValueError("mixture has more than k components")
    w = m.weights
    light = w < alpha / k
    gamma = float(w[light].sum())
    heavy = ~light
    dense = Mixture(_frozen(w[heavy] / w[heavy].sum()),
                    tuple(c for c, h in zip(m.components, heavy) if h))
    residual = None
    if light.any() and gamma > 0:
        residual = Mixture(_frozen(w[light] / gamma),
                           tuple(c for c, lt in zip(m.components, light) if lt))
    return DenseDecomposition(gamma, dense, residual)


def gaussian_delta(g1: Gaussian, g2: Gaussian) -> float:
    """Max of the whitened covariance gap (Frobenius) and the whitened mean gap.

    Whitening with the Cholesky factor of ``g1`` gives the same norms as the
    symmetric square root, since the two differ by an orthogonal factor.
    """
    if g1.dim != g2.dim:
        raise DimensionMismatch("Gaussians have different dimensions")
    L = g1.chol
    left = solve_triangular(L, g2.cov, lower=True, check_finite=False)
    whitened = solve_triangular(L, left.T, lower=True, check_finite=False)
    cov_term = np.linalg.norm(whitened - np.eye(g1.dim), "fro")
    mean_term = np.linalg.norm(solve_triangular(L, g1.mean - g2.mean, lower=True))
    return float(max(cov_term, mean_term))


def model_to_dict(g: Union[Gaussian, Mixture]) -> dict:
    m = as_mixture(g)
    return {
        "weights": [float(w) for w in m.weights],
        "components": [{"mean": [float(v) for v in c.mean],
                        "cov": [[float(v) for v in row] for row in c.cov]}
                       for c in m.components],
    }


def model_from_dict(obj: dict) -> Mixture:
    try:
        weights = obj["weights"]
        comps = [gaussian_create(c["mean"], c["cov"]) for c in obj["components"]]
    except (KeyError, TypeError) as exc:
        raise InvalidMixture(f"malformed model description: {exc}") from None
    return mixture_create(weights, comps)


def same_model(a: Union[Gaussian, Mixture], b: Union[Gaussian, Mixture]) -> bool:
    return model_to_dict(a) == model_to_dict(b)
