"""Total-variation tools and the component-wise mixture distance."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate, optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.special import ndtr

from .errors import DimensionMismatch
from .model import Gaussian, Mixture, as_mixture, gaussian_delta, log_density, sample
from .rng import make_rng

LOWER_BOUND_GATE = 1.0 / 600.0

Density = Union[Gaussian, Mixture]


@dataclass(frozen=True)
class TvEstimate:
    value: float
    half_width: float
    conf: float
    n_samples: int

    @property
    def lower(self) -> float:
        return self.value - self.half_width

    @property
    def upper(self) -> float:
        return self.value + self.half_width


@dataclass(frozen=True)
class KappaMixResult:
    value: float
    matching: Optional[tuple]


# ---------------------------------------------------------------- exact 1-D

def tv_gaussian_1d(mu1, var1, mu2, var2) -> np.ndarray:
    """Closed-form TV between 1-D normals, broadcasting over its arguments.

    The densities cross at the roots of a quadratic; the distance is the mass
    difference on the interval between the crossings.
    """
    mu1, var1, mu2, var2 = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (mu1, var1, mu2, var2)))
    s1, s2 = np.sqrt(var1), np.sqrt(var2)
    a = 0.5 / var2 - 0.5 / var1
    b = mu1 / var1 - mu2 / var2
    c = 0.5 * mu2 ** 2 / var2 - 0.5 * mu1 ** 2 / var1 + np.log(s2 / s1)
    out = np.zeros(mu1.shape)

    scale = np.maximum(1.0 / var1, 1.0 / var2)
    quad = np.abs(a) > 1e-14 * scale
    lin = ~quad & (np.abs(b) > 0)

    if np.any(lin):
        # equal variances: one crossing at the midpoint
        gap = np.abs(mu1[lin] - mu2[lin]) / (2.0 * s1[lin])
        out[lin] = 2.0 * ndtr(gap) - 1.0

    if np.any(quad):
        aq, bq, cq = a[quad], b[quad], c[quad]
        disc = np.maximum(bq * bq - 4.0 * aq * cq, 0.0)
        sq = np.sqrt(disc)
        qq = -0.5 * (bq + np.where(bq >= 0, sq, -sq))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = np.where(qq != 0, qq / aq, 0.0)
            r2 = np.where(qq != 0, cq / qq, 0.0)
        lo, hi = np.minimum(r1, r2), np.maximum(r1, r2)
        m1, m2 = mu1[quad], mu2[quad]
        t1, t2 = s1[quad], s2[quad]
        mass1 = ndtr((hi - m1) / t1) - ndtr((lo - m1) / t1)
        mass2 = ndtr((hi - m2) / t2) - ndtr((lo - m2) / t2)
        out[quad] = np.abs(mass1 - mass2)
    return np.clip(out, 0.0, 1.0)


def exact_gaussian_tv(g1: Gaussian, g2: Gaussian) -> float:
    if g1.dim != 1 or g2.dim != 1:
        raise DimensionMismatch("closed-form TV is only available for d=1")
    return float(tv_gaussian_1d(g1.mean[0], g1.cov[0, 0], g2.mean[0], g2.cov[0, 0]))


# ------------------------------------------------------------- quadrature

def _support_intervals(*models: Mixture, width: float = 12.0) -> list[tuple[float, float]]:
    spans = []
    for m in models:
        for c in m.components:
            mu, sd = float(c.mean[0]), float(np.sqrt(c.cov[0, 0]))
            spans.append((mu - width * sd, mu + width * sd))
    spans.sort()
    merged = [list(spans[0])]
    for lo, hi in spans[1:]:
        if lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def tv_quadrature_1d(p: Density, q: Density, tol: float = 1e-9) -> float:
    """Adaptive quadrature of half the absolute density difference (d=1 only).

    Sign changes of the difference are located first and handed to the
    integrator as break points, so each piece has a smooth integrand.
    """
    p, q = as_mixture(p), as_mixture(q)
    if p.dim != 1 or q.dim != 1:
        raise DimensionMismatch("quadrature TV needs 1-D densities")

    def diff(x):
        x = np.atleast_1d(x)[:, None]
        return np.exp(log_density(p, x)) - np.exp(log_density(q, x))

    intervals = _support_intervals(p, q)
    per_piece = tol / (2.0 * len(intervals))
    total = 0.0
    for lo, hi in intervals:
        grid = np.linspace(lo, hi, 4001)
        vals = diff(grid)
        roots = []
        for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
            roots.append(optimize.brentq(lambda t: diff(t)[0], grid[i], grid[i + 1],
                                         xtol=1e-14))
        edges = [lo, *roots, hi]
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(lambda t: abs(diff(t)[0]), a, b,
                                    epsabs=per_piece / len(edges), epsrel=1e-12,
                                    limit=200)
            total += val
    return float(min(max(0.5 * total, 0.0), 1.0))


# ------------------------------------------------------------- Monte Carlo

def hoeffding_half_width(n: int, conf: float) -> float:
    return float(np.sqrt(np.log(2.0 / (1.0 - conf)) / (2.0 * n)))


def tv_mc_estimate(p: Density, q: Density, n: int, conf: float = 0.99,
                   rng=None) -> TvEstimate:
    """Importance estimate of TV with points drawn from the even blend of p and q.

    The integrand |p - q| / (p + q) lies in [0, 1], so a Hoeffding interval applies.
    The reported half-width is clipped so the interval stays inside [0, 1].
    """
    rng = make_rng(rng)
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    from_p = int(np.count_nonzero(rng.random(n) < 0.5))
    xs = np.vstack([sample(p, from_p, rng).points, sample(q, n - from_p, rng).points])
    lp = np.atleast_1d(log_density(p, xs))
    lq = np.atleast_1d(log_density(q, xs))
    gap = np.abs(lp - lq)
    gap = np.where(np.isnan(gap), 0.0, gap)
    value = float(np.mean(np.tanh(0.5 * gap)))
    hw = min(hoeffding_half_width(n, conf), value, 1.0 - value)
    return TvEstimate(value, float(hw), conf, n)


class MonteCarloTV:
    """Point-estimate TV oracle with a fixed seed, for d >= 2."""

    def __init__(self, n: int = 20000, seed: int = 0):
        self.n = n
        self.seed = seed

    def __call__(self, p: Density, q: Density) -> float:
        return tv_mc_estimate(p, q, self.n, rng=self.seed).value


def default_tv_oracle(p: Density, q: Density) -> float:
    """Exact TV for 1-D Gaussians, quadrature for other 1-D models, MC otherwise."""
    if p.dim == 1:
        if isinstance(p, Gaussian) and isinstance(q, Gaussian):
            return exact_gaussian_tv(p, q)
        return tv_quadrature_1d(p, q)
    return MonteCarloTV()(p, q)


# ------------------------------------------------------------------ bounds

def tv_bounds_gaussian(g1: Gaussian, g2: Gaussian) -> tuple[float, float, bool]:
    delta = gaussian_delta(g1, g2)
    upper = min(1.0, delta / np.sqrt(2.0))
    return delta / 200.0, upper, upper <= LOWER_BOUND_GATE


def hellinger_tv_bounds(g1: Gaussian, g2: Gaussian) -> tuple[float, float]:
    """TV sandwich from the Bhattacharyya coefficient: 1 - BC <= TV <= sqrt(1 - BC^2)."""
    avg = 0.5 * (g1.cov + g2.cov)
    diff = g1.mean - g2.mean
    _, logdet_avg = np.linalg.slogdet(avg)
    dist = (0.125 * diff @ np.linalg.solve(avg, diff)
            + 0.5 * (logdet_avg - 0.5 * (g1.logdet() + g2.logdet())))
    bc = float(np.exp(-dist))
    return max(0.0, 1.0 - bc), float(np.sqrt(max(0.0, 1.0 - bc * bc)))


# ------------------------------------------------------------------ kappa_mix

def _perfect_matching(allowed: np.ndarray) -> Optional[list[int]]:
    """Row -> column perfect matching on the allowed pairs, or None."""
    match = maximum_bipartite_matching(csr_matrix(allowed.astype(np.int8)), perm_type="column")
    if np.any(match < 0):
        return None
    return [int(c) for c in match]


def bottleneck_assignment(cost: np.ndarray) -> tuple[float, tuple]:
    """Permutation minimising the largest assigned cost.

    Binary search over the sorted distinct costs with a perfect-matching test.
    """
    cost = np.asarray(cost, dtype=float)
    levels = np.unique(cost)
    lo, hi = 0, levels.size - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        perm = _perfect_matching(cost <= levels[mid])
        if perm is None:
            lo = mid + 1
        else:
            best, hi = perm, mid - 1
    value = max(cost[i, j] for i, j in enumerate(best))
    return float(value), tuple(best)


def brute_force_bottleneck(cost: np.ndarray) -> float:
    s = cost.shape[0]
    return float(min(max(cost[i, p[i]] for i in range(s)) for p in permutations(range(s))))


def kappa_cost_matrix(m1: Mixture, m2: Mixture, tv_oracle=None) -> np.ndarray:
    tv_oracle = tv_oracle or default_tv_oracle
    s = m1.n_components
    cost = np.empty((s, s))
    for i, (wi, fi) in enumerate(zip(m1.weights, m1.components)):
        for j, (wj, fj) in enumerate(zip(m2.weights, m2.components)):
            cost[i, j] = max(s * abs(wi - wj), tv_oracle(fi, fj))
    return cost


def kappa_mix(m1: Density, m2: Density, tv_oracle: Optional[Callable] = None) -> KappaMixResult:
    m1, m2 = as_mixture(m1), as_mixture(m2)
    if m1.n_components != m2.n_components:
        return KappaMixResult(float("inf"), None)
    value, matching = bottleneck_assignment(kappa_cost_matrix(m1, m2, tv_oracle))
    return KappaMixResult(value, matching)


# ------------------------------------------------------------------ metrics

class TVMetric:
    tag = "tv"

    def __init__(self, oracle: Optional[Callable] = None):
        self.oracle = oracle or default_tv_oracle

    def __call__(self, a, b) -> float:
        if isinstance(a, Mixture) and a.n_components == 1:
            a = a.components[0]
        if isinstance(b, Mixture) and b.n_components == 1:
            b = b.components[0]
        return self.oracle(a, b)


class KappaMixMetric:
    tag = "kappa_mix"

    def __init__(self, tv_oracle: Optional[Callable] = None):
        self.tv_oracle = tv_oracle

    def __call__(self, a, b) -> float:
        return kappa_mix(a, b, self.tv_oracle).value


class LinfMetric:
    tag = "linf"

    def __call__(self, a, b) -> float:
        return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def ball_members(center, candidates: Sequence, radius: float, metric: Callable) -> list[int]:
    return [i for i, c in enumerate(candidates) if metric(center, c) <= radius]
