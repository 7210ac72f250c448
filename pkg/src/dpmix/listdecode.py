"""List decoding of Gaussians and dense Gaussian mixtures from samples."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import comb, ndtr, ndtri
from scipy.stats import chi2

from .covers import simplex_cover
from .errors import InfeasibleBudget, InsufficientData
from .metrics import tv_gaussian_1d
from .model import Dataset, Gaussian, Mixture, _frozen
from .rng import make_rng

EXHAUSTIVE_LIMIT = 100_000
MEAN_RANGE = 1.0      # mean offsets, in units of the fitted spread
LOGSCALE_RANGE = 1.0  # covariance offsets, in log-scale units
N_BINS = 8


@dataclass(frozen=True)
class DecodeParams:
    m: int
    L_budget: int
    alpha: float
    beta: float
    gamma: float = 0.0
    subset_size: Optional[int] = None
    grid_bits: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.subset_size is not None and self.m < self.subset_size:
            raise ValueError("m must be at least subset_size")

    def tau(self, d: int) -> int:
        return self.subset_size if self.subset_size is not None else d + 2


@dataclass
class HypothesisList:
    items: list
    source_chunk: int
    budget: float
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.items) > self.budget:
            raise InfeasibleBudget(f"list of {len(self.items)} exceeds budget {self.budget}")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


# ----------------------------------------------------------------- helpers

def gaussians_from_arrays(means: np.ndarray, covs: np.ndarray) -> list[Gaussian]:
    """Batch construction for arrays already known to be symmetric positive definite."""
    means, covs = _frozen(means), _frozen(covs)
    chols = _frozen(np.linalg.cholesky(covs))
    return [Gaussian(means[i], covs[i], chols[i]) for i in range(means.shape[0])]


_UNIT_WEIGHT = _frozen([1.0])


def _single(g: Gaussian) -> Mixture:
    return Mixture(_UNIT_WEIGHT, (g,))


def _fit(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and regularised sample covariance of each subset in a (F, tau, d) array."""
    F, tau, d = points.shape
    means = points.mean(axis=1)
    centred = points - means[:, None, :]
    covs = np.einsum("fti,ftj->fij", centred, centred) / max(tau - 1, 1)
    tr = np.trace(covs, axis1=1, axis2=2) / d
    tr = np.where(tr > 0, tr, 1.0)
    covs = covs + (tr * 1e-6)[:, None, None] * np.eye(d)
    return means, covs


def _bits_per_param(grid_bits: int, n_params: int) -> list[int]:
    base, extra = divmod(int(grid_bits), n_params)
    return [base + (1 if i < extra else 0) for i in range(n_params)]


def _offsets(bits: int, span: float) -> np.ndarray:
    """Dyadic offsets in [-span, span]; the set for b bits contains the set for b - 1."""
    if bits == 0:
        return np.zeros(1)
    half = 2 ** (bits - 1)
    return span * np.arange(-half, half + 1) / half


def grid_size(d: int, grid_bits: int) -> int:
    n_params = d + d * (d + 1) // 2
    return int(np.prod([_offsets(b, 1.0).size for b in _bits_per_param(grid_bits, n_params)]))


def _quantization_grid(means, covs, grid_bits: int):
    """Local refinements around each fit: whitened mean shifts and log-scale covariance shifts."""
    F, d = means.shape
    n_cov = d * (d + 1) // 2
    bits = _bits_per_param(grid_bits, d + n_cov)
    axes = [_offsets(b, MEAN_RANGE) for b in bits[:d]] + \
           [_offsets(b, LOGSCALE_RANGE) for b in bits[d:]]
    shifts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d + n_cov)
    G = shifts.shape[0]
    if G == 1:
        return means, covs
    chols = np.linalg.cholesky(covs)
    mean_shift = shifts[:, :d]
    S = np.zeros((G, d, d))
    rows, cols = np.triu_indices(d)
    S[:, rows, cols] = shifts[:, d:]
    S[:, cols, rows] = shifts[:, d:]
    w, v = np.linalg.eigh(S)
    expS = np.einsum("gij,gj,gkj->gik", v, np.exp(w), v)
    new_means = means[:, None, :] + np.einsum("fij,gj->fgi", chols, mean_shift)
    new_covs = np.einsum("fij,gjk,flk->fgil", chols, expS, chols)
    new_covs = 0.5 * (new_covs + np.swapaxes(new_covs, -1, -2))
    return new_means.reshape(-1, d), new_covs.reshape(-1, d, d)


def _dedupe(means, covs):
    key = np.hstack([means, covs.reshape(covs.shape[0], -1)])
    _, first = np.unique(np.round(key, 10), axis=0, return_index=True)
    first = np.sort(first)
    return means[first], covs[first]


def containment_scores(means: np.ndarray, covs: np.ndarray, points: np.ndarray,
                       n_bins: int = N_BINS) -> np.ndarray:
    """Largest w such that w * candidate fits under the empirical law, bin by bin.

    Bins are equal-mass cells of each candidate (per whitened coordinate, plus a
    radial family when d > 1). A candidate that matches one cluster scores about
    that cluster's weight; fits straddling clusters or too narrow score low.
    """
    F, d = means.shape
    n = points.shape[0]
    if d == 1:
        return _containment_1d(means[:, 0], np.sqrt(covs[:, 0, 0]), points[:, 0], n_bins)
    chols = np.linalg.cholesky(covs)
    out = np.full(F, np.inf)
    step = max(1, 4_000_000 // max(n * d, 1))
    for lo in range(0, F, step):
        hi = min(F, lo + step)
        diff = points[None, :, :] - means[lo:hi, None, :]
        z = np.linalg.solve(chols[lo:hi, None], diff[..., None])[..., 0] if d > 1 \
            else diff / chols[lo:hi, None, :, 0]
        families = [ndtr(z[..., j]) for j in range(d)]
        if d > 1:
            families.append(chi2.cdf(np.sum(z * z, axis=-1), d))
        for u in families:
            cells = np.minimum((u * n_bins).astype(np.int64), n_bins - 1)
            flat = (np.arange(hi - lo)[:, None] * n_bins + cells).ravel()
            counts = np.bincount(flat, minlength=(hi - lo) * n_bins).reshape(-1, n_bins)
            out[lo:hi] = np.minimum(out[lo:hi], counts.min(axis=1) * n_bins / n)
    return out


def _containment_1d(mu, sd, x, n_bins):
    edges = mu[:, None] + sd[:, None] * ndtri(np.arange(1, n_bins) / n_bins)
    below = np.searchsorted(np.sort(x), edges.ravel(), side="left").reshape(edges.shape)
    below = np.hstack([np.zeros((mu.size, 1)), below, np.full((mu.size, 1), x.size)])
    return np.diff(below, axis=1).min(axis=1) * n_bins / x.size


def _close_matrix(means, covs, rows: np.ndarray, cols: np.ndarray, radius: float) -> np.ndarray:
    """Pairwise test of TV(rows[i], cols[j]) <= radius.

    Exact TV for d=1; for d > 1 the Delta/sqrt(2) upper bound, so only pairs
    certainly within ``radius`` count as close.
    """
    d = means.shape[1]
    if rows.size == 0 or cols.size == 0:
        return np.zeros((rows.size, cols.size), dtype=bool)
    if d == 1:
        tv = tv_gaussian_1d(means[rows, 0][:, None], covs[rows, 0, 0][:, None],
                            means[cols, 0][None, :], covs[cols, 0, 0][None, :])
        return tv <= radius
    L = np.linalg.cholesky(covs[cols])
    out = np.zeros((rows.size, cols.size), dtype=bool)
    for r, i in enumerate(rows):
        mean_gap = np.linalg.norm(
            np.linalg.solve(L, (means[i] - means[cols])[..., None])[..., 0], axis=1)
        left = np.linalg.solve(L, np.broadcast_to(covs[i], covs[cols].shape))
        white = np.linalg.solve(L, np.swapaxes(left, -1, -2))
        cov_gap = np.linalg.norm(white - np.eye(d), axis=(1, 2))
        out[r] = np.maximum(mean_gap, cov_gap) / math.sqrt(2.0) <= radius
    return out


def rank_and_cap(means, covs, points, budget: int, radius: float, block: int = 256):
    """Keep the ``budget`` best-contained candidates, skipping near duplicates of kept ones.

    Greedy in score order; candidates are screened a block at a time against the
    kept set and against each other, then resolved in order.
    """
    scores = containment_scores(means, covs, points)
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    for lo in range(0, order.size, block):
        if len(kept) >= budget:
            break
        blk = order[lo:lo + block]
        vs_kept = _close_matrix(means, covs, blk, np.asarray(kept, dtype=np.int64), radius)
        alive = ~vs_kept.any(axis=1)
        cand = blk[alive]
        within = _close_matrix(means, covs, cand, cand, radius)
        taken: list[int] = []
        for r in range(cand.size):
            if len(kept) >= budget:
                break
            if taken and within[r, taken].any():
                continue
            taken.append(r)
            kept.append(int(cand[r]))
    kept_arr = np.asarray(kept, dtype=np.int64)
    return means[kept_arr], covs[kept_arr], scores[kept_arr]


# --------------------------------------------------------------- decoders

def _subset_indices(m: int, tau: int, max_subsets: int, rng) -> tuple[np.ndarray, str]:
    count = comb(m, tau, exact=True)
    if count <= max_subsets and count <= EXHAUSTIVE_LIMIT:
        return np.array(list(itertools.combinations(range(m), tau)), dtype=np.int64), "exhaustive"
    n_sub = int(min(max_subsets, EXHAUSTIVE_LIMIT))
    return random_subsets(m, tau, n_sub, rng), "random"


def random_subsets(n: int, size: int, count: int, rng) -> np.ndarray:
    """``count`` uniform size-``size`` subsets of range(n); rows with repeats are redrawn."""
    out = rng.integers(0, n, size=(count, size))
    while True:
        srt = np.sort(out, axis=1)
        bad = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
        if bad.size == 0:
            return out
        out[bad] = rng.integers(0, n, size=(bad.size, size))


def _decode_arrays(points: np.ndarray, p: DecodeParams, rng):
    m, d = points.shape
    tau = p.tau(d)
    subsets, mode = _subset_indices(m, tau, p.L_budget, rng)
    means, covs = _fit(points[subsets])
    means, covs = _quantization_grid(means, covs, p.grid_bits)
    return means, covs, mode


def gaussian_list_decode(data: Dataset, p: DecodeParams, rng=None) -> HypothesisList:
    """Candidate Gaussians from small-subset fits plus a local quantization grid.

    Fits come from every size-tau subset of an m-point subsample when that is at
    most ``L_budget`` subsets, otherwise from ``L_budget`` random subsets. The
    declared budget is the subset budget times the grid size.
    """
    rng = make_rng(rng)
    n, d = len(data), data.dim
    tau = p.tau(d)
    if n < max(p.m, tau):
        raise InsufficientData(max(p.m, tau), n)
    pick = rng.permutation(n)[:p.m]
    means, covs, mode = _decode_arrays(data.points[pick], p, rng)
    means, covs = _dedupe(means, covs)
    budget = min(p.L_budget, comb(p.m, tau, exact=True)) * grid_size(d, p.grid_bits)
    items = [_single(g) for g in gaussians_from_arrays(means, covs)]
    manifest = {"m": p.m, "N": p.m, "gamma": p.gamma, "budget": budget, "mode": mode,
                "seed": data.seed, "subset_size": tau, "grid_bits": p.grid_bits}
    return HypothesisList(items, -1, budget, manifest)


def contamination_sample_size(m: int, beta: float, gamma: float) -> int:
    return int(math.ceil((2 * m + 8 * math.log(1.0 / beta)) / (1.0 - gamma)))


def all_inlier_trials(N: int, m: int, beta: float, gamma: float) -> int:
    """Random m-subsets needed to include an all-inlier subset with probability >= 1 - beta.

    With probability >= 1 - beta at least floor((1-gamma) N / 2) + 1 of the N points are
    inliers; a uniform m-subset is then all-inlier with probability C(x, m) / C(N, m).
    """
    inliers = max(m, int(math.floor((1.0 - gamma) * N / 2.0)) + 1)
    hit = comb(inliers, m, exact=True) / comb(N, m, exact=True)
    if hit >= 1.0:
        return 1
    return int(math.ceil(math.log(1.0 / beta) / -math.log1p(-hit)))


def lift_budget(p: DecodeParams, d: int) -> float:
    inner = min(p.L_budget, comb(p.m, p.tau(d), exact=True)) * grid_size(d, p.grid_bits)
    return inner * (10 * math.e * math.log(1.0 / p.beta) / (1.0 - p.gamma)) ** p.m


def _lift_arrays(data: Dataset, p: DecodeParams, rng, budget=None):
    n, d = len(data), data.dim
    N = contamination_sample_size(p.m, p.beta, p.gamma)
    if n < N:
        raise InsufficientData(N, n)
    tau = p.tau(d)
    pick = rng.permutation(n)[:N]
    pts = data.points[pick]
    total = comb(N, p.m, exact=True)
    if total <= EXHAUSTIVE_LIMIT:
        outer = np.array(list(itertools.combinations(range(N), p.m)), dtype=np.int64)
        mode = "exhaustive"
    else:
        trials = all_inlier_trials(N, p.m, p.beta, p.gamma)
        outer = random_subsets(N, p.m, trials, rng)
        mode = "random"
    inner, _ = _subset_indices(p.m, tau, p.L_budget, rng)
    subsets = outer[:, inner].reshape(-1, tau)
    means, covs = _fit(pts[subsets])
    means, covs = _quantization_grid(means, covs, p.grid_bits)
    means, covs = _dedupe(means, covs)
    cap = lift_budget(p, d) if budget is None else budget
    if means.shape[0] > cap:
        means, covs, _ = rank_and_cap(means, covs, data.points, int(cap), p.alpha)
    manifest = {"m": p.m, "N": N, "gamma": p.gamma, "budget": cap, "mode": mode,
                "seed": data.seed, "outer_subsets": int(outer.shape[0])}
    return means, covs, manifest


def lift_contamination(data: Dataset, p: DecodeParams, rng=None,
                       budget: Optional[int] = None) -> HypothesisList:
    """Gaussian list decoding under Huber contamination at level ``p.gamma``.

    Runs the decoder on m-point subsets of N contamination-adjusted samples. If
    the union exceeds ``budget`` (default: the growth formula), candidates are
    ranked by how well they sit under the data and the best distinct ones kept.
    """
    rng = make_rng(rng)
    means, covs, manifest = _lift_arrays(data, p, rng, budget)
    items = [_single(g) for g in gaussians_from_arrays(means, covs)]
    return HypothesisList(items, -1, manifest["budget"], manifest)


def mixture_list_budget(k: int, component_budget: float, alpha: float) -> float:
    return (k * component_budget / alpha) ** (k + 1)


def dense_mixture_list_decode(data: Dataset, k: int, p: DecodeParams, rng=None,
                              component_budget: Optional[int] = None,
                              budget: Optional[float] = None,
                              distinct_components: bool = False) -> HypothesisList:
    """Candidate mixtures whose weights are all at least alpha/k.

    Each dense component is an inlier population at rate >= alpha/k, so the
    component decoder runs at contamination 1 - alpha/k. The component list is
    then crossed with the weight grids simplex_cover(s, alpha/s), s = 1..k, and
    identical mixtures (same components and weights up to order) are merged.
    """
    rng = make_rng(rng)
    cp = replace(p, gamma=1.0 - p.alpha / k)
    means, covs, manifest = _lift_arrays(data, cp, rng, component_budget)
    comps = gaussians_from_arrays(means, covs)
    C = len(comps)
    cap = mixture_list_budget(k, manifest["budget"], p.alpha) if budget is None else budget
    raw = 0
    seen = set()
    items = []
    for s in range(1, k + 1):
        W = simplex_cover(s, p.alpha / s).points
        raw += C ** s * W.shape[0]
        for tup in itertools.product(range(C), repeat=s):
            if distinct_components and len(set(tup)) < s:
                continue
            for w in W:
                key = tuple(sorted(zip(tup, np.round(w, 12))))
                if key in seen:
                    continue
                seen.add(key)
                items.append(Mixture(_frozen([kw for _, kw in key]),
                                     tuple(comps[c] for c, _ in key)))
    if len(items) > cap:
        raise InfeasibleBudget(f"mixture list of {len(items)} exceeds budget {cap}")
    manifest = dict(manifest, k=k, component_count=C, raw_size=raw, budget=cap)
    return HypothesisList(items, -1, cap, manifest)
