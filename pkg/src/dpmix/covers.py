"""Data-independent covers of weight vectors, Gaussians and dense mixtures."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InfeasibleBudget, InvalidRadii
from .metrics import hellinger_tv_bounds, tv_gaussian_1d
from .model import Gaussian, Mixture, as_mixture, gaussian_create, gaussian_delta
from .rng import make_rng, now_ns

RECIPE_VERSION = 1
DEFAULT_CAP = 5_000_000
BALL_GATE = 1.0 / 600.0
T_MARGIN = 1.25


def recipe_hash(recipe: dict) -> str:
    return hashlib.sha256(json.dumps(recipe, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class ParameterBox:
    """Means in [-mean_bound, mean_bound]^dim, covariance eigenvalues in [eig_min, eig_max]."""

    dim: int
    mean_bound: float
    eig_min: float
    eig_max: float

    def __post_init__(self):
        if self.dim < 1 or self.mean_bound < 0 or not 0 < self.eig_min <= self.eig_max:
            raise ValueError(f"invalid parameter box {self}")

    def contains(self, g: Gaussian) -> bool:
        eig = np.linalg.eigvalsh(g.cov)
        return bool(np.all(np.abs(g.mean) <= self.mean_bound)
                    and eig.min() >= self.eig_min and eig.max() <= self.eig_max)

    def as_dict(self) -> dict:
        return {"dim": self.dim, "mean_bound": self.mean_bound,
                "eig_min": self.eig_min, "eig_max": self.eig_max}


def sample_in_box(box: ParameterBox, n: int, rng=None) -> list[Gaussian]:
    """Random Gaussians inside the box: uniform means, uniform eigenvalues, Haar rotation."""
    rng = make_rng(rng)
    d = box.dim
    out = []
    for _ in range(n):
        mean = rng.uniform(-box.mean_bound, box.mean_bound, d)
        eig = rng.uniform(box.eig_min, box.eig_max, d)
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q = q * np.sign(np.diag(r))
        out.append(gaussian_create(mean, (q * eig) @ q.T))
    return out


@dataclass(frozen=True)
class CoverAudit:
    max_ball_count: int
    probes: int
    violations: list


class Cover:
    """A finite alpha-cover with a replayable construction recipe."""

    metric_tag: str = ""

    def __init__(self, alpha: float, recipe: dict, claimed_t: Optional[int] = None,
                 claimed_gamma: Optional[float] = None):
        self.alpha = float(alpha)
        self.recipe = recipe
        self.claimed_t = claimed_t
        self.claimed_gamma = claimed_gamma
        self.created_at = now_ns()

    def __len__(self) -> int:
        raise NotImplementedError

    def element(self, index: int):
        raise NotImplementedError

    @property
    def elements(self) -> list:
        if len(self) > DEFAULT_CAP:
            raise InfeasibleBudget(f"cover has {len(self)} elements, above the cap")
        return [self.element(i) for i in range(len(self))]

    def neighbors(self, item, radius: float) -> np.ndarray:
        """Sorted indices of the elements within ``radius`` of ``item``."""
        raise NotImplementedError

    def neighbors_many(self, items: Sequence, radius: float) -> list[np.ndarray]:
        return [self.neighbors(it, radius) for it in items]

    @property
    def recipe_hash(self) -> str:
        return recipe_hash(self.recipe)


class SimplexCover(Cover):
    metric_tag = "linf"

    def __init__(self, points: np.ndarray, alpha: float, recipe: dict):
        super().__init__(alpha, recipe)
        self.points = points
        self.points.setflags(write=False)

    def __len__(self):
        return self.points.shape[0]

    def element(self, index):
        return self.points[index]

    def neighbors(self, item, radius):
        w = np.asarray(item, dtype=float)
        gap = np.max(np.abs(self.points - w), axis=1)
        return np.flatnonzero(gap <= radius + 1e-12)


class GaussianCover(Cover):
    metric_tag = "tv"

    def __init__(self, means: np.ndarray, covs: np.ndarray, alpha: float, recipe: dict,
                 claimed_t=None, claimed_gamma=None, tv_oracle: Optional[Callable] = None):
        super().__init__(alpha, recipe, claimed_t, claimed_gamma)
        self.means = np.ascontiguousarray(means, dtype=float)
        self.covs = np.ascontiguousarray(covs, dtype=float)
        self.dim = self.means.shape[1]
        self.tv_oracle = tv_oracle
        self._cache: dict = {}

    def __len__(self):
        return self.means.shape[0]

    def element(self, index):
        return gaussian_create(self.means[index], self.covs[index])

    def distances(self, g: Gaussian) -> np.ndarray:
        """Exact TV from ``g`` to every element (d=1 only)."""
        if self.dim != 1:
            raise DimensionMismatch("vectorised TV is only available for d=1")
        return tv_gaussian_1d(g.mean[0], g.cov[0, 0], self.means[:, 0], self.covs[:, 0, 0])

    def neighbors(self, item, radius):
        if isinstance(item, Mixture):
            if item.n_components != 1:
                return np.empty(0, dtype=np.int64)
            item = item.components[0]
        if item.dim != self.dim:
            raise DimensionMismatch("item and cover dimensions differ")
        key = (item.mean.tobytes(), item.cov.tobytes(), float(radius))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.dim == 1 and self.tv_oracle is None:
            idx = np.flatnonzero(self.distances(item) <= radius)
        else:
            idx = self._neighbors_general(item, radius)
        if len(self._cache) > 100_000:
            self._cache.clear()
        self._cache[key] = idx
        return idx

    def neighbors_many(self, items, radius, block: int = 256):
        """Batched ``neighbors``; one distance matrix per block of 1-D items."""
        if self.dim != 1 or self.tv_oracle is not None:
            return super().neighbors_many(items, radius)
        out = [np.empty(0, dtype=np.int64)] * len(items)
        plain = []
        for j, it in enumerate(items):
            if isinstance(it, Mixture):
                if it.n_components != 1:
                    continue
                it = it.components[0]
            if it.dim != 1:
                raise DimensionMismatch("item and cover dimensions differ")
            plain.append((j, it))
        for lo in range(0, len(plain), block):
            chunk = plain[lo:lo + block]
            mu = np.array([g.mean[0] for _, g in chunk])[:, None]
            var = np.array([g.cov[0, 0] for _, g in chunk])[:, None]
            close = tv_gaussian_1d(mu, var, self.means[None, :, 0], self.covs[None, :, 0, 0]) <= radius
            for r, (j, _) in enumerate(chunk):
                out[j] = np.flatnonzero(close[r])
        return out

    def _neighbors_general(self, item: Gaussian, radius: float) -> np.ndarray:
        from .metrics import default_tv_oracle
        oracle = self.tv_oracle or default_tv_oracle
        keep = []
        for i in range(len(self)):
            e = self.element(i)
            lo, hi = hellinger_tv_bounds(item, e)
            if lo > radius:
                continue
            if hi <= radius or gaussian_delta(e, item) / math.sqrt(2) <= radius:
                keep.append(i)
            elif oracle(item, e) <= radius:
                keep.append(i)
        return np.asarray(keep, dtype=np.int64)


class MixtureCover(Cover):
    """Products of component-cover tuples and simplex covers, indexed lazily.

    Element ids are laid out block by block over the component count s:
    id = offset_s + (weight_index * C + c_1) * C + ... + c_s.
    """

    metric_tag = "kappa_mix"

    def __init__(self, component_cover: GaussianCover, k: int, alpha: float, recipe: dict,
                 claimed_t=None, claimed_gamma=None):
        super().__init__(alpha, recipe, claimed_t, claimed_gamma)
        self.component_cover = component_cover
        self.k = int(k)
        self.weight_covers = [simplex_cover(s, alpha / s) for s in range(1, k + 1)]
        C = len(component_cover)
        self.n_base = C
        sizes = [C ** s * len(w) for s, w in zip(range(1, k + 1), self.weight_covers)]
        self.block_sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(object)
        self._size = int(sum(sizes))
        if self._size >= 2 ** 62:
            raise InfeasibleBudget("mixture cover ids overflow 64-bit integers")

    def __len__(self):
        return self._size

    def decode(self, index: int) -> tuple[int, int, tuple]:
        index = int(index)
        if not 0 <= index < self._size:
            raise IndexError(index)
        s = int(np.searchsorted(np.asarray(self.offsets[1:], dtype=np.int64), index, side="right")) + 1
        local = index - int(self.offsets[s - 1])
        comps = []
        for _ in range(s):
            local, c = divmod(local, self.n_base)
            comps.append(c)
        return s, local, tuple(reversed(comps))

    def element(self, index):
        s, w_idx, comps = self.decode(index)
        weights = self.weight_covers[s - 1].points[w_idx]
        return Mixture(_read_only(weights),
                       tuple(self.component_cover.element(c) for c in comps))

    def neighbors(self, item, radius):
        item = as_mixture(item)
        s = item.n_components
        if s > self.k:
            return np.empty(0, dtype=np.int64)
        C = self.n_base
        comp_nbrs = [self.component_cover.neighbors(c, radius) for c in item.components]
        if any(n.size == 0 for n in comp_nbrs):
            return np.empty(0, dtype=np.int64)
        W = self.weight_covers[s - 1].points
        found = []
        for perm in itertools.permutations(range(s)):
            w = item.weights[list(perm)]
            w_ok = np.flatnonzero(np.max(np.abs(W - w), axis=1) * s <= radius + 1e-12)
            if w_ok.size == 0:
                continue
            ids = w_ok.astype(np.int64)
            for j in perm:
                ids = (ids[:, None] * C + comp_nbrs[j][None, :]).ravel()
            found.append(ids + int(self.offsets[s - 1]))
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found))

    def nearest(self, target: Mixture) -> tuple[int, float]:
        """Element minimising kappa_mix to ``target`` using exact 1-D component TV.

        The cover is a product, so for a fixed matching the best weight vector and
        the best component for each slot can be chosen independently.
        """
        target = as_mixture(target)
        s = target.n_components
        W = self.weight_covers[s - 1].points
        comp_d = [self.component_cover.distances(c) for c in target.components]
        best = (None, np.inf)
        for perm in itertools.permutations(range(s)):
            w = target.weights[list(perm)]
            wgap = np.max(np.abs(W - w), axis=1) * s
            wi = int(np.argmin(wgap))
            comps = [int(np.argmin(comp_d[j])) for j in perm]
            val = max(wgap[wi], *(comp_d[j][c] for j, c in zip(perm, comps)))
            if val < best[1]:
                local = wi
                for c in comps:
                    local = local * self.n_base + c
                best = (local + int(self.offsets[s - 1]), float(val))
        return best


def _read_only(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ------------------------------------------------------------------ simplex

def simplex_cover(k: int, alpha: float) -> SimplexCover:
    """One point per side-``alpha`` cube that meets the probability simplex.

    The representative starts at the cube's lower corner and fills the missing
    mass coordinate by coordinate up to the cube's upper edge.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if k < 1:
        raise ValueError("k must be positive")
    n = math.ceil(1.0 / alpha - 1e-12)
    idx = np.indices((n,) * k).reshape(k, -1).T
    lower = idx * alpha
    upper = np.minimum((idx + 1) * alpha, 1.0)
    meets = (lower.sum(axis=1) <= 1.0 + 1e-12) & (upper.sum(axis=1) >= 1.0 - 1e-12)
    lower, upper = lower[meets], upper[meets]
    rep = lower.copy()
    missing = 1.0 - rep.sum(axis=1)
    for j in range(k):
        add = np.clip(np.minimum(missing, upper[:, j] - lower[:, j]), 0.0, None)
        rep[:, j] += add
        missing -= add
    rep[:, -1] += missing
    rep = rep / rep.sum(axis=1, keepdims=True)
    _, first = np.unique(np.round(rep, 12), axis=0, return_index=True)
    rep = rep[np.sort(first)]
    recipe = {"kind": "simplex", "version": RECIPE_VERSION, "k": int(k), "alpha": float(alpha)}
    return SimplexCover(rep, alpha, recipe)


# ------------------------------------------------------------ Gaussian grids

@dataclass
class _Lattice:
    chols: np.ndarray     # (n, d, d) lower-triangular factors
    spacing: float        # whitened mean-grid spacing
    margin: float         # Frobenius radius of one lattice cell


def _cov_lattice(d: int, eig_min: float, eig_max: float, alpha: float,
                 cap: int) -> _Lattice:
    """Cholesky-factor lattice whose cells keep the whitened covariance gap <= sqrt(2)*alpha.

    With E = Lt^{-1}(L - Lt), the whitened gap is ||E + E^T + E E^T||_F <= 2x + x^2,
    and ||E||_F <= cell / (sqrt(eig_min) - cell).
    """
    target = math.sqrt(2.0) * alpha
    x = math.sqrt(1.0 + target) - 1.0
    n_entries = d * (d + 1) // 2
    cell = x * math.sqrt(eig_min) / (1.0 + x)
    h = 2.0 * cell / math.sqrt(n_entries)
    lo, hi = math.sqrt(eig_min), math.sqrt(eig_max)
    diag = h * np.arange(math.floor(lo / h), math.ceil(hi / h) + 1)
    diag = diag[diag > 0]
    off = h * np.arange(-math.ceil(hi / h), math.ceil(hi / h) + 1)
    projected = diag.size ** d * off.size ** (n_entries - d)
    if projected > cap:
        raise InfeasibleBudget(f"covariance lattice would hold {projected} factors")
    rows, cols = np.tril_indices(d)
    axes = [diag if r == c else off for r, c in zip(rows, cols)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n_entries)
    chols = np.zeros((grid.shape[0], d, d))
    chols[:, rows, cols] = grid
    sv = np.linalg.svd(chols, compute_uv=False)
    keep = (sv.min(axis=1) >= lo - cell - 1e-12) & (sv.max(axis=1) <= hi + cell + 1e-12)
    spacing = 2.0 * target / math.sqrt(d)
    return _Lattice(chols[keep], spacing, cell)


def _int_grid(bounds: np.ndarray) -> np.ndarray:
    axes = [np.arange(-b, b + 1) for b in bounds]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(bounds))


def gaussian_ball_cover(mu, sigma, alpha: float, gamma: float,
                        cap: int = DEFAULT_CAP, refine: Optional[int] = None) -> GaussianCover:
    """Alpha-cover of the TV ball of radius ``gamma`` around N(mu, sigma).

    Built around N(0, I) and mapped to the centre with the affine map
    x -> sigma^{1/2} x + mu, which preserves TV. Every element keeps the
    Delta/sqrt(2) upper bound to the centre within gamma + alpha. A ball member
    can sit up to 0.975*alpha (d=1, pure scale direction) from that region, so
    the lattice is refined to spacing alpha/refine to absorb the rest.
    ``refine`` defaults to 64, halved until the projected size fits ``cap``.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if not 0 < alpha < gamma <= BALL_GATE:
        raise InvalidRadii(f"need 0 < alpha < gamma <= 1/600, got alpha={alpha}, gamma={gamma}")
    d = mu.size
    center = gaussian_create(mu, sigma)
    limit = gamma + alpha
    reach = math.sqrt(2.0) * limit          # Delta bound implied by the upper-bound limit
    factors = [refine] if refine is not None else [64, 32, 16, 8, 4, 2, 1]
    for f in factors:
        fine = alpha / f
        try:
            lat = _cov_lattice(d, 1.0 - reach, 1.0 + reach, fine, cap)
        except InfeasibleBudget:
            continue
        radius = reach / math.sqrt(1.0 - reach) + lat.spacing * math.sqrt(d)
        bound = math.ceil(radius / lat.spacing)
        if lat.chols.shape[0] * (2 * bound + 1) ** d <= cap:
            break
    else:
        raise InfeasibleBudget("ball cover would exceed the element cap")
    chols = lat.chols
    covs = chols @ np.transpose(chols, (0, 2, 1))
    near = np.linalg.norm(covs - np.eye(d), axis=(1, 2)) <= reach + 1e-15
    chols, covs = chols[near], covs[near]
    u = _int_grid(np.full(d, bound)) * lat.spacing
    means = np.einsum("nij,mj->nmi", chols, u).reshape(-1, d)
    covs = np.repeat(covs, u.shape[0], axis=0)
    keep = np.linalg.norm(means, axis=1) <= reach + 1e-15
    means, covs = means[keep], covs[keep]

    w, v = np.linalg.eigh(center.cov)
    root = (v * np.sqrt(w)) @ v.T
    means = means @ root.T + mu
    covs = root @ covs @ root.T
    covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
    recipe = {"kind": "gaussian_ball", "version": RECIPE_VERSION,
              "mu": mu.tolist(), "sigma": sigma.tolist(),
              "alpha": float(alpha), "gamma": float(gamma), "refine": int(f)}
    return GaussianCover(means, covs, alpha, recipe)


def bounded_gaussian_cover(box: ParameterBox, alpha: float, cap: int = DEFAULT_CAP,
                           n_probes: int = 400, audit_seed: int = 0) -> GaussianCover:
    """Alpha-cover (TV) of every Gaussian whose parameters lie in ``box``.

    Each lattice factor Lt carries the mean grid {Lt u : u on a cubic grid},
    which is the location cover around N(0, I) pushed through x -> Lt x.
    claimed_t is the densest ball of radius 2*alpha seen by a seeded probe
    audit, inflated by a 25% margin.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    d = box.dim
    recipe = {"kind": "bounded_gaussian", "version": RECIPE_VERSION,
              "box": box.as_dict(), "alpha": float(alpha),
              "n_probes": int(n_probes), "audit_seed": int(audit_seed)}
    if box.mean_bound == 0 and box.eig_min == box.eig_max:
        cover = GaussianCover(np.zeros((1, d)), box.eig_min * np.eye(d)[None], alpha, recipe,
                              claimed_t=1, claimed_gamma=2 * alpha)
        return cover

    lat = _cov_lattice(d, box.eig_min, box.eig_max, alpha, cap)
    means, covs = [], []
    total = 0
    for L in lat.chols:
        Linv = np.linalg.inv(L)
        reach = box.mean_bound + np.abs(L).sum(axis=1).max() * lat.spacing / 2.0
        bounds = np.ceil(np.abs(Linv).sum(axis=1) * reach / lat.spacing).astype(int)
        total += int(np.prod(2 * bounds + 1))
        if total > cap:
            raise InfeasibleBudget(f"bounded cover would exceed {cap} elements")
        u = _int_grid(bounds) * lat.spacing
        m = u @ L.T
        m = m[np.max(np.abs(m), axis=1) <= reach + 1e-12]
        means.append(m)
        covs.append(np.repeat((L @ L.T)[None], m.shape[0], axis=0))
    means = np.concatenate(means)
    covs = np.concatenate(covs)
    cover = GaussianCover(means, covs, alpha, recipe)
    probes = sample_in_box(box, n_probes, audit_seed)
    audit = audit_local_smallness(cover, 2 * alpha, probes)
    cover.claimed_t = int(math.ceil(T_MARGIN * max(audit.max_ball_count, 1)))
    cover.claimed_gamma = 2 * alpha
    return cover


def dense_mixture_cover(component_cover: GaussianCover, k: int, alpha: float,
                        n_probes: int = 200, audit_seed: int = 0) -> MixtureCover:
    """Cover of mixtures with at most k components under kappa_mix.

    claimed_t comes from a probe audit at radius 2*alpha over random mixtures
    built from the component cover's box when one is recorded.
    """
    recipe = {"kind": "dense_mixture", "version": RECIPE_VERSION, "k": int(k),
              "alpha": float(alpha), "component": component_cover.recipe,
              "n_probes": int(n_probes), "audit_seed": int(audit_seed)}
    cover = MixtureCover(component_cover, k, alpha, recipe)
    box = component_cover.recipe.get("box")
    if box is not None and n_probes > 0 and component_cover.dim == 1:
        probes = random_mixtures(ParameterBox(**box), k, n_probes, audit_seed, min_weight=alpha / k)
        audit = audit_local_smallness(cover, 2 * alpha, probes)
        cover.claimed_t = int(math.ceil(T_MARGIN * max(audit.max_ball_count, 1)))
        cover.claimed_gamma = 2 * alpha
    return cover


def random_mixtures(box: ParameterBox, k: int, n: int, rng=None,
                    min_weight: float = 0.0) -> list[Mixture]:
    """Random mixtures with 1..k in-box components and weights at least ``min_weight``."""
    rng = make_rng(rng)
    out = []
    for _ in range(n):
        s = int(rng.integers(1, k + 1))
        free = 1.0 - s * min_weight
        w = min_weight + free * rng.dirichlet(np.ones(s))
        w = w / w.sum()
        out.append(Mixture(_read_only(w), tuple(sample_in_box(box, s, rng))))
    return out


# ------------------------------------------------------------------ audits

def audit_local_smallness(cover: Cover, gamma: float, probes: Sequence,
                          metric: Optional[Callable] = None) -> CoverAudit:
    """Count cover elements within ``gamma`` of each probe.

    Without an explicit metric the cover's own neighbour index is used.
    """
    counts = []
    if metric is None:
        for p in probes:
            counts.append(int(cover.neighbors(p, gamma).size))
    else:
        elems = cover.elements
        for p in probes:
            counts.append(sum(1 for e in elems if metric(p, e) <= gamma))
    max_count = max(counts, default=0)
    violations = []
    if cover.claimed_t is not None:
        violations = [(i, c) for i, c in enumerate(counts) if c > cover.claimed_t]
    return CoverAudit(max_count, len(counts), violations)


# ------------------------------------------------------------ serialization

def build_cover(recipe: dict) -> Cover:
    """Replay a recipe into the identical cover."""
    kind = recipe.get("kind")
    if recipe.get("version") != RECIPE_VERSION:
        raise ValueError(f"unsupported recipe version {recipe.get('version')}")
    if kind == "simplex":
        return simplex_cover(recipe["k"], recipe["alpha"])
    if kind == "gaussian_ball":
        return gaussian_ball_cover(recipe["mu"], recipe["sigma"], recipe["alpha"], recipe["gamma"],
                                   refine=recipe["refine"])
    if kind == "bounded_gaussian":
        return bounded_gaussian_cover(ParameterBox(**recipe["box"]), recipe["alpha"],
                                      n_probes=recipe["n_probes"], audit_seed=recipe["audit_seed"])
    if kind == "dense_mixture":
        comp = build_cover(recipe["component"])
        return dense_mixture_cover(comp, recipe["k"], recipe["alpha"],
                                   n_probes=recipe["n_probes"], audit_seed=recipe["audit_seed"])
    raise ValueError(f"unknown cover kind {kind!r}")


def cover_to_dict(cover: Cover, include_elements: bool = True, max_elements: int = 100_000) -> dict:
    from .model import model_to_dict
    out = {"alpha": cover.alpha, "metric": cover.metric_tag, "recipe": cover.recipe,
           "claimed_t": cover.claimed_t, "claimed_gamma": cover.claimed_gamma}
    if include_elements and len(cover) <= max_elements:
        if isinstance(cover, SimplexCover):
            out["elements"] = cover.points.tolist()
        else:
            out["elements"] = [model_to_dict(e) for e in cover.elements]
    return out


def cover_from_dict(obj: dict) -> Cover:
    return build_cover(obj["recipe"])
