"""Synthetic list collections for selector experiments and audits."""
from __future__ import annotations

import numpy as np

from .covers import ParameterBox, sample_in_box
from .listdecode import HypothesisList
from .metrics import tv_gaussian_1d
from .model import Gaussian, gaussian_create
from .rng import make_rng


def perturb_within(g: Gaussian, radius: float, rng, scale: float = 1.0) -> Gaussian:
    """A random 1-D Gaussian within exact TV ``radius`` of ``g`` (rejection sampling)."""
    rng = make_rng(rng)
    mu, var = float(g.mean[0]), float(g.cov[0, 0])
    sd = np.sqrt(var)
    while True:
        m = mu + rng.uniform(-1, 1) * 2.6 * radius * sd * scale
        v = var * np.exp(rng.uniform(-1, 1) * 4.2 * radius * scale)
        if tv_gaussian_1d(mu, var, m, v) <= radius:
            return gaussian_create([m], [[v]])


def planted_collection(box: ParameterBox, T: int, Q: int, alpha: float, rng,
                       center: Gaussian | None = None):
    """T lists of Q 1-D Gaussians; each list holds one item within alpha of a planted member.

    The other items are uniform decoys from the box. Returns (lists, planted).
    """
    rng = make_rng(rng)
    inner = ParameterBox(box.dim, 0.8 * box.mean_bound,
                         box.eig_min * 1.1, box.eig_max / 1.1)
    planted = center if center is not None else sample_in_box(inner, 1, rng)[0]
    lists = []
    for i in range(T):
        items = [perturb_within(planted, alpha, rng)]
        items += sample_in_box(box, Q - 1, rng)
        order = rng.permutation(Q)
        lists.append(HypothesisList([items[j] for j in order], i, Q))
    return lists, planted


def neighbor_collection(lists: list, index: int, replacement: HypothesisList) -> list:
    out = list(lists)
    out[index] = HypothesisList(list(replacement.items), index, replacement.budget)
    return out


def clustered_collection(box: ParameterBox, T: int, Q: int, spread: float, rng,
                         center: Gaussian | None = None):
    """Lists whose items scatter around a common centre at TV up to ``spread``."""
    rng = make_rng(rng)
    center = center or gaussian_create([0.0], [[1.0]])
    lists = [HypothesisList([perturb_within(center, spread, rng) for _ in range(Q)], i, Q)
             for i in range(T)]
    return lists, center


def neighbor_pairs(box: ParameterBox, n_pairs: int, T: int, Q: int, alpha: float, rng):
    """Pairs of collections that differ in exactly one list."""
    rng = make_rng(rng)
    pairs = []
    for _ in range(n_pairs):
        lists, planted = planted_collection(box, T, Q, alpha, rng)
        idx = int(rng.integers(T))
        fresh, _ = planted_collection(box, 1, Q, alpha, rng)
        pairs.append((lists, neighbor_collection(lists, idx, fresh[0])))
    return pairs
