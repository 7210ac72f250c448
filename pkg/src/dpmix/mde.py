"""Minimum distance estimation over a finite candidate list."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCandidates
from .model import Dataset, log_density, sample
from .rng import make_rng

DEFAULT_MC_N = 20_000


@dataclass(frozen=True)
class YatracosDiscrepancy:
    candidate_index: int
    value: float


def _items(candidates) -> list:
    items = list(getattr(candidates, "items", candidates))
    if not items:
        raise EmptyCandidates("no candidates to select from")
    return items


def yatracos_discrepancy(candidates, data: Dataset, mc_n: int = DEFAULT_MC_N,
                         rng=None) -> list[YatracosDiscrepancy]:
    """For each candidate c, max over ordered pairs (i, j) of |P_c(A_ij) - P_data(A_ij)|.

    A_ij = {x : f_i(x) > f_j(x)}. Candidate measures are Monte Carlo frequencies
    over ``mc_n`` draws from c; all membership tests are density comparisons.
    """
    items = _items(candidates)
    rng = make_rng(rng)
    N = len(items)
    if N == 1:
        return [YatracosDiscrepancy(0, 0.0)]
    n = len(data)
    draws = [sample(c, mc_n, rng).points for c in items]
    pts = np.vstack([data.points, *draws])
    logd = np.column_stack([log_density(c, pts) for c in items])
    starts = np.concatenate([[0], n + mc_n * np.arange(N)]).astype(np.int64)
    sizes = np.concatenate([[max(n, 1)], np.full(N, mc_n)]).astype(float)
    worst = np.zeros(N)
    for i in range(N):
        inside = logd[:, i:i + 1] > logd
        freq = np.add.reduceat(inside, starts, axis=0, dtype=np.int64) / sizes[:, None]
        if n == 0:
            freq[0] = 0.0
        gaps = np.abs(freq[1:] - freq[0])
        worst = np.maximum(worst, gaps.max(axis=1))
    return [YatracosDiscrepancy(c, float(v)) for c, v in enumerate(worst)]


def mde_select(candidates, data: Dataset, mc_n: int = DEFAULT_MC_N, rng=None) -> int:
    """Index of the smallest discrepancy; the lowest index wins exact ties."""
    disc = yatracos_discrepancy(candidates, data, mc_n, rng)
    return int(np.argmin([d.value for d in disc]))
