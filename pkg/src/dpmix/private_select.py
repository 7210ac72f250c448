"""Score tables, exponential-mechanism selection and the private common-member selector."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .covers import Cover
from .errors import EmptyTable, MetricMismatch
from .rng import make_rng

# Multiplier of the round count, fixed once for all experiments.
ROUNDS_CONSTANT = 22.0
SELECTOR_ALPHA = 0.1


class _Bottom:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOTTOM"

    def __reduce__(self):
        return (_Bottom, ())


BOTTOM = _Bottom()


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class ScoreTable:
    """Nonzero scores over a cover; everything else sits behind the sentinel."""

    ids: np.ndarray
    counts: np.ndarray
    T: int
    radius: float
    bottom_weight: int

    @property
    def entries(self) -> dict:
        return {int(i): int(c) for i, c in zip(self.ids, self.counts)}

    def score(self, index: int) -> int:
        pos = np.searchsorted(self.ids, index)
        if pos < self.ids.size and self.ids[pos] == index:
            return int(self.counts[pos])
        return 0

    @property
    def max_score(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0


def _metric_tag(metric) -> Optional[str]:
    if metric is None:
        return None
    if isinstance(metric, str):
        return metric
    return getattr(metric, "tag", None)


def score_table(lists: Sequence, cover: Cover, radius: Optional[float] = None,
                metric=None) -> ScoreTable:
    """Count, for each cover element, the lists holding an item within ``radius`` of it.

    Only elements near some list item are enumerated, via the cover's own
    neighbour index.
    """
    tag = _metric_tag(metric)
    if tag is not None and tag != cover.metric_tag:
        raise MetricMismatch(f"cover uses {cover.metric_tag!r}, metric is {tag!r}")
    if radius is None:
        radius = 2.0 * cover.alpha
    items = [item for lst in lists for item in lst]
    ends = np.cumsum([len(lst) for lst in lists], dtype=np.int64)
    found = cover.neighbors_many(items, radius)
    per_list = []
    for i, stop in enumerate(ends):
        start = ends[i - 1] if i else 0
        hits = [f for f in found[start:stop] if f.size]
        if hits:
            per_list.append(np.unique(np.concatenate(hits)))
    if per_list:
        ids, counts = np.unique(np.concatenate(per_list), return_counts=True)
    else:
        ids, counts = np.empty(0, np.int64), np.empty(0, np.int64)
    return ScoreTable(ids.astype(np.int64), counts.astype(np.int64), len(lists),
                      float(radius), len(cover) - ids.size)


def selection_probabilities(table: ScoreTable, priv: PrivacyParams) -> np.ndarray:
    """Output law of gap_max: entries in id order, then the sentinel."""
    util = np.maximum(table.counts - 1, 0).astype(float)
    logw = np.append(0.5 * priv.epsilon * util,
                     math.log(table.bottom_weight) if table.bottom_weight > 0 else -np.inf)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def gap_max(table: ScoreTable, priv: PrivacyParams, alpha_prime: float = SELECTOR_ALPHA,
            beta: float = 0.1, rng=None, resolve_bottom: bool = True):
    """Exponential mechanism over the active entries plus the sentinel.

    Utility is score - 1 clipped at 0, so elements that enter or leave the active
    set between neighbouring inputs carry the sentinel's utility. With
    ``resolve_bottom`` a sentinel draw is replaced by a uniform inactive element,
    which makes the output law the exponential mechanism over the whole cover;
    otherwise BOTTOM is returned. ``alpha_prime`` and ``beta`` set the utility
    contract only.
    """
    if not 0 < alpha_prime < 1:
        raise ValueError("alpha_prime must lie in (0, 1)")
    if table.ids.size == 0 and table.bottom_weight == 0:
        raise EmptyTable("no entries and no sentinel mass")
    rng = make_rng(rng)
    probs = selection_probabilities(table, priv)
    cum = np.cumsum(probs)
    pick = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    pick = min(pick, probs.size - 1)
    if pick < table.ids.size:
        return int(table.ids[pick])
    if not resolve_bottom:
        return BOTTOM
    size = table.ids.size + table.bottom_weight
    while True:
        cand = int(rng.integers(size))
        pos = np.searchsorted(table.ids, cand)
        if pos == table.ids.size or table.ids[pos] != cand:
            return cand


def pcms(lists: Sequence, cover: Cover, metric, priv: PrivacyParams, beta: float,
         rng=None, radius: Optional[float] = None):
    """Private common-member selection: score against the cover, then gap_max."""
    table = score_table(lists, cover, radius, metric)
    try:
        idx = gap_max(table, priv, SELECTOR_ALPHA, beta, rng)
    except EmptyTable:
        return BOTTOM
    if idx is BOTTOM:
        return BOTTOM
    return cover.element(idx)


def required_rounds(t: float, Q: float, beta: float, priv: PrivacyParams,
                    c: float = ROUNDS_CONSTANT) -> int:
    return int(math.ceil(c * (math.log(1.0 / priv.delta) + math.log(t * Q / beta)) / priv.epsilon))


def log_required_rounds(log_t: float, log_Q: float, beta: float, priv: PrivacyParams,
                        c: float = ROUNDS_CONSTANT) -> float:
    """Same count with t and Q given as logs (for astronomically large lists)."""
    return c * (math.log(1.0 / priv.delta) + log_t + log_Q - math.log(beta)) / priv.epsilon


def score_difference(a: ScoreTable, b: ScoreTable) -> int:
    """Largest per-element score change between two tables (absent elements score 0)."""
    ids = np.union1d(a.ids, b.ids)
    if ids.size == 0:
        return 0
    sa = np.zeros(ids.size, np.int64)
    sb = np.zeros(ids.size, np.int64)
    sa[np.searchsorted(ids, a.ids)] = a.counts
    sb[np.searchsorted(ids, b.ids)] = b.counts
    return int(np.max(np.abs(sa - sb)))


# ------------------------------------------------------------------ audit

@dataclass
class PrivacyAudit:
    epsilon_hat: float
    epsilon_upper: float
    epsilon_config: float
    delta: float
    runs: int
    conf: float
    outputs: list
    passed: bool

    def to_dict(self) -> dict:
        return {"epsilon_hat": self.epsilon_hat, "epsilon_config": self.epsilon_config,
                "delta": self.delta, "runs": self.runs,
                "epsilon_upper": self.epsilon_upper, "conf": self.conf,
                "passed": self.passed, "outputs": self.outputs}


def _loss(f1: np.ndarray, f2: np.ndarray, delta: float) -> float:
    worst = 0.0
    for a, b in ((f1, f2), (f2, f1)):
        num = a - delta
        live = num > 0
        if np.any(live & (b == 0)):
            return float("inf")
        ok = live & (b > 0)
        if np.any(ok):
            worst = max(worst, float(np.max(np.log(num[ok] / b[ok]))))
    return worst


def estimate_epsilon(counts1: np.ndarray, counts2: np.ndarray, delta: float,
                     min_count: int = 100) -> tuple[float, np.ndarray]:
    """Largest log frequency ratio over events; rare outputs are pooled into one event."""
    frequent = (counts1 >= min_count) | (counts2 >= min_count)
    c1 = np.append(counts1[frequent], counts1[~frequent].sum())
    c2 = np.append(counts2[frequent], counts2[~frequent].sum())
    return _loss(c1 / counts1.sum(), c2 / counts2.sum(), delta), frequent


def audit_privacy(table1: ScoreTable, table2: ScoreTable, priv: PrivacyParams,
                  runs: int = 10_000, rng=None, conf: float = 0.99, n_boot: int = 1000,
                  slack: float = 0.5, min_count: int = 100,
                  resolve_bottom: bool = True) -> PrivacyAudit:
    """Run gap_max ``runs`` times on each of two neighbouring tables and compare output frequencies.

    The pass criterion is the ``conf`` bootstrap quantile of the estimate staying
    within ``epsilon + slack``.
    """
    rng = make_rng(rng)
    draws1 = [gap_max(table1, priv, rng=rng, resolve_bottom=resolve_bottom) for _ in range(runs)]
    draws2 = [gap_max(table2, priv, rng=rng, resolve_bottom=resolve_bottom) for _ in range(runs)]
    keys = sorted({d for d in draws1 + draws2 if d is not BOTTOM})
    pos = {k: i for i, k in enumerate(keys)}
    nb = len(keys)

    def tally(draws):
        out = np.zeros(nb + 1, np.int64)
        for d in draws:
            out[nb if d is BOTTOM else pos[d]] += 1
        return out

    c1, c2 = tally(draws1), tally(draws2)
    eps_hat, frequent = estimate_epsilon(c1, c2, priv.delta, min_count)
    boot = np.empty(n_boot)
    p1, p2 = c1 / runs, c2 / runs
    for b in range(n_boot):
        r1 = rng.multinomial(runs, p1)
        r2 = rng.multinomial(runs, p2)
        g1 = np.append(r1[frequent], r1[~frequent].sum())
        g2 = np.append(r2[frequent], r2[~frequent].sum())
        boot[b] = _loss(g1 / runs, g2 / runs, priv.delta)
    upper = float(np.quantile(boot, conf))
    names = [*keys, "bottom"]
    outputs = [{"id": names[i], "freq1": float(p1[i]), "freq2": float(p2[i])}
               for i in range(nb + 1)]
    return PrivacyAudit(float(eps_hat), upper, priv.epsilon, priv.delta, runs, conf,
                        outputs, bool(upper <= priv.epsilon + slack))
