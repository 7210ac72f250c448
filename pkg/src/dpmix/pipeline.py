"""End-to-end private learner for Gaussian mixtures and its derived parameters."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import comb

from .covers import Cover
from .errors import InsufficientData, ParameterOverflow, ProvenanceError
from .listdecode import DecodeParams, HypothesisList, dense_mixture_list_decode, grid_size
from .mde import mde_select
from .metrics import KappaMixMetric, tv_mc_estimate
from .model import Dataset, model_to_dict
from .private_select import (BOTTOM, ROUNDS_CONSTANT, PrivacyParams, log_required_rounds,
                             pcms, score_table)
from .rng import n_workers, now_ns, spawn

ALPHA_SHRINK = 15.0
FILTER_FACTOR = 5.5          # survivors need estimated TV below 5.5 * alpha'
MAX_EXACT = 2 ** 53
MAX_POINTS = 10 ** 9         # beyond this a run is reported but not executed

DEFAULT_CONSTANTS = {
    "c_rounds": ROUNDS_CONSTANT,  # multiplier of the round count
    "c_m": 1.0,                   # multiplier of the selection sample size
    "mc_n": 20_000,               # Monte Carlo draws per candidate in MDE
    "tv_n": 20_000,               # Monte Carlo draws per filter TV estimate
    "tv_conf": 0.99,
}


def claim_beta_prime(beta: float, c1: float, c2: float) -> float:
    """beta' = beta / (2e c1 ln(e c1 c2 / beta)); keeps c1 beta' ln(c2 / beta') <= beta."""
    return beta / (2 * math.e * c1 * math.log(math.e * c1 * c2 / beta))


def failure_bound(beta_prime: float, c1: float, c2: float) -> float:
    return c1 * beta_prime * math.log(c2 / beta_prime)


def claim_ratio(x):
    """1 + ln 2 / x + ln x / x, which stays below 2 for x >= 1."""
    x = np.asarray(x, dtype=float)
    return 1.0 + math.log(2.0) / x + np.log(x) / x


@dataclass(frozen=True)
class PipelineParams:
    alpha: float
    beta: float
    priv: PrivacyParams
    k: int
    d: int
    alpha_prime: float
    beta_prime: float
    m1: Optional[int]
    L1: Optional[int]
    m2: Optional[int]
    L2: Optional[int]
    m3: Optional[int]
    t1: Optional[int]
    T: Optional[int]
    constants: dict
    mode: str
    log_counts: dict
    executable: bool
    decode: DecodeParams
    component_budget: Optional[int] = None
    distinct_components: bool = False
    overrides: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["priv"] = asdict(self.priv)
        out["decode"] = asdict(self.decode)
        return out


def _as_count(log_value: float) -> Optional[int]:
    if not math.isfinite(log_value) or log_value > math.log(MAX_EXACT):
        return None
    return int(math.ceil(math.exp(log_value) - 1e-9))


def _theory_logs(alpha_prime, bp, k, m, log_L, log_t1):
    lb = math.log(1.0 / bp)
    lb2 = math.log(1.0 / (2 * k * bp))
    m1 = (2 * m * k + 8 * k * lb) / alpha_prime
    log_L1 = log_L + m * math.log(10 * math.e * k * lb / alpha_prime)
    log_L2 = ((k + 1) * (math.log(k) + log_L1 - math.log(alpha_prime))
              + m1 * math.log(10 * math.e * lb2 / (1 - alpha_prime)))
    m2 = (2 * m1 + 8 * lb2) / (1 - alpha_prime)
    return {"m1": math.log(m1), "L1": log_L1, "m2": math.log(m2), "L2": log_L2}


def _beta_prime(beta, priv, k, log_t1, log_L2) -> float:
    c1 = 6 * k / priv.epsilon
    log_c2 = log_t1 + log_L2 - math.log(priv.delta)
    return beta / (2 * math.e * c1 * (1.0 + math.log(c1) + log_c2 - math.log(beta)))


def derive_parameters(alpha: float, beta: float, priv: PrivacyParams, k: int, d: int,
                      cover_t: float, decode: DecodeParams, constants: Optional[dict] = None,
                      mode: str = "theory", overrides: Optional[dict] = None) -> PipelineParams:
    """All derived sizes of the learner, computed in log space.

    beta' depends on L2, which depends on beta', so it is found by fixed-point
    iteration from beta downwards. In practical mode T, m2, m3 and the list
    budgets may be overridden; overrides are recorded as such.
    """
    if mode not in ("theory", "practical"):
        raise ValueError("mode must be 'theory' or 'practical'")
    consts = dict(DEFAULT_CONSTANTS, **(constants or {}))
    over = dict(overrides or {}) if mode == "practical" else {}
    ap = alpha / ALPHA_SHRINK
    m = decode.m
    log_L = math.log(min(decode.L_budget, comb(m, decode.tau(d), exact=True))
                     * grid_size(d, decode.grid_bits))
    log_t1 = math.lgamma(k + 1) + k * math.log(cover_t * k / ap)

    def logs_for(bp):
        logs = _theory_logs(ap, bp, k, m, log_L, log_t1)
        if "L2" in over:
            logs["L2"] = math.log(over["L2"])
        return logs

    bp = beta
    for _ in range(200):
        new = _beta_prime(beta, priv, k, log_t1, logs_for(bp)["L2"])
        done = abs(new - bp) <= 1e-6 * bp
        bp = new
        if done:
            break
    logs = logs_for(bp)
    logs["t1"] = log_t1
    log_T = math.log(log_required_rounds(log_t1, logs["L2"], bp, priv, consts["c_rounds"]))
    m3 = consts["c_m"] * (logs["L2"] + math.log(1 / bp)) / ap ** 2 + math.exp(logs["m2"]) \
        if logs["m2"] < 700 else math.inf
    logs["T"] = log_T
    logs["m3"] = math.log(m3) if math.isfinite(m3) else logs["m2"]
    for key in ("T", "m2", "m3"):
        if key in over:
            logs[key] = math.log(over[key])
    counts = {key: _as_count(v) for key, v in logs.items()}
    executable = (all(counts[key] is not None for key in ("T", "m2", "m3"))
                  and logs["T"] + logs["m3"] <= math.log(MAX_POINTS)
                  and (mode == "practical" or counts["L2"] is not None))
    return PipelineParams(
        alpha=alpha, beta=beta, priv=priv, k=k, d=d, alpha_prime=ap, beta_prime=bp,
        m1=counts["m1"], L1=counts["L1"], m2=counts["m2"], L2=counts["L2"],
        m3=counts["m3"], t1=counts["t1"], T=counts["T"], constants=consts, mode=mode,
        log_counts=logs, executable=executable, decode=decode,
        component_budget=over.get("component_budget"),
        distinct_components=bool(over.get("distinct_components", False)),
        overrides=over)


@dataclass
class ChunkResult:
    index: int
    start: int
    stop: int
    list_size: int
    selected: int
    estimates: list
    survivors: HypothesisList


@dataclass
class LearnResult:
    hypothesis: object
    manifest: dict
    chunks: list


def _process_chunk(i: int, points: np.ndarray, params: PipelineParams, rng) -> ChunkResult:
    decode_part = Dataset(points[:params.m2])
    select_part = Dataset(points[params.m2:])
    lst = dense_mixture_list_decode(decode_part, params.k, params.decode, rng,
                                    component_budget=params.component_budget,
                                    budget=params.L2 if params.mode == "practical" else None,
                                    distinct_components=params.distinct_components)
    chosen = mde_select(lst, select_part, int(params.constants["mc_n"]), rng)
    f_hat = lst.items[chosen]
    threshold = FILTER_FACTOR * params.alpha_prime
    keep, estimates = [], []
    for j, item in enumerate(lst.items):
        est = tv_mc_estimate(item, f_hat, int(params.constants["tv_n"]),
                             params.constants["tv_conf"], rng)
        estimates.append((est.value, est.half_width))
        if est.lower < threshold:
            keep.append(item)
    survivors = HypothesisList(keep, i, lst.budget, {"decoded": len(lst), "mde_index": chosen})
    return ChunkResult(i, 0, 0, len(lst), chosen, estimates, survivors)


def run_nonprivate_phases(data: Dataset, params: PipelineParams, rng) -> list[ChunkResult]:
    """Split into T disjoint chunks and build each chunk's filtered candidate list."""
    if not params.executable:
        raise ParameterOverflow("derived sizes are too large to run; see log_counts")
    need = params.T * params.m3
    if len(data) < need:
        raise InsufficientData(need, len(data))
    streams = spawn(rng, params.T + 1)[:params.T]

    def work(i: int) -> ChunkResult:
        start, stop = i * params.m3, (i + 1) * params.m3
        res = _process_chunk(i, data.points[start:stop], params, streams[i])
        res.start, res.stop = start, stop
        return res

    workers = min(n_workers(), params.T)
    if workers <= 1:
        return [work(i) for i in range(params.T)]
    # each chunk owns its stream, so results do not depend on scheduling
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(work, range(params.T)))


def _root(rng):
    if isinstance(rng, np.random.Generator):
        return rng.bit_generator.seed_seq
    return np.random.SeedSequence(rng)


def learn_gmm_dp(data: Dataset, params: PipelineParams, cover: Cover, rng=None) -> LearnResult:
    """Private mixture learner: per-chunk list decoding and filtering, then PCMS.

    Each data point lands in exactly one chunk, so it can change only that
    chunk's filtered list, the single input unit of the private selector.
    """
    accessed = now_ns()
    if cover.created_at > accessed:
        raise ProvenanceError("cover was built after the data was read")
    root = _root(rng)
    chunks = run_nonprivate_phases(data, params, root)
    select_rng = spawn(root, params.T + 1)[params.T]
    lists = [c.survivors for c in chunks]
    metric = KappaMixMetric()
    out = pcms(lists, cover, metric, params.priv, params.beta_prime, select_rng)
    table = score_table(lists, cover, None, metric)
    manifest = {
        "params": params.to_dict(),
        "seed": getattr(root, "entropy", None),
        "data_seed": data.seed,
        "cover_recipe_hash": cover.recipe_hash,
        "cover_alpha": cover.alpha,
        "cover_size": len(cover),
        "chunks": [{"index": c.index, "start": c.start, "stop": c.stop,
                    "list_size": c.list_size, "survivors": len(c.survivors),
                    "mde_index": c.selected, "tv_estimates": c.estimates}
                   for c in chunks],
        "max_score": table.max_score,
        "active_elements": int(table.ids.size),
        "output": None if out is BOTTOM else model_to_dict(out),
        "bottom": out is BOTTOM,
    }
    return LearnResult(out, manifest, chunks)


def _list_key(lst: HypothesisList) -> list:
    return [model_to_dict(it) for it in lst.items]


def changed_chunks(data: Dataset, neighbor: Dataset, params: PipelineParams, rng) -> list[int]:
    """Chunks whose filtered lists differ between two datasets run with the same seed."""
    root = _root(rng)
    a = run_nonprivate_phases(data, params, root)
    b = run_nonprivate_phases(neighbor, params, root)
    return [i for i, (x, y) in enumerate(zip(a, b))
            if _list_key(x.survivors) != _list_key(y.survivors)]
