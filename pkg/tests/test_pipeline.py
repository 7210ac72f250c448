import math

import numpy as np
import pytest

from dpmix.covers import ParameterBox, bounded_gaussian_cover, dense_mixture_cover
from dpmix.errors import InsufficientData, ParameterOverflow, ProvenanceError
from dpmix.listdecode import DecodeParams
from dpmix.metrics import tv_quadrature_1d
from dpmix.model import Dataset, gaussian_create, model_to_dict, sample
from dpmix.pipeline import (FILTER_FACTOR, changed_chunks, claim_beta_prime, claim_ratio,
                            derive_parameters, failure_bound, learn_gmm_dp,
                            run_nonprivate_phases)
from dpmix.private_select import BOTTOM, ROUNDS_CONSTANT, PrivacyParams

PRIV = PrivacyParams(1.0, 1e-6)
DECODE = DecodeParams(m=3, L_budget=1, alpha=0.3, beta=0.05, subset_size=3)
SMALL = {"T": 8, "m2": 100, "m3": 200, "component_budget": 2, "L2": 1000}
FAST = {"mc_n": 500, "tv_n": 2000}
STD = gaussian_create([0.0], [[1.0]])


@pytest.fixture(scope="module")
def k1_cover():
    comp = bounded_gaussian_cover(ParameterBox(1, 10.0, 0.5, 2.0), 0.1)
    return dense_mixture_cover(comp, 1, 0.1)


@pytest.fixture(scope="module")
def small_params(k1_cover):
    return derive_parameters(0.3, 0.1, PRIV, 1, 1, k1_cover.claimed_t, DECODE, FAST,
                             "practical", SMALL)


# ---------------------------------------------------------------- formulas

def test_claim_beta_prime_example():
    bp = claim_beta_prime(0.1, 1.0, 1.0)
    assert bp == pytest.approx(0.1 / (2 * math.e * math.log(10 * math.e)), rel=1e-12)
    assert bp == pytest.approx(0.005570, abs=5e-7)
    bound = failure_bound(bp, 1.0, 1.0)
    assert bound == pytest.approx(0.0289, abs=5e-5)
    assert bound <= 0.1


def test_claim_ratio_below_two():
    x = np.linspace(1, 100, 100_000)
    r = claim_ratio(x)
    assert np.all(r < 2)
    assert float(claim_ratio(math.e / 2)) == pytest.approx(1 + 2 / math.e, abs=1e-12)
    assert 1 + 2 / math.e == pytest.approx(1.7358, abs=1e-4)
    assert r.max() <= 1 + 2 / math.e + 1e-12


def test_theory_mode_is_reported_in_logs():
    p = derive_parameters(0.15, 0.1, PRIV, 2, 1, 43, DECODE, mode="theory")
    assert p.alpha_prime == pytest.approx(0.01)
    assert 0 < p.beta_prime < 0.1
    for key in ("m1", "L1", "m2", "L2", "m3", "t1", "T"):
        assert math.isfinite(p.log_counts[key])
    assert not p.executable
    assert p.L2 is None
    with pytest.raises(ParameterOverflow):
        run_nonprivate_phases(Dataset(np.zeros((10, 1))), p, 0)


def test_beta_prime_is_a_fixed_point():
    p = derive_parameters(0.15, 0.1, PRIV, 2, 1, 43, DECODE, mode="theory")
    c1 = 6 * p.k / PRIV.epsilon
    log_c2 = p.log_counts["t1"] + p.log_counts["L2"] - math.log(PRIV.delta)
    again = p.beta / (2 * math.e * c1 * (1 + math.log(c1) + log_c2 - math.log(p.beta)))
    assert again == pytest.approx(p.beta_prime, rel=1e-5)


def test_theory_rounds_follow_round_formula():
    p = derive_parameters(0.3, 0.1, PRIV, 1, 1, 10, DECODE, mode="theory")
    logs = p.log_counts
    expected = ROUNDS_CONSTANT * (math.log(1e6) + logs["t1"] + logs["L2"] - math.log(p.beta_prime))
    assert logs["T"] == pytest.approx(math.log(expected), rel=1e-12)
    assert p.t1 == math.ceil(10 * 1 / 0.02 - 1e-9)


def test_practical_overrides_recorded(small_params):
    p = small_params
    assert (p.T, p.m2, p.m3, p.L2) == (8, 100, 200, 1000)
    assert p.overrides == SMALL and p.mode == "practical" and p.executable
    assert p.alpha_prime == pytest.approx(0.02)


# ---------------------------------------------------------------- learner

def test_insufficient_data(small_params, k1_cover):
    with pytest.raises(InsufficientData) as err:
        learn_gmm_dp(sample(STD, 1599, 0), small_params, k1_cover, 0)
    assert err.value.required == 1600 and err.value.available == 1599


def test_chunks_partition_a_prefix(small_params):
    chunks = run_nonprivate_phases(sample(STD, 1700, 1), small_params, 1)
    spans = [(c.start, c.stop) for c in chunks]
    assert spans == [(i * 200, (i + 1) * 200) for i in range(8)]
    covered = np.concatenate([np.arange(a, b) for a, b in spans])
    assert np.unique(covered).size == covered.size == 1600


def test_filter_keeps_exactly_the_low_estimates(small_params):
    threshold = FILTER_FACTOR * small_params.alpha_prime
    for c in run_nonprivate_phases(sample(STD, 1600, 2), small_params, 2):
        lower = [max(v - hw, 0.0) for v, hw in c.estimates]
        assert len(c.survivors) == sum(x < threshold for x in lower)
        assert len(c.estimates) == c.list_size


def test_learner_deterministic_per_seed(small_params, k1_cover):
    data = sample(STD, 1600, 3)
    a = learn_gmm_dp(data, small_params, k1_cover, 3)
    b = learn_gmm_dp(data, small_params, k1_cover, 3)
    assert a.manifest["output"] == b.manifest["output"]
    assert a.manifest["chunks"] == b.manifest["chunks"]


def test_k1_learner_accuracy(k1_cover):
    p = derive_parameters(0.3, 0.1, PRIV, 1, 1, k1_cover.claimed_t, DECODE, FAST, "practical",
                          {"T": 40, "m2": 100, "m3": 300, "component_budget": 2, "L2": 1000})
    hits = 0
    for s in range(10):
        out = learn_gmm_dp(sample(STD, p.T * p.m3, 1000 + s), p, k1_cover, s).hypothesis
        hits += out is not BOTTOM and tv_quadrature_1d(out, STD) <= 0.3
    assert hits >= 9


def test_neighbor_changes_at_most_one_chunk(small_params):
    data = sample(STD, 1600, 4)
    for row in (0, 555, 1599):
        pts = data.points.copy()
        pts[row] = [7.5]
        changed = changed_chunks(data, Dataset(pts), small_params, 4)
        assert len(changed) <= 1
        assert set(changed) <= {row // 200}


def test_cover_built_after_data_access_is_rejected(small_params, k1_cover):
    late = dense_mixture_cover(bounded_gaussian_cover(ParameterBox(1, 10.0, 0.5, 2.0), 0.1), 1,
                               0.1)
    late.created_at = k1_cover.created_at + 10 ** 18
    with pytest.raises(ProvenanceError):
        learn_gmm_dp(sample(STD, 1600, 5), small_params, late, 5)


def test_manifest_records_run(small_params, k1_cover):
    res = learn_gmm_dp(sample(STD, 1600, 6), small_params, k1_cover, 6)
    m = res.manifest
    assert m["cover_recipe_hash"] == k1_cover.recipe_hash
    assert len(m["chunks"]) == 8
    assert m["bottom"] == (res.hypothesis is BOTTOM)
    if not m["bottom"]:
        assert m["output"] == model_to_dict(res.hypothesis)


def test_thread_count_does_not_change_results(small_params, monkeypatch):
    data = sample(STD, 1600, 7)
    serial = run_nonprivate_phases(data, small_params, 7)
    monkeypatch.setenv("DPMIX_THREADS", "3")
    threaded = run_nonprivate_phases(data, small_params, 7)
    assert [c.estimates for c in serial] == [c.estimates for c in threaded]
    assert [[model_to_dict(x) for x in c.survivors.items] for c in serial] == \
        [[model_to_dict(x) for x in c.survivors.items] for c in threaded]
