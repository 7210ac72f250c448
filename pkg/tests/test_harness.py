import csv
import json
import logging

import numpy as np
import pytest

from dpmix import io
from dpmix.cli import main
from dpmix.errors import IoFailure
from dpmix.harness import EVAL_COLUMNS
from dpmix.model import gaussian_create, mixture_create, model_from_dict, model_to_dict

TWO = {"weights": [0.5, 0.5], "components": [{"mean": [-8.0], "cov": [[1.0]]},
                                             {"mean": [8.0], "cov": [[1.0]]}]}
COVER_K1 = {"type": "dense_mixture", "alpha": 0.1, "k": 1,
            "box": {"dim": 1, "mean_bound": 10, "eig_min": 0.5, "eig_max": 2}}
LEARN_K1 = {"data": "data.txt", "cover": COVER_K1, "alpha": 0.3, "beta": 0.1, "epsilon": 1,
            "delta": 1e-6, "k": 1, "mode": "practical",
            "decode": {"m": 3, "L_budget": 1, "alpha": 0.3, "beta": 0.05, "subset_size": 3},
            "constants": {"mc_n": 500, "tv_n": 2000},
            "overrides": {"T": 6, "m2": 100, "m3": 200, "component_budget": 2, "L2": 1000}}


def run(tmp_path, command, settings, *extra, name="cfg.json"):
    cfg = tmp_path / name
    cfg.write_text(json.dumps(settings))
    return main([command, "--config", str(cfg), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def snapshot(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir()) if p.is_file()}


# --------------------------------------------------------------------- gen

def test_gen_standard_normal(tmp_path):
    settings = {"model": {"weights": [1.0], "components": [{"mean": [0.0], "cov": [[1.0]]}]},
                "n": 100}
    assert run(tmp_path, "gen", settings, "--seed", "7", "--out", str(tmp_path / "a")) == 0
    assert run(tmp_path, "gen", settings, "--seed", "7", "--out", str(tmp_path / "b")) == 0
    lines = (tmp_path / "a" / "data.txt").read_text().splitlines()
    assert len(lines) == 100
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    assert json.loads((tmp_path / "a" / "gen.json").read_text())["seed"] == 7


def test_gen_two_components_round_trip(tmp_path):
    assert run(tmp_path, "gen", {"model": TWO, "n": 10}, "--out", str(tmp_path)) == 0
    text = (tmp_path / "model.json").read_text()
    model = model_from_dict(json.loads(text))
    assert model_to_dict(model) == model_to_dict(model_from_dict(TWO))
    assert json.dumps(model_to_dict(model_from_dict(json.loads(text))), sort_keys=True) == \
        json.dumps(json.loads(text), sort_keys=True)


def test_gen_rejects_bad_weights(tmp_path):
    bad = {"weights": [0.5, 0.4], "components": TWO["components"]}
    assert run(tmp_path, "gen", {"model": bad, "n": 10}, "--out", str(tmp_path)) == 2
    assert not (tmp_path / "data.txt").exists()


def test_missing_config_file(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "nope.json")]) == 2


# ------------------------------------------------------------------- learn

@pytest.fixture
def k1_data(tmp_path):
    settings = {"model": {"weights": [1.0], "components": [{"mean": [0.0], "cov": [[1.0]]}]},
                "n": 1200}
    assert run(tmp_path, "gen", settings, "--seed", "3", "--out", str(tmp_path),
               name="gen.cfg.json") == 0
    return tmp_path


def test_learn_practical_is_reproducible(k1_data):
    out_a, out_b = k1_data / "ra", k1_data / "rb"
    args = ("--seed", "5", "--frozen-clock")
    assert run(k1_data, "learn", LEARN_K1, *args, "--out", str(out_a)) == 0
    assert run(k1_data, "learn", LEARN_K1, *args, "--out", str(out_b)) == 0
    assert snapshot(out_a) == snapshot(out_b)
    manifest = json.loads((out_a / "manifest.json").read_text())
    assert len(manifest["chunks"]) == 6
    assert manifest["runtime_s"] == 0.0


def test_learn_insufficient_data(k1_data, caplog):
    cfg = dict(LEARN_K1, overrides=dict(LEARN_K1["overrides"], T=7))
    with caplog.at_level(logging.ERROR, logger="dpmix"):
        assert run(k1_data, "learn", cfg, "--out", str(k1_data / "r")) == 3
    assert "1400" in caplog.text


def test_learn_missing_cover_names_path(k1_data, caplog):
    missing = k1_data / "no_such_cover.json"
    cfg = dict(LEARN_K1, cover=str(missing))
    with caplog.at_level(logging.ERROR, logger="dpmix"):
        assert run(k1_data, "learn", cfg, "--out", str(k1_data / "r")) == 2
    assert str(missing) in caplog.text
    with pytest.raises(IoFailure) as err:
        io.read_json(missing)
    assert err.value.path == str(missing)


def test_learn_theory_mode_reports_logs(tmp_path):
    cfg = {"alpha": 0.15, "beta": 0.1, "epsilon": 1, "delta": 1e-6, "k": 2, "d": 1,
           "mode": "theory", "cover_t": 43,
           "decode": {"m": 3, "L_budget": 1, "alpha": 0.15, "beta": 0.05, "subset_size": 3}}
    assert run(tmp_path, "learn", cfg, "--out", str(tmp_path)) == 0
    report = json.loads((tmp_path / "theory_report.json").read_text())
    assert report["executable"] is False
    assert np.isfinite(report["log_T"]) and np.isfinite(report["log_m3"])
    assert not (tmp_path / "learned.json").exists()


# -------------------------------------------------------------------- eval

def _write_models(tmp_path, a, b):
    io.write_model(tmp_path / "a.json", a)
    io.write_model(tmp_path / "b.json", b)
    return {"model_a": "a.json", "model_b": "b.json"}


def test_eval_self_is_zero(tmp_path):
    cfg = _write_models(tmp_path, mixture_create([1.0], [gaussian_create([0], [[1]])]),
                        mixture_create([1.0], [gaussian_create([0], [[1]])]))
    assert run(tmp_path, "eval", cfg, "--out", str(tmp_path)) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert rows[0] == EVAL_COLUMNS
    assert float(rows[1][3]) <= 1e-9


def test_eval_location_pair(tmp_path):
    cfg = _write_models(tmp_path, gaussian_create([0], [[1]]), gaussian_create([0.1], [[1]]))
    assert run(tmp_path, "eval", cfg, "--out", str(tmp_path), "--frozen-clock") == 0
    header, row = read_csv(tmp_path / "eval.csv")
    rec = dict(zip(header, row))
    assert rec["method"] == "quadrature"
    assert float(rec["tv"]) == pytest.approx(0.03988, abs=1e-5)
    assert float(rec["runtime_s"]) == 0.0


def test_eval_two_dimensional_has_interval(tmp_path):
    a = gaussian_create([0, 0], np.eye(2))
    b = gaussian_create([0.5, 0], np.eye(2))
    cfg = dict(_write_models(tmp_path, a, b), mc_n=20_000, conf=0.99)
    assert run(tmp_path, "eval", cfg, "--out", str(tmp_path)) == 0
    rec = dict(zip(*read_csv(tmp_path / "eval.csv")))
    assert rec["method"] == "monte_carlo"
    assert int(rec["n_samples"]) == 20_000 and float(rec["conf"]) == 0.99
    assert 0 < float(rec["half_width"]) < 0.05


def test_eval_dimension_mismatch(tmp_path):
    cfg = _write_models(tmp_path, gaussian_create([0], [[1]]), gaussian_create([0, 0], np.eye(2)))
    assert run(tmp_path, "eval", cfg, "--out", str(tmp_path)) == 2


# ------------------------------------------------------------------- audit

def test_audit_sensitivity(tmp_path):
    assert run(tmp_path, "audit", {"kind": "sensitivity", "pairs": 50}, "--out",
               str(tmp_path)) == 0
    report = json.loads((tmp_path / "sensitivity.json").read_text())
    assert report["pairs"] == 50 and report["max_difference"] <= 1
    rows = read_csv(tmp_path / "sensitivity.csv")
    assert rows[0] == ["pair", "max_difference"] and len(rows) == 51


def test_audit_dp(tmp_path):
    cfg = {"kind": "dp", "epsilon": 1, "delta": 1e-6, "runs": 10_000}
    assert run(tmp_path, "audit", cfg, "--out", str(tmp_path), "--seed", "2") == 0
    report = json.loads((tmp_path / "dp_audit.json").read_text())
    assert report["epsilon_upper"] <= 1.5 and report["passed"]
    assert read_csv(tmp_path / "dp_outputs.csv")[0] == ["id", "freq1", "freq2"]


def test_audit_cover_simplex(tmp_path):
    cfg = {"kind": "cover", "cover": {"type": "simplex", "k": 2, "alpha": 0.1}, "gamma": 0.2,
           "probes": 1000, "claimed_t": 25}
    assert run(tmp_path, "audit", cfg, "--out", str(tmp_path)) == 0
    report = json.loads((tmp_path / "cover_audit.json").read_text())
    assert report["max_ball_count"] <= 25 and report["violations"] == []
    assert read_csv(tmp_path / "cover_counts.csv")[0] == ["probe", "ball_count"]


def test_audit_cover_flags_understated_t(tmp_path):
    cfg = {"kind": "cover", "cover": {"type": "simplex", "k": 2, "alpha": 0.1}, "gamma": 0.2,
           "probes": 200, "claimed_t": 2}
    assert run(tmp_path, "audit", cfg, "--out", str(tmp_path)) == 4


def test_audit_unknown_kind(tmp_path):
    assert run(tmp_path, "audit", {"kind": "nonsense"}, "--out", str(tmp_path)) == 2


def test_figures_written_next_to_csv(tmp_path):
    cfg = {"kind": "cover", "cover": {"type": "simplex", "k": 2, "alpha": 0.1}, "gamma": 0.2,
           "probes": 50, "figures": True}
    assert run(tmp_path, "audit", cfg, "--out", str(tmp_path)) == 0
    assert (tmp_path / "cover_counts.png").stat().st_size > 0
