"""Experiment commands behind the ``dpmix`` CLI.

Every command reads a JSON config, writes its outputs under ``out`` and returns
a process exit code: 0 success, 2 invalid config, 3 insufficient data,
4 audit threshold exceeded.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .covers import (Cover, ParameterBox, audit_local_smallness, bounded_gaussian_cover,
                     cover_from_dict, cover_to_dict, dense_mixture_cover, random_mixtures,
                     sample_in_box, simplex_cover)
from .errors import DimensionMismatch, InvalidConfig, InvalidMixture
from .listdecode import DecodeParams, HypothesisList
from .metrics import tv_mc_estimate, tv_quadrature_1d
from .model import model_from_dict, sample
from .pipeline import derive_parameters, learn_gmm_dp
from .private_select import (BOTTOM, PrivacyParams, audit_privacy, score_difference,
                             score_table)
from .rng import clock_frozen, make_rng
from .scenarios import clustered_collection, neighbor_pairs

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_AUDIT = 0, 2, 3, 4

EVAL_COLUMNS = ["model_a", "model_b", "method", "tv", "half_width", "conf", "n_samples",
                "runtime_s"]


@dataclass
class RunConfig:
    command: str
    settings: dict
    seed: int = 0
    out: Path = field(default_factory=lambda: Path("."))
    base_dir: Path = field(default_factory=lambda: Path("."))

    def get(self, key, default=None):
        return self.settings.get(key, default)

    def require(self, key):
        if key not in self.settings:
            raise InvalidConfig(f"config for '{self.command}' needs '{key}'")
        return self.settings[key]

    def path(self, key) -> Path:
        p = Path(self.require(key))
        return p if p.is_absolute() else self.base_dir / p


def load_config(path, command: str, seed: Optional[int] = None,
                out: Optional[str] = None) -> RunConfig:
    path = Path(path)
    settings = io.read_json(path)
    if not isinstance(settings, dict):
        raise InvalidConfig("config must be a JSON object")
    return make_config(command, settings, seed, out, path.parent)


def make_config(command: str, settings: dict, seed: Optional[int] = None,
                out: Optional[str] = None, base_dir=".") -> RunConfig:
    seed = int(seed if seed is not None else settings.get("seed", 0))
    out_dir = Path(out if out is not None else settings.get("out", "."))
    return RunConfig(command, dict(settings), seed, out_dir, Path(base_dir))


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = 0.0 if clock_frozen() else time.perf_counter() - self.start


def _box(spec: dict) -> ParameterBox:
    try:
        return ParameterBox(int(spec["dim"]), float(spec["mean_bound"]),
                            float(spec["eig_min"]), float(spec["eig_max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad parameter box: {exc}") from None


def build_cover_from_spec(spec, base_dir: Path = Path(".")) -> Cover:
    """A cover from a file path (replayed from its recipe) or an inline description."""
    if isinstance(spec, str):
        p = Path(spec)
        p = p if p.is_absolute() else base_dir / p
        return cover_from_dict(io.read_json(p))
    if not isinstance(spec, dict):
        raise InvalidConfig("cover must be a path or an object")
    kind = spec.get("type")
    try:
        if kind == "simplex":
            return simplex_cover(int(spec["k"]), float(spec["alpha"]))
        if kind == "bounded_gaussian":
            return bounded_gaussian_cover(_box(spec["box"]), float(spec["alpha"]))
        if kind == "dense_mixture":
            comp = bounded_gaussian_cover(_box(spec["box"]),
                                          float(spec.get("component_alpha", spec["alpha"])))
            return dense_mixture_cover(comp, int(spec["k"]), float(spec["alpha"]))
    except KeyError as exc:
        raise InvalidConfig(f"cover description lacks {exc}") from None
    raise InvalidConfig(f"unknown cover type {kind!r}")


# ------------------------------------------------------------------ gen

def cmd_gen(cfg: RunConfig) -> int:
    """Write a model JSON and a dataset drawn from it."""
    if "model_path" in cfg.settings:
        model = io.read_model(cfg.path("model_path"))
    else:
        try:
            model = model_from_dict(cfg.require("model"))
        except (InvalidMixture, ValueError) as exc:
            raise InvalidConfig(f"invalid model: {exc}") from None
    n = int(cfg.require("n"))
    if n < 0:
        raise InvalidConfig("n must be nonnegative")
    data = sample(model, n, cfg.seed)
    io.write_model(cfg.out / cfg.get("model_name", "model.json"), model)
    io.write_dataset(cfg.out / cfg.get("dataset_name", "data.txt"), data)
    io.write_json(cfg.out / "gen.json", {"seed": cfg.seed, "n": n})
    if cfg.get("figures"):
        from .plotting import plot_dataset
        plot_dataset(cfg.out / "data.png", data, model)
    return EXIT_OK


# ------------------------------------------------------------------ learn

def _pipeline_params(cfg: RunConfig, cover_t: float):
    dec = cfg.require("decode")
    try:
        decode = DecodeParams(**dec)
        priv = PrivacyParams(float(cfg.require("epsilon")), float(cfg.require("delta")))
        return derive_parameters(float(cfg.require("alpha")), float(cfg.get("beta", 0.1)),
                                 priv, int(cfg.require("k")), int(cfg.get("d", 1)),
                                 cover_t, decode, cfg.get("constants"),
                                 cfg.get("mode", "practical"), cfg.get("overrides"))
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(str(exc)) from None


def cmd_learn(cfg: RunConfig) -> int:
    """Run the private learner; the cover is built or loaded before the data is read."""
    mode = cfg.get("mode", "practical")
    if mode == "theory" and "cover" not in cfg.settings:
        cover, cover_t = None, float(cfg.get("cover_t", 1))
    else:
        cover = build_cover_from_spec(cfg.require("cover"), cfg.base_dir)
        cover_t = float(cover.claimed_t or cfg.get("cover_t", 1))
    params = _pipeline_params(cfg, cover_t)
    if not params.executable:
        logs = params.log_counts
        io.write_json(cfg.out / "theory_report.json", {
            "executable": False, "mode": params.mode,
            "log_T": logs["T"], "log_m3": logs["m3"], "log_L2": logs["L2"],
            "log_t1": logs["t1"], "beta_prime": params.beta_prime,
            "alpha_prime": params.alpha_prime})
        return EXIT_OK
    if cover is None:
        raise InvalidConfig("an executable run needs a cover")
    data = io.read_dataset(cfg.path("data"), cfg.seed)
    with _Timer() as timer:
        result = learn_gmm_dp(data, params, cover, cfg.seed)
    manifest = dict(result.manifest, runtime_s=timer.seconds, seed=cfg.seed)
    io.write_json(cfg.out / "manifest.json", manifest)
    if result.hypothesis is BOTTOM:
        io.write_json(cfg.out / "learned.json", {"bottom": True})
    else:
        io.write_model(cfg.out / "learned.json", result.hypothesis)
    if cfg.get("figures") and result.hypothesis is not BOTTOM and data.dim == 1:
        from .plotting import plot_learned
        truth = io.read_model(cfg.path("truth")) if "truth" in cfg.settings else None
        plot_learned(cfg.out / "learned.png", data, result.hypothesis, truth)
    return EXIT_OK


# ------------------------------------------------------------------ eval

def cmd_eval(cfg: RunConfig) -> int:
    """TV between two model files: quadrature for d=1, Monte Carlo with a CI otherwise."""
    a = io.read_model(cfg.path("model_a"))
    b = io.read_model(cfg.path("model_b"))
    if a.dim != b.dim:
        raise DimensionMismatch("models have different dimensions")
    with _Timer() as timer:
        if a.dim == 1:
            tol = float(cfg.get("tol", 1e-9))
            row = ["quadrature", tv_quadrature_1d(a, b, tol), tol, 1.0, 0]
        else:
            n = int(cfg.get("mc_n", 100_000))
            est = tv_mc_estimate(a, b, n, float(cfg.get("conf", 0.99)), cfg.seed)
            row = ["monte_carlo", est.value, est.half_width, est.conf, est.n_samples]
    io.write_csv(cfg.out / "eval.csv", EVAL_COLUMNS,
                 [[cfg.settings["model_a"], cfg.settings["model_b"], *row, timer.seconds]])
    return EXIT_OK


# ------------------------------------------------------------------ audit

def _audit_dp(cfg: RunConfig) -> int:
    box = _box(cfg.get("box", {"dim": 1, "mean_bound": 2.0, "eig_min": 0.8, "eig_max": 1.25}))
    cover = bounded_gaussian_cover(box, float(cfg.get("cover_alpha", 0.1)))
    priv = PrivacyParams(float(cfg.require("epsilon")), float(cfg.get("delta", 1e-6)))
    rng = make_rng(cfg.seed)
    T, Q = int(cfg.get("T", 8)), int(cfg.get("Q", 3))
    lists, _ = clustered_collection(box, T, Q, float(cfg.get("spread", 0.15)), rng)
    replaced = HypothesisList(sample_in_box(box, Q, rng), 0, Q)
    neighbor = [replaced, *lists[1:]]
    t1, t2 = score_table(lists, cover), score_table(neighbor, cover)
    audit = audit_privacy(t1, t2, priv, int(cfg.get("runs", 10_000)), rng,
                          slack=float(cfg.get("slack", 0.5)))
    report = audit.to_dict()
    io.write_json(cfg.out / "dp_audit.json", report)
    io.write_csv(cfg.out / "dp_outputs.csv", ["id", "freq1", "freq2"],
                 [[o["id"], o["freq1"], o["freq2"]] for o in report["outputs"]])
    if cfg.get("figures"):
        from .plotting import plot_dp_audit
        plot_dp_audit(cfg.out / "dp_outputs.png", report)
    return EXIT_OK if audit.passed else EXIT_AUDIT


def _audit_sensitivity(cfg: RunConfig) -> int:
    box = _box(cfg.get("box", {"dim": 1, "mean_bound": 3.0, "eig_min": 0.5, "eig_max": 2.0}))
    alpha = float(cfg.get("cover_alpha", 0.1))
    cover = bounded_gaussian_cover(box, alpha)
    if int(cfg.get("k", 1)) > 1:
        cover = dense_mixture_cover(cover, int(cfg["k"]), alpha, n_probes=0)
    pairs = neighbor_pairs(box, int(cfg.get("pairs", 50)), int(cfg.get("T", 10)),
                           int(cfg.get("Q", 4)), alpha, cfg.seed)
    diffs = [score_difference(score_table(a, cover), score_table(b, cover)) for a, b in pairs]
    worst = max(diffs, default=0)
    io.write_json(cfg.out / "sensitivity.json", {"pairs": len(pairs), "max_difference": worst})
    io.write_csv(cfg.out / "sensitivity.csv", ["pair", "max_difference"], enumerate(diffs))
    if cfg.get("figures"):
        from .plotting import plot_counts
        plot_counts(cfg.out / "sensitivity.png", diffs, "max score difference")
    return EXIT_OK if worst <= 1 else EXIT_AUDIT


def _audit_cover(cfg: RunConfig) -> int:
    cover = build_cover_from_spec(cfg.require("cover"), cfg.base_dir)
    gamma = float(cfg.get("gamma", 2 * cover.alpha))
    n = int(cfg.get("probes", 1000))
    rng = make_rng(cfg.seed)
    if cover.metric_tag == "linf":
        probes = list(rng.dirichlet(np.ones(int(cover.recipe["k"])), n))
    elif cover.metric_tag == "tv":
        probes = sample_in_box(_box(cover.recipe["box"]), n, rng)
    else:
        probes = random_mixtures(_box(cover.recipe["component"]["box"]), cover.k, n, rng,
                                 min_weight=cover.alpha / cover.k)
    if "claimed_t" in cfg.settings:
        cover.claimed_t = int(cfg.settings["claimed_t"])
    audit = audit_local_smallness(cover, gamma, probes)
    io.write_json(cfg.out / "cover_audit.json", {
        "max_ball_count": audit.max_ball_count, "probes": audit.probes,
        "violations": audit.violations, "claimed_t": cover.claimed_t, "gamma": gamma,
        "cover_size": len(cover), "recipe": cover.recipe})
    counts = [int(cover.neighbors(p, gamma).size) for p in probes]
    io.write_csv(cfg.out / "cover_counts.csv", ["probe", "ball_count"], enumerate(counts))
    if cfg.get("figures"):
        from .plotting import plot_counts
        plot_counts(cfg.out / "cover_counts.png", counts, "elements per ball")
    if cfg.get("save_cover"):
        io.write_json(cfg.out / "cover.json", cover_to_dict(cover))
    return EXIT_AUDIT if audit.violations else EXIT_OK


def cmd_audit(cfg: RunConfig) -> int:
    kind = cfg.require("kind")
    if kind == "dp":
        return _audit_dp(cfg)
    if kind == "sensitivity":
        return _audit_sensitivity(cfg)
    if kind == "cover":
        return _audit_cover(cfg)
    raise InvalidConfig(f"unknown audit kind {kind!r}")


COMMANDS = {"gen": cmd_gen, "learn": cmd_learn, "eval": cmd_eval, "audit": cmd_audit}
