"""Figures written next to the CSV/JSON reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .model import log_density  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def _grid(*models, data=None):
    spans = []
    for m in models:
        for c in getattr(m, "components", [m]):
            sd = float(np.sqrt(c.cov[0, 0]))
            spans += [float(c.mean[0]) - 5 * sd, float(c.mean[0]) + 5 * sd]
    if data is not None and len(data):
        spans += [float(data.points.min()), float(data.points.max())]
    return np.linspace(min(spans), max(spans), 800)


def plot_dataset(path, data, model):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if data.dim == 1:
        xs = _grid(model, data=data)
        ax.hist(data.points[:, 0], bins=60, density=True, alpha=0.5, label="data")
        ax.plot(xs, np.exp(log_density(model, xs[:, None])), label="model")
        ax.set_xlabel("x")
        ax.legend()
    else:
        ax.scatter(data.points[:, 0], data.points[:, 1], s=2)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    return _save(fig, path)


def plot_learned(path, data, learned, truth=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    models = [learned] + ([truth] if truth is not None else [])
    xs = _grid(*models)
    ax.hist(data.points[:, 0], bins=80, density=True, alpha=0.3, label="data")
    ax.plot(xs, np.exp(log_density(learned, xs[:, None])), label="learned")
    if truth is not None:
        ax.plot(xs, np.exp(log_density(truth, xs[:, None])), "--", label="truth")
    ax.set_xlabel("x")
    ax.legend()
    return _save(fig, path)


def plot_dp_audit(path, report: dict):
    outs = report["outputs"]
    f1 = np.array([o["freq1"] for o in outs])
    f2 = np.array([o["freq2"] for o in outs])
    order = np.argsort(-(f1 + f2))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    pos = np.arange(len(outs))
    ax.bar(pos - 0.2, f1[order], width=0.4, label="collection 1")
    ax.bar(pos + 0.2, f2[order], width=0.4, label="collection 2")
    ax.set_xlabel("output (by frequency)")
    ax.set_ylabel("frequency")
    ax.set_title(f"eps_hat={report['epsilon_hat']:.3f}, eps={report['epsilon_config']}")
    ax.legend()
    return _save(fig, path)


def plot_counts(path, counts, label: str):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    counts = np.asarray(counts)
    ax.hist(counts, bins=np.arange(counts.min(initial=0), counts.max(initial=0) + 2) - 0.5)
    ax.set_xlabel(label)
    ax.set_ylabel("probes")
    return _save(fig, path)
