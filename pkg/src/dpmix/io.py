"""File formats: plain-text datasets and JSON models, covers, lists and reports."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IoFailure
from .model import Dataset, make_dataset, model_from_dict, model_to_dict


def write_json(path, obj) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    except OSError as exc:
        raise IoFailure(path, exc.strerror or str(exc)) from None


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(path, exc.strerror or str(exc)) from None
    except json.JSONDecodeError as exc:
        raise IoFailure(path, f"invalid JSON: {exc}") from None


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.random.SeedSequence):
        return obj.entropy
    return repr(obj)


def write_dataset(path, data: Dataset) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for row in data.points:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    except OSError as exc:
        raise IoFailure(path, exc.strerror or str(exc)) from None


def read_dataset(path, seed=None) -> Dataset:
    path = Path(path)
    try:
        rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise IoFailure(path, exc.strerror or str(exc)) from None
    if not rows:
        return make_dataset(np.empty((0, 1)), seed)
    return make_dataset(np.array(rows, dtype=float), seed)


def write_model(path, model) -> None:
    write_json(path, model_to_dict(model))


def read_model(path):
    return model_from_dict(read_json(path))


def write_list(path, lst) -> None:
    write_json(path, {"items": [model_to_dict(it) for it in lst.items],
                      "manifest": dict(lst.manifest, budget=lst.budget)})


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    except OSError as exc:
        raise IoFailure(path, exc.strerror or str(exc)) from None
