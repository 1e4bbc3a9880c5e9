"""Localization error metrics and learning-curve tables."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "EvaluationReport",
    "mean_distance_error",
    "evaluate",
    "build_curves",
    "write_curves_csv",
    "read_curves_csv",
]

# Building/floor indicator factors of the 2D error are fixed at 1: the
# regressor predicts coordinates only.
DELTA_NOTE = "building/floor indicator factors set to 1 (coordinates-only model)"


@dataclass
class EvaluationReport:
    n: int
    mde_m: float
    mae_per_coord_m: float
    # diagnostic extras, not part of the benchmark table
    percentile_errors: dict

    def to_json(self) -> dict:
        d = asdict(self)
        d["note"] = DELTA_NOTE
        return d


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ValueError(f"expected matching (N, 2) arrays, got {pred.shape} and {truth.shape}")
    return pred, truth


def mean_distance_error(pred, truth) -> float:
    """Mean Euclidean distance between predicted and true 2-D positions."""
    pred, truth = _pair(pred, truth)
    if pred.shape[0] == 0:
        raise ValueError("no positions to evaluate")
    return float(np.mean(np.hypot(*(pred - truth).T)))


def evaluate(pred, truth) -> EvaluationReport:
    pred, truth = _pair(pred, truth)
    dist = np.hypot(*(pred - truth).T)
    pct = np.percentile(dist, [50, 75, 90, 95])
    return EvaluationReport(
        n=int(dist.size),
        mde_m=float(dist.mean()),
        mae_per_coord_m=float(np.mean(np.abs(pred - truth))),
        percentile_errors={f"p{p}": float(v) for p, v in zip((50, 75, 90, 95), pct)},
    )


def build_curves(records: Iterable, prefix: str = "") -> list[tuple[str, int, float]]:
    """Flatten round records or epoch records into ``(series, step, value_m)``.

    Round records yield ``global_val_mde``, ``global_train_mde``,
    ``client_train_mae/<client>`` and ``regional_val_mde/<building>`` series;
    epoch records yield ``train_mae`` and ``val_mde``.
    """
    rows = []
    for rec in records:
        if hasattr(rec, "round"):
            step = rec.round
            rows.append((f"{prefix}global_val_mde", step, float(rec.global_val_mde)))
            if rec.global_train_mde is not None:
                rows.append((f"{prefix}global_train_mde", step, float(rec.global_train_mde)))
            for c, v in rec.per_client_train_mae.items():
                name = "B{}F{}".format(*c) if isinstance(c, tuple) else str(c)
                rows.append((f"{prefix}client_train_mae/{name}", step, float(v)))
            for b, v in (rec.regional_val_mde or {}).items():
                rows.append((f"{prefix}regional_val_mde/B{b}", step, float(v)))
        else:
            rows.append((f"{prefix}train_mae", rec.epoch, float(rec.train_mae)))
            if rec.val_mde is not None:
                rows.append((f"{prefix}val_mde", rec.epoch, float(rec.val_mde)))
    return rows


def write_curves_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["series", "step", "value_m"])
    for series, step, value in rows:
        w.writerow([series, step, repr(float(value))])


def read_curves_csv(fh) -> list[tuple[str, int, float]]:
    reader = csv.reader(fh)
    header = next(reader)
    if header != ["series", "step", "value_m"]:
        raise ValueError(f"unexpected curves header {header}")
    return [(s, int(k), float(v)) for s, k, v in reader]
