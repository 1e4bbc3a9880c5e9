"""Synthetic fingerprint files in the UJIIndoorLoc CSV layout.

Signals follow a log-distance path-loss model with per-floor attenuation and
Gaussian shadowing, on a three-building, four-floor campus laid out in
projected meters. Useful for exercising the full pipeline when the public
dataset is not at hand; the numbers it produces say nothing about the real
benchmark.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = ["make_uji_like", "write_uji_csv"]

# Building footprints: (x0, y0, width, depth) in meters, offset into a
# UTM-like frame below.
_BUILDINGS = ((0.0, 120.0, 110.0, 70.0), (140.0, 60.0, 120.0, 80.0), (290.0, 0.0, 100.0, 150.0))
_ORIGIN = np.array([-7691.0, 4864745.0])
_FLOOR_HEIGHT = 3.5
_N_FLOORS = 4


def make_uji_like(n_train: int = 19937, n_val: int = 1111, n_aps: int = 520, n_dead_aps: int = 55,
                  seed: int = 0, shadowing_db: float = 4.0):
    """Return ``(train, validation)`` as dicts of column arrays.

    ``n_dead_aps`` AP columns are never heard in the training file. The
    validation set is drawn at fresh positions with extra shadowing, which
    stands in for the months-later collection of the public data.
    """
    rng = np.random.default_rng(seed)
    live = n_aps - n_dead_aps
    # Access points: most inside buildings, some weak ones outside.
    ap_building = rng.integers(0, len(_BUILDINGS), size=live)
    ap_xy = np.empty((live, 2))
    ap_floor = rng.integers(0, _N_FLOORS, size=live).astype(float)
    for b, (x0, y0, w, d) in enumerate(_BUILDINGS):
        sel = ap_building == b
        ap_xy[sel, 0] = x0 + rng.uniform(0, w, sel.sum())
        ap_xy[sel, 1] = y0 + rng.uniform(0, d, sel.sum())
    tx_power = rng.uniform(-45.0, -30.0, size=live)
    tx_power[rng.random(live) < 0.55] -= 35.0  # faint APs end up mostly sparse
    exponent = rng.uniform(2.2, 3.2, size=live)

    # Reference points per (building, floor); several scans per point.
    ref_points = []
    for b, (x0, y0, w, d) in enumerate(_BUILDINGS):
        for f in range(_N_FLOORS):
            n_ref = rng.integers(40, 90)
            xy = np.column_stack([x0 + rng.uniform(2, w - 2, n_ref), y0 + rng.uniform(2, d - 2, n_ref)])
            ref_points.extend((b, f, p) for p in xy)

    def scans(n, fresh_positions, extra_db):
        if fresh_positions:
            pick = rng.integers(0, len(ref_points), size=n)
            b = np.array([ref_points[i][0] for i in pick])
            f = np.array([ref_points[i][1] for i in pick])
            base = np.array([ref_points[i][2] for i in pick])
            xy = base + rng.normal(0, 3.0, size=(n, 2))
        else:
            pick = rng.integers(0, len(ref_points), size=n)
            b = np.array([ref_points[i][0] for i in pick])
            f = np.array([ref_points[i][1] for i in pick])
            xy = np.array([ref_points[i][2] for i in pick]) + rng.normal(0, 0.3, size=(n, 2))
        for k, (x0, y0, w, d) in enumerate(_BUILDINGS):
            sel = b == k
            xy[sel, 0] = np.clip(xy[sel, 0], x0, x0 + w)
            xy[sel, 1] = np.clip(xy[sel, 1], y0, y0 + d)
        dz = (f[:, None] - ap_floor[None, :]) * _FLOOR_HEIGHT
        dist = np.sqrt(((xy[:, None, :] - ap_xy[None, :, :]) ** 2).sum(-1) + dz ** 2)
        dist = np.maximum(dist, 1.0)
        floors_between = np.abs(f[:, None] - ap_floor[None, :])
        other_building = b[:, None] != ap_building[None, :]
        rssi = (tx_power[None, :] - 10 * exponent[None, :] * np.log10(dist) - 12.0 * floors_between
                - 15.0 * other_building + rng.normal(0, shadowing_db + extra_db, size=dist.shape))
        rssi = np.round(np.minimum(rssi, 0.0))
        rssi[rssi < -104] = 100.0
        full = np.full((n, n_aps), 100.0)
        full[:, :live] = rssi
        return full, xy + _ORIGIN, f, b

    def as_columns(rssi, xy, f, b, phase):
        n = rssi.shape[0]
        return {
            "rssi": rssi,
            "LONGITUDE": xy[:, 0],
            "LATITUDE": xy[:, 1],
            "FLOOR": f,
            "BUILDINGID": b,
            "SPACEID": rng.integers(1, 255, size=n),
            "RELATIVEPOSITION": rng.integers(1, 3, size=n),
            "USERID": rng.integers(1, 19, size=n) if phase == "train" else np.zeros(n, dtype=int),
            "PHONEID": rng.integers(1, 25, size=n),
            "TIMESTAMP": 1369900000 + np.sort(rng.integers(0, 2_000_000, size=n)),
        }

    train = as_columns(*scans(n_train, False, 0.0), "train")
    val_rssi, val_xy, val_f, val_b = scans(n_val, True, 1.5)
    # Validation may hear APs never heard in training; the training mask drops them anyway.
    val = as_columns(val_rssi, val_xy, val_f, val_b, "validation")
    return train, val


def write_uji_csv(columns: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rssi = columns["rssi"]
    n_aps = rssi.shape[1]
    extra = [k for k in columns if k != "rssi"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"WAP{i + 1:03d}" for i in range(n_aps)] + extra)
        for i in range(rssi.shape[0]):
            row = [str(int(v)) for v in rssi[i]]
            for k in extra:
                v = columns[k][i]
                row.append(repr(float(v)) if k in ("LONGITUDE", "LATITUDE") else str(int(v)))
            w.writerow(row)
    return path
