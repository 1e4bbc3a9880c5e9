"""UJIIndoorLoc-format ingestion and the RSSI preprocessing pipeline.

The pipeline is: drop never-detected AP columns, drop APs missing in more
than ``sparsity_threshold`` of the training scans, impute the "not detected"
sentinel as ``min_rssi``, then map every reading into [0, 1] with the powed
representation. Coordinates are centered on the training mean.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "SchemaError",
    "Fingerprint",
    "FingerprintSet",
    "PreprocessConfig",
    "ColumnMask",
    "ProcessedDataset",
    "ClientShard",
    "UJI_SCHEMA",
    "load_fingerprints",
    "derive_column_mask",
    "powed_transform",
    "preprocess",
    "raw_features",
    "partition_by_floor",
    "concat_shards",
    "save_processed",
    "load_processed",
    "load_raw_rssi",
]


class DatasetError(ValueError):
    """Raised for malformed input files or degenerate data."""


class SchemaError(DatasetError):
    """Raised when a required column is missing from the header."""


# Column names of the public UJIIndoorLoc CSVs.
UJI_SCHEMA = {
    "ap_prefix": "WAP",
    "longitude": "LONGITUDE",
    "latitude": "LATITUDE",
    "floor": "FLOOR",
    "building": "BUILDINGID",
}


@dataclass(frozen=True)
class Fingerprint:
    rssi: np.ndarray
    longitude: float
    latitude: float
    floor_id: int
    building_id: int
    metadata: dict = field(default_factory=dict)


@dataclass
class FingerprintSet:
    """Columnar storage for a sequence of fingerprints.

    Behaves like a read-only list of :class:`Fingerprint` while keeping the
    RSSI matrix contiguous for the vectorized pipeline.
    """

    rssi: np.ndarray  # N x n_aps, dBm
    longitude: np.ndarray
    latitude: np.ndarray
    floor: np.ndarray
    building: np.ndarray
    ap_names: tuple[str, ...] = ()
    metadata_names: tuple[str, ...] = ()
    metadata: np.ndarray | None = None

    def __len__(self) -> int:
        return self.rssi.shape[0]

    def __getitem__(self, i: int) -> Fingerprint:
        meta = {}
        if self.metadata is not None:
            meta = dict(zip(self.metadata_names, self.metadata[i].tolist()))
        return Fingerprint(
            rssi=self.rssi[i],
            longitude=float(self.longitude[i]),
            latitude=float(self.latitude[i]),
            floor_id=int(self.floor[i]),
            building_id=int(self.building[i]),
            metadata=meta,
        )

    def __iter__(self) -> Iterator[Fingerprint]:
        for i in range(len(self)):
            yield self[i]

    @property
    def coordinates(self) -> np.ndarray:
        return np.column_stack([self.longitude, self.latitude])

    @classmethod
    def from_fingerprints(cls, fps: Sequence[Fingerprint]) -> "FingerprintSet":
        if isinstance(fps, FingerprintSet):
            return fps
        fps = list(fps)
        if not fps:
            raise DatasetError("no fingerprints given")
        return cls(
            rssi=np.array([fp.rssi for fp in fps], dtype=np.float64),
            longitude=np.array([fp.longitude for fp in fps], dtype=np.float64),
            latitude=np.array([fp.latitude for fp in fps], dtype=np.float64),
            floor=np.array([fp.floor_id for fp in fps], dtype=np.int64),
            building=np.array([fp.building_id for fp in fps], dtype=np.int64),
        )


@dataclass(frozen=True)
class PreprocessConfig:
    sparsity_threshold: float = 0.98
    min_rssi: float = -105.0
    beta: float = math.e
    sentinel: float = 100.0
    # True: drop a column only when its missing fraction is strictly above
    # the threshold. False switches to ">=".
    strict_sparsity: bool = True

    def __post_init__(self):
        if not 0.0 < self.sparsity_threshold <= 1.0:
            raise ValueError(f"sparsity_threshold must lie in (0, 1], got {self.sparsity_threshold}")
        if not self.min_rssi < 0.0:
            raise ValueError(f"min_rssi must be negative, got {self.min_rssi}")
        if not self.beta > 0.0:
            raise ValueError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class ColumnMask:
    kept_ap_indices: tuple[int, ...]
    n_source_columns: int
    n_detected_columns: int  # survivors of the never-detected stage

    def __post_init__(self):
        idx = self.kept_ap_indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("kept_ap_indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.kept_ap_indices)

    @property
    def indices(self) -> np.ndarray:
        return np.asarray(self.kept_ap_indices, dtype=np.intp)


@dataclass
class ProcessedDataset:
    features: np.ndarray  # N x D in [0, 1]
    targets: np.ndarray  # N x 2, centered meters
    target_offset: np.ndarray  # 2-vector added back to recover raw coordinates
    labels: np.ndarray  # N x 2 int, (building_id, floor_id)
    mask: ColumnMask

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def coordinates(self) -> np.ndarray:
        """Targets in the dataset's native frame."""
        return self.targets + self.target_offset

    def subset(self, rows) -> "ProcessedDataset":
        rows = np.asarray(rows)
        return ProcessedDataset(
            features=self.features[rows],
            targets=self.targets[rows],
            target_offset=self.target_offset.copy(),
            labels=self.labels[rows],
            mask=self.mask,
        )


@dataclass
class ClientShard:
    client_id: tuple[int, int]  # (building_id, floor_id)
    data: ProcessedDataset
    row_indices: np.ndarray

    @property
    def size(self) -> int:
        return len(self.data)

    @property
    def features(self) -> np.ndarray:
        return self.data.features

    @property
    def targets(self) -> np.ndarray:
        return self.data.targets

    @property
    def building_id(self) -> int:
        return self.client_id[0]


def _parse_float(text: str, row_no: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"row {row_no}: non-numeric value {text!r} in column {column}") from None


def load_fingerprints(path, schema: dict | None = None) -> FingerprintSet:
    """Read a UJIIndoorLoc-format CSV.

    Row numbers in error messages count the header as row 1, so they match
    what a text editor shows.
    """
    schema = {**UJI_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"fingerprint file not found: {path}")

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        rows = list(reader)

    ap_cols = [i for i, h in enumerate(header) if h.startswith(schema["ap_prefix"])]
    if not ap_cols:
        raise SchemaError(f"{path}: no columns with prefix {schema['ap_prefix']!r}")
    n_aps = schema.get("n_aps")
    if n_aps is not None and len(ap_cols) != n_aps:
        raise SchemaError(f"{path}: expected {n_aps} AP columns, found {len(ap_cols)}")
    named = {}
    for key in ("longitude", "latitude", "floor", "building"):
        try:
            named[key] = header.index(schema[key])
        except ValueError:
            raise SchemaError(f"{path}: required column {schema[key]!r} missing from header") from None
    meta_cols = [i for i in range(len(header)) if i not in set(ap_cols) | set(named.values())]

    width = len(header)
    rows = [r for r in rows if r]  # tolerate a trailing blank line
    for k, r in enumerate(rows):
        if len(r) != width:
            raise DatasetError(f"row {k + 2}: expected {width} columns, found {len(r)}")

    def numeric(cols, dtype=np.float64):
        table = [[r[c] for c in cols] for r in rows]
        try:
            return np.array(table, dtype=dtype).reshape(len(rows), len(cols))
        except ValueError:
            for k, r in enumerate(table):
                for c, text in zip(cols, r):
                    _parse_float(text, k + 2, header[c])
            raise

    rssi = numeric(ap_cols)
    lon = numeric([named["longitude"]])[:, 0]
    lat = numeric([named["latitude"]])[:, 0]
    floor = numeric([named["floor"]])[:, 0].astype(np.int64)
    building = numeric([named["building"]])[:, 0].astype(np.int64)
    metadata = np.array([[r[c] for c in meta_cols] for r in rows], dtype=object) if meta_cols else None
    return FingerprintSet(
        rssi=rssi,
        longitude=lon,
        latitude=lat,
        floor=floor,
        building=building,
        ap_names=tuple(header[c] for c in ap_cols),
        metadata_names=tuple(header[c] for c in meta_cols),
        metadata=metadata,
    )


def _rssi_matrix(raw) -> np.ndarray:
    if isinstance(raw, FingerprintSet):
        return raw.rssi
    if isinstance(raw, np.ndarray):
        return np.atleast_2d(raw)
    return FingerprintSet.from_fingerprints(raw).rssi


def derive_column_mask(train, cfg: PreprocessConfig = PreprocessConfig()) -> ColumnMask:
    """Two-stage AP pruning, computed from training scans only."""
    rssi = _rssi_matrix(train)
    n, n_cols = rssi.shape
    if n == 0:
        raise DatasetError("cannot derive a column mask from an empty training set")
    missing = rssi == cfg.sentinel
    detected = ~missing.all(axis=0)
    missing_frac = missing.sum(axis=0) / n
    if cfg.strict_sparsity:
        sparse = missing_frac > cfg.sparsity_threshold
    else:
        sparse = missing_frac >= cfg.sparsity_threshold
    keep = detected & ~sparse
    if not keep.any():
        raise DatasetError("every AP column was eliminated; dataset is degenerate")
    return ColumnMask(
        kept_ap_indices=tuple(int(i) for i in np.flatnonzero(keep)),
        n_source_columns=n_cols,
        n_detected_columns=int(detected.sum()),
    )


def powed_transform(rssi, cfg: PreprocessConfig = PreprocessConfig()):
    """Map dBm readings into [0, 1] as ``((rssi - min) / -min) ** beta``.

    Accepts a scalar or an array; the sentinel is imputed as ``min_rssi``.
    """
    x = np.asarray(rssi, dtype=np.float64)
    x = np.where(x == cfg.sentinel, cfg.min_rssi, x)
    bad = (x < cfg.min_rssi) | (x > 0.0) | np.isnan(x)
    if bad.any():
        offender = x[bad].flat[0] if x.ndim else float(x)
        raise DatasetError(f"RSSI {offender} outside [{cfg.min_rssi}, 0] dBm")
    out = ((x - cfg.min_rssi) / -cfg.min_rssi) ** cfg.beta
    return float(out) if out.ndim == 0 else out


def preprocess(
    raw,
    mask: ColumnMask,
    offset=None,
    cfg: PreprocessConfig = PreprocessConfig(),
) -> ProcessedDataset:
    """Apply ``mask`` and the powed transform; center coordinates.

    Pass ``offset=None`` for the training set (its coordinate mean becomes the
    offset) and the training offset for the validation set.
    """
    fps = raw if isinstance(raw, FingerprintSet) else FingerprintSet.from_fingerprints(raw)
    idx = mask.indices
    if idx.size and (idx.max() >= fps.rssi.shape[1] or idx.min() < 0):
        raise DatasetError(
            f"mask index {int(idx.max())} out of range for {fps.rssi.shape[1]} AP columns"
        )
    features = powed_transform(fps.rssi[:, idx], cfg)
    coords = fps.coordinates
    if offset is None:
        offset = coords.mean(axis=0)
    offset = np.asarray(offset, dtype=np.float64).reshape(2)
    return ProcessedDataset(
        features=np.ascontiguousarray(features),
        targets=coords - offset,
        target_offset=offset.copy(),
        labels=np.column_stack([fps.building, fps.floor]).astype(np.int64),
        mask=mask,
    )


def raw_features(raw, mask: ColumnMask, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Masked dBm readings with the sentinel imputed, no powed mapping."""
    rssi = _rssi_matrix(raw)[:, mask.indices]
    return np.where(rssi == cfg.sentinel, cfg.min_rssi, rssi)


def partition_by_floor(data: ProcessedDataset) -> list[ClientShard]:
    """One shard per observed (building, floor) pair, ordered by that pair."""
    keys = sorted({(int(b), int(f)) for b, f in data.labels})
    shards = []
    for key in keys:
        rows = np.flatnonzero((data.labels[:, 0] == key[0]) & (data.labels[:, 1] == key[1]))
        shards.append(ClientShard(client_id=key, data=data.subset(rows), row_indices=rows))
    return shards


def concat_shards(shards: Sequence[ClientShard]) -> ProcessedDataset:
    """Pool shards back into a single dataset, in original row order."""
    if not shards:
        raise DatasetError("no shards to pool")
    rows = np.concatenate([s.row_indices for s in shards])
    order = np.argsort(rows, kind="stable")
    first = shards[0].data
    return ProcessedDataset(
        features=np.concatenate([s.features for s in shards])[order],
        targets=np.concatenate([s.targets for s in shards])[order],
        target_offset=first.target_offset.copy(),
        labels=np.concatenate([s.data.labels for s in shards])[order],
        mask=first.mask,
    )


# ---------------------------------------------------------------------------
# On-disk archive: manifest.json plus raw little-endian matrices.

_F64 = np.dtype("<f8")
_I64 = np.dtype("<i8")


def save_processed(data: ProcessedDataset, directory, cfg: PreprocessConfig = PreprocessConfig(), extra=None,
                   raw: np.ndarray | None = None) -> Path:
    """Write ``data`` as manifest.json plus row-major little-endian matrices.

    ``raw`` optionally stores the masked, imputed dBm readings alongside.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "hflloc-processed",
        "version": 1,
        "n": len(data),
        "d": data.n_features,
        "mask_indices": list(data.mask.kept_ap_indices),
        "n_source_columns": data.mask.n_source_columns,
        "n_detected_columns": data.mask.n_detected_columns,
        "target_offset": [float(v) for v in data.target_offset],
        "sparsity_threshold": cfg.sparsity_threshold,
        "strict_sparsity": cfg.strict_sparsity,
        "beta": cfg.beta,
        "min_rssi": cfg.min_rssi,
        "sentinel": cfg.sentinel,
        "files": {
            "features": "features.f64",
            "targets": "targets.f64",
            "labels": "labels.i64",
        },
    }
    if raw is not None:
        raw = np.asarray(raw, dtype=_F64)
        if raw.shape != data.features.shape:
            raise DatasetError(f"raw matrix shape {raw.shape} != feature shape {data.features.shape}")
        manifest["files"]["raw_rssi"] = "raw_rssi.f64"
        (directory / "raw_rssi.f64").write_bytes(np.ascontiguousarray(raw).tobytes())
    if extra:
        manifest.update(extra)
    (directory / "features.f64").write_bytes(np.ascontiguousarray(data.features, dtype=_F64).tobytes())
    (directory / "targets.f64").write_bytes(np.ascontiguousarray(data.targets, dtype=_F64).tobytes())
    (directory / "labels.i64").write_bytes(np.ascontiguousarray(data.labels, dtype=_I64).tobytes())
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_processed(directory) -> ProcessedDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no processed-dataset manifest in {directory}")
    m = json.loads(manifest_path.read_text())
    n, d = m["n"], m["d"]

    def read(name, dtype, cols):
        buf = (directory / m["files"][name]).read_bytes()
        arr = np.frombuffer(buf, dtype=dtype)
        if arr.size != n * cols:
            raise DatasetError(f"{directory}/{m['files'][name]}: expected {n * cols} values, found {arr.size}")
        return arr.reshape(n, cols).astype(dtype.newbyteorder("="))

    mask = ColumnMask(
        kept_ap_indices=tuple(m["mask_indices"]),
        n_source_columns=m["n_source_columns"],
        n_detected_columns=m["n_detected_columns"],
    )
    return ProcessedDataset(
        features=read("features", _F64, d),
        targets=read("targets", _F64, 2),
        target_offset=np.array(m["target_offset"], dtype=np.float64),
        labels=read("labels", _I64, 2),
        mask=mask,
    )


def load_raw_rssi(directory) -> np.ndarray:
    """The masked dBm matrix stored next to a processed dataset."""
    directory = Path(directory)
    m = json.loads((directory / "manifest.json").read_text())
    if "raw_rssi" not in m["files"]:
        raise DatasetError(f"{directory}: archive holds no raw RSSI matrix")
    arr = np.frombuffer((directory / m["files"]["raw_rssi"]).read_bytes(), dtype=_F64)
    return arr.reshape(m["n"], m["d"]).astype(np.float64)


def preprocess_config_from_manifest(directory) -> PreprocessConfig:
    m = json.loads((Path(directory) / "manifest.json").read_text())
    return PreprocessConfig(
        sparsity_threshold=m["sparsity_threshold"],
        min_rssi=m["min_rssi"],
        beta=m["beta"],
        sentinel=m["sentinel"],
        strict_sparsity=m["strict_sparsity"],
    )
