"""Centralized DNN and brute-force KNN baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import ProcessedDataset
from .metrics import mean_distance_error
from .network import REFERENCE_DROPOUT, ModelParams, TrainConfig, init_params, make_streams, predict, train_epochs

__all__ = [
    "KnnConfig",
    "KNN_SWEEP",
    "train_centralized",
    "knn_neighbors",
    "knn_predict",
    "knn_evaluate",
    "knn_sweep",
]

KNN_SWEEP = (1, 3, 5, 7, 11)


@dataclass(frozen=True)
class KnnConfig:
    k: int = 3
    raw_rssi: bool = False  # use imputed dBm instead of powed features

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


def train_centralized(pooled: ProcessedDataset, cfg: TrainConfig, params: ModelParams | None = None,
                      validation: ProcessedDataset | None = None):
    """Train one model on all data with the same loop the clients use.

    When ``validation`` is given, each epoch record carries its MDE.
    """
    if params is None:
        params = init_params(cfg.seed, ((256, pooled.n_features), (64, 256), (2, 64)), REFERENCE_DROPOUT)
    on_epoch = None
    if validation is not None:
        def on_epoch(epoch, p):
            return mean_distance_error(predict(p, validation.features) + validation.target_offset,
                                       validation.coordinates)
    return train_epochs(pooled, params, cfg, make_streams(cfg.seed, 0), on_epoch=on_epoch)


def knn_neighbors(train_features, query_features, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the ``k`` nearest training rows per query.

    Exact squared Euclidean distances; ties go to the lower row index.
    """
    X = np.asarray(train_features, dtype=np.float64)
    Q = np.atleast_2d(np.asarray(query_features, dtype=np.float64))
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the {X.shape[0]} training rows")
    if Q.shape[1] != X.shape[1]:
        raise ValueError(f"query width {Q.shape[1]} != training width {X.shape[1]}")
    out = np.empty((Q.shape[0], k), dtype=np.intp)
    for start in range(0, Q.shape[0], chunk):
        d = cdist(Q[start:start + chunk], X, "sqeuclidean")
        out[start:start + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def knn_predict(train: ProcessedDataset, query, cfg: KnnConfig = KnnConfig(), train_features=None) -> np.ndarray:
    """Unweighted mean target of the k nearest rows (centered frame).

    A single feature row gives a 2-vector; a matrix gives one row per query.
    """
    feats = train.features if train_features is None else train_features
    q = np.asarray(query, dtype=np.float64)
    idx = knn_neighbors(feats, q, cfg.k)
    pred = train.targets[idx].mean(axis=1)
    return pred[0] if q.ndim == 1 else pred


def knn_evaluate(train: ProcessedDataset, validation: ProcessedDataset, cfg: KnnConfig = KnnConfig(),
                 train_features=None, validation_features=None) -> float:
    """MDE in meters over every validation row."""
    vf = validation.features if validation_features is None else validation_features
    pred = knn_predict(train, vf, cfg, train_features)
    return mean_distance_error(pred + train.target_offset, validation.coordinates)


def knn_sweep(train: ProcessedDataset, validation: ProcessedDataset, ks=KNN_SWEEP,
              train_features=None, validation_features=None) -> dict:
    """MDE per k, sharing one neighbor search across the whole sweep."""
    ks = sorted(set(int(k) for k in ks))
    tf = train.features if train_features is None else train_features
    vf = validation.features if validation_features is None else validation_features
    idx = knn_neighbors(tf, vf, max(ks))
    results = {}
    for k in ks:
        pred = train.targets[idx[:, :k]].mean(axis=1)
        results[k] = mean_distance_error(pred + train.target_offset, validation.coordinates)
    return results
