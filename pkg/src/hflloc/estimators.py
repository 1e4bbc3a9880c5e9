"""scikit-learn compatible wrappers.

These let the preprocessing and the three localizers sit in a
``Pipeline``, be ``clone``-d, and expose ``get_params``/``set_params``.
The functional modules remain the source of truth; the classes only
validate inputs and hold fitted state.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baselines, dataset, federation, network

__all__ = ["PowedRSSITransformer", "DNNLocalizer", "FederatedLocalizer", "KNNLocalizer"]


class PowedRSSITransformer(TransformerMixin, BaseEstimator):
    """Prune sparse AP columns and map dBm readings into [0, 1].

    ``fit`` learns the column mask from raw RSSI rows (sentinel = not
    detected); ``transform`` applies it with the powed mapping.
    """

    def __init__(self, sparsity_threshold=0.98, min_rssi=-105.0, beta=math.e, sentinel=100.0,
                 strict_sparsity=True):
        self.sparsity_threshold = sparsity_threshold
        self.min_rssi = min_rssi
        self.beta = beta
        self.sentinel = sentinel
        self.strict_sparsity = strict_sparsity

    def _cfg(self):
        return dataset.PreprocessConfig(self.sparsity_threshold, self.min_rssi, self.beta, self.sentinel,
                                        self.strict_sparsity)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mask_ = dataset.derive_column_mask(X, self._cfg())
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mask_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, transformer was fitted on {self.n_features_in_}")
        return dataset.powed_transform(X[:, self.mask_.indices], self._cfg())

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "mask_")
        if input_features is None:
            input_features = [f"WAP{i + 1:03d}" for i in range(self.n_features_in_)]
        return np.asarray([input_features[i] for i in self.mask_.kept_ap_indices], dtype=object)


class _DNNBase(RegressorMixin, BaseEstimator):
    def _train_cfg(self, epochs):
        return network.TrainConfig(
            learning_rate=self.learning_rate,
            adam_beta1=self.beta1,
            adam_beta2=self.beta2,
            batch_size=self.batch_size,
            epochs=epochs,
            seed=self.random_state,
            dropout_enabled=self.dropout_enabled,
        )

    def _init(self, n_features):
        sizes = (n_features, *self.hidden_layer_sizes, 2)
        dims = tuple((o, i) for i, o in zip(sizes, sizes[1:]))
        return network.init_params(self.random_state, dims, self.dropout)

    def _as_dataset(self, X, y, groups=None):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError(f"y must have two columns (longitude, latitude), got shape {y.shape}")
        self.n_features_in_ = X.shape[1]
        self.target_offset_ = y.mean(axis=0)
        labels = np.zeros((X.shape[0], 2), dtype=np.int64) if groups is None else groups
        mask = dataset.ColumnMask(tuple(range(X.shape[1])), X.shape[1], X.shape[1])
        return dataset.ProcessedDataset(X, y - self.target_offset_, self.target_offset_, labels, mask)

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return network.predict(self.params_, X) + self.target_offset_

    def score(self, X, y, sample_weight=None):
        """Negative mean distance error (higher is better)."""
        from .metrics import mean_distance_error

        return -mean_distance_error(self.predict(X), np.asarray(y, dtype=np.float64))


class DNNLocalizer(_DNNBase):
    """Centrally trained MLP regressor for (longitude, latitude)."""

    def __init__(self, hidden_layer_sizes=(256, 64), dropout=(0.25, 0.1), learning_rate=0.0005, beta1=0.9,
                 beta2=0.999, batch_size=32, epochs=1000, dropout_enabled=True, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.epochs = epochs
        self.dropout_enabled = dropout_enabled
        self.random_state = random_state

    def fit(self, X, y):
        data = self._as_dataset(X, y)
        self.params_, self.curve_ = baselines.train_centralized(data, self._train_cfg(self.epochs),
                                                                self._init(data.n_features))
        return self


class FederatedLocalizer(_DNNBase):
    """MLP trained by floor -> building -> global federated averaging.

    ``fit`` takes ``groups``: one ``(building_id, floor_id)`` pair per row.
    Each distinct pair is one client.
    """

    def __init__(self, hidden_layer_sizes=(256, 64), dropout=(0.25, 0.1), learning_rate=0.0005, beta1=0.9,
                 beta2=0.999, batch_size=32, rounds=100, local_epochs=10, dropout_enabled=True, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.dropout_enabled = dropout_enabled
        self.random_state = random_state

    def fit(self, X, y, groups=None):
        if groups is None:
            raise ValueError("FederatedLocalizer.fit needs groups=(building_id, floor_id) per row")
        groups = np.asarray(groups, dtype=np.int64)
        if groups.shape != (len(X), 2):
            raise ValueError(f"groups must have shape ({len(X)}, 2), got {groups.shape}")
        data = self._as_dataset(X, y, groups)
        shards = dataset.partition_by_floor(data)
        topology = federation.FederationTopology.from_shards(shards)
        cfg = federation.FlConfig(rounds=self.rounds, local_epochs=self.local_epochs,
                                  train=self._train_cfg(self.local_epochs), track_train_mde=False,
                                  evaluate_regional=False)
        self.params_, self.records_ = federation.run_federated(topology, shards, cfg, None,
                                                               self._init(data.n_features))
        self.topology_ = topology
        return self


class KNNLocalizer(RegressorMixin, BaseEstimator):
    """Brute-force k-nearest-neighbor position average."""

    def __init__(self, n_neighbors=3):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True, y_numeric=True)
        if self.n_neighbors > X.shape[0]:
            raise ValueError(f"n_neighbors={self.n_neighbors} exceeds {X.shape[0]} training rows")
        self.X_fit_ = X
        self.y_fit_ = y
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "X_fit_")
        X = check_array(X, dtype=np.float64)
        idx = baselines.knn_neighbors(self.X_fit_, X, self.n_neighbors)
        return self.y_fit_[idx].mean(axis=1)
