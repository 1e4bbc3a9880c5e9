"""Hierarchical federated learning for WiFi fingerprint indoor localization."""

from .baselines import KnnConfig, knn_evaluate, knn_predict, knn_sweep, train_centralized
from .dataset import (
    ColumnMask,
    PreprocessConfig,
    ProcessedDataset,
    derive_column_mask,
    load_fingerprints,
    partition_by_floor,
    powed_transform,
    preprocess,
)
from .estimators import DNNLocalizer, FederatedLocalizer, KNNLocalizer, PowedRSSITransformer
from .federation import (
    FederationTopology,
    FlConfig,
    RoundRecord,
    aggregate_weighted,
    broadcast,
    global_aggregate,
    regional_aggregate,
    run_federated,
)
from .metrics import EvaluationReport, build_curves, evaluate, mean_distance_error
from .network import ModelParams, TrainConfig, init_params, predict, train_epochs

__version__ = "0.1.0"
