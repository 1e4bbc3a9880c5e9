import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hflloc import baselines, dataset, federation, metrics, network
from hflloc.baselines import KnnConfig
from hflloc.network import TrainConfig


def _ds(features, targets, offset=(0.0, 0.0)):
    features = np.asarray(features, float)
    n, d = features.shape
    return dataset.ProcessedDataset(features, np.asarray(targets, float), np.asarray(offset, float),
                                    np.zeros((n, 2), dtype=np.int64), dataset.ColumnMask(tuple(range(d)), d, d))


# --- mean distance error ---------------------------------------------------------------------

def test_mde_cases():
    assert metrics.mean_distance_error([[1, 2]], [[1, 2]]) == 0.0
    assert metrics.mean_distance_error([[3, 4]], [[0, 0]]) == 5.0
    assert metrics.mean_distance_error([[0, 0], [6, 8]], [[0, 0], [0, 0]]) == 5.0
    with pytest.raises(ValueError):
        metrics.mean_distance_error([[1, 2]], [[1, 2], [3, 4]])


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_mde_translation_symmetry_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=(20, 2)) * 50 for _ in range(3))
    shift = rng.normal(size=2) * 1e3
    assert metrics.mean_distance_error(a + shift, b + shift) == pytest.approx(metrics.mean_distance_error(a, b), rel=1e-9)
    assert metrics.mean_distance_error(a, b) == metrics.mean_distance_error(b, a)
    assert metrics.mean_distance_error(a, c) <= metrics.mean_distance_error(a, b) + metrics.mean_distance_error(b, c) + 1e-9


def test_evaluate_report():
    rep = metrics.evaluate([[3, 4], [0, 0], [0, 1], [0, 2]], [[0, 0]] * 4)
    assert rep.n == 4 and rep.mde_m == 2.0
    assert rep.mae_per_coord_m == pytest.approx(10 / 8)
    pct = [rep.percentile_errors[k] for k in ("p50", "p75", "p90", "p95")]
    assert pct == sorted(pct)
    assert "indicator" in rep.to_json()["note"]


# --- curves --------------------------------------------------------------------------------------

def test_curves_empty():
    assert metrics.build_curves([]) == []


def test_curves_rounds_one_point_per_round():
    recs = [federation.RoundRecord(r, {(0, 0): 1.0}, 10.0 - r, None, None) for r in range(1, 101)]
    rows = metrics.build_curves(recs)
    assert len([r for r in rows if r[0] == "global_val_mde"]) == 100


def test_curves_epochs_and_csv_round_trip():
    curve = [network.EpochRecord(e, 1.0 / e) for e in range(1, 1001)]
    rows = metrics.build_curves(curve)
    assert len([r for r in rows if r[0] == "train_mae"]) == 1000
    buf = io.StringIO()
    metrics.write_curves_csv(rows, buf)
    assert buf.getvalue().startswith("series,step,value_m\n")
    buf.seek(0)
    assert metrics.read_curves_csv(buf) == rows


# --- KNN ---------------------------------------------------------------------------------------

def test_knn_exact_match_k1():
    rng = np.random.default_rng(0)
    train = _ds(rng.random((30, 5)), rng.normal(size=(30, 2)))
    np.testing.assert_array_equal(baselines.knn_predict(train, train.features[7], KnnConfig(1)), train.targets[7])


def test_knn_equidistant_pair():
    train = _ds([[0.0, 0.0], [2.0, 0.0]], [[0, 0], [2, 2]])
    np.testing.assert_array_equal(baselines.knn_predict(train, [1.0, 0.0], KnnConfig(2)), [1.0, 1.0])


def test_knn_tie_breaks_to_lower_index():
    train = _ds([[0.0], [2.0], [2.0]], [[0, 0], [5, 5], [9, 9]])
    np.testing.assert_array_equal(baselines.knn_predict(train, [1.0], KnnConfig(1)), [0.0, 0.0])
    np.testing.assert_array_equal(baselines.knn_predict(train, [2.0], KnnConfig(1)), [5.0, 5.0])


def test_knn_k_equals_n_is_mean():
    rng = np.random.default_rng(1)
    train = _ds(rng.random((9, 3)), rng.normal(size=(9, 2)))
    np.testing.assert_allclose(baselines.knn_predict(train, rng.random(3), KnnConfig(9)), train.targets.mean(axis=0))


def test_knn_k_too_large():
    train = _ds([[0.0]], [[0, 0]])
    with pytest.raises(ValueError):
        baselines.knn_predict(train, [0.0], KnnConfig(2))


def test_knn_evaluate_self_is_zero():
    rng = np.random.default_rng(2)
    train = _ds(rng.random((40, 4)), rng.normal(size=(40, 2)), offset=(100.0, -50.0))
    assert baselines.knn_evaluate(train, train, KnnConfig(1)) == 0.0


def test_knn_evaluate_hand_distance():
    train = _ds([[0.0], [10.0]], [[0, 0], [100, 100]])
    val = _ds([[1.0]], [[3, 4]])
    assert baselines.knn_evaluate(train, val, KnnConfig(1)) == 5.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_knn_prediction_in_hull_and_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    train = _ds(rng.random((25, 3)), rng.normal(size=(25, 2)))
    q = rng.random((5, 3))
    idx = baselines.knn_neighbors(train.features, q, k)
    pred = baselines.knn_predict(train, q, KnnConfig(k))
    sel = train.targets[idx]
    assert np.all(pred >= sel.min(axis=1) - 1e-12) and np.all(pred <= sel.max(axis=1) + 1e-12)
    perm = rng.permutation(25)
    shuffled = _ds(train.features[perm], train.targets[perm])
    np.testing.assert_allclose(baselines.knn_predict(shuffled, q, KnnConfig(k)), pred, rtol=1e-12, atol=1e-12)


def test_knn_sweep_matches_individual(small_processed):
    train, val = small_processed
    sweep = baselines.knn_sweep(train, val, (1, 3, 5))
    for k, v in sweep.items():
        assert v == pytest.approx(baselines.knn_evaluate(train, val, KnnConfig(k)), rel=1e-12)


# --- centralized ------------------------------------------------------------------------------------

def test_centralized_zero_epochs(small_processed):
    train, _ = small_processed
    init = network.init_params(0, ((256, train.n_features), (64, 256), (2, 64)))
    params, curve = baselines.train_centralized(train, TrainConfig(epochs=0), init)
    assert params.tobytes() == init.tobytes() and curve == []


def test_centralized_equals_single_shard_training(small_processed):
    train, _ = small_processed
    shard = dataset.partition_by_floor(train)[0]
    cfg = TrainConfig(epochs=2, seed=3)
    pooled = shard.data
    a, _ = baselines.train_centralized(pooled, cfg)
    b, _ = network.train_epochs(shard, network.init_params(3, ((256, train.n_features), (64, 256), (2, 64)), network.REFERENCE_DROPOUT), cfg)
    assert a.tobytes() == b.tobytes()


def test_centralized_matches_single_client_federation(small_processed):
    train, _ = small_processed
    one = dataset.ProcessedDataset(train.features, train.targets, train.target_offset,
                                   np.zeros_like(train.labels), train.mask)
    shards = dataset.partition_by_floor(one)
    topo = federation.FederationTopology.from_shards(shards)
    cfg = TrainConfig(epochs=2, seed=8)
    cl, _ = baselines.train_centralized(one, cfg)
    fl, _ = federation.run_federated(topo, shards, federation.FlConfig(rounds=1, local_epochs=2, train=cfg))
    assert cl.tobytes() == fl.tobytes()


def test_centralized_records_validation_curve(small_processed):
    train, val = small_processed
    _, curve = baselines.train_centralized(train, TrainConfig(epochs=2), validation=val)
    assert all(r.val_mde is not None and r.val_mde > 0 for r in curve)


def test_default_init_uses_reference_dropout_for_any_width(small_processed):
    train, _ = small_processed
    assert train.n_features != 248
    a, _ = baselines.train_centralized(train, TrainConfig(epochs=1, seed=1))
    init = network.init_params(1, ((256, train.n_features), (64, 256), (2, 64)), network.REFERENCE_DROPOUT)
    b, _ = baselines.train_centralized(train, TrainConfig(epochs=1, seed=1), init)
    assert a.tobytes() == b.tobytes()
