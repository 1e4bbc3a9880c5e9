import json

import numpy as np
import pytest

from hflloc import cli, dataset, metrics, network
from hflloc.config import DEFAULTS, ConfigError, ExperimentConfig, emit_config, load_config, parse_config


# --- config ----------------------------------------------------------------------------------

def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(emit_config(cfg)).values == cfg.values


def test_overrides_round_trip():
    cfg = ExperimentConfig().override(["fl.rounds=7", "model.hidden=32,16", "train.dropout_enabled=no",
                                       "preprocess.sparsity_threshold=0.9", "fl.clients=0:0,1:2"])
    assert cfg["fl.rounds"] == 7 and cfg["model.hidden"] == (32, 16)
    assert cfg["train.dropout_enabled"] is False
    assert cfg.clients() == [(0, 0), (1, 2)]
    assert parse_config(emit_config(cfg)).values == cfg.values


def test_parse_comments_and_blank_lines():
    cfg = parse_config("# header\n\nknn.k = 5  # neighbours\n")
    assert cfg["knn.k"] == 5 and cfg["fl.rounds"] == DEFAULTS["fl.rounds"]


@pytest.mark.parametrize("text", ["nope.key = 1", "fl.rounds = many", "fl.rounds", "train.dropout_enabled = maybe"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_typed_views_validate():
    with pytest.raises(ConfigError):
        ExperimentConfig().override(["train.batch_size=0"]).train(1)
    with pytest.raises(ConfigError):
        ExperimentConfig().override(["preprocess.sparsity_threshold=1.5"]).preprocess()
    with pytest.raises(ConfigError):
        ExperimentConfig().override(["knn.validation=test"]).knn()
    with pytest.raises(ConfigError):
        ExperimentConfig().override(["model.dropout=0.1"]).layer_dims(10)
    with pytest.raises(ConfigError):
        ExperimentConfig().override(["fl.clients=0-1"]).clients()
    with pytest.raises(ConfigError):
        ExperimentConfig().override(["rounds"])


def test_default_views_match_reference_setup():
    cfg = ExperimentConfig()
    assert cfg.layer_dims(248) == network.REFERENCE_DIMS
    t = cfg.train(1000)
    assert (t.learning_rate, t.batch_size, t.epochs) == (0.0005, 32, 1000)
    f = cfg.fl()
    assert (f.rounds, f.local_epochs) == (100, 10)


def test_load_config_missing(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.txt")


# --- CLI ---------------------------------------------------------------------------------------

def _cfg(src, **extra):
    cfg = ExperimentConfig().override([f"data.train={src / 'trainingData.csv'}",
                                       f"data.validation={src / 'validationData.csv'}"])
    return cfg.override([f"{k.replace('__', '.')}={v}" for k, v in extra.items()])


@pytest.fixture(scope="module")
def archive(synthetic_small, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "processed"
    cli.cmd_preprocess(_cfg(synthetic_small), out, log=lambda *_: None)
    return out


def test_preprocess_writes_archive(archive, small_processed):
    train = dataset.load_processed(archive / "train")
    assert train.features.tobytes() == small_processed[0].features.tobytes()
    shards = json.loads((archive / "shards.json").read_text())
    assert len(shards) == 12 and sum(s["rows"] for s in shards) == len(train)
    assert (archive / "config.txt").is_file()


def test_preprocess_rerun_is_bit_identical(archive, synthetic_small, tmp_path):
    again = cli.cmd_preprocess(_cfg(synthetic_small), tmp_path / "p", log=lambda *_: None)
    for part in ("train", "validation"):
        for name in ("features.f64", "targets.f64", "labels.i64", "manifest.json"):
            assert (again / part / name).read_bytes() == (archive / part / name).read_bytes()


def test_main_missing_input_exit_2(tmp_path, capsys):
    code = cli.main(["preprocess", "--set", f"data.train={tmp_path / 'x.csv'}", "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_INPUT
    assert "x.csv" in capsys.readouterr().err


def test_main_config_error_exit_4(tmp_path):
    assert cli.main(["config", "--set", "bogus=1"]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--mode", "cl", "--set", "train.learning_rate=-1",
                     "--archive", str(tmp_path)]) in (cli.EXIT_CONFIG, cli.EXIT_INPUT)


def test_main_config_prints_defaults(capsys):
    assert cli.main(["config"]) == 0
    assert parse_config(capsys.readouterr().out).values == ExperimentConfig().values


def test_run_missing_archive_exit_2(tmp_path):
    assert cli.main(["run", "--mode", "knn", "--archive", str(tmp_path / "none")]) == cli.EXIT_INPUT


def test_run_cl_small(archive, tmp_path):
    run = cli.cmd_run(_cfg(archive, cl__epochs=2), "cl", archive, tmp_path / "cl", log=lambda *_: None)
    rep = json.loads((run / "report.json").read_text())
    assert rep["model"] == "CL" and rep["total_epochs"] == 2
    assert rep["val_mde_m"] > 0 and rep["train_mde_m"] > 0
    assert len((run / "epochs.jsonl").read_text().splitlines()) == 2
    params = network.load_checkpoint(run / "model.hflw")
    train = dataset.load_processed(archive / "train")
    pred = network.predict(params, train.features) + train.target_offset
    assert metrics.mean_distance_error(pred, train.coordinates) == pytest.approx(rep["train_mde_m"], rel=1e-12)


def test_run_cl_zero_epochs_is_init(archive, tmp_path):
    cfg = _cfg(archive, cl__epochs=0, run__seed=4)
    run = cli.cmd_run(cfg, "cl", archive, tmp_path / "cl0", log=lambda *_: None)
    train = dataset.load_processed(archive / "train")
    init = network.init_params(4, cfg.layer_dims(train.n_features))
    assert network.load_checkpoint(run / "model.hflw").tobytes() == init.tobytes()


def test_run_fl_small(archive, tmp_path):
    cfg = _cfg(archive, fl__rounds=2, fl__local_epochs=1)
    run = cli.cmd_run(cfg, "fl", archive, tmp_path / "fl", log=lambda *_: None)
    rep = json.loads((run / "report.json").read_text())
    assert rep["rounds"] == 2 and rep["total_local_epochs"] == 2 * 12
    lines = (run / "rounds.jsonl").read_text().splitlines()
    assert [json.loads(x)["round"] for x in lines] == [1, 2]
    with (run / "curves.csv").open() as fh:
        rows = metrics.read_curves_csv(fh)
    assert len([r for r in rows if r[0] == "global_val_mde"]) == 2


def test_run_fl_client_subset(archive, tmp_path):
    cfg = _cfg(archive, fl__rounds=1, fl__local_epochs=1, fl__clients="0:0,1:1")
    rep = json.loads((cli.cmd_run(cfg, "fl", archive, tmp_path / "s", log=lambda *_: None) / "report.json").read_text())
    assert rep["clients"] == ["B0F0", "B1F1"]


def test_run_knn_self_is_zero(archive, tmp_path):
    cfg = _cfg(archive, knn__k=1, knn__validation="train")
    rep = json.loads((cli.cmd_run(cfg, "knn", archive, tmp_path / "k", log=lambda *_: None) / "report.json").read_text())
    assert rep["val_mde_m"] == 0.0


def test_run_knn_raw_rssi_differs(archive, tmp_path):
    a = cli.cmd_run(_cfg(archive), "knn", archive, tmp_path / "a", log=lambda *_: None)
    b = cli.cmd_run(_cfg(archive, knn__raw_rssi="true"), "knn", archive, tmp_path / "b", log=lambda *_: None)
    ra, rb = (json.loads((d / "report.json").read_text()) for d in (a, b))
    assert set(ra["knn"]["sweep"]) == {"1", "3", "5", "7", "11"}
    assert ra["val_mde_m"] > 0 and rb["val_mde_m"] > 0


def _fake_run(path, model, train, val, epochs=None):
    path.mkdir()
    (path / "report.json").write_text(json.dumps({"model": model, "seed": 0, "total_epochs": epochs,
                                                  "train_mde_m": train, "val_mde_m": val}))
    return path


def test_report_gap(tmp_path):
    fl = _fake_run(tmp_path / "fl", "FL", 7.0, 10.86, 1000)
    cl = _fake_run(tmp_path / "cl", "CL", 7.0, 10.81, 1000)
    table, text = cli.cmd_report([fl, cl])
    assert table["fl_vs_cl_gap_pct"]["validation"] == pytest.approx(0.4625, abs=1e-3)
    assert table["fl_vs_cl_gap_pct"]["train"] == 0.0
    assert "FL vs CL gap" in text


def test_report_single_run(tmp_path):
    table, text = cli.cmd_report([_fake_run(tmp_path / "k", "KNN", None, 9.5)])
    assert len(table["models"]) == 1 and "fl_vs_cl_gap_pct" not in table
    assert "9.50" in text


def test_report_malformed(tmp_path):
    (tmp_path / "bad").mkdir()
    assert cli.main(["report", str(tmp_path / "bad")]) == cli.EXIT_INPUT
    (tmp_path / "bad" / "report.json").write_text("{}")
    assert cli.main(["report", str(tmp_path / "bad")]) == cli.EXIT_INPUT


def test_output_root_env(archive, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    run = cli.cmd_run(_cfg(archive), "knn", archive, log=lambda *_: None)
    assert run.parent == tmp_path / "root"


def test_make_synthetic(tmp_path):
    assert cli.main(["make-synthetic", "--out", str(tmp_path), "--n-train", "50", "--n-val", "10"]) == 0
    fps = dataset.load_fingerprints(tmp_path / "trainingData.csv")
    assert len(fps) == 50 and fps.rssi.shape[1] == 520
    assert np.isin(np.unique(fps.building), [0, 1, 2]).all()


def test_literal_adam_flag_smoke(archive, tmp_path):
    code = cli.main(["run", "--mode", "cl", "--literal-adam", "--archive", str(archive),
                     "--run-dir", str(tmp_path / "lit"), "--set", "cl.epochs=1"])
    assert code == 0
    rep = json.loads((tmp_path / "lit" / "report.json").read_text())
    assert rep["adam_betas"] == list(network.LITERAL_ADAM_BETAS)
    assert np.isfinite(rep["val_mde_m"])
