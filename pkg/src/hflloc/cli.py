"""Command-line entry point: ``hflloc preprocess | run | report``."""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import time
from pathlib import Path

from . import baselines, dataset, federation, metrics, network
from .config import ConfigError, ExperimentConfig, emit_config, load_config

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "HFLLOC_OUTPUT_ROOT"


class InputError(Exception):
    pass


def _output_root(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or cfg["run.output_dir"])


def _single_threaded(enabled: bool):
    if not enabled:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.override(args.set)
    if getattr(args, "literal_adam", False):
        cfg.set("train.adam_beta1", network.LITERAL_ADAM_BETAS[0])
        cfg.set("train.adam_beta2", network.LITERAL_ADAM_BETAS[1])
    return cfg


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(cfg: ExperimentConfig, out_dir=None, log=print) -> Path:
    """Run the dataset pipeline and write the processed archive."""
    pcfg = cfg.preprocess()
    paths = {name: Path(cfg[f"data.{name}"]) for name in ("train", "validation")}
    for p in paths.values():
        if not p.is_file():
            raise InputError(f"input file not found: {p}")
    out = Path(out_dir) if out_dir else _output_root(cfg) / "processed"

    t0 = time.perf_counter()
    train_fp = dataset.load_fingerprints(paths["train"])
    val_fp = dataset.load_fingerprints(paths["validation"])
    mask = dataset.derive_column_mask(train_fp, pcfg)
    train = dataset.preprocess(train_fp, mask, None, pcfg)
    val = dataset.preprocess(val_fp, mask, train.target_offset, pcfg)
    shards = dataset.partition_by_floor(train)

    dataset.save_processed(train, out / "train", pcfg, {"source": paths["train"].name},
                           raw=dataset.raw_features(train_fp, mask, pcfg))
    dataset.save_processed(val, out / "validation", pcfg, {"source": paths["validation"].name},
                           raw=dataset.raw_features(val_fp, mask, pcfg))
    distribution = [
        {"building": s.client_id[0], "floor": s.client_id[1], "rows": s.size,
         "share": round(s.size / len(train), 6)}
        for s in shards
    ]
    (out / "shards.json").write_text(json.dumps(distribution, indent=2) + "\n")
    (out / "config.txt").write_text(emit_config(cfg))

    log(f"columns: {mask.n_source_columns} -> {mask.n_detected_columns} -> {len(mask)}")
    log(f"rows: train {len(train)}, validation {len(val)}")
    log(f"shards: {len(shards)}")
    for s in shards:
        log(f"  B{s.client_id[0]} F{s.client_id[1]}: {s.size}")
    log(f"archive written to {out} ({time.perf_counter() - t0:.1f} s)")
    return out


# ---------------------------------------------------------------------------
# run


def _load_archive(archive: Path):
    for part in ("train", "validation"):
        if not (archive / part / "manifest.json").is_file():
            raise InputError(f"no processed archive at {archive} (missing {part}/manifest.json)")
    return dataset.load_processed(archive / "train"), dataset.load_processed(archive / "validation")


def _mde_report(params, data):
    pred = network.predict(params, data.features) + data.target_offset
    return metrics.evaluate(pred, data.coordinates)


def _new_run_dir(cfg: ExperimentConfig, mode: str) -> Path:
    root = _output_root(cfg)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = root / f"{mode}-seed{cfg['run.seed']}-{stamp}"
    k = 1
    while run_dir.exists():
        k += 1
        run_dir = root / f"{mode}-seed{cfg['run.seed']}-{stamp}-{k}"
    return run_dir


def cmd_run(cfg: ExperimentConfig, mode: str, archive=None, run_dir=None, log=print) -> Path:
    """Train/evaluate one pipeline and write a self-describing run directory."""
    archive = Path(archive) if archive else _output_root(cfg) / "processed"
    train, val = _load_archive(archive)
    run_dir = Path(run_dir) if run_dir else _new_run_dir(cfg, mode)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(emit_config(cfg))
    seed = cfg["run.seed"]
    report = {
        "mode": mode,
        "model": mode.upper(),
        "seed": seed,
        "archive": str(archive),
        "adam_betas": [cfg["train.adam_beta1"], cfg["train.adam_beta2"]],
        "note": metrics.DELTA_NOTE,
    }

    t0 = time.perf_counter()
    with _single_threaded(cfg["run.deterministic"]):
        if mode == "knn":
            kcfg = cfg.knn()
            use_train = cfg["knn.validation"] == "train"
            target = train if use_train else val
            tf = vf = None
            if kcfg.raw_rssi:
                tf = dataset.load_raw_rssi(archive / "train")
                vf = tf if use_train else dataset.load_raw_rssi(archive / "validation")
            sweep = baselines.knn_sweep(train, target, sorted({*cfg["knn.sweep"], kcfg.k}), tf, vf)
            report.update(total_epochs=None, train_mde_m=None, val_mde_m=sweep[kcfg.k],
                          knn={"k": kcfg.k, "val_mde_m": sweep[kcfg.k],
                               "sweep": {str(k): v for k, v in sweep.items()},
                               "best_k": min(sweep, key=sweep.get),
                               "best_val_mde_m": min(sweep.values())})
            rows = [("knn_val_mde", k, v) for k, v in sweep.items()]
        else:
            init = network.init_params(seed, cfg.layer_dims(train.n_features), cfg["model.dropout"])
            if mode == "cl":
                tcfg = cfg.train(cfg["cl.epochs"])
                with (run_dir / "epochs.jsonl").open("w") as fh:
                    def on_epoch(epoch, p):
                        v = _mde_report(p, val).mde_m
                        fh.write(json.dumps({"epoch": epoch, "val_mde_m": v}) + "\n")
                        fh.flush()
                        return v
                    params, curve = network.train_epochs(train, init, tcfg, network.make_streams(seed, 0),
                                                         on_epoch=on_epoch)
                rows = metrics.build_curves(curve)
                report["total_epochs"] = tcfg.epochs
            elif mode == "fl":
                fl_cfg = cfg.fl()
                shards = dataset.partition_by_floor(train)
                topology = federation.FederationTopology.from_shards(shards, cfg.clients())
                with (run_dir / "rounds.jsonl").open("w") as fh:
                    def on_round(rec, p):
                        federation.write_round_log([rec], fh)
                        fh.flush()
                        log(f"round {rec.round}: val MDE {rec.global_val_mde:.2f} m")
                    params, records = federation.run_federated(topology, shards, fl_cfg, val, init, on_round)
                rows = metrics.build_curves(records)
                report["total_epochs"] = len(records) * fl_cfg.local_epochs
                report["rounds"] = len(records)
                report["total_local_epochs"] = sum(r.local_epochs for r in records)
                report["clients"] = ["B{}F{}".format(*c) for c in topology.clients]
            else:
                raise ConfigError(f"unknown mode {mode!r}")
            network.save_checkpoint(params, run_dir / "model.hflw")
            tr, va = _mde_report(params, train), _mde_report(params, val)
            report.update(train_mde_m=tr.mde_m, val_mde_m=va.mde_m,
                          train=tr.to_json(), validation=va.to_json())
    report["duration_s"] = round(time.perf_counter() - t0, 3)
    with (run_dir / "curves.csv").open("w", newline="") as fh:
        metrics.write_curves_csv(rows, fh)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    log(f"{mode}: val MDE {report['val_mde_m']:.3f} m -> {run_dir}")
    return run_dir


# ---------------------------------------------------------------------------
# report


def _gap(fl, cl):
    if fl is None or cl is None or cl == 0:
        return None
    return (fl - cl) / cl * 100.0


def cmd_report(run_dirs) -> tuple[dict, str]:
    """Merge run reports into a benchmark table (JSON and text)."""
    if not run_dirs:
        raise InputError("report needs at least one run directory")
    rows = []
    for d in run_dirs:
        path = Path(d) / "report.json"
        if not path.is_file():
            raise InputError(f"malformed run directory {d}: no report.json")
        try:
            rep = json.loads(path.read_text())
            row = {"run": str(d), "model": rep["model"], "seed": rep["seed"],
                   "total_epochs": rep.get("total_epochs"), "train_mde_m": rep.get("train_mde_m"),
                   "val_mde_m": rep["val_mde_m"]}
        except (ValueError, KeyError) as e:
            raise InputError(f"malformed run directory {d}: {e}") from None
        if "knn" in rep:
            row["k"] = rep["knn"]["k"]
        rows.append(row)
    table = {"models": rows, "note": metrics.DELTA_NOTE}
    fl = next((r for r in rows if r["model"] == "FL"), None)
    cl = next((r for r in rows if r["model"] == "CL"), None)
    if fl and cl:
        table["fl_vs_cl_gap_pct"] = {
            "train": _gap(fl["train_mde_m"], cl["train_mde_m"]),
            "validation": _gap(fl["val_mde_m"], cl["val_mde_m"]),
        }

    def fmt(v):
        return "-" if v is None else (f"{v:.2f}" if isinstance(v, float) else str(v))

    lines = [f"{'Model':<6} {'Total Epochs':>12} {'Training MDE (m)':>17} {'Validation MDE (m)':>19}"]
    for r in rows:
        name = r["model"] + (f" (k={r['k']})" if "k" in r else "")
        lines.append(f"{name:<6} {fmt(r['total_epochs']):>12} {fmt(r['train_mde_m']):>17} {fmt(r['val_mde_m']):>19}")
    if "fl_vs_cl_gap_pct" in table:
        g = table["fl_vs_cl_gap_pct"]
        lines.append(f"FL vs CL gap: training {fmt(g['train'])}%, validation {fmt(g['validation'])}%")
    return table, "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hflloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("preprocess", help="build the processed-dataset archive")
    common(p)
    p.add_argument("--out", help="archive directory (default: <output root>/processed)")

    p = sub.add_parser("run", help="train and evaluate FL, CL or KNN")
    common(p)
    p.add_argument("--mode", choices=("fl", "cl", "knn"), required=True)
    p.add_argument("--archive", help="processed archive (default: <output root>/processed)")
    p.add_argument("--run-dir", help="output directory for this run")
    p.add_argument("--literal-adam", action="store_true", help="use Adam decay rates (0.1, 0.99) instead of (0.9, 0.999)")

    p = sub.add_parser("report", help="combine run directories into a benchmark table")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", help="write the combined table JSON here")

    p = sub.add_parser("config", help="print the default configuration")
    common(p)

    p = sub.add_parser("make-synthetic", help="write synthetic UJIIndoorLoc-format CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=19937)
    p.add_argument("--n-val", type=int, default=1111)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "preprocess":
            cmd_preprocess(_load_cfg(args), args.out)
        elif args.command == "run":
            cmd_run(_load_cfg(args), args.mode, args.archive, args.run_dir)
        elif args.command == "report":
            table, text = cmd_report(args.runs)
            sys.stdout.write(text)
            if args.out:
                Path(args.out).write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
        elif args.command == "config":
            sys.stdout.write(emit_config(_load_cfg(args)))
        elif args.command == "make-synthetic":
            from .synthetic import make_uji_like, write_uji_csv

            tr, va = make_uji_like(args.n_train, args.n_val, seed=args.seed)
            out = Path(args.out)
            write_uji_csv(tr, out / "trainingData.csv")
            write_uji_csv(va, out / "validationData.csv")
            print(f"wrote {out / 'trainingData.csv'} and {out / 'validationData.csv'}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except network.NumericalError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, FileNotFoundError, dataset.DatasetError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
