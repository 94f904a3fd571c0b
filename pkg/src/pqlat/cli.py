"""Command-line entry point.

Every run is a JSON config document (optional; defaults apply) plus the
``--seed`` and ``--out`` overrides. Seed precedence: ``--seed``, then the
config's ``seed``, then ``$PQOS_SEED``, then 0.

Exit codes: 0 success, 1 acceptance bound missed, 2 input/config error,
3 training failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .exceptions import ParameterError, RecordValidationError, SchemaError, TrainingError

EXIT_OK, EXIT_BOUND, EXIT_INPUT, EXIT_TRAIN = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


_SIM = {"arrival_rate": 0.5, "service_rate": 1.0, "bler": 0.0, "harq_delay": 0.0,
        "retx_priority": True, "n_max": 8, "duration": 200000.0, "warmup": 1000.0}

_DATA = {"dataset": None, "labels": None, "nodes": None, "edges": None,
         "profile": "dense_urban", "n_days": 30, "n_cells": 20, "profile_overrides": {}}

SCHEMAS = {
    "validate-model": {
        "seed": None,
        "sim": dict(_SIM, arrival_rate=0.75, bler=0.1, harq_delay=0.5),
        "order": 4, "ks_bound": 0.05, "n_bins": 60,
    },
    "simulate": {
        "seed": None, "sim": dict(_SIM), "pdelay_window_ms": 1000.0, "resolution_ms": 0.1,
        "write_traces": True,
    },
    "gen-kpi": {
        "seed": None, "profile": "dense_urban", "n_days": 30, "n_cells": 20,
        "label_backend": "analytic", "profile_overrides": {},
    },
    "dists": {
        "seed": None,
        "params": {"lambda1": 1.0, "lambda2": 2.0, "harq_delay": 0.0, "bler": 0.1, "n_max": 8, "order": 4},
        "t_max": None, "n_points": 2001, "quantiles": [0.5, 0.9, 0.95, 0.99, 0.999],
    },
    "train:regression": {
        "seed": None, "data": dict(_DATA), "test_fraction": 0.2,
        "model": {"hidden": [32, 32], "n_stages": 4, "shifted": True, "prior_sigma": 1.0,
                  "all_bayesian": False, "mc_kl": False, "kl_weight": None, "n_mc_samples": 1,
                  "epochs": 10, "batch_size": 256, "lr": 3e-3, "n_predict_samples": 64,
                  "softness": 0.02},
        "bounds": {"min_r2": 0.70, "coverage": [0.90, 0.98]},
    },
    "train:anomaly": {
        "seed": None, "data": dict(_DATA, profile="event"),
        "train_days": 14, "test_start_day": 14, "test_days": 4, "cost": [1.0, 1.0],
        "model": {"hidden": [16], "bottleneck": 3, "epochs": 30, "batch_size": 128, "lr": 3e-3},
        "bounds": {"min_precision": 1.0, "min_recall": 0.9},
    },
    "train:lstm": {
        "seed": None, "data": dict(_DATA, profile="vehicular"), "train_days": 20, "test_days": 10,
        "lookback": 8,
        "model": {"hidden": 32, "epochs": 10, "batch_size": 256, "lr": 5e-3},
        "bounds": {"min_margin": 0.05},
    },
    "train:spatial": {
        "seed": None, "data": dict(_DATA), "train_days": 20, "test_days": 10,
        "model": {"hidden": 32, "epochs": 20, "batch_size": 32, "lr": 1e-3},
        "bounds": {"min_gap": 0.0},
    },
}

# keys whose value is a free-form mapping rather than a nested schema
_OPEN_KEYS = {"profile_overrides"}


def merge_config(schema: dict, doc: dict, path: str = "") -> dict:
    """Overlay ``doc`` on the defaults in ``schema``; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected a JSON object")
    out = copy.deepcopy(schema)
    for key, val in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(schema[key], dict) and key not in _OPEN_KEYS:
            out[key] = merge_config(schema[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path, schema) -> dict:
    if path is None:
        return copy.deepcopy(schema)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return merge_config(schema, doc)


def resolve_seed(cli_seed, config_seed) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get("PQOS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"PQOS_SEED must be an integer, got {env!r}") from None
    return 0


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_frame(path, frame):
    _write_rows(path, list(frame.columns), frame.itertuples(index=False, name=None))


# -- commands ------------------------------------------------------------------


def _sim_config(cfg, seed):
    from .ransim import SimConfig

    return SimConfig(**cfg["sim"], seed=seed)


def cmd_validate_model(cfg, seed, out: Path) -> int:
    from .latency_model import analytic_latency
    from .ransim import empirical_vs_analytic, implied_latency_params, run_des, write_histogram_csv

    sim = _sim_config(cfg, seed)
    params = implied_latency_params(sim, cfg["order"])
    dist = analytic_latency(params)
    res = empirical_vs_analytic(run_des(sim), dist, n_bins=cfg["n_bins"])
    write_histogram_csv(res["histogram"], out / "fig3.csv")
    passed = res["ks"] <= cfg["ks_bound"]
    report = {
        "ks": res["ks"], "ks_bound": cfg["ks_bound"], "wasserstein1": res["wasserstein1"],
        "empirical_mean": res["empirical_mean"], "analytic_mean": float(dist.mean()), "n": res["n"],
        "model": {"lambda1": params.lambda1, "lambda2": params.lambda2, "harq_delay": params.harq_delay,
                  "bler": params.bler, "n_max": params.n_max, "order": params.order},
        "seed": seed, "passed": bool(passed),
    }
    _dump_json(report, out / "validate.json")
    print(f"ks={res['ks']:.4f} (bound {cfg['ks_bound']}), n={res['n']}, "
          f"mean empirical={res['empirical_mean']:.4f} analytic={dist.mean():.4f}")
    return EXIT_OK if passed else EXIT_BOUND


def cmd_simulate(cfg, seed, out: Path) -> int:
    from .ransim import latencies, pdelay_windows, run_des, write_traces_csv

    sim = _sim_config(cfg, seed)
    traces = run_des(sim)
    if cfg["write_traces"]:
        write_traces_csv(traces, out / "traces.csv")
    series = pdelay_windows(traces, cfg["pdelay_window_ms"], cfg["resolution_ms"])
    _write_rows(out / "pdelay.csv", ["window_start_ms", "p_delay_ms", "sdu_count"],
                zip(series.window_start.tolist(), series.p_delay.tolist(), series.sdu_count.tolist()))
    lat = latencies(traces)
    summary = {"n": int(lat.size), "mean_latency_ms": float(lat.mean()) if lat.size else None,
               "offered_load": sim.offered_load, "seed": seed}
    _dump_json(summary, out / "summary.json")
    print(f"{lat.size} packets, mean latency {summary['mean_latency_ms']}")
    return EXIT_OK


def _profile(kind, seed, overrides):
    from .kpidata import AnomalyWindow, default_profile

    ov = dict(overrides or {})
    if "anomaly_windows" in ov:
        ov["anomaly_windows"] = tuple(AnomalyWindow(**w) for w in ov["anomaly_windows"])
    if "noise" in ov and ov["noise"] is not None:
        ov["noise"] = dict(ov["noise"])
    if "diurnal" in ov and ov["diurnal"] is not None:
        ov["diurnal"] = tuple(ov["diurnal"])
    if kind not in ("dense_urban", "vehicular", "event"):
        raise ConfigError(f"profile must be dense_urban, vehicular or event, got {kind!r}")
    try:
        return default_profile(kind, seed, **ov)
    except TypeError as exc:
        raise ConfigError(f"profile_overrides: {exc}") from None


def cmd_gen_kpi(cfg, seed, out: Path) -> int:
    from .kpidata import anomaly_labels, default_graph, generate_dataset, save_csv

    prof = _profile(cfg["profile"], seed, cfg["profile_overrides"])
    graph = default_graph(int(cfg["n_cells"]), seed)
    df = generate_dataset(prof, int(cfg["n_days"]), graph, cfg["label_backend"])
    save_csv(df, out / "kpi.csv")
    graph.save(out / "cells.csv", out / "edges.csv")
    if prof.anomaly_windows:
        _write_frame(out / "labels.csv", anomaly_labels(df, prof))
    print(f"{len(df)} records written to {out / 'kpi.csv'}")
    return EXIT_OK


def cmd_correlate(path, out: Path) -> int:
    from .kpidata import correlation_table, load_csv, sign_check

    df = load_csv(path)
    rows = correlation_table(df)
    print(f"{'feature':<40}{'r':>9}{'reference':>11}  sign-stable")
    for r in rows:
        print(f"{r.feature:<40}{r.r:>9.3f}{r.reference:>11.2f}  {'yes' if r.sign_stable else 'no'}")
    ok = sign_check(rows)
    print(f"sign pattern {'matches' if ok else 'does NOT match'} on the sign-stable rows")
    _write_rows(out / "correlation.csv", ["feature", "column", "r", "reference", "sign_stable"],
                [(r.feature, r.column, float(r.r), float(r.reference), int(r.sign_stable)) for r in rows])
    return EXIT_OK if ok else EXIT_BOUND


def cmd_dists(cfg, seed, out: Path) -> int:
    from .latency_model import LatencyModelParams, analytic_latency

    params = LatencyModelParams(**cfg["params"])
    dist = analytic_latency(params)
    t_max = cfg["t_max"] if cfg["t_max"] is not None else float(dist.quantile(0.99999))
    n = int(cfg["n_points"])
    if n < 2 or not t_max > 0:
        raise ConfigError("need n_points >= 2 and t_max > 0")
    t = np.linspace(0.0, t_max, n)
    _write_rows(out / "dists.csv", ["t_ms", "pdf", "cdf"],
                zip(t.tolist(), np.asarray(dist.pdf(t), dtype=float).tolist(),
                    np.asarray(dist.cdf(t), dtype=float).tolist()))
    qs = [float(q) for q in cfg["quantiles"]]
    _write_rows(out / "quantiles.csv", ["p", "quantile_ms"], [(q, float(dist.quantile(q))) for q in qs])
    print(f"mean {dist.mean():.6g} ms, {n} grid points up to {t_max:.6g} ms")
    return EXIT_OK


def _load_data(data, seed):
    """Dataset, graph and (when defined) per-row anomaly labels for a train task."""
    from .kpidata import CellGraph, anomaly_labels, default_graph, generate_dataset, load_csv

    if data["dataset"] is not None:
        df = load_csv(data["dataset"])
        if data["nodes"] is not None and data["edges"] is not None:
            graph = CellGraph.load(data["nodes"], data["edges"])
        else:
            graph = None
        labels = None
        if data["labels"] is not None:
            import pandas as pd

            lab = pd.read_csv(data["labels"])
            merged = df[["timestamp", "cell_id"]].merge(lab, on=["timestamp", "cell_id"], how="left")
            labels = merged["is_anomaly"].fillna(0).to_numpy(dtype=np.int64)
        return df, graph, labels
    prof = _profile(data["profile"], seed, data["profile_overrides"])
    graph = default_graph(int(data["n_cells"]), seed)
    df = generate_dataset(prof, int(data["n_days"]), graph)
    labels = anomaly_labels(df, prof)["is_anomaly"].to_numpy() if prof.anomaly_windows else None
    return df, graph, labels


def _train_regression(cfg, seed, out):
    from .kpidata import FEATURE_COLUMNS, LABEL_COLUMN
    from .neuro import save_checkpoint
    from .pqos.regression import record_split, train_probabilistic_regressor

    df, _, _ = _load_data(cfg["data"], seed)
    train, test = record_split(df, cfg["test_fraction"], seed)
    model_cfg = dict(cfg["model"], hidden=tuple(cfg["model"]["hidden"]), random_state=seed)
    model = train_probabilistic_regressor(train, model_cfg)
    rep = model.report(test[FEATURE_COLUMNS].to_numpy(dtype=float), test[LABEL_COLUMN].to_numpy(dtype=float))
    frame = rep.predictions.copy()
    frame.insert(0, "cell_id", test["cell_id"].to_numpy())
    frame.insert(0, "timestamp", test["timestamp"].to_numpy())
    _write_frame(out / "predictions.csv", frame)
    save_checkpoint(model.net_, {"kind": "bayesian_hypoexp_regressor", **model_cfg}, out / "checkpoint.json",
                    {"scaler_mean": model.scaler_.mean_, "scaler_scale": model.scaler_.scale_,
                     "y_scale": model.y_scale_})
    b = cfg["bounds"]
    passed = rep.r2 >= b["min_r2"] and b["coverage"][0] <= rep.ci95_coverage <= b["coverage"][1]
    metrics = dict(rep.metrics(), task="regression", seed=seed, passed=bool(passed))
    print(f"R2={rep.r2:.4f}  mean NLL={rep.mean_nll:.4f}  95% coverage={rep.ci95_coverage:.4f}")
    return metrics, passed


def _train_anomaly(cfg, seed, out):
    import pandas as pd

    from .kpidata import day_index
    from .neuro import save_checkpoint
    from .pqos.anomaly import (best_precision_one_recall, evaluate_detector, fit_anomaly_detector,
                               tune_threshold, write_timeline_csv)

    df, _, labels = _load_data(cfg["data"], seed)
    if labels is None:
        raise ConfigError("anomaly task needs anomaly labels (event profile or data.labels)")
    day = day_index(df)
    tr = day < cfg["train_days"]
    te = (day >= cfg["test_start_day"]) & (day < cfg["test_start_day"] + cfg["test_days"])
    spec = dict(cfg["model"], hidden=tuple(cfg["model"]["hidden"]), random_state=seed)
    det = fit_anomaly_detector(df[tr], spec, labels[tr])
    test = df[te].reset_index(drop=True)
    y = labels[te]
    scores = det.score_samples(test)
    gamma = tune_threshold(scores, y, tuple(cfg["cost"]))
    rep = evaluate_detector(scores, y, gamma)
    write_timeline_csv(out / "timeline.csv", test, rep)
    save_checkpoint(det.net_, {"kind": "autoencoder", **spec}, out / "checkpoint.json",
                    {"scaler_mean": det.scaler_.mean_, "scaler_scale": det.scaler_.scale_,
                     "threshold": gamma})
    best = best_precision_one_recall(scores, y)
    b = cfg["bounds"]
    c = rep.confusion
    passed = (c.precision >= b["min_precision"] and c.recall >= b["min_recall"]) or \
        (b["min_precision"] >= 1.0 and best >= b["min_recall"])
    metrics = dict(rep.metrics(), task="anomaly", recall_at_zero_fp=best, seed=seed, passed=bool(passed))
    print(f"threshold={gamma:.6g}  tp={c.tp} fp={c.fp} fn={c.fn} tn={c.tn}  "
          f"recall at zero false positives={best:.4f}")
    return metrics, passed


def _train_lstm(cfg, seed, out):
    from .kpidata import split_by_days
    from .neuro import save_checkpoint
    from .pqos.forecasting import train_lstm_forecaster

    df, _, _ = _load_data(cfg["data"], seed)
    train, test = split_by_days(df, cfg["train_days"], cfg["test_days"])
    model_cfg = dict(cfg["model"], random_state=seed)
    model, rep = train_lstm_forecaster(train, test, dict(model_cfg, lookback=cfg["lookback"]))
    _write_frame(out / "forecast.csv", rep.predictions)
    save_checkpoint(model.net_, {"kind": "lstm_gaussian", "lookback": cfg["lookback"], **model_cfg},
                    out / "checkpoint.json",
                    {"x_mean": model.x_scaler_.mean_, "x_scale": model.x_scaler_.scale_,
                     "y_mean": model.y_mean_, "y_std": model.y_std_})
    passed = rep.r2 >= rep.baseline_r2 + cfg["bounds"]["min_margin"]
    metrics = dict(rep.metrics(), task="lstm", seed=seed, passed=bool(passed))
    print(f"LSTM R2={rep.r2:.4f}  persistence R2={rep.baseline_r2:.4f}")
    return metrics, passed


def _train_spatial(cfg, seed, out):
    from .kpidata import default_graph
    from .neuro import save_checkpoint
    from .pqos.spatial import train_spatial_models

    df, graph, _ = _load_data(cfg["data"], seed)
    if graph is None:
        graph = default_graph(int(cfg["data"]["n_cells"]), seed)
    res = train_spatial_models(df, graph, dict(cfg["model"], train_days=cfg["train_days"],
                                               test_days=cfg["test_days"], seed=seed))
    _write_frame(out / "sage_predictions.csv", res.sage.predictions)
    _write_frame(out / "dnn_predictions.csv", res.dnn.predictions)
    save_checkpoint(res.sage_model, {"kind": "graphsage", **cfg["model"]}, out / "sage_checkpoint.json")
    save_checkpoint(res.dnn_model, {"kind": "mlp", **cfg["model"]}, out / "dnn_checkpoint.json")
    passed = res.sage.r2 - res.dnn.r2 > cfg["bounds"]["min_gap"]
    metrics = dict(res.metrics(), task="spatial", seed=seed, passed=bool(passed))
    print(f"GraphSAGE R2={res.sage.r2:.4f}  DNN R2={res.dnn.r2:.4f}")
    return metrics, passed


_TRAINERS = {"regression": _train_regression, "anomaly": _train_anomaly, "lstm": _train_lstm,
             "spatial": _train_spatial}


def cmd_train(task, cfg, seed, out: Path) -> int:
    metrics, passed = _TRAINERS[task](cfg, seed, out)
    _dump_json(metrics, out / "report.json")
    return EXIT_OK if passed else EXIT_BOUND


# -- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pqlat", description="5G U-plane latency modeling and predictive QoS.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", nargs="?", help="JSON config document (defaults if omitted)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=".", help="output directory (created if missing)")

    common(sub.add_parser("validate-model", help="simulator vs analytic latency law"))
    common(sub.add_parser("simulate", help="run the downlink simulator"))
    common(sub.add_parser("gen-kpi", help="generate a synthetic KPI dataset"))
    sp = sub.add_parser("correlate", help="feature/label correlation table")
    sp.add_argument("dataset")
    sp.add_argument("--out", default=".")
    sp = sub.add_parser("train", help="train and evaluate a predictive-QoS model")
    sp.add_argument("task", choices=sorted(_TRAINERS))
    common(sp)
    common(sub.add_parser("dists", help="tabulate the analytic latency law"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "correlate":
            return cmd_correlate(args.dataset, out)
        key = f"train:{args.task}" if args.command == "train" else args.command
        cfg = load_config(args.config, SCHEMAS[key])
        seed = resolve_seed(args.seed, cfg["seed"])
        if args.command == "train":
            return cmd_train(args.task, cfg, seed, out)
        handler = {"validate-model": cmd_validate_model, "simulate": cmd_simulate,
                   "gen-kpi": cmd_gen_kpi, "dists": cmd_dists}[args.command]
        return handler(cfg, seed, out)
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (ConfigError, ParameterError, SchemaError, RecordValidationError, TypeError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
