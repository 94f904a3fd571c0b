"""Small CLI configurations that finish in seconds."""
SIM = {"duration": 6000.0, "warmup": 200.0}
DATA = {"n_days": 3, "n_cells": 6}

SMALL = {
    "validate-model": {"sim": dict(SIM, duration=20000.0), "ks_bound": 1.0},
    "simulate": {"sim": dict(SIM, bler=0.1, harq_delay=0.5), "pdelay_window_ms": 500.0},
    "gen-kpi": {"n_days": 2, "n_cells": 5},
    "dists": {"n_points": 201},
    "train:regression": {"data": DATA, "model": {"hidden": [8], "epochs": 2, "n_predict_samples": 8},
                         "bounds": {"min_r2": -1e9, "coverage": [0.0, 1.0]}},
    "train:anomaly": {"data": dict(DATA, n_days=5, profile_overrides={"anomaly_windows": [
                          {"start": 3 * 86400 + 68400, "end": 3 * 86400 + 84600, "surge": 2.5}]}),
                      "train_days": 3, "test_start_day": 3, "test_days": 2,
                      "model": {"epochs": 2}, "bounds": {"min_precision": 0.0, "min_recall": 0.0}},
    "train:lstm": {"data": DATA, "train_days": 2, "test_days": 1, "lookback": 3,
                   "model": {"hidden": 4, "epochs": 1}, "bounds": {"min_margin": -1e9}},
    "train:spatial": {"data": DATA, "train_days": 2, "test_days": 1, "model": {"hidden": 4, "epochs": 1},
                      "bounds": {"min_gap": -1e9}},
}


def argv(key, config_path, out, seed=3):
    cmd = ["train", key.split(":")[1]] if key.startswith("train:") else [key]
    return cmd + [str(config_path), "--seed", str(seed), "--out", str(out)]
