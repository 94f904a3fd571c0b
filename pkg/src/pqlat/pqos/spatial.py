"""Spatial one-bin-ahead forecasting: GraphSAGE over the cell graph versus a per-cell DNN.

Both models see the features and label of every cell at bin ``t`` and
predict each cell's label at ``t + 1``. The DNN looks at one cell at a time;
the graph model also aggregates neighbouring cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from ..exceptions import ParameterError, TrainingError
from ..kpidata import BIN_SECONDS, CellGraph, split_by_days
from ..neuro import MLP, Adam, Dense, Module, SageLayer, Tensor, mean_aggregator, mse, no_grad
from ..stochastics import make_rng
from .forecasting import INPUT_COLUMNS, ForecastReport, _safe_r2


class GraphSage(Module):
    """Three mean-aggregation SAGE layers and a linear per-node head."""

    def __init__(self, n_in, hidden=32, n_layers=3, rng=None):
        rng = rng or np.random.default_rng(0)
        widths = (n_in,) + (hidden,) * n_layers
        self.layers = [SageLayer(a, b, "tanh", rng) for a, b in zip(widths[:-1], widths[1:])]
        self.head = Dense(hidden, 1, None, rng)

    def __call__(self, h, agg):
        for layer in self.layers:
            h = layer(h, agg)
        return self.head(h)[..., 0]


def matched_mlp_widths(n_in, target_params, n_hidden_layers=3):
    """Hidden width whose MLP parameter count is closest to ``target_params``."""
    def count(w):
        widths = (n_in,) + (w,) * n_hidden_layers + (1,)
        return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))

    best = min(range(1, 513), key=lambda w: abs(count(w) - target_params))
    return (n_in,) + (best,) * n_hidden_layers + (1,)


def snapshot_tensor(records: pd.DataFrame, cell_ids):
    """Pivot records to (bins, cells, F); return the array and the sorted bin timestamps."""
    missing = set(records["cell_id"].unique()) - set(cell_ids)
    if missing:
        raise ParameterError(f"graph does not cover cells {sorted(missing)}")
    ts = np.sort(records["timestamp"].unique())
    idx = records.set_index(["timestamp", "cell_id"])[INPUT_COLUMNS]
    full = pd.MultiIndex.from_product([ts, list(cell_ids)], names=["timestamp", "cell_id"])
    arr = idx.reindex(full).to_numpy(dtype=float).reshape(len(ts), len(cell_ids), len(INPUT_COLUMNS))
    return arr, ts


def snapshot_pairs(records: pd.DataFrame, cell_ids):
    """Inputs at ``t`` and labels at ``t + 1`` for consecutive complete bins."""
    arr, ts = snapshot_tensor(records, cell_ids)
    ok = ~np.isnan(arr).any(axis=(1, 2))
    keep = (np.diff(ts) == BIN_SECONDS) & ok[:-1] & ok[1:]
    return arr[:-1][keep], arr[1:, :, -1][keep], ts[1:][keep]


def _fit(net, forward, x, y, epochs, batch_size, lr, rng, name):
    opt = Adam(net.parameters(), lr=lr, clip_norm=5.0)
    curve = []
    n = len(y)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss = mse(forward(Tensor(x[idx])), y[idx])
            if not np.isfinite(loss.item()):
                raise TrainingError(f"{name} loss became {loss.item()} at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        curve.append(total / n)
    return curve


@dataclass
class SpatialResult:
    sage: ForecastReport
    dnn: ForecastReport
    sage_model: GraphSage
    dnn_model: MLP
    sage_params: int
    dnn_params: int

    def metrics(self) -> dict:
        return {"sage_r2": self.sage.r2, "dnn_r2": self.dnn.r2,
                "sage_params": self.sage_params, "dnn_params": self.dnn_params}


def train_spatial_models(dataset: pd.DataFrame, graph: CellGraph, config: dict = None) -> SpatialResult:
    """Train GraphSAGE and a parameter-matched DNN on the same day split and seed.

    ``config`` keys (defaults): ``train_days`` 20, ``test_days`` 10,
    ``hidden`` 32, ``epochs`` 20, ``batch_size`` 32 (snapshots), ``lr`` 1e-3,
    ``seed`` 0.
    """
    cfg = {"train_days": 20, "test_days": 10, "hidden": 32, "epochs": 20, "batch_size": 32,
           "lr": 1e-3, "seed": 0}
    unknown = set(config or {}) - set(cfg)
    if unknown:
        raise ParameterError(f"unknown spatial config keys {sorted(unknown)}")
    cfg.update(config or {})
    train, test = split_by_days(dataset, cfg["train_days"], cfg["test_days"])
    ids = graph.cell_ids
    xtr, ytr, _ = snapshot_pairs(train, ids)
    xte, yte, tte = snapshot_pairs(test, ids)
    n_f = xtr.shape[2]

    scaler = StandardScaler().fit(xtr.reshape(-1, n_f))
    y_mean, y_std = float(ytr.mean()), float(ytr.std()) or 1.0

    def sx(a):
        return scaler.transform(a.reshape(-1, n_f)).reshape(a.shape)

    xtr_s, xte_s = sx(xtr), sx(xte)
    ytr_s = (ytr - y_mean) / y_std
    agg = mean_aggregator(graph.adjacency())

    seed = cfg["seed"]
    sage = GraphSage(n_f, cfg["hidden"], rng=make_rng(seed, 1))
    _fit(sage, lambda x: sage(x, agg), xtr_s, ytr_s, cfg["epochs"], cfg["batch_size"], cfg["lr"],
         make_rng(seed, 0), "graphsage")

    dnn = MLP(matched_mlp_widths(n_f, sage.n_parameters()), rng=make_rng(seed, 1))
    # per-cell rows; same number of optimizer steps per epoch as the graph model
    n_c = len(ids)
    _fit(dnn, lambda x: dnn(x)[..., 0], xtr_s.reshape(-1, n_f), ytr_s.reshape(-1), cfg["epochs"],
         cfg["batch_size"] * n_c, cfg["lr"], make_rng(seed, 0), "dnn")

    with no_grad():
        p_sage = sage(Tensor(xte_s), agg).data * y_std + y_mean
        p_dnn = dnn(Tensor(xte_s.reshape(-1, n_f))).data[:, 0].reshape(yte.shape) * y_std + y_mean

    def frame(pred):
        return pd.DataFrame({"timestamp": np.repeat(tte, n_c), "cell_id": np.tile(np.array(ids, dtype=object), len(tte)),
                             "prediction": pred.ravel(), "truth": yte.ravel()})

    r_sage = float(_safe_r2(p_sage.ravel(), yte.ravel()))
    r_dnn = float(_safe_r2(p_dnn.ravel(), yte.ravel()))
    sage_rep = ForecastReport(r_sage, r_dnn, "graphsage", "dnn", 1, predictions=frame(p_sage))
    dnn_rep = ForecastReport(r_dnn, r_sage, "dnn", "graphsage", 1, predictions=frame(p_dnn))
    return SpatialResult(sage_rep, dnn_rep, sage, dnn, sage.n_parameters(), dnn.n_parameters())
