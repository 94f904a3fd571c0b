"""One-bin-ahead latency forecasting: windowing, a probabilistic LSTM and a persistence baseline."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ParameterError, TrainingError
from ..kpidata import BIN_SECONDS, FEATURE_COLUMNS, LABEL_COLUMN, split_by_days
from ..neuro import Adam, Dense, GaussianHead, LSTMCell, Module, Tensor, gaussian_nll, lstm_forward, no_grad
from ..stochastics import make_rng
from .metrics import r2_score

INPUT_COLUMNS = FEATURE_COLUMNS + [LABEL_COLUMN]


@dataclass
class ForecastWindows:
    """Supervised pairs: ``inputs`` (n, W, F), ``targets`` (n,), plus target timestamp and cell."""

    inputs: np.ndarray
    targets: np.ndarray
    timestamps: np.ndarray
    cell_ids: np.ndarray
    lookback: int

    def __len__(self):
        return len(self.targets)

    @property
    def last_label(self) -> np.ndarray:
        return self.inputs[:, -1, -1]


def _segments(ts: np.ndarray):
    # split a sorted timestamp vector at gaps
    breaks = np.flatnonzero(np.diff(ts) != BIN_SECONDS) + 1
    return np.split(np.arange(len(ts)), breaks)


def make_forecast_windows(records: pd.DataFrame, lookback: int, horizon: int = 1) -> ForecastWindows:
    """Sliding windows per cell; a series of length L yields ``L - lookback`` pairs.

    Missing bins split a cell's series into gap-free pieces (with a warning);
    windows never span a gap, and since each call sees one split, never a
    train/test boundary either.
    """
    if lookback < 1:
        raise ParameterError("lookback must be >= 1")
    if horizon != 1:
        raise ParameterError("only one-bin-ahead forecasting (horizon=1) is supported")
    xs, ys, tss, cids = [], [], [], []
    gapped = []
    for cid, grp in records.groupby("cell_id", sort=True):
        grp = grp.sort_values("timestamp")
        ts = grp["timestamp"].to_numpy(dtype=np.int64)
        vals = grp[INPUT_COLUMNS].to_numpy(dtype=float)
        segs = _segments(ts)
        if len(segs) > 1:
            gapped.append(cid)
        for seg in segs:
            if len(seg) < lookback + 1:
                continue
            v = vals[seg]
            win = np.lib.stride_tricks.sliding_window_view(v[:-1], (lookback, v.shape[1]))[:, 0]
            xs.append(win)
            ys.append(v[lookback:, -1])
            tss.append(ts[seg][lookback:])
            cids.append(np.full(len(seg) - lookback, cid, dtype=object))
    if gapped:
        warnings.warn(f"missing bins in cells {gapped}; series split at the gaps", RuntimeWarning)
    if not xs:
        raise ParameterError(f"no series is longer than lookback + 1 = {lookback + 1}")
    return ForecastWindows(np.concatenate(xs), np.concatenate(ys), np.concatenate(tss),
                           np.concatenate(cids), lookback)


class LSTMGaussianNet(Module):
    def __init__(self, n_in, hidden=32, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cell = LSTMCell(n_in, hidden, rng)
        self.out = Dense(hidden, 2, None, rng)
        self.head = GaussianHead()

    def __call__(self, seq):
        return self.head(self.out(lstm_forward(self.cell, seq)))


class LSTMForecaster(RegressorMixin, BaseEstimator):
    """LSTM over a lookback window with a Gaussian output, trained by negative log-likelihood.

    ``fit``/``predict`` take ``X`` of shape (n, W, F); inputs and targets
    are standardized with training statistics.
    """

    def __init__(self, hidden=32, epochs=15, batch_size=256, lr=5e-3, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def _scale_x(self, X):
        n, w, f = X.shape
        return self.x_scaler_.transform(X.reshape(-1, f)).reshape(n, w, f)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 3 or len(X) != len(y) or len(y) == 0:
            raise ParameterError("X must be (n, W, F) with n matching y and n > 0")
        self.x_scaler_ = StandardScaler().fit(X.reshape(-1, X.shape[2]))
        self.y_mean_ = float(y.mean())
        self.y_std_ = float(y.std()) or 1.0
        xs = self._scale_x(X)
        ys = (y - self.y_mean_) / self.y_std_
        self.net_ = LSTMGaussianNet(X.shape[2], self.hidden, make_rng(self.random_state, 1))
        opt = Adam(self.net_.parameters(), lr=self.lr, clip_norm=5.0)
        rng = make_rng(self.random_state, 0)
        self.loss_curve_ = []
        n = len(ys)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                mu, sigma = self.net_(Tensor(xs[idx]))
                loss = gaussian_nll(mu, sigma, ys[idx]).mean()
                if not np.isfinite(loss.item()):
                    raise TrainingError(f"LSTM loss became {loss.item()} at epoch {epoch}")
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            self.loss_curve_.append(total / n)
        self.n_features_in_ = X.shape[2]
        return self

    def predict_distribution(self, X):
        """Predictive ``(mean, sigma)`` in the label unit."""
        check_is_fitted(self, "net_")
        with no_grad():
            mu, sigma = self.net_(Tensor(self._scale_x(np.asarray(X, dtype=float))))
        return mu.data * self.y_std_ + self.y_mean_, sigma.data * self.y_std_

    def predict(self, X):
        return self.predict_distribution(X)[0]


def persistence_forecast(windows: ForecastWindows) -> np.ndarray:
    """Next value equals the current one."""
    return windows.last_label.copy()


@dataclass
class ForecastReport:
    r2: float
    baseline_r2: float
    model: str
    baseline: str
    horizon: int = 1
    mean_nll: float = float("nan")
    predictions: pd.DataFrame = field(default=None, repr=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise ParameterError("horizon must be >= 1")

    def metrics(self) -> dict:
        out = {"model": self.model, "r2": self.r2, "baseline": self.baseline,
               "baseline_r2": self.baseline_r2, "horizon": self.horizon}
        if np.isfinite(self.mean_nll):
            out["mean_nll"] = self.mean_nll
        return out


def _safe_r2(pred, truth):
    if np.var(truth) == 0:
        warnings.warn("constant targets: R2 is undefined, reported as 0", RuntimeWarning)
        return 0.0
    return r2_score(pred, truth)


def train_lstm_forecaster(train: pd.DataFrame, test: pd.DataFrame, config: dict = None):
    """Fit on ``train`` windows, evaluate on ``test`` windows against persistence.

    ``config`` keys: ``lookback`` (default 8) plus :class:`LSTMForecaster`
    parameters. Returns ``(model, ForecastReport)``.
    """
    config = dict(config or {})
    lookback = int(config.pop("lookback", 8))
    tr = make_forecast_windows(train, lookback)
    te = make_forecast_windows(test, lookback)
    model = LSTMForecaster(**config).fit(tr.inputs, tr.targets)
    mu, sigma = model.predict_distribution(te.inputs)
    base = persistence_forecast(te)
    nll = 0.5 * np.log(2 * np.pi * sigma**2) + 0.5 * ((te.targets - mu) / sigma) ** 2
    frame = pd.DataFrame({"timestamp": te.timestamps, "cell_id": te.cell_ids, "mean": mu,
                          "sigma": sigma, "persistence": base, "truth": te.targets})
    report = ForecastReport(float(_safe_r2(mu, te.targets)), float(_safe_r2(base, te.targets)),
                            "lstm", "persistence", 1, float(nll.mean()), frame)
    return model, report


def day_split(records: pd.DataFrame, train_days=20, test_days=10):
    return split_by_days(records, train_days, test_days)
