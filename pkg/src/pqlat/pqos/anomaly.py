"""Anomaly detection: autoencoder reconstruction error and conditional likelihood scores.

Both detectors emit a score where larger means more anomalous; a record is
flagged iff ``score > threshold`` (a score equal to the threshold is normal).
For the likelihood-based detector the score is ``-log f(y | x)``, so a low
predictive density maps to a high score and the decision boundary is the same.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import ParameterError, TrainingError
from ..kpidata import FEATURE_COLUMNS, LABEL_COLUMN
from ..neuro import Adam, Autoencoder, Tensor, no_grad
from ..stochastics import make_rng
from .metrics import Confusion, confusion

TIMELINE_HEADER = ["timestamp", "cell_id", "score", "flag", "label"]
DETECTOR_COLUMNS = FEATURE_COLUMNS + [LABEL_COLUMN]


def _frame_matrix(x) -> np.ndarray:
    if isinstance(x, pd.DataFrame):
        return x[DETECTOR_COLUMNS].to_numpy(dtype=float)
    return check_array(np.atleast_2d(x), dtype=np.float64)


class AutoencoderDetector(OutlierMixin, BaseEstimator):
    """Dense autoencoder over standardized ``features + label`` rows.

    ``score_samples`` returns the mean squared reconstruction error per row.
    ``threshold`` (set directly or by :meth:`tune`) drives :meth:`predict`,
    which follows the sklearn outlier convention of ``-1`` for anomalies.
    """

    def __init__(self, hidden=(16,), bottleneck=3, epochs=40, batch_size=128, lr=3e-3,
                 threshold=None, random_state=0):
        self.hidden = hidden
        self.bottleneck = bottleneck
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.threshold = threshold
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _frame_matrix(X)
        if self.bottleneck >= X.shape[1]:
            raise ParameterError(
                f"bottleneck {self.bottleneck} must be smaller than the input dimension {X.shape[1]}")
        self.scaler_ = StandardScaler().fit(X)
        xs = self.scaler_.transform(X)
        self.net_ = Autoencoder(X.shape[1], self.hidden, self.bottleneck, rng=make_rng(self.random_state, 1))
        opt = Adam(self.net_.parameters(), lr=self.lr, clip_norm=10.0)
        rng = make_rng(self.random_state, 0)
        n = len(xs)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                batch = xs[order[start:start + self.batch_size]]
                loss = ((self.net_(Tensor(batch)) - Tensor(batch)).square()).mean()
                if not np.isfinite(loss.item()):
                    raise TrainingError(f"autoencoder loss became {loss.item()} at epoch {epoch}")
                loss.backward()
                opt.step()
                total += loss.item() * len(batch)
            self.loss_curve_.append(total / n)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        xs = self.scaler_.transform(_frame_matrix(X))
        with no_grad():
            rec = self.net_(Tensor(xs)).data
        return ((rec - xs) ** 2).mean(axis=1)

    def tune(self, X, labels, cost=(1.0, 1.0)):
        self.threshold = tune_threshold(self.score_samples(X), labels, cost)
        return self

    def predict(self, X) -> np.ndarray:
        if self.threshold is None:
            raise ParameterError("threshold not set; call tune() or pass threshold=")
        return np.where(detect(self.score_samples(X), self.threshold), -1, 1)


def fit_anomaly_detector(normal_train: pd.DataFrame, spec: dict = None,
                         is_anomaly=None) -> AutoencoderDetector:
    """Fit an :class:`AutoencoderDetector` on rows believed normal.

    ``is_anomaly`` (optional, aligned with ``normal_train``) is checked to be
    all zero.
    """
    if is_anomaly is not None and np.any(np.asarray(is_anomaly)):
        raise ParameterError("training set for the detector contains labeled anomalies")
    if len(normal_train) == 0:
        raise ParameterError("empty training set")
    return AutoencoderDetector(**dict(spec or {})).fit(normal_train)


def _cost_at(scores, labels, gamma, c_fp, c_fn):
    flags = scores > gamma
    return c_fp * np.sum(flags & ~labels) + c_fn * np.sum(~flags & labels)


def threshold_candidates(scores) -> np.ndarray:
    """Midpoints between consecutive distinct scores, plus one point below and one above the range."""
    u = np.unique(np.asarray(scores, dtype=float))
    mids = 0.5 * (u[:-1] + u[1:])
    span = max(u[-1] - u[0], 1.0)
    return np.concatenate([[u[0] - span], mids, [u[-1] + span]])


def tune_threshold(scores, labels, cost=(1.0, 1.0)) -> float:
    """Threshold minimizing ``c_fp * FP + c_fn * FN`` over score midpoints; ties go to the smaller one."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ParameterError("scores and labels must be 1-d arrays of equal length")
    if not np.all(np.isfinite(s)):
        raise ParameterError("scores must be finite")
    if not np.all(np.isin(y, (0, 1))):
        raise ParameterError("labels must be binary")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise ParameterError("threshold tuning needs both normal and anomalous labels")
    c_fp, c_fn = (float(c) for c in cost)
    cand = threshold_candidates(s)
    # sweep: FP(g) and FN(g) via sorted scores
    order = np.sort(s[~y])
    pos = np.sort(s[y])
    fp = len(order) - np.searchsorted(order, cand, side="right")
    fn = np.searchsorted(pos, cand, side="right")
    total = c_fp * fp + c_fn * fn
    return float(cand[int(np.argmin(total))])


def detect(scores, threshold) -> np.ndarray:
    """Anomaly iff ``score > threshold`` (strict)."""
    return np.asarray(scores, dtype=float) > threshold


def conditional_anomaly_score(model, records) -> np.ndarray:
    """``-log`` predictive density of each record's latency label under a fitted regressor."""
    X = records[FEATURE_COLUMNS].to_numpy(dtype=float)
    y = records[LABEL_COLUMN].to_numpy(dtype=float)
    return model.predictive_nll(X, y)


@dataclass
class AnomalyReport:
    threshold: float
    confusion: Confusion
    scores: np.ndarray
    flags: np.ndarray
    labels: np.ndarray

    def metrics(self) -> dict:
        c = self.confusion
        return {"threshold": self.threshold, **c.as_dict(), "precision": c.precision,
                "recall": c.recall, "n_samples": int(len(self.scores))}


def evaluate_detector(scores, labels, threshold) -> AnomalyReport:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    flags = detect(s, threshold)
    return AnomalyReport(float(threshold), confusion(flags, y), s, flags, y)


def best_precision_one_recall(scores, labels) -> float:
    """Largest recall reachable with zero false positives."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if not y.any():
        return 1.0
    top_normal = s[~y].max() if (~y).any() else -np.inf
    return float(np.mean(s[y] > top_normal))


def write_timeline_csv(path, records: pd.DataFrame, report: AnomalyReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMELINE_HEADER)
        for ts, cid, sc, fl, lb in zip(records["timestamp"].to_numpy(), records["cell_id"].to_numpy(),
                                       report.scores, report.flags, report.labels):
            w.writerow([int(ts), cid, repr(float(sc)), int(fl), int(lb)])
