"""Probabilistic latency regression with a Bayesian network and a hypoexponential output."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import TrainingError
from ..kpidata import FEATURE_COLUMNS, LABEL_COLUMN
from ..neuro import Adam, BayesianDense, Dense, HypoexpHead, Module, Tensor, elbo_loss, no_grad
from ..neuro.layers import _inv_softplus
from ..neuro.losses import hypoexp_logpdf
from ..stochastics import _batch_weights, hypoexp_pdf_batch, make_rng
from .metrics import coverage, r2_score


class BayesianHypoexpNet(Module):
    """Dense feature extractor, Bayesian output layer, hypoexponential head."""

    def __init__(self, n_in, hidden=(32, 32), n_stages=4, shifted=True, prior_sigma=1.0,
                 all_bayesian=False, mc_kl=False, softness=0.02, rng=None):
        rng = rng or np.random.default_rng(0)
        self.head = HypoexpHead(n_stages, shifted)
        widths = (n_in,) + tuple(hidden)
        if all_bayesian:
            self.body = [BayesianDense(a, b, "tanh", prior_sigma, mc_kl=mc_kl, rng=rng)
                         for a, b in zip(widths[:-1], widths[1:])]
        else:
            self.body = [Dense(a, b, "tanh", rng) for a, b in zip(widths[:-1], widths[1:])]
        self.out = BayesianDense(widths[-1], self.head.n_inputs, None, prior_sigma, mc_kl=mc_kl, rng=rng)
        # start near a sensible law for unit-mean targets
        b = np.full(self.head.n_inputs, _inv_softplus(2.0))
        b[int(shifted)] = _inv_softplus(4.0)
        if shifted:
            b[0] = _inv_softplus(0.5)
        self.out.bias_mu.data = b
        self.out.weight_mu.data *= 0.1
        self.softness = softness

    def raw(self, x, rng=None):
        h = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.body:
            h = layer(h, rng=rng) if isinstance(layer, BayesianDense) else layer(h)
        return self.out(h, rng=rng)

    def __call__(self, x, rng=None):
        return self.head(self.raw(x, rng))

    def log_likelihood(self, x, y, rng=None):
        rates, offset = self(x, rng)
        return hypoexp_logpdf(rates, y, offset, self.softness if offset is not None else None)


@dataclass
class RegressionReport:
    r2: float
    mean_nll: float
    ci95_coverage: float
    predictions: pd.DataFrame

    def metrics(self) -> dict:
        return {"r2": self.r2, "mean_nll": self.mean_nll, "ci95_coverage": self.ci95_coverage,
                "n_samples": int(len(self.predictions))}


def _mixture_quantile(rates, offsets, levels, n_iter=45):
    """Quantiles of equal-weight mixtures; ``rates`` (K, B, n), ``offsets`` (K, B).

    Bisection on the mixture cdf, all levels at once.
    """
    w = _batch_weights(rates)
    lev = np.asarray(levels, dtype=float)[:, None]
    a = np.broadcast_to(offsets.min(axis=0), (lev.size, offsets.shape[1])).copy()
    b = np.broadcast_to((offsets + (1.0 / rates).sum(-1) * 12.0).max(axis=0), a.shape).copy()
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        z = np.maximum(mid[:, None, :] - offsets[None], 0.0)[..., None]
        f = 1.0 - np.sum(w[None] * np.exp(-rates[None] * z), axis=-1)
        f = np.where(z[..., 0] > 0, f, 0.0).mean(axis=1)
        below = f < lev
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return list(0.5 * (a + b))


class BayesianLatencyRegressor(RegressorMixin, BaseEstimator):
    """Bayes-by-backprop regressor whose predictive law is a (shifted) hypoexponential.

    Targets are divided by their training mean before fitting; predictions
    are returned in the original unit. ``kl_weight=None`` uses ``1 / n_train``.
    """

    def __init__(self, hidden=(32, 32), n_stages=4, shifted=True, prior_sigma=1.0,
                 all_bayesian=False, mc_kl=False, kl_weight=None, n_mc_samples=1,
                 epochs=30, batch_size=256, lr=3e-3, n_predict_samples=64, softness=0.02,
                 random_state=0):
        self.hidden = hidden
        self.n_stages = n_stages
        self.shifted = shifted
        self.prior_sigma = prior_sigma
        self.all_bayesian = all_bayesian
        self.mc_kl = mc_kl
        self.kl_weight = kl_weight
        self.n_mc_samples = n_mc_samples
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.n_predict_samples = n_predict_samples
        self.softness = softness
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if np.any(y <= 0):
            raise ValueError("latency targets must be positive")
        self.scaler_ = StandardScaler().fit(X)
        self.y_scale_ = float(y.mean())
        xs = self.scaler_.transform(X)
        ys = y / self.y_scale_
        rng = make_rng(self.random_state, 0)
        self.net_ = BayesianHypoexpNet(X.shape[1], self.hidden, self.n_stages, self.shifted,
                                       self.prior_sigma, self.all_bayesian, self.mc_kl, self.softness,
                                       rng=make_rng(self.random_state, 1))
        opt = Adam(self.net_.parameters(), lr=self.lr, clip_norm=10.0)
        n = len(ys)
        kl_w = 1.0 / n if self.kl_weight is None else self.kl_weight
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                loss = elbo_loss(self.net_, Tensor(xs[idx]), ys[idx], self.n_mc_samples, kl_w, rng)
                if not np.isfinite(loss.item()):
                    raise TrainingError(f"loss became {loss.item()} at epoch {epoch}, batch starting {start}")
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            self.loss_curve_.append(total / n)
        self.n_features_in_ = X.shape[1]
        return self

    def _draws(self, X, n_samples, rng):
        xs = Tensor(self.scaler_.transform(check_array(X, dtype=np.float64)))
        rates, offsets = [], []
        with no_grad():
            for k in range(n_samples):
                r, o = self.net_(xs, rng)
                rates.append(r.data / self.y_scale_)
                offsets.append(np.zeros(len(r.data)) if o is None else o.data * self.y_scale_)
        return np.stack(rates), np.stack(offsets)

    def predict_distribution(self, X, n_samples=None, random_state=None):
        """Predictive mean, 2.5% and 97.5% quantiles, and posterior-mean head parameters.

        ``n_samples=0`` uses the posterior mean weights only (no epistemic
        spread). Returns ``(mean, q025, q975, rates, offsets)``.
        """
        check_is_fitted(self, "net_")
        k = self.n_predict_samples if n_samples is None else n_samples
        seed = self.random_state if random_state is None else random_state
        mean_rates, mean_off = self._draws(X, 1, None)
        if k == 0:
            rates, offsets = mean_rates, mean_off
        else:
            rates, offsets = self._draws(X, k, make_rng(seed, 99))
        mean = (offsets + (1.0 / rates).sum(-1)).mean(axis=0)
        q_lo, q_hi = _mixture_quantile(rates, offsets, (0.025, 0.975))
        return mean, q_lo, q_hi, mean_rates[0], mean_off[0]

    def predictive_nll(self, X, y, n_samples=None, random_state=None):
        """Per-sample ``-log`` of the equal-weight mixture density at ``y``."""
        check_is_fitted(self, "net_")
        k = self.n_predict_samples if n_samples is None else n_samples
        seed = self.random_state if random_state is None else random_state
        rates, offsets = self._draws(X, max(k, 1), make_rng(seed, 99) if k else None)
        dens = hypoexp_pdf_batch(rates, np.asarray(y, dtype=float)[None, :], offsets).mean(axis=0)
        with np.errstate(divide="ignore"):
            return -np.log(np.maximum(dens, 1e-300))

    def predict(self, X):
        return self.predict_distribution(X)[0]

    def report(self, X, y) -> RegressionReport:
        y = np.asarray(y, dtype=float)
        mean, lo, hi, _, _ = self.predict_distribution(X)
        nll = self.predictive_nll(X, y)
        if np.var(y) == 0:
            warnings.warn("constant targets: R2 is undefined, reported as 0", RuntimeWarning)
            r2 = 0.0
        else:
            r2 = r2_score(mean, y)
        cov = coverage(np.column_stack([lo, hi]), y)
        frame = pd.DataFrame({"mean": mean, "q025": lo, "q975": hi, "truth": y})
        return RegressionReport(float(r2), float(nll.mean()), float(cov), frame)


def record_split(records: pd.DataFrame, test_fraction=0.2, seed=0):
    """Random record-level split (rows are not treated as a time series here)."""
    rng = make_rng(seed, 11)
    idx = rng.permutation(len(records))
    n_test = int(round(test_fraction * len(records)))
    test = records.iloc[np.sort(idx[:n_test])].reset_index(drop=True)
    train = records.iloc[np.sort(idx[n_test:])].reset_index(drop=True)
    return train, test


def train_probabilistic_regressor(train: pd.DataFrame, config: dict = None) -> BayesianLatencyRegressor:
    config = dict(config or {})
    if len(train) == 0:
        raise ValueError("empty training set")
    model = BayesianLatencyRegressor(**config)
    y = train[LABEL_COLUMN].to_numpy(dtype=float)
    if np.var(y) == 0:
        warnings.warn("constant training labels: the fitted model cannot explain variance", RuntimeWarning)
    return model.fit(train[FEATURE_COLUMNS].to_numpy(dtype=float), y)


def predict_latency_distribution(model: BayesianLatencyRegressor, x, n_samples=None):
    X = x[FEATURE_COLUMNS].to_numpy(dtype=float) if isinstance(x, pd.DataFrame) else np.atleast_2d(x)
    return model.predict_distribution(X, n_samples)
