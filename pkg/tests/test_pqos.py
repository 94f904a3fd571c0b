import copy
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from pqlat.exceptions import ParameterError
from pqlat.kpidata import (
    BIN_SECONDS,
    DAY_SECONDS,
    FEATURE_COLUMNS,
    LABEL_COLUMN,
    CellGraph,
    anomaly_labels,
    default_profile,
    generate_dataset,
    split_by_days,
)
from pqlat.neuro.layers import _inv_softplus
from pqlat.pqos import BayesianLatencyRegressor, confusion, coverage, r2_score, record_split
from pqlat.pqos.anomaly import (
    AutoencoderDetector,
    best_precision_one_recall,
    conditional_anomaly_score,
    detect,
    evaluate_detector,
    fit_anomaly_detector,
    threshold_candidates,
    tune_threshold,
)
from pqlat.pqos.forecasting import (
    ForecastReport,
    LSTMForecaster,
    make_forecast_windows,
    persistence_forecast,
    train_lstm_forecaster,
)
from pqlat.pqos.spatial import matched_mlp_widths, snapshot_pairs, train_spatial_models


def xy(df):
    return df[FEATURE_COLUMNS].to_numpy(float), df[LABEL_COLUMN].to_numpy(float)


@pytest.fixture(scope="module")
def regressor(small_dataset):
    train, _ = record_split(small_dataset)
    return BayesianLatencyRegressor(hidden=(16,), epochs=6, random_state=0).fit(*xy(train))


@pytest.fixture(scope="module")
def event_data(graph):
    prof = default_profile("event", seed=0)
    df = generate_dataset(prof, 18, graph)
    return df, anomaly_labels(df, prof)["is_anomaly"].to_numpy()


@pytest.fixture(scope="module")
def detector(event_data):
    df, _ = event_data
    train, _ = split_by_days(df, 14, 4)
    return fit_anomaly_detector(train, {"epochs": 15})


class TestMetrics:
    def test_r2(self):
        t = np.array([1.0, 2.0, 4.0])
        assert r2_score(t, t) == 1.0
        assert r2_score(np.full(3, t.mean()), t) == pytest.approx(0.0)
        with pytest.raises(ParameterError):
            r2_score(t, np.ones(3))

    def test_all_negative_flags(self):
        labels = np.zeros(200, dtype=int)
        labels[:38] = 1
        c = confusion(np.zeros(200), labels)
        assert (c.tp, c.fn, c.fp) == (0, 38, 0)

    def test_coverage(self):
        assert coverage([[0, 1], [0, 1]], [0.5, 2.0]) == 0.5


class TestThreshold:
    def test_hand_example(self):
        g = tune_threshold([1, 2, 3, 4], [0, 0, 1, 1])
        assert g == 2.5
        assert evaluate_detector([1, 2, 3, 4], [0, 0, 1, 1], g).confusion.fp == 0

    def test_separated_gap(self):
        s = np.array([0.1, 0.2, 0.3, 5.0, 6.0])
        g = tune_threshold(s, [0, 0, 0, 1, 1])
        assert 0.3 < g < 5.0

    def test_costly_false_positives(self):
        s = np.array([1.0, 2.0, 3.0, 2.5, 0.5])
        y = np.array([0, 0, 0, 1, 1])
        g = tune_threshold(s, y, cost=(1e6, 1.0))
        assert g > s[y == 0].max()

    def test_single_class(self):
        with pytest.raises(ParameterError):
            tune_threshold([1, 2], [0, 0])

    def test_validation(self):
        with pytest.raises(ParameterError):
            tune_threshold([1, np.nan], [0, 1])
        with pytest.raises(ParameterError):
            tune_threshold([1, 2], [0, 2])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 30), st.booleans()), min_size=2, max_size=40),
           st.sampled_from([(1.0, 1.0), (3.0, 1.0), (1.0, 5.0)]))
    def test_matches_brute_force(self, pairs, cost):
        s = np.array([p[0] for p in pairs], dtype=float) / 7
        y = np.array([p[1] for p in pairs])
        if y.all() or not y.any():
            return
        best, best_cost = None, np.inf
        for g in threshold_candidates(s):
            f = s > g
            c = cost[0] * np.sum(f & ~y) + cost[1] * np.sum(~f & y)
            if c < best_cost:
                best, best_cost = g, c
        assert tune_threshold(s, y.astype(int), cost) == best


class TestDetect:
    def test_infinities(self):
        s = np.array([0.0, 1.0, 1e9])
        assert not detect(s, np.inf).any()
        assert detect(s, -np.inf).all()

    def test_boundary_is_normal(self):
        assert detect([2.0], 2.0).tolist() == [False]

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(-5, 5), st.floats(0, 3))
    def test_monotone(self, s, g, dg):
        lo, hi = detect(s, g), detect(s, g + dg)
        assert not np.any(hi & ~lo)

    def test_best_recall(self):
        assert best_precision_one_recall([1, 2, 3, 5], [0, 1, 0, 1]) == 0.5


class TestAutoencoder:
    def test_recall_at_zero_false_positives(self, detector, event_data):
        df, labels = event_data
        days = (df["timestamp"].to_numpy() // DAY_SECONDS) - df["timestamp"].min() // DAY_SECONDS
        test = days >= 14
        scores = detector.score_samples(df[test])
        assert best_precision_one_recall(scores, labels[test]) >= 0.9

    def test_training_rows_score_low(self, detector, event_data):
        df, _ = event_data
        train = df.iloc[:2000]
        assert np.median(detector.score_samples(train)) < np.percentile(detector.score_samples(df), 75)

    def test_off_manifold_row(self, detector, event_data):
        df, _ = event_data
        normal = df.iloc[:5000]
        scores = detector.score_samples(normal)
        row = normal.iloc[[100]].copy()
        row["avg_cqi"] += 10 * normal["avg_cqi"].std()
        assert detector.score_samples(row)[0] > np.percentile(scores, 99)

    def test_bottleneck_too_wide(self, event_data):
        with pytest.raises(ParameterError):
            AutoencoderDetector(bottleneck=11).fit(event_data[0].iloc[:100])

    def test_labeled_training_rejected(self, event_data):
        df, labels = event_data
        with pytest.raises(ParameterError):
            fit_anomaly_detector(df, is_anomaly=labels)

    def test_predict_convention(self, detector, event_data):
        df, labels = event_data
        det = clone(detector).set_params(epochs=1).fit(df.iloc[:500])
        with pytest.raises(ParameterError):
            det.predict(df.iloc[:5])
        det.tune(df, labels)
        assert set(np.unique(det.predict(df.iloc[:50]))) <= {-1, 1}

    def test_get_params(self, detector):
        assert detector.get_params()["epochs"] == 15


class TestRegression:
    def test_report(self, regressor, small_dataset):
        _, test = record_split(small_dataset)
        rep = regressor.report(*xy(test))
        assert rep.r2 > 0.3
        assert 0.8 < rep.ci95_coverage <= 1.0
        assert np.all(rep.predictions["q025"] < rep.predictions["q975"])

    def test_frozen_mean(self, regressor, small_dataset):
        X, _ = xy(small_dataset.iloc[:30])
        mean, lo, hi, rates, offsets = regressor.predict_distribution(X, n_samples=0)
        assert np.allclose(mean, offsets + (1 / rates).sum(axis=1))
        assert np.all((lo < mean) & (mean < hi))

    def test_epistemic_widens(self, regressor, small_dataset):
        model = copy.deepcopy(regressor)
        model.net_.out.weight_rho.data[:] = _inv_softplus(0.2)
        X, _ = xy(small_dataset.iloc[:500])
        _, lo0, hi0, _, _ = model.predict_distribution(X, n_samples=0)
        _, lo, hi, _, _ = model.predict_distribution(X, n_samples=64)
        assert np.mean(hi - lo) >= np.mean(hi0 - lo0)

    def test_constant_labels(self, small_dataset):
        X, _ = xy(small_dataset.iloc[:300])
        y = np.full(300, 2.0)
        model = BayesianLatencyRegressor(hidden=(4,), epochs=1).fit(X, y)
        with pytest.warns(RuntimeWarning):
            assert model.report(X, y).r2 <= 0

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            BayesianLatencyRegressor(epochs=1).fit(np.ones((4, 2)), [1.0, 0.0, 1.0, 1.0])
        with pytest.raises(ValueError):
            BayesianLatencyRegressor(epochs=1).fit(np.ones((4, 2)), [1.0, np.nan, 1.0, 1.0])

    def test_deterministic(self, small_dataset):
        X, y = xy(small_dataset.iloc[:400])
        a = BayesianLatencyRegressor(hidden=(4,), epochs=2).fit(X, y).predict(X)
        b = BayesianLatencyRegressor(hidden=(4,), epochs=2).fit(X, y).predict(X)
        assert np.array_equal(a, b)


class TestConditionalScore:
    def test_tail_scores_higher(self, regressor, small_dataset):
        rec = small_dataset.iloc[[7]]
        mean = regressor.predict(rec[FEATURE_COLUMNS].to_numpy(float))[0]
        at_mean = conditional_anomaly_score(regressor, rec.assign(**{LABEL_COLUMN: mean}))
        tail = conditional_anomaly_score(regressor, rec.assign(**{LABEL_COLUMN: 5 * mean}))
        assert tail[0] > at_mean[0]

    def test_finite(self, regressor, small_dataset):
        assert np.all(np.isfinite(conditional_anomaly_score(regressor, small_dataset.iloc[:500])))

    def test_congestion_is_explained(self, regressor, small_dataset):
        # the same high latency is plausible under heavy load and surprising under light load
        busy = small_dataset.loc[[small_dataset["prb_util_dl"].idxmax()]]
        quiet = small_dataset.loc[[small_dataset["prb_util_dl"].idxmin()]]
        quiet = quiet.assign(**{LABEL_COLUMN: busy[LABEL_COLUMN].to_numpy()})
        s_busy = conditional_anomaly_score(regressor, busy)[0]
        s_quiet = conditional_anomaly_score(regressor, quiet)[0]
        assert s_busy < s_quiet


class TestWindows:
    def _series(self, n, cells=("a",)):
        rows = []
        for c in cells:
            for i in range(n):
                rows.append({"timestamp": i * BIN_SECONDS, "cell_id": c,
                             **{f: float(i) for f in FEATURE_COLUMNS}, LABEL_COLUMN: float(i)})
        return pd.DataFrame(rows)

    def test_count(self):
        w = make_forecast_windows(self._series(20, ("a", "b")), 5)
        assert len(w) == 2 * 15 and w.inputs.shape == (30, 5, 11)

    def test_markov_pairs(self):
        w = make_forecast_windows(self._series(6), 1)
        assert np.array_equal(w.inputs[:, 0, -1] + 1, w.targets)

    def test_target_follows_window(self):
        w = make_forecast_windows(self._series(12), 4)
        assert np.array_equal(w.inputs[:, -1, -1] + 1, w.targets)
        assert np.array_equal(persistence_forecast(w), w.targets - 1)

    def test_gap_splits(self):
        df = self._series(20).drop(index=[10])
        with pytest.warns(RuntimeWarning):
            w = make_forecast_windows(df, 3)
        assert len(w) == (10 - 3) + (9 - 3)

    def test_no_boundary_crossing(self, dense_urban):
        train, test = split_by_days(dense_urban, 20, 10)
        cut = dense_urban["timestamp"].min() + 20 * DAY_SECONDS
        w = make_forecast_windows(test, 4)
        first_input_ts = w.timestamps - 4 * BIN_SECONDS
        assert np.all(first_input_ts >= cut)

    def test_too_short(self):
        with pytest.raises(ParameterError):
            make_forecast_windows(self._series(3), 3)
        with pytest.raises(ParameterError):
            make_forecast_windows(self._series(10), 0)
        with pytest.raises(ParameterError):
            make_forecast_windows(self._series(10), 2, horizon=2)

    def test_report_horizon(self):
        with pytest.raises(ParameterError):
            ForecastReport(0.0, 0.0, "a", "b", horizon=0)


class TestLSTM:
    def test_pure_noise(self, small_dataset):
        rng = np.random.default_rng(0)
        noisy = small_dataset.assign(**{LABEL_COLUMN: rng.gamma(4.0, 1.0, len(small_dataset))})
        train, test = split_by_days(noisy, 2, 1)
        _, rep = train_lstm_forecaster(train, test, {"lookback": 4, "hidden": 8, "epochs": 3})
        assert abs(rep.r2) <= 0.05

    def test_deterministic_and_no_leakage(self, small_dataset):
        train, test = split_by_days(small_dataset, 2, 1)
        cfg = {"lookback": 3, "hidden": 4, "epochs": 1}
        m1, r1 = train_lstm_forecaster(train, test, cfg)
        shifted = test.assign(**{LABEL_COLUMN: test[LABEL_COLUMN] * 10})
        m2, r2 = train_lstm_forecaster(train, shifted, cfg)
        assert np.array_equal(m1.x_scaler_.mean_, m2.x_scaler_.mean_)
        assert m1.y_mean_ == m2.y_mean_
        _, r3 = train_lstm_forecaster(train, test, cfg)
        pd.testing.assert_frame_equal(r1.predictions, r3.predictions)

    def test_bad_shape(self):
        with pytest.raises(ParameterError):
            LSTMForecaster(epochs=1).fit(np.ones((3, 4)), np.ones(3))


class TestSpatial:
    def test_parameter_matching(self):
        widths = matched_mlp_widths(11, 4929)
        n = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
        assert abs(n - 4929) / 4929 < 0.02

    def test_pairs_shift(self, small_dataset, graph):
        x, y, ts = snapshot_pairs(small_dataset, graph.cell_ids)
        assert x.shape == (len(ts), 20, 11) and y.shape == (len(ts), 20)
        assert np.array_equal(x[1:, :, -1], y[:-1])

    def test_uncovered_cells(self, small_dataset, graph):
        with pytest.raises(ParameterError):
            snapshot_pairs(small_dataset, graph.cell_ids[:5])

    def test_small_run(self, small_dataset, graph):
        cfg = {"train_days": 2, "test_days": 1, "epochs": 2, "hidden": 8}
        a = train_spatial_models(small_dataset, graph, cfg)
        b = train_spatial_models(small_dataset, graph, cfg)
        assert a.metrics() == b.metrics()
        assert abs(a.sage_params - a.dnn_params) / a.sage_params < 0.05

    def test_unknown_key(self, small_dataset, graph):
        with pytest.raises(ParameterError):
            train_spatial_models(small_dataset, graph, {"epoch": 1})

    def test_edgeless_graph(self, small_dataset, graph):
        bare = graph.without_edges()
        assert isinstance(bare, CellGraph) and not bare.edges
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            train_spatial_models(small_dataset, bare, {"train_days": 2, "test_days": 1, "epochs": 1, "hidden": 4})
