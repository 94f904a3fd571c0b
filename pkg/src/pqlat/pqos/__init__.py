"""Predictive-QoS use cases: probabilistic regression, anomaly detection, forecasting."""
from .metrics import Confusion, confusion, coverage, r2_score
from .regression import (
    BayesianLatencyRegressor,
    RegressionReport,
    predict_latency_distribution,
    record_split,
    train_probabilistic_regressor,
)
