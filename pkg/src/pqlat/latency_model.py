"""Analytical U-plane latency law with geometric HARQ retransmissions.

A packet's latency is one first transmission (queueing + service, rate
``lambda1``) plus ``N`` retransmissions (rate ``lambda2``), each followed by
the fixed HARQ feedback delay ``C``. ``N`` is a truncated geometric count
with failure probability ``bler``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DegenerateRatesError, ParameterError
from .stochastics import (
    ContinuousDistribution,
    GeometricLaw,
    geometric_pmf,
    make_hypoexponential,
    shift,
)

DEFAULT_N_MAX = 8
SAMPLE_MODES = ("scaled", "iid_sum")


@dataclass(frozen=True)
class LatencyModelParams:
    """Rates in 1/ms, ``harq_delay`` in ms. ``n_max=None`` leaves N untruncated."""

    lambda1: float
    lambda2: float
    harq_delay: float = 0.0
    bler: float = 0.1
    n_max: Optional[int] = DEFAULT_N_MAX
    order: int = 4

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ParameterError("lambda1 and lambda2 must be positive")
        if self.lambda2 < self.lambda1:
            raise ParameterError("retransmissions must not be slower on average: need lambda2 >= lambda1")
        if not (self.harq_delay >= 0 and np.isfinite(self.harq_delay)):
            raise ParameterError("harq_delay must be finite and >= 0")
        if not (0 < self.bler < 1):
            raise ParameterError(f"bler must lie in (0, 1), got {self.bler!r}")
        if self.n_max is not None and (int(self.n_max) != self.n_max or self.n_max < 1):
            raise ParameterError("n_max must be a positive integer or None")
        if int(self.order) != self.order or self.order < 1:
            raise ParameterError("order must be an integer >= 1")
        if self.n_max is not None and self.order > self.n_max + 1:
            raise ParameterError(f"order {self.order} exceeds n_max + 1 = {self.n_max + 1}")

    @property
    def retx_law(self) -> GeometricLaw:
        return GeometricLaw(1.0 - self.bler, self.n_max)

    def replace(self, **changes) -> "LatencyModelParams":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return LatencyModelParams(**kw)


def _weighted_counts(params: LatencyModelParams) -> np.ndarray:
    law = params.retx_law
    return np.array([j * geometric_pmf(law, j) for j in range(1, params.order)])


def hypoexp_rates(params: LatencyModelParams) -> list:
    """Stage rates of the order-n approximation.

    Stage 0 is the first transmission; stage j >= 1 is the j-fold
    retransmission term scaled by its probability, hence rate
    ``lambda2 / (j * P_j)``.
    """
    rates = [params.lambda1] + [params.lambda2 / wj for wj in _weighted_counts(params)]
    arr = np.sort(np.asarray(rates))
    if arr.size > 1 and np.any(np.diff(arr) / arr[1:] <= 1e-9):
        raise DegenerateRatesError(f"approximation stages collide for bler={params.bler}: {rates}")
    return rates


def harq_offset(params: LatencyModelParams) -> float:
    """Deterministic HARQ contribution ``C * (1 + sum_j j P_j)`` under the same truncation."""
    return params.harq_delay * (1.0 + float(np.sum(_weighted_counts(params))))


def analytic_latency(params: LatencyModelParams) -> ContinuousDistribution:
    """Shifted hypoexponential approximation of the latency law."""
    dist = make_hypoexponential(hypoexp_rates(params))
    off = harq_offset(params)
    return shift(dist, off) if off > 0 else dist


def exact_mean(params: LatencyModelParams) -> float:
    """E[L] = (1/lambda1 + C) + E[N] (1/lambda2 + C), with N truncated at n_max."""
    en = params.retx_law.mean()
    c = params.harq_delay
    return (1.0 / params.lambda1 + c) + en * (1.0 / params.lambda2 + c)


def sample_exact(params: LatencyModelParams, rng: np.random.Generator,
                 mode: str = "iid_sum", size: Optional[int] = None):
    """Monte-Carlo draws of the exact latency (not the order-n approximation).

    ``mode="scaled"`` multiplies a single retransmission draw by N;
    ``mode="iid_sum"`` redraws every retransmission independently.
    """
    if mode not in SAMPLE_MODES:
        raise ParameterError(f"mode must be one of {SAMPLE_MODES}, got {mode!r}")
    n = 1 if size is None else int(size)
    c = params.harq_delay
    counts = params.retx_law.sample(rng, n)
    first = rng.exponential(1.0 / params.lambda1, n) + c
    if mode == "scaled":
        retx = counts * (rng.exponential(1.0 / params.lambda2, n) + c)
    else:
        # sum of k iid exp(lambda2) is Gamma(k, 1/lambda2); k=0 gives 0
        k = counts.astype(float)
        g = np.where(k > 0, rng.gamma(np.maximum(k, 1.0), 1.0 / params.lambda2), 0.0)
        retx = g + k * c
    out = first + retx
    return float(out[0]) if size is None else out


def appendix_b_pdf(lambda1: float, lambda2: float, p1: float, t):
    """Two-stage closed form: first transmission plus the P1-scaled retransmission.

    Uses ``lam2p = lambda2 / p1``; independent of the generic weight formula.
    """
    lam2p = lambda2 / p1
    if abs(lam2p - lambda1) <= 1e-9 * max(lam2p, lambda1):
        raise DegenerateRatesError("lambda1 and lambda2 / p1 coincide")
    t = np.asarray(t, dtype=float)
    val = np.where(t >= 0,
                   lambda1 * lam2p / (lam2p - lambda1)
                   * (np.exp(-lambda1 * np.maximum(t, 0)) - np.exp(-lam2p * np.maximum(t, 0))),
                   0.0)
    return float(val) if val.ndim == 0 else val
