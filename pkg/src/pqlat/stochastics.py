"""Exponential and hypoexponential laws, truncated geometric counts and M/M/1 primitives.

All times are in milliseconds and all rates in 1/ms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq

from .exceptions import (
    ConvergenceError,
    DegenerateRatesError,
    InstabilityError,
    ParameterError,
)

RATE_GAP_RTOL = 1e-9
MAX_STAGES = 6

__all__ = [
    "ContinuousDistribution",
    "GeometricLaw",
    "MM1Params",
    "make_exponential",
    "make_hypoexponential",
    "shift",
    "geometric_pmf",
    "mm1_sojourn",
    "sojourn_lst",
    "numeric_convolution",
    "sample",
    "make_rng",
    "hypoexp_pdf_batch",
    "hypoexp_cdf_batch",
]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Seeded generator for task ``stream``; distinct streams are independent."""
    return np.random.default_rng([int(seed), int(stream)])


def _check_distinct(rates: np.ndarray) -> None:
    srt = np.sort(rates)
    gaps = np.diff(srt) / srt[1:]
    if np.any(gaps <= RATE_GAP_RTOL):
        i = int(np.argmin(gaps))
        raise DegenerateRatesError(
            f"rates {srt[i]!r} and {srt[i + 1]!r} differ by relative {gaps[i]:.3g}; "
            "perturb them or reduce the order"
        )


def _hypoexp_weights(rates: np.ndarray) -> np.ndarray:
    # w_i = prod_{j != i} l_j / (l_j - l_i), accumulated in extended precision
    lam = rates.astype(np.longdouble)
    n = lam.size
    w = np.ones(n, dtype=np.longdouble)
    for i in range(n):
        for j in range(n):
            if j != i:
                w[i] *= lam[j] / (lam[j] - lam[i])
    return w


@dataclass(frozen=True)
class ContinuousDistribution:
    """Exponential, hypoexponential, or a shifted copy of either.

    ``rates`` are stored sorted ascending. A shifted distribution keeps its
    unshifted law in ``inner`` and the shift in ``offset``.
    """

    kind: str
    rates: tuple = ()
    offset: float = 0.0
    inner: Optional["ContinuousDistribution"] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("exponential", "hypoexponential", "shifted"):
            raise ParameterError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "shifted":
            if self.inner is None:
                raise ParameterError("shifted distribution needs an inner law")
            if not (np.isfinite(self.offset) and self.offset >= 0):
                raise ParameterError(f"offset must be finite and >= 0, got {self.offset!r}")
            object.__setattr__(self, "rates", tuple(self.inner.rates))

    # -- evaluation ---------------------------------------------------------

    def _base(self):
        return self.inner if self.kind == "shifted" else self

    def _pdf0(self, t):
        lam = np.asarray(self.rates, dtype=np.longdouble)
        tt = np.asarray(t, dtype=np.longdouble)
        pos = tt >= 0
        tc = np.where(pos, tt, 0)
        if lam.size == 1:
            out = lam[0] * np.exp(-lam[0] * tc)
        else:
            w = _hypoexp_weights(np.asarray(self.rates))
            out = np.sum(w * lam * np.exp(-np.multiply.outer(tc, lam)), axis=-1)
        out = np.where(pos, np.maximum(out, 0), 0)
        return out.astype(np.float64)

    def _cdf0(self, t):
        lam = np.asarray(self.rates, dtype=np.longdouble)
        tt = np.asarray(t, dtype=np.longdouble)
        pos = tt > 0
        tc = np.where(pos, tt, 0)
        if lam.size == 1:
            out = -np.expm1(-lam[0] * tc)
        else:
            w = _hypoexp_weights(np.asarray(self.rates))
            out = 1 - np.sum(w * np.exp(-np.multiply.outer(tc, lam)), axis=-1)
        out = np.where(pos, np.clip(out, 0, 1), 0)
        return out.astype(np.float64)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        val = self._base()._pdf0(t - self.offset)
        return float(val) if val.ndim == 0 else val

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        val = self._base()._cdf0(t - self.offset)
        return float(val) if val.ndim == 0 else val

    def logpdf(self, t):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(t))

    def mean(self) -> float:
        return float(self.offset + sum(1.0 / r for r in self.rates))

    def var(self) -> float:
        return float(sum(1.0 / r**2 for r in self.rates))

    def quantile(self, u):
        """Inverse cdf; exact for one stage, root-bracketed otherwise."""
        u_arr = np.asarray(u, dtype=float)
        if np.any((u_arr < 0) | (u_arr > 1)):
            raise ParameterError("quantile level must lie in [0, 1]")
        flat = u_arr.ravel()
        out = np.empty_like(flat)
        base = self._base()
        lam = np.asarray(self.rates)
        for k, uk in enumerate(flat):
            if uk == 0:
                out[k] = 0.0
            elif uk == 1:
                out[k] = np.inf
            elif lam.size == 1:
                out[k] = -np.log1p(-uk) / lam[0]
            else:
                hi = 2.0 * sum(1.0 / lam)
                while base._cdf0(hi) < uk:
                    hi *= 2.0
                out[k] = brentq(lambda x: base._cdf0(x) - uk, 0.0, hi,
                                xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=200)
        out = out.reshape(u_arr.shape) + self.offset
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: np.random.Generator, size=None):
        return sample(self, rng, size)


def make_exponential(rate: float) -> ContinuousDistribution:
    rate = float(rate)
    if not (np.isfinite(rate) and rate > 0):
        raise ParameterError(f"rate must be positive and finite, got {rate!r}")
    return ContinuousDistribution("exponential", (rate,))


def make_hypoexponential(rates: Sequence[float]) -> ContinuousDistribution:
    """Sum of independent exponential stages with pairwise distinct rates."""
    arr = np.asarray(list(rates), dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ParameterError("need at least one rate")
    if not np.all(np.isfinite(arr) & (arr > 0)):
        raise ParameterError(f"rates must be positive and finite, got {arr.tolist()}")
    if arr.size > MAX_STAGES:
        raise ParameterError(f"at most {MAX_STAGES} stages are supported, got {arr.size}")
    if arr.size > 1:
        _check_distinct(arr)
    return ContinuousDistribution("hypoexponential", tuple(float(r) for r in np.sort(arr)))


def shift(dist: ContinuousDistribution, offset: float) -> ContinuousDistribution:
    """Translate ``dist`` right by ``offset`` ms."""
    if dist.kind == "shifted":
        return ContinuousDistribution("shifted", offset=dist.offset + float(offset), inner=dist.inner)
    return ContinuousDistribution("shifted", offset=float(offset), inner=dist)


@dataclass(frozen=True)
class GeometricLaw:
    """Number of failures before the first success, optionally truncated at ``n_max``.

    With ``n_max=None`` the law is the untruncated geometric distribution.
    """

    success_prob: float
    n_max: Optional[int] = None

    def __post_init__(self):
        p = self.success_prob
        if not (0 < p <= 1):
            raise ParameterError(f"success probability must lie in (0, 1], got {p!r}")
        if self.n_max is not None and (int(self.n_max) != self.n_max or self.n_max < 0):
            raise ParameterError(f"n_max must be a nonnegative integer, got {self.n_max!r}")

    @property
    def _norm(self) -> float:
        if self.n_max is None:
            return 1.0
        # 1 - q^(n_max+1), the mass kept by truncation
        q = 1.0 - self.success_prob
        return -np.expm1((self.n_max + 1) * np.log(q)) if q > 0 else 1.0

    def pmf(self, j: int) -> float:
        return geometric_pmf(self, j)

    def pmf_vector(self, upto: Optional[int] = None) -> np.ndarray:
        hi = self.n_max if upto is None else upto
        if hi is None:
            raise ParameterError("untruncated law needs an explicit upper index")
        return np.array([geometric_pmf(self, j) for j in range(hi + 1)])

    def mean(self) -> float:
        p = self.success_prob
        q = 1.0 - p
        if q == 0:
            return 0.0
        if self.n_max is None:
            return q / p
        j = np.arange(self.n_max + 1)
        return float(np.sum(j * q**j * p) / self._norm)

    def sample(self, rng: np.random.Generator, size=None):
        return sample(self, rng, size)


def geometric_pmf(law: GeometricLaw, j: int) -> float:
    if int(j) != j or j < 0 or (law.n_max is not None and j > law.n_max):
        raise ParameterError(f"index {j!r} outside support 0..{law.n_max}")
    p = law.success_prob
    q = 1.0 - p
    if q == 0:
        return 1.0 if j == 0 else 0.0
    return float(q**j * p / law._norm)


@dataclass(frozen=True)
class MM1Params:
    arrival_rate: float
    service_rate: float

    def __post_init__(self):
        if not (self.arrival_rate > 0 and self.service_rate > 0):
            raise ParameterError("arrival and service rates must be positive")
        if self.utilization >= 1:
            raise InstabilityError(f"utilization {self.utilization:.4g} >= 1")

    @property
    def utilization(self) -> float:
        return self.arrival_rate / self.service_rate


def mm1_sojourn(params: MM1Params) -> ContinuousDistribution:
    """Waiting plus service time of an M/M/1 FIFO queue: exponential with rate mu(1 - rho)."""
    return make_exponential(params.service_rate * (1.0 - params.utilization))


def sojourn_lst(s: float, params: MM1Params) -> float:
    """Laplace-Stieltjes transform of the M/M/1 sojourn time, via Pollaczek-Khinchine."""
    if s < 0:
        raise ParameterError("transform argument must be >= 0")
    if s == 0:
        return 1.0
    beta, mu, rho = params.arrival_rate, params.service_rate, params.utilization
    b = mu / (mu + s)
    # P-K: (1 - rho) B(s) s / (s - beta (1 - B(s))) with 1 - B(s) = s / (mu + s);
    # the common factor s is cancelled to avoid round-off for small s
    return (1.0 - rho) * b / (1.0 - beta / (mu + s))


def numeric_convolution(a: ContinuousDistribution, b: ContinuousDistribution, t: float,
                        n_points: int = 1024, tol: float = 1e-7, max_doublings: int = 14) -> float:
    """Density of ``A + B`` at ``t`` by the trapezoid rule on [0, t].

    The grid is doubled until two successive estimates agree within ``tol``.
    """
    if t <= 0:
        return 0.0
    prev = None
    n = int(n_points)
    for _ in range(max_doublings + 1):
        tau = np.linspace(0.0, t, n + 1)
        vals = a.pdf(tau) * b.pdf(t - tau)
        est = float(np.trapezoid(vals, tau))
        if prev is not None and abs(est - prev) <= tol:
            return est
        prev = est
        n *= 2
    raise ConvergenceError(f"convolution at t={t} did not settle within {tol} after {max_doublings} doublings")


def sample(dist: Union[ContinuousDistribution, GeometricLaw], rng: np.random.Generator, size=None):
    """Draw from ``dist`` by inverse transform (per stage for hypoexponential laws)."""
    if isinstance(dist, GeometricLaw):
        p = dist.success_prob
        if p == 1.0:
            return 0 if size is None else np.zeros(size, dtype=np.int64)
        u = rng.random(size)
        q = 1.0 - p
        # P(N <= k) = (1 - q^(k+1)) / norm
        k = np.ceil(np.log1p(-u * dist._norm) / np.log(q)) - 1.0
        k = np.maximum(k, 0)
        if dist.n_max is not None:
            k = np.minimum(k, dist.n_max)
        return int(k) if size is None else k.astype(np.int64)
    lam = np.asarray(dist.rates)
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    u = rng.random(shape + (lam.size,))
    draws = (-np.log1p(-u) / lam).sum(axis=-1) + dist.offset
    return float(draws) if size is None else draws


def _batch_weights(rates: np.ndarray) -> np.ndarray:
    n = rates.shape[-1]
    w = np.ones_like(rates)
    for i in range(n):
        for j in range(n):
            if j != i:
                w[..., i] *= rates[..., j] / (rates[..., j] - rates[..., i])
    return w


def hypoexp_pdf_batch(rates, t, offset=None) -> np.ndarray:
    """Density of many hypoexponential laws at once.

    ``rates`` has shape (..., n) with distinct entries per row, ``t`` and
    ``offset`` broadcast against ``rates.shape[:-1]``.
    """
    rates = np.asarray(rates, dtype=float)
    z = np.asarray(t, dtype=float) - (0.0 if offset is None else np.asarray(offset, dtype=float))
    pos = z >= 0
    zc = np.where(pos, z, 0.0)[..., None]
    val = np.sum(_batch_weights(rates) * rates * np.exp(-rates * zc), axis=-1)
    return np.where(pos, np.maximum(val, 0.0), 0.0)


def hypoexp_cdf_batch(rates, t, offset=None) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    z = np.asarray(t, dtype=float) - (0.0 if offset is None else np.asarray(offset, dtype=float))
    pos = z > 0
    zc = np.where(pos, z, 0.0)[..., None]
    val = 1.0 - np.sum(_batch_weights(rates) * np.exp(-rates * zc), axis=-1)
    return np.where(pos, np.clip(val, 0.0, 1.0), 0.0)
