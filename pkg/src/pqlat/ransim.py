"""Discrete-event simulation of a gNB downlink queue with HARQ retransmissions.

One server transmits packets one attempt at a time. Every attempt fails with
probability ``bler``; a failed packet re-enters the queue ``harq_delay`` ms
later (at the head of the line when ``retx_priority`` is set). The HARQ delay
is dead time, the server is free meanwhile.
"""
from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .exceptions import InstabilityError, ParameterError, SampleSizeError
from .latency_model import LatencyModelParams
from .stochastics import ContinuousDistribution, GeometricLaw, make_rng

TRACE_HEADER = ["packet_id", "t_arriv_ms", "t_ack_ms", "retx_count"]
HIST_HEADER = ["bin_left_ms", "bin_right_ms", "density", "analytic_pdf"]

_ARRIVAL, _DONE, _REQUEUE = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    arrival_rate: float = 0.5
    service_rate: float = 1.0
    bler: float = 0.0
    harq_delay: float = 0.0
    retx_priority: bool = True
    n_max: int = 8
    duration: float = 200_000.0
    warmup: float = 1_000.0
    seed: int = 0

    def __post_init__(self):
        if not (self.arrival_rate > 0 and self.service_rate > 0):
            raise ParameterError("arrival_rate and service_rate must be positive")
        if not (0 <= self.bler < 1):
            raise ParameterError(f"bler must lie in [0, 1), got {self.bler!r}")
        if self.harq_delay < 0:
            raise ParameterError("harq_delay must be >= 0")
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ParameterError("n_max must be a nonnegative integer")
        if not (self.duration > self.warmup >= 0):
            raise ParameterError("need duration > warmup >= 0")
        if self.offered_load >= 1:
            raise InstabilityError(
                f"offered load {self.offered_load:.4g} (incl. retransmissions) must be < 1")

    @property
    def mean_retx(self) -> float:
        if self.bler == 0:
            return 0.0
        return GeometricLaw(1.0 - self.bler, self.n_max).mean()

    @property
    def offered_load(self) -> float:
        return self.arrival_rate * (1.0 + self.mean_retx) / self.service_rate


@dataclass(frozen=True)
class PacketTrace:
    packet_id: int
    t_arriv: float
    t_ack: float
    retx_count: int
    # queueing delay of every attempt, first attempt first
    waits: tuple = field(default=(), compare=False, repr=False)

    @property
    def latency(self) -> float:
        return self.t_ack - self.t_arriv


@dataclass
class DelaySeries:
    width: float
    window_start: np.ndarray
    p_delay: np.ndarray
    sdu_count: np.ndarray

    @property
    def windows(self):
        return list(zip(self.window_start.tolist(), self.p_delay.tolist(), self.sdu_count.tolist()))

    def __len__(self):
        return len(self.window_start)


class _Draws:
    """Chunked scalar draws from one generator."""

    def __init__(self, rng, kind, scale=1.0, chunk=65536):
        self.rng, self.kind, self.scale, self.chunk = rng, kind, scale, chunk
        self.buf, self.i = None, chunk

    def __call__(self):
        if self.i >= self.chunk:
            if self.kind == "exp":
                self.buf = self.rng.exponential(self.scale, self.chunk).tolist()
            else:
                self.buf = self.rng.random(self.chunk).tolist()
            self.i = 0
        v = self.buf[self.i]
        self.i += 1
        return v


def run_des(config: SimConfig) -> list:
    """Simulate the queue and return traces of packets arriving after warmup.

    Arrivals stop at ``config.duration``; the system then drains, so every
    traced packet is acknowledged.
    """
    rng_arr = make_rng(config.seed, 0)
    service = _Draws(make_rng(config.seed, 1), "exp", 1.0 / config.service_rate)
    coin = _Draws(make_rng(config.seed, 2), "u")

    n_guess = int(config.arrival_rate * config.duration * 1.2) + 64
    gaps = rng_arr.exponential(1.0 / config.arrival_rate, n_guess)
    arrivals = np.cumsum(gaps)
    while arrivals[-1] < config.duration:
        more = np.cumsum(rng_arr.exponential(1.0 / config.arrival_rate, n_guess)) + arrivals[-1]
        arrivals = np.concatenate([arrivals, more])
    arrivals = arrivals[arrivals < config.duration].tolist()

    n = len(arrivals)
    attempts = [0] * n
    waits = [[] for _ in range(n)]
    t_ack = [0.0] * n
    enq_time = [0.0] * n

    bler, c, n_max = config.bler, config.harq_delay, config.n_max
    fresh = deque()
    retx = deque() if config.retx_priority else fresh
    heap = []
    seq = 0
    if n:
        heapq.heappush(heap, (arrivals[0], seq, _ARRIVAL, 0))
        seq += 1
    busy = False

    def start_next(now):
        nonlocal busy, seq
        q = retx if retx else fresh
        if not q:
            busy = False
            return
        pid = q.popleft()
        waits[pid].append(now - enq_time[pid])
        busy = True
        heapq.heappush(heap, (now + service(), seq, _DONE, pid))
        seq += 1

    while heap:
        now, _, kind, pid = heapq.heappop(heap)
        if kind == _ARRIVAL:
            enq_time[pid] = now
            fresh.append(pid)
            if pid + 1 < n:
                heapq.heappush(heap, (arrivals[pid + 1], seq, _ARRIVAL, pid + 1))
                seq += 1
            if not busy:
                start_next(now)
        elif kind == _DONE:
            failed = bler > 0 and coin() < bler and attempts[pid] < n_max
            if failed:
                attempts[pid] += 1
                heapq.heappush(heap, (now + c, seq, _REQUEUE, pid))
                seq += 1
            else:
                t_ack[pid] = now + c
            start_next(now)
        else:
            enq_time[pid] = now
            retx.append(pid)
            if not busy:
                start_next(now)

    return [PacketTrace(i, arrivals[i], t_ack[i], attempts[i], tuple(waits[i]))
            for i in range(n) if arrivals[i] >= config.warmup]


def latencies(traces: Sequence[PacketTrace]) -> np.ndarray:
    return np.array([tr.t_ack - tr.t_arriv for tr in traces])


def implied_latency_params(config: SimConfig, order: int = 4) -> LatencyModelParams:
    """Map a simulator configuration onto analytic-model rates.

    Each rate is the reciprocal of a class mean sojourn. With head-of-line
    retransmissions the queue is a non-preemptive two-class M/M/1 system
    (retransmissions high priority) with residual work ``R = rho / mu``:
    the high class waits ``R / (1 - rho_retx)`` and the low class
    ``R / ((1 - rho_retx)(1 - rho))``. Without priority both classes share
    the FIFO rate ``mu (1 - rho)``.
    """
    mu = config.service_rate
    rho = config.offered_load
    if config.retx_priority:
        rho_retx = config.arrival_rate * config.mean_retx / mu
        resid = rho / mu
        lam1 = 1.0 / (resid / ((1.0 - rho_retx) * (1.0 - rho)) + 1.0 / mu)
        lam2 = 1.0 / (resid / (1.0 - rho_retx) + 1.0 / mu)
    else:
        lam1 = lam2 = mu * (1.0 - rho)
    return LatencyModelParams(lambda1=lam1, lambda2=max(lam2, lam1), harq_delay=config.harq_delay,
                              bler=config.bler, n_max=config.n_max, order=order)


def pdelay_windows(traces: Iterable[PacketTrace], width: float, resolution: float = 0.1,
                   origin: float = 0.0) -> DelaySeries:
    """Average SDU delay per window of ``width`` ms, floored to ``resolution`` ms.

    A packet belongs to the window holding its ``t_ack``. Empty windows are
    omitted.
    """
    if width <= 0 or resolution <= 0:
        raise ParameterError("width and resolution must be positive")
    trs = list(traces)
    if not trs:
        return DelaySeries(width, np.empty(0), np.empty(0), np.empty(0, dtype=np.int64))
    ack = np.array([tr.t_ack for tr in trs])
    delay = ack - np.array([tr.t_arriv for tr in trs])
    idx = np.floor((ack - origin) / width).astype(np.int64)
    keys, inv, counts = np.unique(idx, return_inverse=True, return_counts=True)
    sums = np.bincount(inv, weights=delay)
    mean = sums / counts
    # tolerance keeps exact multiples (e.g. 7.9 / 0.1) from flooring one step low
    steps = np.floor(mean / resolution + 1e-9)
    p = np.round(steps * resolution, 10)
    return DelaySeries(width, origin + keys * width, p, counts)


@dataclass
class Histogram:
    left: np.ndarray
    right: np.ndarray
    density: np.ndarray
    analytic_pdf: np.ndarray

    def rows(self):
        return list(zip(self.left.tolist(), self.right.tolist(),
                        self.density.tolist(), self.analytic_pdf.tolist()))


def _wasserstein_to_cdf(x: np.ndarray, dist: ContinuousDistribution, n_grid: int = 20001) -> float:
    xs = np.sort(x)
    hi = max(xs[-1], float(dist.quantile(1 - 1e-9)))
    lo = min(xs[0], 0.0)
    grid = np.linspace(lo, hi, n_grid)
    emp = np.searchsorted(xs, grid, side="right") / xs.size
    return float(np.trapezoid(np.abs(emp - dist.cdf(grid)), grid))


def empirical_vs_analytic(samples: Union[Sequence[PacketTrace], np.ndarray],
                          dist: Union[ContinuousDistribution, np.ndarray],
                          bin_width: Optional[float] = None, n_bins: int = 60,
                          min_samples: int = 1000) -> dict:
    """KS statistic, 1-Wasserstein distance and a density histogram.

    ``samples`` may be packet traces or raw latencies. ``dist`` may be an
    analytic law or a second sample (two-sample comparison).
    """
    if len(samples) and isinstance(samples[0], PacketTrace):
        x = latencies(samples)
    else:
        x = np.asarray(samples, dtype=float)
    if x.size < min_samples:
        raise SampleSizeError(f"need at least {min_samples} samples, got {x.size}")
    if isinstance(dist, ContinuousDistribution):
        ks = float(stats.kstest(x, dist.cdf).statistic)
        w1 = _wasserstein_to_cdf(x, dist)
        pdf = dist.pdf
    else:
        ref = np.asarray(dist, dtype=float)
        ks = float(stats.ks_2samp(x, ref).statistic)
        w1 = float(stats.wasserstein_distance(x, ref))
        pdf = None
    hi = float(np.quantile(x, 0.999))
    if bin_width is None:
        bin_width = hi / n_bins
    edges = np.arange(0.0, hi + bin_width, bin_width)
    counts, _ = np.histogram(x, bins=edges)
    density = counts / (x.size * bin_width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    analytic = pdf(centers) if pdf is not None else np.full(centers.size, math.nan)
    hist = Histogram(edges[:-1], edges[1:], density, np.asarray(analytic, dtype=float))
    return {"ks": ks, "wasserstein1": w1, "histogram": hist,
            "empirical_mean": float(x.mean()), "n": int(x.size)}


def write_traces_csv(traces: Sequence[PacketTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for tr in traces:
            w.writerow([tr.packet_id, repr(tr.t_arriv), repr(tr.t_ack), tr.retx_count])


def write_histogram_csv(hist: Histogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HIST_HEADER)
        for row in hist.rows():
            w.writerow([repr(float(v)) for v in row])
