"""Synthetic 15-minute KPI datasets, CSV ingestion, correlation analysis and cell graphs.

A dataset is a :class:`pandas.DataFrame` whose columns are exactly
:data:`KPI_COLUMNS`; :class:`KpiRecord` is the row type.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import ParameterError, RecordValidationError, SchemaError
from .ransim import SimConfig, pdelay_windows, run_des
from .stochastics import make_rng

BIN_SECONDS = 900
BINS_PER_DAY = 96
DAY_SECONDS = 86400
# 2023-03-01T00:00:00Z
EPOCH = 1677628800

KPI_COLUMNS = [
    "timestamp", "cell_id", "qci", "traffic_volume_dl", "prb_util_dl", "active_ues_dl",
    "avg_cqi", "avg_rssi_ul", "avg_sinr_ul", "avg_mcs_dl", "avg_mcs_ul",
    "tod_sin", "tod_cos", "label_latency_ms",
]
FEATURE_COLUMNS = KPI_COLUMNS[3:13]
LABEL_COLUMN = "label_latency_ms"

_RANGES = {
    "traffic_volume_dl": (0.0, math.inf),
    "prb_util_dl": (0.0, 1.0),
    "active_ues_dl": (0.0, math.inf),
    "avg_cqi": (0.0, 15.0),
    "avg_rssi_ul": (-130.0, -60.0),
    "avg_sinr_ul": (-10.0, 40.0),
    "avg_mcs_dl": (0.0, 28.0),
    "avg_mcs_ul": (0.0, 28.0),
    "tod_sin": (-1.0, 1.0),
    "tod_cos": (-1.0, 1.0),
    "label_latency_ms": (0.0, math.inf),
}

# (name, column, reference r, sign-stable)
CORRELATION_REFERENCE = [
    ("Time", "time", 0.39, False),
    ("Traffic volume in DL", "traffic_volume_dl", 0.62, True),
    ("Resources' utilization in DL per TTI", "prb_util_dl", 0.79, True),
    ("Number of active UEs in DL", "active_ues_dl", 0.67, True),
    ("Average CQI", "avg_cqi", -0.35, True),
    ("Average RSSI in UL", "avg_rssi_ul", -0.33, True),
    ("Average SINR in UL", "avg_sinr_ul", -0.33, True),
    ("Average MCS in DL", "avg_mcs_dl", 0.11, False),
    ("Average MCS in UL", "avg_mcs_ul", -0.47, True),
]
TRAFFIC_COLUMNS = ("traffic_volume_dl", "prb_util_dl", "active_ues_dl")


@dataclass(frozen=True)
class KpiRecord:
    timestamp: int
    cell_id: str
    qci: int
    traffic_volume_dl: float
    prb_util_dl: float
    active_ues_dl: float
    avg_cqi: float
    avg_rssi_ul: float
    avg_sinr_ul: float
    avg_mcs_dl: float
    avg_mcs_ul: float
    tod_sin: float
    tod_cos: float
    label_latency_ms: float


def frame_from_records(records: Sequence[KpiRecord]) -> pd.DataFrame:
    if not records:
        return _empty_frame()
    return _typed(pd.DataFrame([asdict(r) for r in records], columns=KPI_COLUMNS))


def records_from_frame(df: pd.DataFrame) -> list:
    return [KpiRecord(**row) for row in df[KPI_COLUMNS].to_dict("records")]


def _empty_frame() -> pd.DataFrame:
    return _typed(pd.DataFrame({c: [] for c in KPI_COLUMNS}))


def _typed(df: pd.DataFrame) -> pd.DataFrame:
    df = df.astype({"timestamp": "int64", "qci": "int64", "cell_id": "object"})
    for c in KPI_COLUMNS[3:]:
        df[c] = df[c].astype("float64")
    return df


# -- cell graphs ---------------------------------------------------------------


@dataclass(frozen=True)
class KNearest:
    k: int


@dataclass(frozen=True)
class Radius:
    r_km: float


@dataclass
class CellGraph:
    """Undirected graph over cells with planar coordinates in km."""

    cells: list
    edges: set = field(default_factory=set)

    def __post_init__(self):
        ids = [c[0] for c in self.cells]
        if len(set(ids)) != len(ids):
            raise ParameterError("cell ids must be distinct")
        known = set(ids)
        norm = set()
        for a, b in self.edges:
            if a == b:
                raise ParameterError(f"self-loop on {a!r}")
            if a not in known or b not in known:
                raise ParameterError(f"edge ({a!r}, {b!r}) references an unknown cell")
            norm.add((a, b) if a < b else (b, a))
        self.edges = norm

    @property
    def cell_ids(self) -> list:
        return [c[0] for c in self.cells]

    @property
    def coords(self) -> np.ndarray:
        return np.array([[c[1], c[2]] for c in self.cells], dtype=float)

    def __len__(self):
        return len(self.cells)

    def neighbors(self, cell_id) -> list:
        return sorted([b for a, b in self.edges if a == cell_id] + [a for a, b in self.edges if b == cell_id])

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 matrix in ``cell_ids`` order."""
        pos = {cid: i for i, cid in enumerate(self.cell_ids)}
        a = np.zeros((len(self), len(self)))
        for u, v in self.edges:
            a[pos[u], pos[v]] = a[pos[v], pos[u]] = 1.0
        return a

    def hop_distances(self) -> np.ndarray:
        """All-pairs hop counts (``inf`` when disconnected)."""
        adj = self.adjacency()
        n = len(self)
        out = np.full((n, n), np.inf)
        for s in range(n):
            out[s, s] = 0
            q = deque([s])
            while q:
                u = q.popleft()
                for v in np.flatnonzero(adj[u]):
                    if out[s, v] == np.inf:
                        out[s, v] = out[s, u] + 1
                        q.append(v)
        return out

    def without_edges(self) -> "CellGraph":
        return CellGraph(list(self.cells), set())

    def save(self, nodes_path, edges_path) -> None:
        with open(nodes_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_id", "x_km", "y_km"])
            for cid, x, y in self.cells:
                w.writerow([cid, repr(float(x)), repr(float(y))])
        with open(edges_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell_a", "cell_b"])
            for a, b in sorted(self.edges):
                w.writerow([a, b])

    @classmethod
    def load(cls, nodes_path, edges_path) -> "CellGraph":
        with open(nodes_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        cells = [(r["cell_id"], float(r["x_km"]), float(r["y_km"])) for r in rows]
        with open(edges_path, newline="") as fh:
            edges = {(r["cell_a"], r["cell_b"]) for r in csv.DictReader(fh)}
        return cls(cells, edges)


def build_graph(coords, rule) -> CellGraph:
    """Connect cells by ``KNearest(k)`` (symmetrized by union) or ``Radius(r_km)``."""
    cells = [(c[0], float(c[1]), float(c[2])) for c in coords]
    ids = [c[0] for c in cells]
    if len(set(ids)) != len(ids):
        raise ParameterError("cell ids must be distinct")
    xy = np.array([[c[1], c[2]] for c in cells]).reshape(-1, 2)
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    n = len(cells)
    edges = set()
    if isinstance(rule, KNearest):
        if rule.k < 1 or rule.k >= n:
            raise ParameterError(f"k must lie in [1, {n - 1}], got {rule.k}")
        for i in range(n):
            order = [j for j in np.argsort(d[i], kind="stable") if j != i][: rule.k]
            for j in order:
                edges.add((ids[i], ids[j]))
    elif isinstance(rule, Radius):
        if rule.r_km < 0:
            raise ParameterError("radius must be >= 0")
        for i in range(n):
            for j in range(i + 1, n):
                if 0 < d[i, j] <= rule.r_km:
                    edges.add((ids[i], ids[j]))
    else:
        raise ParameterError(f"unknown graph rule {rule!r}")
    return CellGraph(cells, edges)


def grid_cells(n_cells: int = 20, spacing_km: float = 1.0, jitter_km: float = 0.15,
               seed: int = 0) -> list:
    """Cells on a jittered grid, ``ncols = ceil(sqrt(n))``."""
    rng = make_rng(seed, 7)
    ncols = math.ceil(math.sqrt(n_cells))
    out = []
    for i in range(n_cells):
        r, c = divmod(i, ncols)
        jx, jy = rng.uniform(-jitter_km, jitter_km, 2)
        out.append((f"c{i:03d}", round(c * spacing_km + jx, 6), round(r * spacing_km + jy, 6)))
    return out


def default_graph(n_cells: int = 20, seed: int = 0) -> CellGraph:
    return build_graph(grid_cells(n_cells, seed=seed), Radius(1.5))


# -- scenario profiles ---------------------------------------------------------


@dataclass(frozen=True)
class AnomalyWindow:
    """Load surge between ``start`` and ``end`` (seconds from dataset start).

    ``cells=None`` applies the surge to every cell.
    """

    start: float
    end: float
    surge: float
    cells: Optional[tuple] = None


def _bump(hours, center, width):
    d = np.minimum(np.abs(hours - center), 24 - np.abs(hours - center))
    return np.exp(-0.5 * (d / width) ** 2)


def diurnal_curve(kind: str) -> np.ndarray:
    h = np.arange(BINS_PER_DAY) * 24.0 / BINS_PER_DAY
    if kind == "dense_urban":
        c = 0.25 + 0.9 * _bump(h, 14.5, 4.0) + 0.25 * _bump(h, 20.0, 2.0)
    elif kind == "vehicular":
        c = 0.2 + 0.95 * _bump(h, 8.0, 1.4) + 1.0 * _bump(h, 18.0, 1.7) + 0.35 * _bump(h, 13.0, 2.5)
    elif kind == "event":
        c = 0.25 + 0.8 * _bump(h, 15.0, 4.5) + 0.3 * _bump(h, 21.0, 1.5)
    else:
        raise ParameterError(f"unknown scenario kind {kind!r}")
    return c / c.max()


_QCI_BASE = {7: {"load_scale": 1.0, "bler0": 0.06}, 1: {"load_scale": 0.45, "bler0": 0.01}}

_DEFAULT_NOISE = {
    "traffic_volume_dl": 0.22,
    "prb_util_dl": 0.025,
    "active_ues_dl": 0.18,
    "avg_cqi": 0.9,
    "avg_rssi_ul": 2.5,
    "avg_sinr_ul": 2.5,
    "avg_mcs_dl": 1.5,
    "avg_mcs_ul": 1.5,
    "label": 0.18,
    "idio": 0.12,
}


@dataclass(frozen=True)
class ScenarioProfile:
    """Parameters of one synthetic traffic scenario.

    Load is expressed as the server utilization ``rho`` (retransmissions
    included); ``peak_load`` is the utilization reached at the diurnal peak
    before spatial and idiosyncratic perturbations.
    """

    kind: str = "dense_urban"
    diurnal: Optional[tuple] = None
    peak_load: float = 0.75
    service_rate: float = 0.5
    harq_delay: float = 1.0
    n_max: int = 8
    bler_base: float = 0.06
    bler_load_slope: float = 0.12
    anomaly_windows: tuple = ()
    noise: Optional[dict] = None
    spatial_scale_km: float = 1.6
    spatial_sigma: float = 0.35
    temporal_corr: float = 0.97
    mobility: float = 0.3
    qci: int = 7
    seed: int = 0

    def __post_init__(self):
        if self.qci not in _QCI_BASE:
            raise ParameterError(f"qci must be 1 or 7, got {self.qci!r}")
        if self.diurnal is not None:
            d = np.asarray(self.diurnal, dtype=float)
            if d.shape != (BINS_PER_DAY,) or np.any(d <= 0):
                raise ParameterError("diurnal curve needs 96 positive multipliers")
        if not (0 <= self.mobility <= 1):
            raise ParameterError("mobility must lie in [0, 1]")
        if not (0 < self.peak_load < 1):
            raise ParameterError("peak_load must lie in (0, 1)")
        for w in self.anomaly_windows:
            if not (w.end > w.start and w.surge > 0):
                raise ParameterError(f"bad anomaly window {w!r}")

    @property
    def diurnal_multipliers(self) -> np.ndarray:
        if self.diurnal is not None:
            return np.asarray(self.diurnal, dtype=float)
        return diurnal_curve(self.kind)

    @property
    def noise_scales(self) -> dict:
        out = dict(_DEFAULT_NOISE)
        out.update(self.noise or {})
        return out

    def replace(self, **changes) -> "ScenarioProfile":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return ScenarioProfile(**kw)


def event_windows(days=(15, 16), start_hour=19.0, end_hour=23.5, surge=2.5, cells=None) -> tuple:
    """Evening surges on the given zero-based days, as during a concert."""
    return tuple(AnomalyWindow(d * DAY_SECONDS + start_hour * 3600, d * DAY_SECONDS + end_hour * 3600,
                               surge, None if cells is None else tuple(cells)) for d in days)


def default_profile(kind: str = "dense_urban", seed: int = 0, **changes) -> ScenarioProfile:
    base = {"kind": kind, "seed": seed}
    if kind == "vehicular":
        base.update(temporal_corr=0.9, noise={"label": 0.3})
    elif kind == "event":
        base.update(anomaly_windows=event_windows())
    base.update(changes)
    return ScenarioProfile(**base)


# -- generation ----------------------------------------------------------------


def _truncated_mean_retx(bler: np.ndarray, n_max: int) -> np.ndarray:
    j = np.arange(n_max + 1)
    q = bler[..., None]
    w = q ** j * (1 - q)
    return (w * j).sum(-1) / w.sum(-1)


def analytic_label_mean(rho, bler, service_rate, harq_delay, n_max):
    """Vectorized exact mean latency for a priority queue at utilization ``rho``.

    Same mapping as :func:`pqlat.ransim.implied_latency_params` followed by
    :func:`pqlat.latency_model.exact_mean`.
    """
    rho = np.asarray(rho, dtype=float)
    bler = np.asarray(bler, dtype=float)
    mu = service_rate
    en = _truncated_mean_retx(bler, n_max)
    rho_retx = rho * en / (1 + en)
    resid = rho / mu
    s1 = resid / ((1 - rho_retx) * (1 - rho)) + 1 / mu
    s2 = np.minimum(resid / (1 - rho_retx) + 1 / mu, s1)
    return (s1 + harq_delay) + en * (s2 + harq_delay)


def _spatial_factor(coords: np.ndarray, scale: float) -> np.ndarray:
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    k = np.exp(-0.5 * d2 / scale**2) + 1e-8 * np.eye(len(coords))
    return np.linalg.cholesky(k)


def _des_label(rho, bler, profile, rng_seed, n_packets=2000):
    # one short simulation per record, aggregated by the PDCP delay formula
    en = _truncated_mean_retx(np.array([bler]), profile.n_max)[0]
    beta = rho * profile.service_rate / (1 + en)
    cfg = SimConfig(arrival_rate=beta, service_rate=profile.service_rate, bler=bler,
                    harq_delay=profile.harq_delay, retx_priority=True, n_max=profile.n_max,
                    duration=200 / beta + n_packets / beta, warmup=200 / beta, seed=rng_seed)
    traces = run_des(cfg)
    series = pdelay_windows(traces, width=cfg.duration * 10, resolution=0.1, origin=0.0)
    return float(series.p_delay[0])


def generate_dataset(profile: ScenarioProfile, n_days: int, cells: CellGraph,
                     label_backend: str = "analytic", return_truth: bool = False):
    """KPI rows for every cell and 15-minute bin, sorted by (timestamp, cell_id).

    With ``return_truth=True`` also returns a frame holding the latent
    utilization, BLER, noise-free mean latency and anomaly flag per row.
    """
    if n_days < 1:
        raise ParameterError("n_days must be >= 1")
    if len(cells) == 0:
        raise ParameterError("cell graph is empty")
    if label_backend not in ("analytic", "des"):
        raise ParameterError(f"label_backend must be 'analytic' or 'des', got {label_backend!r}")
    span = n_days * DAY_SECONDS
    for w in profile.anomaly_windows:
        if w.start < 0 or w.end > span:
            raise ParameterError(f"anomaly window {w!r} outside the {n_days}-day span")

    ns = profile.noise_scales
    qb = _QCI_BASE[profile.qci]
    n_c, n_t = len(cells), n_days * BINS_PER_DAY
    seed = profile.seed
    ids = cells.cell_ids

    # latent load: diurnal x spatially smooth AR(1) field x idiosyncratic term
    chol = _spatial_factor(cells.coords, profile.spatial_scale_km)
    rng_f = make_rng(seed, 1)
    a = profile.temporal_corr
    innov = (rng_f.standard_normal((n_t, n_c)) * math.sqrt(1 - a * a)) @ chol.T
    # mobility: part of each cell's load state moves to its neighbours per bin
    adj = cells.adjacency()
    deg = adj.sum(axis=1, keepdims=True)
    nbr = np.divide(adj, deg, out=np.eye(n_c), where=deg > 0)
    mix = a * ((1 - profile.mobility) * np.eye(n_c) + profile.mobility * nbr)
    field_ = np.empty((n_t, n_c))
    field_[0] = chol @ rng_f.standard_normal(n_c)
    for t in range(1, n_t):
        field_[t] = mix @ field_[t - 1] + innov[t]

    rng_c = make_rng(seed, 2)
    cell_load = np.exp(rng_c.normal(0, 0.12, n_c))
    cell_quality = rng_c.normal(0, 1, n_c)
    cell_vol = np.exp(rng_c.normal(0, 0.15, n_c))
    cell_ue = np.exp(rng_c.normal(0, 0.15, n_c))

    bins = np.arange(n_t)
    tod = bins % BINS_PER_DAY
    diurnal = profile.diurnal_multipliers[tod]
    rng_n = make_rng(seed, 3)
    idio = rng_n.standard_normal((n_t, n_c)) * ns["idio"]
    raw = (profile.peak_load * qb["load_scale"] * diurnal[:, None] * cell_load[None, :]
           * np.exp(profile.spatial_sigma * field_ + idio))

    ts = EPOCH + bins * BIN_SECONDS
    t_rel = (bins * BIN_SECONDS)[:, None]
    surge = np.ones((n_t, n_c))
    pos = {cid: i for i, cid in enumerate(ids)}
    for w in profile.anomaly_windows:
        rows = (t_rel[:, 0] >= w.start) & (t_rel[:, 0] < w.end)
        cols = np.ones(n_c, bool) if w.cells is None else np.isin(np.arange(n_c), [pos[c] for c in w.cells])
        surge[np.ix_(rows, cols)] *= w.surge
    anomalous = surge != 1.0
    raw = raw * surge

    rho_cap = 0.95
    rho = rho_cap * np.tanh(raw / rho_cap)
    quality = cell_quality[None, :] - 1.5 * rho
    bler = qb["bler0"] * profile.bler_base / 0.06 * np.exp(-0.35 * quality) + profile.bler_load_slope * rho ** 2
    bler = np.clip(bler, 1e-3, 0.5)

    mean_lat = analytic_label_mean(rho, bler, profile.service_rate, profile.harq_delay, profile.n_max)
    # event crowds add signalling congestion beyond the queueing model
    mean_lat = mean_lat * np.where(anomalous, surge ** 0.5, 1.0)

    rng_l = make_rng(seed, 4)
    cv = ns["label"]
    if label_backend == "analytic":
        jitter = rng_l.gamma(1.0 / cv**2, cv**2, (n_t, n_c))
        label = np.floor(mean_lat * jitter / 0.1 + 1e-9) * 0.1
    else:
        label = np.empty((n_t, n_c))
        for t in range(n_t):
            for c in range(n_c):
                label[t, c] = _des_label(float(rho[t, c]), float(bler[t, c]), profile,
                                         seed * 1_000_003 + t * n_c + c)
    label = np.round(label, 6)

    rng_x = make_rng(seed, 5)

    def nz(scale):
        return rng_x.standard_normal((n_t, n_c)) * scale

    # crowds bring many light devices: attached UEs grow faster than load,
    # and uplink interference rises (RSSI up, SINR down)
    crowd = np.where(anomalous, surge ** 1.5, 1.0)
    interference_db = 10.0 * np.log10(crowd)
    volume = 2.0e5 * cell_vol[None, :] * rho * np.exp(nz(ns["traffic_volume_dl"]))
    prb = np.clip(rho + nz(ns["prb_util_dl"]), 0.0, 1.0)
    ues = 40.0 * cell_ue[None, :] * rho * crowd * np.exp(nz(ns["active_ues_dl"]))
    cqi = np.clip(10.5 + 1.2 * cell_quality[None, :] - 4.0 * rho + nz(ns["avg_cqi"]), 0, 15)
    rssi = np.clip(-92.0 + 3.0 * cell_quality[None, :] - 9.0 * rho + interference_db + nz(ns["avg_rssi_ul"]),
                   -130, -60)
    sinr = np.clip(14.0 + 3.0 * cell_quality[None, :] - 10.0 * rho - interference_db + nz(ns["avg_sinr_ul"]),
                   -10, 40)
    mcs_dl = np.clip(17.0 + 2.5 * cell_quality[None, :] - 1.0 * rho + nz(ns["avg_mcs_dl"]), 0, 28)
    mcs_ul = np.clip(16.0 + 2.0 * cell_quality[None, :] - 8.0 * rho + nz(ns["avg_mcs_ul"]), 0, 28)
    phase = 2 * np.pi * tod / BINS_PER_DAY

    def col(x):
        return np.round(np.asarray(x, dtype=float).ravel(), 6)

    n = n_t * n_c
    df = pd.DataFrame({
        "timestamp": np.repeat(ts, n_c).astype(np.int64),
        "cell_id": np.tile(np.array(ids, dtype=object), n_t),
        "qci": np.full(n, profile.qci, dtype=np.int64),
        "traffic_volume_dl": col(volume),
        "prb_util_dl": col(prb),
        "active_ues_dl": col(ues),
        "avg_cqi": col(cqi),
        "avg_rssi_ul": col(rssi),
        "avg_sinr_ul": col(sinr),
        "avg_mcs_dl": col(mcs_dl),
        "avg_mcs_ul": col(mcs_ul),
        "tod_sin": col(np.repeat(np.sin(phase), n_c)),
        "tod_cos": col(np.repeat(np.cos(phase), n_c)),
        "label_latency_ms": col(label),
    })
    if not return_truth:
        return df
    truth = pd.DataFrame({
        "timestamp": df["timestamp"], "cell_id": df["cell_id"],
        "rho": rho.ravel(), "bler": bler.ravel(), "mean_latency_ms": mean_lat.ravel(),
        "anomaly": anomalous.ravel().astype(np.int64),
    })
    return df, truth


def anomaly_labels(df: pd.DataFrame, profile: ScenarioProfile) -> pd.DataFrame:
    """Sidecar ``timestamp,cell_id,is_anomaly`` for the profile's surge windows."""
    t0 = (int(df["timestamp"].min()) // DAY_SECONDS) * DAY_SECONDS
    rel = df["timestamp"].to_numpy() - t0
    flag = np.zeros(len(df), dtype=bool)
    cid = df["cell_id"].to_numpy()
    for w in profile.anomaly_windows:
        hit = (rel >= w.start) & (rel < w.end)
        if w.cells is not None:
            hit &= np.isin(cid, list(w.cells))
        flag |= hit
    return pd.DataFrame({"timestamp": df["timestamp"].to_numpy(), "cell_id": cid,
                         "is_anomaly": flag.astype(np.int64)})


# -- analysis ------------------------------------------------------------------


def pearson(records: pd.DataFrame, feature_name: str, target: str = LABEL_COLUMN) -> float:
    """Pearson correlation between a column and the latency label."""
    if feature_name not in records.columns:
        raise SchemaError(f"missing column {feature_name!r}")
    x = records[feature_name].to_numpy(dtype=float)
    y = records[target].to_numpy(dtype=float)
    if x.size < 3:
        raise ParameterError("need at least 3 records")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise ParameterError(f"correlation undefined: zero variance in {feature_name!r} or label")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def time_correlation(records: pd.DataFrame) -> float:
    """Correlation of the label with the best-aligned daily cosine.

    Equals the multiple correlation of the label on (tod_sin, tod_cos), so it
    is nonnegative.
    """
    for c in ("tod_sin", "tod_cos", LABEL_COLUMN):
        if c not in records.columns:
            raise SchemaError(f"missing column {c!r}")
    x = np.column_stack([records["tod_sin"], records["tod_cos"], np.ones(len(records))])
    y = records[LABEL_COLUMN].to_numpy(dtype=float)
    if np.var(y) == 0:
        raise ParameterError("correlation undefined: zero label variance")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    fit = x @ coef
    if np.var(fit) == 0:
        return 0.0
    return float(np.sqrt(max(0.0, np.var(fit) / np.var(y))))


@dataclass
class CorrelationRow:
    feature: str
    column: str
    r: float
    reference: float
    sign_stable: bool

    @property
    def sign_match(self) -> bool:
        return np.sign(self.r) == np.sign(self.reference)


def correlation_table(records: pd.DataFrame) -> list:
    """Pearson r against the label for the nine feature rows, with reference values."""
    rows = []
    for name, col, ref, stable in CORRELATION_REFERENCE:
        r = time_correlation(records) if col == "time" else pearson(records, col)
        rows.append(CorrelationRow(name, col, r, ref, stable))
    return rows


def sign_check(rows: Sequence[CorrelationRow]) -> bool:
    return all(r.sign_match for r in rows if r.sign_stable)


# -- splits and IO -------------------------------------------------------------


def day_index(records: pd.DataFrame) -> np.ndarray:
    ts = records["timestamp"].to_numpy(dtype=np.int64)
    t0 = (ts.min() // DAY_SECONDS) * DAY_SECONDS
    return (ts - t0) // DAY_SECONDS


def split_by_days(records: pd.DataFrame, train_days: int, test_days: int):
    """Chronological split: the first ``train_days`` calendar days, then ``test_days``."""
    if train_days < 0 or test_days < 0:
        raise ParameterError("day counts must be >= 0")
    if len(records) == 0:
        raise ParameterError("no records to split")
    day = day_index(records)
    if day.max() + 1 < train_days + test_days:
        raise ParameterError(
            f"dataset spans {day.max() + 1} days, need {train_days + test_days}")
    order = np.lexsort((records["cell_id"].to_numpy().astype(str), records["timestamp"].to_numpy()))
    srt = records.iloc[order]
    d = day[order]
    train = srt[d < train_days].reset_index(drop=True)
    test = srt[(d >= train_days) & (d < train_days + test_days)].reset_index(drop=True)
    return train, test


def validate_frame(df: pd.DataFrame) -> None:
    missing = [c for c in KPI_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns {missing}")
    for i, row in enumerate(df[KPI_COLUMNS].itertuples(index=False)):
        _validate_row(row._asdict(), i)


def _validate_row(row: dict, i: int) -> None:
    if row["timestamp"] % BIN_SECONDS != 0:
        raise RecordValidationError(f"row {i}: timestamp {row['timestamp']} not on the 900 s grid",
                                    i, "timestamp")
    if row["qci"] not in (1, 7):
        raise RecordValidationError(f"row {i}: qci {row['qci']} not in {{1, 7}}", i, "qci")
    for name, (lo, hi) in _RANGES.items():
        v = row[name]
        if not (lo <= v <= hi) or math.isnan(v):
            raise RecordValidationError(f"row {i}: field {name}={v!r} outside [{lo}, {hi}]", i, name)


def save_csv(records: pd.DataFrame, path) -> None:
    """Write records with the exact KPI header; floats use shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KPI_COLUMNS)
        cols = [records[c].tolist() for c in KPI_COLUMNS]
        for vals in zip(*cols):
            w.writerow([vals[0], vals[1], vals[2]] + [repr(float(v)) for v in vals[3:]])


def load_csv(path) -> pd.DataFrame:
    """Parse and validate a KPI CSV. Errors name the zero-based data row and field."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header") from None
        if header != KPI_COLUMNS:
            raise SchemaError(f"{path}: header must be {','.join(KPI_COLUMNS)}")
        out = {c: [] for c in KPI_COLUMNS}
        for i, row in enumerate(reader):
            if len(row) != len(KPI_COLUMNS):
                raise SchemaError(f"{path}: row {i}: expected {len(KPI_COLUMNS)} fields, got {len(row)}")
            parsed = {}
            for name, raw in zip(KPI_COLUMNS, row):
                try:
                    if name in ("timestamp", "qci"):
                        parsed[name] = int(raw)
                    elif name == "cell_id":
                        parsed[name] = raw
                    else:
                        parsed[name] = float(raw)
                except ValueError:
                    raise RecordValidationError(f"{path}: row {i}: cannot parse {name}={raw!r}",
                                                i, name) from None
            _validate_row(parsed, i)
            for k, v in parsed.items():
                out[k].append(v)
    if not out["timestamp"]:
        return _empty_frame()
    return _typed(pd.DataFrame(out, columns=KPI_COLUMNS))
