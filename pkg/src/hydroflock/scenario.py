"""Time-series ingestion, preprocessing, and scripted scenarios.

The CSV schema is ``timestamp,node_id,inflow_m3s,temp_c,precip_mm,demand_m3s``
with ISO-8601 timestamps in UTF-8. Scenario files are JSON with a topology
reference, step count, seed, and an ``events`` array of
``{t, kind, severity, duration, region, text}`` entries.

A synthetic forcing generator (seasonal demand cycles plus event-driven
inflow, temperature, and precipitation modulation) lets every pipeline run
without external data.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngs
from .errors import SchemaError
from .guidance import ContextEvent
from .network import NetworkTopology, WeatherVector, build_topology

CSV_COLUMNS = ("timestamp", "node_id", "inflow_m3s", "temp_c", "precip_mm", "demand_m3s")
VALUE_COLUMNS = CSV_COLUMNS[2:]


@dataclass
class NodeSeries:
    timestamps: list[datetime]
    values: dict[str, np.ndarray]  # column -> aligned array


@dataclass
class TimeSeries:
    nodes: dict[str, NodeSeries]
    cadence_s: float | None = None


def load_timeseries(path: str | Path, known_ids: Sequence[str] | None = None) -> TimeSeries:
    """Parse and validate the per-node CSV records."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"timeseries file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in CSV_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing column {col!r} in {path}")
        rows: dict[str, list[tuple[datetime, tuple[float, ...]]]] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                ts = datetime.fromisoformat(row["timestamp"])
            except ValueError as exc:
                raise SchemaError(f"line {lineno}: bad timestamp {row['timestamp']!r}") from exc
            nid = row["node_id"]
            if known_ids is not None and nid not in known_ids:
                raise SchemaError(f"line {lineno}: unknown node id {nid!r}")
            try:
                vals = tuple(float(row[c]) for c in VALUE_COLUMNS)
            except ValueError as exc:
                raise SchemaError(f"line {lineno}: non-numeric value") from exc
            rows.setdefault(nid, []).append((ts, vals))
    nodes: dict[str, NodeSeries] = {}
    for nid, recs in rows.items():
        for (t0, _), (t1, _) in zip(recs, recs[1:]):
            if t1 <= t0:
                raise SchemaError(
                    f"node {nid}: timestamps not strictly increasing at {t1.isoformat()}"
                )
        nodes[nid] = NodeSeries(
            timestamps=[t for t, _ in recs],
            values={
                c: np.array([v[i] for _, v in recs]) for i, c in enumerate(VALUE_COLUMNS)
            },
        )
    return TimeSeries(nodes=nodes)


@dataclass(frozen=True)
class PreprocessConfig:
    cadence_s: float = 3600.0
    train_fraction: float = 0.8  # normalization stats come from this leading share
    smooth_window_h: float = 3.0
    max_gap_h: float = 6.0  # gaps of this length or more are flagged, never filled
    lag_hours: tuple[int, ...] = (1, 6, 12, 24)
    rolling_days: tuple[int, ...] = (7, 30)


@dataclass
class FeatureSeries:
    node_id: str
    timestamps: list[datetime]
    features: np.ndarray
    names: list[str]


@dataclass
class PreprocessResult:
    nodes: dict[str, FeatureSeries]
    stats: dict[str, dict[str, tuple[float, float]]]  # node -> column -> (a, b)
    invalid: list[tuple[str, str, str]]  # (node, gap start, gap end) excluded spans
    processed: bool = True


MINMAX_COLUMNS = ("inflow_m3s", "demand_m3s")  # scaled to [0,1]
ZSCORE_COLUMNS = ("temp_c", "precip_mm")  # standardized

SEASONS = {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1, 6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}


def _rolling_mean_std(x: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing rolling statistics with growing windows at the start."""
    n = x.size
    csum = np.concatenate([[0.0], np.cumsum(x)])
    csq = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(1, n + 1)
    lo = np.maximum(0, idx - window)
    count = idx - lo
    mean = (csum[idx] - csum[lo]) / count
    var = np.maximum(0.0, (csq[idx] - csq[lo]) / count - mean**2)
    return mean, np.sqrt(var)


def preprocess(series: TimeSeries | PreprocessResult, config: PreprocessConfig = PreprocessConfig()):
    """Run the fixed preprocessing pipeline and return features plus statistics.

    Order of operations: resample to the intended cadence, linearly fill gaps
    shorter than the limit (longer gaps are excluded and reported), smooth
    with a trailing moving average, normalize (min-max for flow-like columns,
    z-score for weather) with statistics from the training split only, then
    append temporal indicators, lagged values, and rolling statistics.
    Already-processed input is returned unchanged.
    """
    if isinstance(series, PreprocessResult):
        return series

    step = config.cadence_s
    smooth_n = max(1, round(config.smooth_window_h * 3600.0 / step))
    out_nodes: dict[str, FeatureSeries] = {}
    all_stats: dict[str, dict[str, tuple[float, float]]] = {}
    invalid: list[tuple[str, str, str]] = []

    for nid, ns in series.nodes.items():
        t0 = ns.timestamps[0]
        slots = [round((t - t0).total_seconds() / step) for t in ns.timestamps]
        for a, b, ta, tb in zip(slots, slots[1:], ns.timestamps, ns.timestamps[1:]):
            if b == a:
                raise SchemaError(f"node {nid}: duplicate timestamp {tb.isoformat()}")
        n_slots = slots[-1] + 1
        present = np.zeros(n_slots, bool)
        present[slots] = True
        cols = {}
        for c in VALUE_COLUMNS:
            arr = np.full(n_slots, np.nan)
            arr[slots] = ns.values[c]
            cols[c] = arr

        # classify gaps; fill short ones, exclude long ones
        keep = present.copy()
        i = 0
        while i < n_slots:
            if not present[i]:
                j = i
                while j < n_slots and not present[j]:
                    j += 1
                gap_h = (j - i + 1) * step / 3600.0  # span between surrounding records
                if gap_h < config.max_gap_h:
                    for c in VALUE_COLUMNS:
                        a, b = cols[c][i - 1], cols[c][j]
                        frac = np.arange(1, j - i + 1) / (j - i + 1)
                        cols[c][i:j] = a + frac * (b - a)
                    keep[i:j] = True
                else:
                    ts_a = (t0 + (i - 1) * _dt(step)).isoformat()
                    ts_b = (t0 + j * _dt(step)).isoformat()
                    invalid.append((nid, ts_a, ts_b))
                i = j
            else:
                i += 1

        sel = np.flatnonzero(keep)
        timestamps = [t0 + int(s) * _dt(step) for s in sel]
        data = {c: cols[c][sel] for c in VALUE_COLUMNS}

        # trailing moving average
        for c in VALUE_COLUMNS:
            x = data[c]
            sm = np.empty_like(x)
            csum = np.concatenate([[0.0], np.cumsum(x)])
            idx = np.arange(1, x.size + 1)
            lo = np.maximum(0, idx - smooth_n)
            sm = (csum[idx] - csum[lo]) / (idx - lo)
            data[c] = sm

        # normalization stats from the leading training split only
        n_train = max(1, int(math.floor(config.train_fraction * sel.size)))
        stats: dict[str, tuple[float, float]] = {}
        for c in MINMAX_COLUMNS:
            lo_v, hi_v = float(np.min(data[c][:n_train])), float(np.max(data[c][:n_train]))
            if hi_v - lo_v < 1e-12:
                warnings.warn(f"node {nid}: degenerate range for {c}; mapping to 0.5", stacklevel=2)
                stats[c] = (lo_v, lo_v)  # sentinel: zero span
                data[c] = np.full_like(data[c], 0.5)
            else:
                stats[c] = (lo_v, hi_v)
                data[c] = (data[c] - lo_v) / (hi_v - lo_v)  # test split may leave [0,1]
        for c in ZSCORE_COLUMNS:
            mu = float(np.mean(data[c][:n_train]))
            sd = float(np.std(data[c][:n_train]))
            if sd < 1e-12:
                warnings.warn(f"node {nid}: degenerate spread for {c}; mapping to 0.5", stacklevel=2)
                stats[c] = (mu, 0.0)
                data[c] = np.full_like(data[c], 0.5)
            else:
                stats[c] = (mu, sd)
                data[c] = (data[c] - mu) / sd

        names = list(VALUE_COLUMNS)
        blocks = [np.column_stack([data[c] for c in VALUE_COLUMNS])]
        hours = np.array([t.hour for t in timestamps], float)
        blocks.append(
            np.column_stack(
                [
                    hours,
                    [t.weekday() for t in timestamps],
                    [t.month for t in timestamps],
                    [SEASONS[t.month] for t in timestamps],
                ]
            )
        )
        names += ["hour", "weekday", "month", "season"]
        steps_per_h = max(1, round(3600.0 / step))
        for lag_h in config.lag_hours:
            k = lag_h * steps_per_h
            for c in VALUE_COLUMNS:
                x = data[c]
                lagged = np.concatenate([np.full(min(k, x.size), x[0]), x[:-k]])[: x.size]
                blocks.append(lagged.reshape(-1, 1))
                names.append(f"{c}_lag{lag_h}h")
        steps_per_day = max(1, round(86400.0 / step))
        for days in config.rolling_days:
            w = days * steps_per_day
            for c in VALUE_COLUMNS:
                mean, std = _rolling_mean_std(data[c], w)
                blocks.append(mean.reshape(-1, 1))
                blocks.append(std.reshape(-1, 1))
                names += [f"{c}_roll{days}d_mean", f"{c}_roll{days}d_std"]

        out_nodes[nid] = FeatureSeries(nid, timestamps, np.hstack(blocks), names)
        all_stats[nid] = stats

    return PreprocessResult(nodes=out_nodes, stats=all_stats, invalid=invalid)


def _dt(step_s: float):
    from datetime import timedelta

    return timedelta(seconds=step_s)


# -- scenarios -----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticParams:
    inflow_base: float = 6.0  # headwater external inflow, m^3/s
    lateral_base: float = 1.0  # non-headwater external inflow, m^3/s
    demand_base: float = 6.0
    demand_amp: float = 0.4
    temp_base_c: float = 15.0
    temp_amp_c: float = 8.0
    noise: float = 0.05  # relative noise on inflow/demand


@dataclass
class Scenario:
    topology: NetworkTopology
    steps: int
    dt_s: float
    seed: int
    events: tuple[ContextEvent, ...]
    f_eco: float
    forecast_noise: float
    forcing: "SyntheticForcing"
    source: dict  # the dict the scenario was built from

    def pending_events(self, clock: int) -> list[ContextEvent]:
        return schedule_events(self.events, clock)


def schedule_events(events: Sequence[ContextEvent], clock: int) -> list[ContextEvent]:
    """Events pending at the given step (start inclusive, expiry exclusive)."""
    return [e for e in events if e.pending_at(clock)]


class SyntheticForcing:
    """Deterministic per-node forcing arrays with event modulation.

    Arrays are precomputed at construction from counter-based streams, so
    lookups are order-independent and episodes can share one instance.
    """

    def __init__(
        self,
        topology: NetworkTopology,
        steps: int,
        dt_s: float,
        seed: int,
        events: Sequence[ContextEvent] = (),
        params: SyntheticParams = SyntheticParams(),
    ):
        self.topology = topology
        self.steps = steps
        self.dt_s = dt_s
        self.params = params
        node_ids = topology.node_ids()
        t = np.arange(steps)
        hours = t * dt_s / 3600.0
        self._q_ext: dict[str, np.ndarray] = {}
        self._demand: dict[str, np.ndarray] = {}
        self._temp: dict[str, np.ndarray] = {}
        self._precip: dict[str, np.ndarray] = {}
        for idx, nid in enumerate(node_ids):
            g = rngs.stream(seed, "forcing", nid)
            phase = 2.0 * math.pi * (idx / max(1, len(node_ids)))
            base_q = params.inflow_base if not topology.upstream[nid] else params.lateral_base
            q = base_q * (1.0 + params.noise * g.standard_normal(steps))
            d = params.demand_base * (
                1.0 + params.demand_amp * np.sin(2 * np.pi * hours / 24.0 + phase)
            )
            d = d * (1.0 + params.noise * g.standard_normal(steps))
            temp = params.temp_base_c + params.temp_amp_c * np.sin(
                2 * np.pi * hours / 24.0 - np.pi / 2
            )
            precip = np.zeros(steps)
            for e in events:
                span = slice(e.t, min(steps, e.t + e.duration))
                if e.kind == "drought":
                    q[span] *= 1.0 - 0.6 * e.severity
                    d[span] *= 1.0 + 0.5 * e.severity
                    temp[span] += 5.0 * e.severity
                elif e.kind in ("flood", "storm_approaching"):
                    q[span] *= 1.0 + 4.0 * e.severity
                    precip[span] += 8.0 * e.severity
                elif e.kind == "heatwave":
                    temp[span] += 10.0 * e.severity
                elif e.kind == "winter_storm":
                    temp[span] -= 15.0 * e.severity
                    q[span] *= 1.0 - 0.3 * e.severity
            self._q_ext[nid] = np.maximum(0.0, q)
            self._demand[nid] = np.maximum(0.0, d)
            self._temp[nid] = temp
            self._precip[nid] = np.maximum(0.0, precip)

    def _clip_t(self, t: int) -> int:
        return min(max(t, 0), self.steps - 1)

    def q_ext(self, nid: str, t: int) -> float:
        return float(self._q_ext[nid][self._clip_t(t)])

    def demand(self, nid: str, t: int) -> float:
        return float(self._demand[nid][self._clip_t(t)])

    def weather(self, nid: str, t: int) -> WeatherVector:
        t = self._clip_t(t)
        return WeatherVector(
            temp_c=float(self._temp[nid][t]),
            precip_mm=float(self._precip[nid][t]),
            humidity=0.5,
        )

    def forecast(self, nid: str, t: int, horizon: int) -> np.ndarray:
        rows = [self.weather(nid, t + 1 + k).as_array() for k in range(horizon)]
        return np.array(rows) if rows else np.zeros((0, 3))


def load_scenario(source: str | Path | Mapping) -> Scenario:
    """Build a scenario from its JSON file or an equivalent dict."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise SchemaError(f"scenario file not found: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        base_dir = path.parent
    else:
        doc = dict(source)
        base_dir = Path(".")
    if "seed" not in doc:
        raise SchemaError("scenario must declare a seed")
    topo_spec = doc.get("topology")
    if isinstance(topo_spec, str):
        topo_path = base_dir / topo_spec
        if not topo_path.exists():
            raise SchemaError(f"topology file not found: {topo_path}")
        topo_spec = json.loads(topo_path.read_text(encoding="utf-8"))
    if topo_spec is None:
        raise SchemaError("scenario must reference a topology")
    topology = build_topology(topo_spec)
    steps = int(doc.get("steps", 24))
    dt_s = float(doc.get("dt_s", 3600.0))
    seed = int(doc["seed"])
    events = tuple(ContextEvent(**e) for e in doc.get("events", []))
    for e in events:
        if not 0 <= e.t < steps:
            raise SchemaError(f"event at t={e.t} outside time range [0, {steps})")
    synth = doc.get("synthetic", {})
    params = SyntheticParams(**synth) if synth else SyntheticParams()
    forcing = SyntheticForcing(topology, steps, dt_s, seed, events, params)
    return Scenario(
        topology=topology,
        steps=steps,
        dt_s=dt_s,
        seed=seed,
        events=events,
        f_eco=float(doc.get("f_eco", 0.0)),
        forecast_noise=float(doc.get("forecast_noise", 0.0)),
        forcing=forcing,
        source=doc,
    )
