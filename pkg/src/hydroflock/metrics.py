"""Evaluation metrics and the decision-time scaling benchmark."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QcResult:
    """Coordination quality plus the plug-in estimator's first-order bias bound."""

    value: float
    bias_bound: float
    per_agent: tuple[float, ...]


def _quantile_bins(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Midrank-based quantile bins: ties share a bin, and any strictly
    monotone transform of x yields identical assignments."""
    order = np.sort(x)
    lo = np.searchsorted(order, x, side="left")
    hi = np.searchsorted(order, x, side="right")
    midrank = (lo + hi) / (2.0 * x.size)
    return np.minimum((midrank * n_bins).astype(int), n_bins - 1)


def _plugin_mi(ix: np.ndarray, iy: np.ndarray, n_bins: int) -> float:
    """Plug-in mutual information (nats) from binned samples."""
    joint = np.zeros((n_bins, n_bins))
    np.add.at(joint, (ix, iy), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float(np.sum(joint[mask] * np.log(joint[mask] / (px @ py)[mask])))


def coordination_quality(actions: np.ndarray, n_bins: int = 8) -> QcResult:
    """Average normalized mutual information between each agent and the rest.

    ``actions`` is (n_samples, n_agents) of total releases. Each agent's
    counterpart is the mean of the others' totals; both sides are
    quantile-binned, and the same natural log appears in the numerator and
    the log(n_agents) normalizer, so the base cancels. The first-order
    plug-in bias bound (bins-1)^2 / (2 n_samples) per agent is reported
    alongside, normalized the same way.
    """
    actions = np.asarray(actions, float)
    if actions.ndim != 2 or actions.shape[1] < 2:
        raise ValueError("need a (samples, agents>=2) action matrix")
    n_samples, n_agents = actions.shape
    if n_samples < n_bins:
        raise ValueError("not enough samples for the requested binning")
    total = actions.sum(axis=1)
    log_n = math.log(n_agents)
    per_agent = []
    for i in range(n_agents):
        x = actions[:, i]
        y = (total - x) / (n_agents - 1)
        mi = _plugin_mi(_quantile_bins(x, n_bins), _quantile_bins(y, n_bins), n_bins)
        per_agent.append(mi / log_n)
    bias = (n_bins - 1) ** 2 / (2.0 * n_samples) / log_n
    return QcResult(
        value=float(np.mean(per_agent)), bias_bound=bias, per_agent=tuple(per_agent)
    )


def learning_curve_cv(returns, window: int) -> float:
    """Population std over |mean| of the trailing window; NaN when the mean vanishes."""
    returns = np.asarray(list(returns), float)
    if window < 1 or window > returns.size:
        raise ValueError("window must be within the series length")
    tail = returns[-window:]
    mean = tail.mean()
    scale = max(1.0, float(np.max(np.abs(tail))) if tail.size else 1.0)
    if abs(mean) < 1e-9 * scale:
        return math.nan
    return float(tail.std() / abs(mean))


def safety_rate(flood_flags) -> float:
    """Fraction of (step, node) samples with the level at or below the safe bound."""
    flags = np.asarray(list(flood_flags), float)
    if flags.size == 0:
        raise ValueError("empty log")
    return float(1.0 - flags.mean())


# -- scaling benchmark ---------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    nodes: int
    median_step_ms: float
    peak_mem_mb: float | None


@dataclass(frozen=True)
class BenchResult:
    rows: tuple[BenchRow, ...]
    slope: float  # log-log fit of median step time against node count

    def doubling_ratios(self) -> list[float]:
        times = [r.median_step_ms for r in self.rows]
        return [b / a for a, b in zip(times, times[1:])]


def _grid_dims(n: int) -> tuple[int, int]:
    r = max(1, int(math.isqrt(n)))
    while n % r:
        r -= 1
    return r, n // r


def _peak_rss_mb() -> float | None:
    try:
        import resource

        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    except Exception:  # noqa: BLE001 - platform without rusage
        return None


def scaling_benchmark(
    sizes, steps: int, seed: int, settings=None, collect_traces: bool = False
):
    """Median per-decision-step wall time of untrained policies across grid sizes.

    Every node runs the full decision path (observation encoding,
    coordination losses, policy forward, simulator step) each step. Returns
    a :class:`BenchResult`; with ``collect_traces`` the per-size action
    traces are returned as well for determinism checks.
    """
    from .scenario import load_scenario
    from .training import AgentPool, desk_settings, rollout_episode

    if settings is None:
        settings = desk_settings()
    rows = []
    traces = {}
    for n in sizes:
        r, c = _grid_dims(int(n))
        scenario = load_scenario(
            {
                "topology": {"grid": {"rows": r, "cols": c}},
                "steps": steps,
                "seed": seed,
                "f_eco": 5.0,
            }
        )
        pool = AgentPool(scenario.topology, settings, seed)
        # warm-up (allocations, caches) then timed per-step episode
        step_times, trace = _timed_episode(pool, scenario, settings, seed)
        rows.append(
            BenchRow(
                nodes=int(n),
                median_step_ms=float(np.median(step_times) * 1e3),
                peak_mem_mb=_peak_rss_mb(),
            )
        )
        if collect_traces:
            traces[int(n)] = trace
    sizes_arr = np.array([row.nodes for row in rows], float)
    times_arr = np.array([row.median_step_ms for row in rows], float)
    slope = float(np.polyfit(np.log(sizes_arr), np.log(times_arr), 1)[0])
    result = BenchResult(rows=tuple(rows), slope=slope)
    return (result, traces) if collect_traces else result


def _timed_episode(pool, scenario, settings, seed):
    """One episode with per-step wall-clock timing and an action trace."""
    from . import policy as pol
    from . import nets, rng as rngs
    from .simulate import Simulator
    from .training import _coordination_snapshot, _observe
    from .coordination import alignment_loss, cohesion_loss, separation_loss

    topo = pool.topology
    sim = Simulator(
        topo, settings.uparams, seed, dt_s=scenario.dt_s, forcing=scenario.forcing, episode=0
    )
    action_rng = {nid: rngs.stream(seed, "action", nid, 0) for nid in topo.nodes}
    hist = {nid: [] for nid in topo.nodes}
    times = []
    trace = []
    for t in range(scenario.steps):
        start = time.perf_counter()
        sim.set_conditions(t)
        for nid in topo.nodes:
            hist[nid].append(sim.states[nid])
        actions = {}
        step_actions = []
        for nid in topo.nodes:
            totals, w, rho, region_other, target, size = _coordination_snapshot(
                pool, nid, sim, hist, t, None, settings, scenario.f_eco
            )
            own_prev = np.full(pool.n_out(nid), sim.states[nid].q_out / pool.n_out(nid))
            if totals.size:
                _, g_a = alignment_loss(own_prev, totals, w)
                _, g_s = separation_loss(own_prev, totals, rho)
            else:
                g_a = g_s = np.zeros_like(own_prev)
            _, g_c = cohesion_loss(own_prev, [region_other], scenario.f_eco, size, settings.coord.lambda_eco)
            ginput = pol.pack_gradient_input(g_a, g_s, g_c, settings.pol.grad_width)
            encoded = _observe(pool, nid, sim, hist, t, None, settings, scenario.forcing)
            decision = pol.act(
                pool.params[nid]["policy"], settings.pol, encoded, ginput,
                pool.a_max(nid), rng=action_rng[nid],
            )
            actions[nid] = dict(zip(pool.outlets[nid], decision.releases))
            step_actions.append(decision.releases.sum())
        sim.step(actions)
        times.append(time.perf_counter() - start)
        trace.append(step_actions)
    return times, np.array(trace)
