"""Stepwise network simulator: transfer realization, delays, level updates.

A :class:`Simulator` owns the mutable state of one rollout: per-node states,
per-channel delay lines of in-flight transfers, the noise streams, and the
conservation ledgers (exported volume through mouth outlets, clamp events).
Instances are single-threaded; run independent instances for parallel
rollouts. All randomness derives from (seed, purpose, entity, episode) keys,
so rollouts are reproducible regardless of scheduling.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import rng as rngs
from .errors import SimulationError
from .guidance import GuidanceDirective
from .network import (
    ActionSet,
    NetworkTopology,
    ReservoirState,
    TransferSet,
    ViolationReport,
    WeatherVector,
    check_constraints,
    step_dynamics,
)
from .uncertainty import UncertaintyParams, channel_efficiency, env_loss, human_loss, sample_transfer


@dataclass(frozen=True)
class StepResult:
    states: dict[str, ReservoirState]
    violations: ViolationReport
    eta: dict[str, float]
    arrivals: dict[str, float]
    clamped: int


def default_level(node) -> float:
    return node.h_init if node.h_init is not None else 0.5 * (node.h_min + node.h_safe)


class Simulator:
    def __init__(
        self,
        topology: NetworkTopology,
        uparams: UncertaintyParams,
        seed: int,
        dt_s: float = 3600.0,
        forcing=None,
        episode: int = 0,
        initial_levels: dict[str, float] | None = None,
    ):
        self.topology = topology
        self.uparams = uparams
        self.seed = seed
        self.dt_s = dt_s
        self.forcing = forcing
        self.episode = episode
        self.t = 0
        self.exported_volume = 0.0
        self.clamp_events = 0
        self.states: dict[str, ReservoirState] = {}
        for nid, node in topology.nodes.items():
            h0 = initial_levels.get(nid) if initial_levels else None
            self.states[nid] = ReservoirState(h=h0 if h0 is not None else default_level(node))
        # FIFO delay lines; an emission enqueued at t is dequeued at t + delay
        self._lines: dict[str, deque] = {
            eid: deque([0.0] * e.delay_steps) for eid, e in topology.edges.items()
        }
        self._transfer_rng = {
            eid: rngs.stream(seed, "transfer", eid, episode) for eid in topology.edges
        }
        self._level_rng = {
            nid: rngs.stream(seed, "level", nid, episode) for nid in topology.nodes
        }

    # -- conditions ---------------------------------------------------------

    def set_conditions(self, t: int) -> None:
        """Write the forcing's weather and demand for step t into the states."""
        self.t = t
        if self.forcing is None:
            return
        from dataclasses import replace

        for nid in self.topology.nodes:
            self.states[nid] = replace(
                self.states[nid],
                weather=self.forcing.weather(nid, t),
                demand=self.forcing.demand(nid, t),
            )

    def q_ext_at(self, t: int) -> dict[str, float]:
        if self.forcing is None:
            return {}
        return {nid: self.forcing.q_ext(nid, t) for nid in self.topology.nodes}

    # -- physics ------------------------------------------------------------

    def realize_transfers(
        self, actions: ActionSet, directive: GuidanceDirective | None = None
    ) -> TransferSet:
        """Realize channel flows for this step and advance the delay lines.

        Channel efficiency combines the weather loss of the endpoints with
        the demand-driven human loss (overridden by an active directive's
        estimate). Mouth outlets discharge losslessly and count as exports.
        """
        up = self.uparams
        gamma_hat = directive.gamma_human_hat if directive is not None else None
        emitted: dict[str, float] = {}
        arrived: dict[str, float] = {}
        for eid, edge in self.topology.edges.items():
            a = actions.get(edge.from_node, {}).get(eid, 0.0)
            s_i = self.states[edge.from_node]
            s_j = self.states[edge.to_node]
            g_env = env_loss(s_i.weather, s_j.weather, up.env_coeffs)
            g_hum = human_loss(s_i.demand, s_j.demand, up.human_coeffs, gamma_hat)
            alpha = channel_efficiency(edge.alpha_nominal, g_env, g_hum, up.epsilon_floor)
            f, clamped = sample_transfer(
                a, alpha, up.sigma_base, self._transfer_rng[eid], up.release_scale
            )
            if clamped:
                self.clamp_events += 1
            emitted[eid] = f
            line = self._lines[eid]
            if line.maxlen == 0 or edge.delay_steps == 0:
                arrived[eid] = f
            else:
                line.append(f)
                arrived[eid] = line.popleft()
        for nid in self.topology.nodes:
            if self.topology.is_sink(nid):
                outlet = self.topology.outlet_ids(nid)[0]
                a = actions.get(nid, {}).get(outlet, 0.0)
                emitted[outlet] = a
                self.exported_volume += a * self.dt_s
        return TransferSet(emitted=emitted, arrived=arrived)

    def step(
        self,
        actions: ActionSet,
        q_ext: dict[str, float] | None = None,
        directive: GuidanceDirective | None = None,
    ) -> StepResult:
        """Advance one step: realize transfers, integrate levels, report violations."""
        if q_ext is None:
            q_ext = self.q_ext_at(self.t)
        transfers = self.realize_transfers(actions, directive)
        new_states, eta = step_dynamics(
            self.topology,
            self.states,
            actions,
            transfers,
            q_ext,
            self.dt_s,
            sigma_eta=self.uparams.sigma_eta,
            level_rngs=self._level_rng,
        )
        self.states = new_states
        self.t += 1
        arrivals_by_node: dict[str, float] = {n: 0.0 for n in self.topology.nodes}
        for eid, f in transfers.arrived.items():
            arrivals_by_node[self.topology.edges[eid].to_node] += f
        return StepResult(
            states=new_states,
            violations=check_constraints(self.topology, new_states),
            eta=eta,
            arrivals=arrivals_by_node,
            clamped=self.clamp_events,
        )

    # -- accounting ----------------------------------------------------------

    def in_flight_volume(self) -> float:
        """Volume currently inside delay lines, in m^3."""
        return sum(sum(line) for line in self._lines.values()) * self.dt_s

    def total_volume(self) -> float:
        from .network import total_volume

        return total_volume(self.topology, self.states)


def uniform_releases(topology: NetworkTopology, fraction: float = 0.5) -> dict:
    """ActionSet releasing the given fraction of a_max on every outlet."""
    if not 0.0 <= fraction <= 1.0:
        raise SimulationError("fraction must be in [0,1]")
    return {
        nid: {outlet: fraction * topology.nodes[nid].a_max for outlet in topology.outlet_ids(nid)}
        for nid in topology.nodes
    }
