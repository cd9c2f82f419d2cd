"""Directed-graph reservoir network model and the discrete water-level update.

Units are fixed throughout the package: levels in meters, flows in m^3/s,
surface areas in m^2, distances in km, time steps in seconds. Flows are
rates and are multiplied by the step length inside the level update.

Nodes with an empty downstream set discharge through an implicit "mouth"
outlet (edge id ``"<node>->mouth"``); mouth flow is lossless and noiseless
and is tracked as exported volume so closed-network conservation tests can
account for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import SimulationError, TopologyError

MOUTH = "mouth"


@dataclass(frozen=True)
class WeatherVector:
    """Local weather sample: temperature (C), precipitation (mm/h), humidity [0,1]."""

    temp_c: float = 15.0
    precip_mm: float = 0.0
    humidity: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.humidity <= 1.0:
            raise ValueError(f"humidity must be in [0,1], got {self.humidity}")
        if self.precip_mm < 0.0:
            raise ValueError(f"precip_mm must be >= 0, got {self.precip_mm}")

    def as_array(self) -> np.ndarray:
        return np.array([self.temp_c, self.precip_mm, self.humidity])


@dataclass(frozen=True)
class ReservoirState:
    """Dynamic per-node state [level, inflow, outflow, weather, demand].

    The level may transiently leave [h_min, h_max]; violations are reported
    by :func:`check_constraints`, never silently clamped.
    """

    h: float
    q_in: float = 0.0
    q_out: float = 0.0
    weather: WeatherVector = field(default_factory=WeatherVector)
    demand: float = 0.0

    def __post_init__(self):
        if self.q_in < 0 or self.q_out < 0 or self.demand < 0:
            raise ValueError("flows and demand must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [[self.h, self.q_in, self.q_out], self.weather.as_array(), [self.demand]]
        )


STATE_DIM = 7  # h, q_in, q_out, temp, precip, humidity, demand


@dataclass(frozen=True)
class ReservoirNode:
    id: str
    surface_area_m2: float
    h_safe: float
    h_min: float
    h_max: float
    a_max: float
    flood_weight: float = 1.0
    op_cost: float = 0.0
    eco_region: str = "default"
    h_init: float | None = None

    def __post_init__(self):
        if self.surface_area_m2 <= 0:
            raise TopologyError(f"node {self.id}: nonpositive area {self.surface_area_m2}")
        if not (self.h_min < self.h_safe <= self.h_max):
            raise TopologyError(
                f"node {self.id}: need h_min < h_safe <= h_max, "
                f"got ({self.h_min}, {self.h_safe}, {self.h_max})"
            )
        if self.a_max <= 0:
            raise TopologyError(f"node {self.id}: a_max must be positive")
        if self.flood_weight < 0:
            raise TopologyError(f"node {self.id}: flood_weight must be nonnegative")


@dataclass(frozen=True)
class Channel:
    from_node: str
    to_node: str
    alpha_nominal: float = 0.95
    distance_km: float = 1.0
    delay_steps: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha_nominal <= 1.0:
            raise TopologyError(
                f"channel {self.id}: alpha_nominal must be in (0,1], got {self.alpha_nominal}"
            )
        if self.distance_km < 0:
            raise TopologyError(f"channel {self.id}: negative distance")
        if self.delay_steps < 0 or int(self.delay_steps) != self.delay_steps:
            raise TopologyError(f"channel {self.id}: delay_steps must be a nonnegative integer")

    @property
    def id(self) -> str:
        return f"{self.from_node}->{self.to_node}"


class NetworkTopology:
    """Validated directed reservoir graph with precomputed adjacency."""

    def __init__(self, nodes: Iterable[ReservoirNode], edges: Iterable[Channel]):
        self.nodes: dict[str, ReservoirNode] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise TopologyError(f"duplicate node id {node.id!r}")
            self.nodes[node.id] = node
        self.edges: dict[str, Channel] = {}
        self.upstream: dict[str, tuple[str, ...]] = {n: () for n in self.nodes}
        self.downstream: dict[str, tuple[str, ...]] = {n: () for n in self.nodes}
        for edge in edges:
            for endpoint in (edge.from_node, edge.to_node):
                if endpoint not in self.nodes:
                    raise TopologyError(f"dangling endpoint {endpoint!r} in edge {edge.id}")
            if edge.from_node == edge.to_node:
                raise TopologyError(f"self-loop at {edge.from_node!r}")
            if edge.id in self.edges:
                raise TopologyError(f"duplicate edge {edge.id}")
            self.edges[edge.id] = edge
            self.downstream[edge.from_node] += (edge.to_node,)
            self.upstream[edge.to_node] += (edge.from_node,)

    def node_ids(self) -> list[str]:
        return list(self.nodes)

    def out_edges(self, node_id: str) -> list[Channel]:
        return [e for e in self.edges.values() if e.from_node == node_id]

    def in_edges(self, node_id: str) -> list[Channel]:
        return [e for e in self.edges.values() if e.to_node == node_id]

    def is_sink(self, node_id: str) -> bool:
        return not self.downstream[node_id]

    def outlet_ids(self, node_id: str) -> list[str]:
        """Controllable outlets: downstream channels, or the implicit mouth."""
        if self.is_sink(node_id):
            return [f"{node_id}->{MOUTH}"]
        return [e.id for e in self.out_edges(node_id)]

    def neighbors(self, node_id: str) -> tuple[str, ...]:
        return self.upstream[node_id] + self.downstream[node_id]

    def edge_between(self, a: str, b: str) -> Channel:
        """The channel touching both a and b (either direction)."""
        edge = self.edges.get(f"{a}->{b}") or self.edges.get(f"{b}->{a}")
        if edge is None:
            raise TopologyError(f"no channel between {a!r} and {b!r}")
        return edge

    def assert_acyclic(self) -> None:
        state: dict[str, int] = {}

        def visit(n: str, stack: list[str]) -> None:
            state[n] = 1
            for m in self.downstream[n]:
                if state.get(m, 0) == 1:
                    raise TopologyError(f"cycle through {m!r} (path {' -> '.join(stack + [n, m])})")
                if state.get(m, 0) == 0:
                    visit(m, stack + [n])
            state[n] = 2

        for n in self.nodes:
            if state.get(n, 0) == 0:
                visit(n, [])


_NODE_KEYS = {
    "surface_area_m2": "surface_area_m2",
    "h_safe_m": "h_safe",
    "h_min_m": "h_min",
    "h_max_m": "h_max",
    "a_max_m3s": "a_max",
    "flood_weight": "flood_weight",
    "op_cost_per_m3": "op_cost",
    "eco_region": "eco_region",
    "h_init_m": "h_init",
}

_EDGE_KEYS = {
    "alpha_nominal": "alpha_nominal",
    "distance_km": "distance_km",
    "delay_steps": "delay_steps",
}

DEFAULT_NODE = dict(
    surface_area_m2=1e5,
    h_safe_m=8.0,
    h_min_m=0.5,
    h_max_m=10.0,
    a_max_m3s=10.0,
    flood_weight=5.0,
    op_cost_per_m3=0.0,
    eco_region="default",
)

DEFAULT_EDGE = dict(alpha_nominal=0.95, distance_km=5.0, delay_steps=0)


def build_topology(spec: Mapping) -> NetworkTopology:
    """Build and validate a topology from its JSON-style description.

    The description either lists ``nodes`` / ``edges`` explicitly (with
    ``defaults`` filling missing per-item fields) or requests a synthetic
    cascade via ``grid: {rows, cols}``. ``acyclic: true`` additionally
    rejects cyclic graphs.
    """
    if "grid" in spec:
        grid = spec["grid"]
        return grid_topology(
            int(grid["rows"]),
            int(grid["cols"]),
            defaults={**spec.get("defaults", {}), **grid.get("defaults", {})},
        )
    node_defaults = {**DEFAULT_NODE, **spec.get("defaults", {}).get("nodes", {})}
    edge_defaults = {**DEFAULT_EDGE, **spec.get("defaults", {}).get("edges", {})}
    nodes = []
    for raw in spec.get("nodes", []):
        if "id" not in raw:
            raise TopologyError("node entry missing 'id'")
        merged = {**node_defaults, **raw}
        kwargs = {field: merged[key] for key, field in _NODE_KEYS.items() if key in merged}
        nodes.append(ReservoirNode(id=str(merged["id"]), **kwargs))
    edges = []
    for raw in spec.get("edges", []):
        if "from" not in raw or "to" not in raw:
            raise TopologyError("edge entry missing 'from'/'to'")
        merged = {**edge_defaults, **raw}
        kwargs = {field: merged[key] for key, field in _EDGE_KEYS.items() if key in merged}
        edges.append(Channel(from_node=str(merged["from"]), to_node=str(merged["to"]), **kwargs))
    topo = NetworkTopology(nodes, edges)
    if spec.get("acyclic", False):
        topo.assert_acyclic()
    return topo


def grid_topology(rows: int, cols: int, defaults: Mapping | None = None) -> NetworkTopology:
    """Synthetic row-major cascade: each node feeds its right and down neighbors.

    Unless the defaults say otherwise, every grid node forms its own
    ecological region (its stretch of river), so the collective-flow rule
    reduces to a per-node target.
    """
    if rows < 1 or cols < 1:
        raise TopologyError("grid needs rows >= 1 and cols >= 1")
    d = {**DEFAULT_NODE, **(defaults or {})}
    kwargs = {field: d[key] for key, field in _NODE_KEYS.items() if key in d}
    per_node_regions = "eco_region" not in (defaults or {})
    nodes = []
    for r in range(rows):
        for c in range(cols):
            nid = f"n{r}_{c}"
            if per_node_regions:
                kwargs["eco_region"] = nid
            nodes.append(ReservoirNode(id=nid, **kwargs))
    edge_kwargs = {field: d[key] for key, field in _EDGE_KEYS.items() if key in d}
    edges = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append(Channel(f"n{r}_{c}", f"n{r}_{c + 1}", **edge_kwargs))
            if r + 1 < rows:
                edges.append(Channel(f"n{r}_{c}", f"n{r + 1}_{c}", **edge_kwargs))
    return NetworkTopology(nodes, edges)


@dataclass(frozen=True)
class ViolationReport:
    flood_risk: tuple[str, ...]  # h > h_safe (strict)
    over_max: tuple[str, ...]  # h > h_max
    under_min: tuple[str, ...]  # h < h_min

    @property
    def clean(self) -> bool:
        return not (self.flood_risk or self.over_max or self.under_min)

    def flood_count(self) -> int:
        return len(self.flood_risk)


def check_constraints(
    topology: NetworkTopology, states: Mapping[str, ReservoirState]
) -> ViolationReport:
    """List bound violations. The flood indicator is strict: h == h_safe is safe."""
    flood, over, under = [], [], []
    for nid, node in topology.nodes.items():
        h = states[nid].h
        if h > node.h_safe:
            flood.append(nid)
        if h > node.h_max:
            over.append(nid)
        if h < node.h_min:
            under.append(nid)
    return ViolationReport(tuple(flood), tuple(over), tuple(under))


ActionSet = Mapping[str, Mapping[str, float]]  # node id -> outlet edge id -> release m^3/s


def validate_actions(topology: NetworkTopology, actions: ActionSet) -> None:
    for nid, releases in actions.items():
        node = topology.nodes[nid]
        allowed = set(topology.outlet_ids(nid))
        for outlet, a in releases.items():
            if outlet not in allowed:
                raise SimulationError(f"node {nid}: unknown outlet {outlet!r}")
            if a < 0 or a > node.a_max:
                raise SimulationError(
                    f"node {nid}: release {a} outside [0, {node.a_max}] on {outlet}"
                )


@dataclass(frozen=True)
class TransferSet:
    """Realized per-edge flows for one step.

    ``emitted`` leaves the source reservoir this step; ``arrived`` reaches the
    target this step (an emission from ``delay_steps`` steps ago). Mouth
    outlets appear in ``emitted`` only.
    """

    emitted: Mapping[str, float]
    arrived: Mapping[str, float]


def step_dynamics(
    topology: NetworkTopology,
    states: Mapping[str, ReservoirState],
    actions: ActionSet,
    transfers: TransferSet,
    q_ext: Mapping[str, float],
    dt_s: float,
    sigma_eta: float = 0.0,
    level_rngs: Mapping[str, np.random.Generator] | None = None,
) -> tuple[dict[str, ReservoirState], dict[str, float]]:
    """One explicit Euler step of the level dynamics.

    dh = (dt / A) * (sum of arrivals - sum of emissions + external inflow + eta),
    with eta ~ N(0, sigma_eta^2) drawn per node from its own stream. Flow
    aggregates are refreshed: q_out is the commanded total release, q_in the
    arrived transfer total. Returns the new states and the eta draws.
    """
    if dt_s <= 0:
        raise SimulationError(f"dt_s must be positive, got {dt_s}")
    validate_actions(topology, actions)

    inflow: dict[str, float] = {n: 0.0 for n in topology.nodes}
    outflow: dict[str, float] = {n: 0.0 for n in topology.nodes}
    for edge_id, f in transfers.arrived.items():
        inflow[topology.edges[edge_id].to_node] += f
    for edge_id, f in transfers.emitted.items():
        if edge_id in topology.edges:
            outflow[topology.edges[edge_id].from_node] += f
        else:  # mouth outlet "<node>->mouth"
            outflow[edge_id.split("->")[0]] += f

    new_states: dict[str, ReservoirState] = {}
    draws: dict[str, float] = {}
    for nid, node in topology.nodes.items():
        eta = 0.0
        if sigma_eta > 0.0:
            if level_rngs is None:
                raise SimulationError("sigma_eta > 0 requires per-node level rngs")
            eta = sigma_eta * level_rngs[nid].standard_normal()
        draws[nid] = eta
        net = inflow[nid] - outflow[nid] + q_ext.get(nid, 0.0) + eta
        h_next = states[nid].h + (dt_s / node.surface_area_m2) * net
        q_out = sum(actions.get(nid, {}).values())
        new_states[nid] = replace(
            states[nid], h=h_next, q_in=inflow[nid], q_out=q_out
        )
    return new_states, draws


def total_volume(topology: NetworkTopology, states: Mapping[str, ReservoirState]) -> float:
    """Stored volume sum(A_i * h_i) in m^3."""
    return sum(topology.nodes[n].surface_area_m2 * states[n].h for n in topology.nodes)
