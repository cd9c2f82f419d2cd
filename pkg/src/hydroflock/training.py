"""Decentralized training loop: rollouts with coordination signals, periodic updates.

Each node runs its own policy/value networks. During a rollout the agent
observes its delayed neighborhood, computes the three coordination losses
and their gradients at the previous step's releases (the freshest values a
decentralized controller can hold), injects those gradients into the policy
trunk, samples releases, and stores the full snapshot. Every
``update_every`` episodes the collected batches drive clipped-surrogate
updates with the coordination penalty.

Encoder weights are drawn once from the seed and stay fixed; batches store
the encoded states, so optimization covers the trunk, mixer, heads, and
value network.
"""

from __future__ import annotations

import concurrent.futures
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nets, policy as pol, rng as rngs
from .coordination import (
    CoordinationParams,
    CoordinationWeights,
    DEFAULT_WEIGHTS,
    adaptive_radius,
    alignment_loss,
    cohesion_loss,
    coordination_weights,
    separation_loss,
    weather_gap,
)
from .guidance import (
    MODE_MULTIPLIER,
    GuidanceEngine,
    RewardConfig,
    compute_reward,
    provider_from_spec,
    update_efficiency_estimate,
)
from .nets import Adam, EncoderConfig, PolicyConfig, TrainHyperparams, ValueConfig
from .ppo import AgentBatch, compute_gae, normalize_advantages, ppo_update
from .scenario import Scenario, load_scenario
from .simulate import Simulator
from .uncertainty import UncertaintyParams, env_loss


@dataclass(frozen=True)
class RunSettings:
    enc: EncoderConfig = field(default_factory=EncoderConfig)
    pol: PolicyConfig = field(default_factory=PolicyConfig)
    val: ValueConfig = field(default_factory=ValueConfig)
    hp: TrainHyperparams = field(default_factory=TrainHyperparams)
    coord: CoordinationParams = field(default_factory=CoordinationParams)
    uparams: UncertaintyParams = field(default_factory=UncertaintyParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    guidance_enabled: bool = True
    provider_spec: str | None = None
    provider_timeout_s: float = 2.0
    emergency_threshold: float = 0.7
    eco_share_target: bool = True  # cohesion target f_eco/|region| (as stated) vs f_eco
    murmuration_enabled: bool = True  # master ablation switch (injection + penalty)
    cv_window: int = 100


def desk_settings(**overrides) -> RunSettings:
    """Small-network preset sized for laptop-scale experiments and tests."""
    base = RunSettings(
        enc=EncoderConfig(gnn_dim=8, lstm_hidden=16, history_window=3, forecast_horizon=2),
        pol=PolicyConfig(layers=(32, 32), mixer_hidden=8, grad_width=4),
        val=ValueConfig(layers=(32, 32)),
        hp=TrainHyperparams(epochs=4, batch=512),
        uparams=UncertaintyParams(sigma_base=0.05, sigma_eta=0.05),
    )
    return replace(base, **overrides) if overrides else base


def settings_to_dict(settings: RunSettings) -> dict:
    d = asdict(settings)
    d["uparams"]["env_coeffs"] = asdict(settings.uparams.env_coeffs)
    d["uparams"]["human_coeffs"] = asdict(settings.uparams.human_coeffs)
    return d


class AgentPool:
    """Per-node parameter sets plus the static neighborhood bookkeeping."""

    def __init__(self, topology, settings: RunSettings, seed: int):
        self.topology = topology
        self.settings = settings
        self.seed = seed
        self.params: dict[str, dict[str, dict[str, np.ndarray]]] = {}
        self.outlets: dict[str, list[str]] = {}
        self.neighbors: dict[str, list[str]] = {}
        self.region_members: dict[str, list[str]] = {}
        regions: dict[str, list[str]] = {}
        for nid, node in topology.nodes.items():
            regions.setdefault(node.eco_region, []).append(nid)
        for nid, node in topology.nodes.items():
            self.outlets[nid] = topology.outlet_ids(nid)
            self.neighbors[nid] = list(topology.neighbors(nid))
            self.region_members[nid] = regions[node.eco_region]
            n_out = len(self.outlets[nid])
            self.params[nid] = {
                "encoder": nets.init_encoder(rngs.stream(seed, "init", "enc", nid), settings.enc),
                "policy": nets.init_policy(
                    rngs.stream(seed, "init", "pol", nid),
                    settings.enc.encoded_dim,
                    n_out,
                    settings.pol,
                ),
                "value": nets.init_value(
                    rngs.stream(seed, "init", "val", nid), settings.enc.encoded_dim, settings.val
                ),
            }

    def n_out(self, nid: str) -> int:
        return len(self.outlets[nid])

    def a_max(self, nid: str) -> float:
        return self.topology.nodes[nid].a_max

    def clone_params(self) -> dict:
        return {
            nid: {grp: {k: v.copy() for k, v in p.items()} for grp, p in groups.items()}
            for nid, groups in self.params.items()
        }


@dataclass
class StepRecord:
    encoded: np.ndarray
    grad_input: np.ndarray
    presquash: np.ndarray
    log_prob: float
    value: float
    reward: float = 0.0
    nbr_weights: np.ndarray = None
    nbr_totals: np.ndarray = None
    rho: float = 1.0
    region_other: float = 0.0
    eco_target: float = 0.0
    lambda_eco: float = 0.0
    kappa: tuple[float, float, float] = DEFAULT_WEIGHTS.as_tuple()
    beta_scale: float = 1.0
    losses: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class EpisodeResult:
    records: dict[str, list[StepRecord]]
    returns: dict[str, float]
    safety_rate: float
    flood_steps: int
    loss_means: tuple[float, float, float]
    trajectory: list[dict] | None = None


def _coordination_snapshot(pool: AgentPool, nid, sim, hist, t, directive, settings, f_eco):
    """Neighbor weights, delayed totals, radius, and region terms for one agent."""
    topo = pool.topology
    coord = settings.coord
    nbr_ids = pool.neighbors[nid]
    own_state = sim.states[nid]
    totals, dists, gaps, levels = [], [], [], []
    for j in nbr_ids:
        edge = topo.edge_between(nid, j)
        tau = edge.delay_steps
        s_j = hist[j][max(0, t - tau)]
        totals.append(s_j.q_out)
        levels.append(s_j.h)
        dists.append(edge.distance_km)
        gaps.append(weather_gap(own_state.weather, s_j.weather))
    if nbr_ids:
        w = coordination_weights(dists, gaps, coord.beta_d, coord.beta_e)
        rho = adaptive_radius(levels, coord.rho_base)
    else:
        w = np.zeros(0)
        rho = coord.rho_base
    region = pool.region_members[nid]
    region_other = sum(sim.states[j].q_out for j in region if j != nid)
    size = len(region)
    target = (f_eco / size) if settings.eco_share_target else f_eco
    return np.asarray(totals, float), w, rho, region_other, target, size


def _observe(pool: AgentPool, nid, sim, hist, t, directive, settings, forcing):
    topo = pool.topology
    own = sim.states[nid]
    neighbors = []
    for j in pool.neighbors[nid]:
        edge = topo.edge_between(nid, j)
        s_j = hist[j][max(0, t - edge.delay_steps)]
        g_env = env_loss(own.weather, s_j.weather, settings.uparams.env_coeffs)
        alpha_hat = update_efficiency_estimate(
            edge.alpha_nominal, g_env, directive, settings.uparams.epsilon_floor
        )
        neighbors.append((s_j, np.array([alpha_hat, edge.distance_km])))
    history = hist[nid][-settings.enc.history_window :]
    forecast = (
        forcing.forecast(nid, t, settings.enc.forecast_horizon)
        if forcing is not None
        else np.zeros((0, 3))
    )
    return pol.encode_state(pool.params[nid]["encoder"], settings.enc, own, neighbors, history, forecast)


def effective_settings(settings: RunSettings) -> RunSettings:
    """Resolve the master ablation switch: disabling the coordination module
    zeroes both the injection strength and the penalty weight, which is the
    plain decentralized-PPO build."""
    if settings.murmuration_enabled:
        return settings
    return replace(
        settings,
        pol=replace(settings.pol, xi=0.0),
        hp=replace(settings.hp, beta_mur=0.0),
    )


def rollout_episode(
    pool: AgentPool,
    scenario: Scenario,
    settings: RunSettings,
    seed: int,
    episode: int,
    deterministic: bool = False,
    collect_trajectory: bool = False,
) -> EpisodeResult:
    """Roll one episode and return per-agent records plus episode statistics."""
    settings = effective_settings(settings)
    topo = pool.topology
    sim = Simulator(
        topo,
        settings.uparams,
        seed,
        dt_s=scenario.dt_s,
        forcing=scenario.forcing,
        episode=episode,
    )
    provider = (
        provider_from_spec(settings.provider_spec, settings.provider_timeout_s, scenario.dt_s)
        if settings.provider_spec is not None
        else None
    )
    engine = GuidanceEngine(
        provider=provider,
        dt_s=scenario.dt_s,
        emergency_threshold=settings.emergency_threshold,
        enabled=settings.guidance_enabled,
    )
    action_rng = {
        nid: rngs.stream(seed, "action", nid, episode) for nid in topo.nodes
    }
    records: dict[str, list[StepRecord]] = {nid: [] for nid in topo.nodes}
    hist: dict[str, list] = {nid: [] for nid in topo.nodes}
    floods = 0
    cells = 0
    trajectory: list[dict] | None = [] if collect_trajectory else None
    mur_on = settings.murmuration_enabled

    for t in range(scenario.steps):
        sim.set_conditions(t)
        for nid in topo.nodes:
            hist[nid].append(sim.states[nid])
        directive = engine.update(t, scenario.pending_events(t))
        kappa = directive.weights.as_tuple() if directive is not None else DEFAULT_WEIGHTS.as_tuple()
        beta_scale = MODE_MULTIPLIER[directive.mode] if directive is not None else 1.0

        actions: dict[str, dict[str, float]] = {}
        for nid in topo.nodes:
            totals, w, rho, region_other, target, size = _coordination_snapshot(
                pool, nid, sim, hist, t, directive, settings, scenario.f_eco
            )
            own_prev = np.full(pool.n_out(nid), sim.states[nid].q_out / pool.n_out(nid))
            if totals.size:
                l_a, g_a = alignment_loss(own_prev, totals, w)
                l_s, g_s = separation_loss(own_prev, totals, rho)
            else:
                l_a, g_a = 0.0, np.zeros_like(own_prev)
                l_s, g_s = 0.0, np.zeros_like(own_prev)
            l_c, g_c = cohesion_loss(
                own_prev, [region_other], scenario.f_eco, size, settings.coord.lambda_eco
            )
            if mur_on:
                ginput = pol.pack_gradient_input(g_a, g_s, g_c, settings.pol.grad_width)
            else:
                ginput = np.zeros(3 * settings.pol.grad_width)
            encoded = _observe(pool, nid, sim, hist, t, directive, settings, scenario.forcing)
            decision = pol.act(
                pool.params[nid]["policy"],
                settings.pol,
                encoded,
                ginput,
                pool.a_max(nid),
                rng=action_rng[nid],
                deterministic=deterministic,
            )
            value = float(
                np.asarray(
                    nets.value_forward(
                        pool.params[nid]["value"], encoded.reshape(1, -1), settings.val
                    )
                ).ravel()[0]
            )
            actions[nid] = dict(zip(pool.outlets[nid], decision.releases))
            records[nid].append(
                StepRecord(
                    encoded=encoded,
                    grad_input=ginput,
                    presquash=decision.presquash,
                    log_prob=decision.log_prob,
                    value=value,
                    nbr_weights=w,
                    nbr_totals=totals,
                    rho=rho,
                    region_other=region_other,
                    eco_target=target,
                    lambda_eco=settings.coord.lambda_eco,
                    kappa=kappa,
                    beta_scale=beta_scale,
                    losses=(l_a, l_s, l_c),
                )
            )

        result = sim.step(actions, directive=directive)
        floods += result.violations.flood_count()
        cells += len(topo.nodes)
        for nid in topo.nodes:
            node = topo.nodes[nid]
            f_share = (
                scenario.f_eco / len(pool.region_members[nid])
                if scenario.f_eco > 0
                else 0.0
            )
            r = compute_reward(
                node,
                result.states[nid],
                actions[nid],
                demand=hist[nid][t].demand,
                f_eco_share=f_share,
                directive=directive,
                config=settings.reward,
            )
            records[nid][-1].reward = r
            if trajectory is not None:
                st = result.states[nid]
                trajectory.append(
                    {
                        "t": t,
                        "node_id": nid,
                        "h": st.h,
                        "q_in": st.q_in,
                        "q_out": st.q_out,
                        "demand": hist[nid][t].demand,
                        "temp_c": hist[nid][t].weather.temp_c,
                        "precip_mm": hist[nid][t].weather.precip_mm,
                        "reward": r,
                        "flood": int(st.h > node.h_safe),
                    }
                )

    returns = {nid: float(sum(rec.reward for rec in recs)) for nid, recs in records.items()}
    n_recs = sum(len(r) for r in records.values())
    loss_means = tuple(
        float(sum(rec.losses[k] for recs in records.values() for rec in recs) / max(1, n_recs))
        for k in range(3)
    )
    return EpisodeResult(
        records=records,
        returns=returns,
        safety_rate=1.0 - floods / max(1, cells),
        flood_steps=floods,
        loss_means=loss_means,
        trajectory=trajectory,
    )


def _build_batch(pool: AgentPool, nid: str, recs: list[StepRecord], hp: TrainHyperparams) -> AgentBatch:
    rewards = np.array([r.reward for r in recs])
    values = np.array([r.value for r in recs])
    adv, ret = compute_gae(rewards, values, 0.0, hp.gamma, hp.gae_lambda)
    J = recs[0].nbr_totals.size
    batch = AgentBatch(
        encoded=np.stack([r.encoded for r in recs]),
        grad_input=np.stack([r.grad_input for r in recs]),
        presquash=np.stack([r.presquash for r in recs]),
        log_prob_old=np.array([r.log_prob for r in recs]),
        rewards=rewards,
        values=values,
        advantages=normalize_advantages(adv),
        returns=ret,
        nbr_weights=np.stack([r.nbr_weights for r in recs]) if J else np.zeros((len(recs), 0)),
        nbr_totals=np.stack([r.nbr_totals for r in recs]) if J else np.zeros((len(recs), 0)),
        nbr_mask=np.ones((len(recs), J)),
        rho=np.array([[r.rho] for r in recs]),
        region_other=np.array([[r.region_other] for r in recs]),
        eco_target=np.array([[r.eco_target] for r in recs]),
        lambda_eco=np.array([[r.lambda_eco] for r in recs]),
        kappa=np.array([r.kappa for r in recs]),
        beta_scale=np.array([r.beta_scale for r in recs]),
        a_max=pool.a_max(nid),
    )
    return batch


def _rollout_worker(args):
    (topology_params, scenario_source, settings, seed, episode) = args
    scenario = load_scenario(scenario_source)
    pool = AgentPool.__new__(AgentPool)
    pool.topology = scenario.topology
    pool.settings = settings
    pool.seed = seed
    pool.params = topology_params["params"]
    pool.outlets = topology_params["outlets"]
    pool.neighbors = topology_params["neighbors"]
    pool.region_members = topology_params["regions"]
    return episode, rollout_episode(pool, scenario, settings, seed, episode)


@dataclass
class TrainResult:
    pool: AgentPool
    episodes: list[dict]  # per-episode log rows
    diagnostics: list[dict]


def learning_cv(returns: list[float], window: int) -> float:
    from .metrics import learning_curve_cv

    tail = returns[-window:] if len(returns) > window else returns
    return learning_curve_cv(tail, len(tail))


def run_training(
    scenario: Scenario,
    settings: RunSettings,
    seed: int,
    episodes: int,
    workers: int = 1,
    pool: AgentPool | None = None,
) -> TrainResult:
    """Full training run: rollouts, update gate every ``update_every`` episodes.

    Returns per-episode log rows
    (episode, return_mean, cv, safety_rate, loss_align, loss_sep, loss_coh).
    With ``workers > 1`` the episodes inside one update window roll out in
    parallel against an immutable parameter snapshot; results merge by
    episode index, so worker count never changes the outcome.
    """
    if pool is None:
        pool = AgentPool(scenario.topology, settings, seed)
    settings = effective_settings(settings)
    hp = settings.hp
    hp_eff = hp
    opts = {
        nid: (
            Adam(pool.params[nid]["policy"], hp.lr_policy),
            Adam(pool.params[nid]["value"], hp.lr_value),
        )
        for nid in pool.topology.nodes
    }
    rows: list[dict] = []
    diags: list[dict] = []
    return_history: list[float] = []
    window: dict[str, list[list[StepRecord]]] = {nid: [] for nid in pool.topology.nodes}

    e = 1
    while e <= episodes:
        chunk = min(hp.update_every - (e - 1) % hp.update_every, episodes - e + 1)
        eps = list(range(e, e + chunk))
        if workers > 1 and len(eps) > 1:
            snapshot = {
                "params": pool.clone_params(),
                "outlets": pool.outlets,
                "neighbors": pool.neighbors,
                "regions": pool.region_members,
            }
            args = [(snapshot, scenario.source, settings, seed, ep) for ep in eps]
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
                results = dict(ex.map(_rollout_worker, args))
            ordered = [results[ep] for ep in eps]
        else:
            ordered = [rollout_episode(pool, scenario, settings, seed, ep) for ep in eps]

        for ep, res in zip(eps, ordered):
            return_history.append(float(np.mean(list(res.returns.values()))))
            rows.append(
                {
                    "episode": ep,
                    "return_mean": return_history[-1],
                    "cv": learning_cv(return_history, settings.cv_window),
                    "safety_rate": res.safety_rate,
                    "loss_align": res.loss_means[0],
                    "loss_sep": res.loss_means[1],
                    "loss_coh": res.loss_means[2],
                }
            )
            for nid, recs in res.records.items():
                window[nid].append(recs)

        e += chunk
        if (e - 1) % hp.update_every == 0:
            for nid in pool.topology.nodes:
                recs = [r for ep_recs in window[nid] for r in ep_recs]
                if not recs:
                    continue
                batch = _build_batch(pool, nid, recs, hp_eff)
                popt, vopt = opts[nid]
                diag = ppo_update(
                    pool.params[nid]["policy"],
                    pool.params[nid]["value"],
                    popt,
                    vopt,
                    batch,
                    settings.pol,
                    settings.val,
                    hp_eff,
                )
                diags.append({"episode": e - 1, "node": nid, **asdict(diag)})
            window = {nid: [] for nid in pool.topology.nodes}
    return TrainResult(pool=pool, episodes=rows, diagnostics=diags)


# -- checkpointing -------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, pool: AgentPool, settings: RunSettings, config_hash: str = ""):
    doc = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "settings": settings_to_dict(settings),
        "agents": {
            nid: {
                grp: {k: v.tolist() for k, v in params.items()}
                for grp, params in groups.items()
            }
            for nid, groups in pool.params.items()
        },
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path, pool: AgentPool) -> str:
    """Load parameters into an existing pool; returns the stored config hash."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    for nid, groups in doc["agents"].items():
        for grp, params in groups.items():
            for k, v in params.items():
                pool.params[nid][grp][k] = np.asarray(v, float)
    return doc.get("config_hash", "")
