"""State encoding and action selection for one reservoir agent.

The encoded state concatenates four blocks: the node's raw state features,
a one-round graph aggregate over delayed neighbor states with edge features,
the final hidden vector of a recurrent pass over the node's own recent
history, and the flattened weather forecast. Actions are squashed Gaussians
per controllable outlet, so sampled releases always land in (0, a_max).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .nets import EncoderConfig, PolicyConfig
from .network import ReservoirState

FORECAST_DIM = 3  # temp, precip, humidity


def encode_state(
    enc_params: dict[str, np.ndarray],
    cfg: EncoderConfig,
    own: ReservoirState,
    neighbors: list[tuple[ReservoirState, np.ndarray]],
    history: list[ReservoirState],
    forecast: np.ndarray,
) -> np.ndarray:
    """Build the policy input vector for one node at one step.

    ``neighbors`` pairs each delayed neighbor state with its edge feature
    vector [efficiency estimate, distance]. ``history`` holds up to
    ``cfg.history_window`` recent own states (oldest first, current last);
    shorter histories are zero-padded at the front. ``forecast`` is an
    (H, 3) array; rows beyond the available horizon should be zeros.
    """
    own_vec = own.as_array()
    if neighbors:
        feats = np.stack([np.concatenate([s.as_array(), np.asarray(e, float)]) for s, e in neighbors])
    else:
        feats = np.zeros((0, cfg.state_dim + cfg.edge_feat_dim))
    gnn_out = nets.gnn_aggregate(enc_params, feats)

    K = cfg.history_window
    if len(history) > K:
        history = history[-K:]
    hist = np.zeros((K, 1, cfg.state_dim))
    for idx, state in enumerate(history):
        hist[K - len(history) + idx, 0, :] = state.as_array()
    lstm_out = nets.lstm_forward(enc_params, hist)[0]

    fc = np.zeros((cfg.forecast_horizon, FORECAST_DIM))
    forecast = np.asarray(forecast, float).reshape(-1, FORECAST_DIM)
    rows = min(cfg.forecast_horizon, forecast.shape[0])
    fc[:rows] = forecast[:rows]

    return np.concatenate([own_vec, np.asarray(gnn_out, float), np.asarray(lstm_out, float), fc.ravel()])


def pack_gradient_input(
    grad_align: np.ndarray,
    grad_sep: np.ndarray,
    grad_coh: np.ndarray,
    grad_width: int,
) -> np.ndarray:
    """Pad or truncate each rule gradient to ``grad_width`` and stack them."""
    out = np.zeros(3 * grad_width)
    for i, g in enumerate((grad_align, grad_sep, grad_coh)):
        g = np.asarray(g, float).ravel()[:grad_width]
        out[i * grad_width : i * grad_width + g.size] = g
    return out


@dataclass(frozen=True)
class ActionDecision:
    releases: np.ndarray  # per outlet, in (0, a_max)
    presquash: np.ndarray  # stored for exact log-prob replay during updates
    log_prob: float
    mu_raw: np.ndarray
    log_std: np.ndarray


def act(
    policy_params: dict[str, np.ndarray],
    cfg: PolicyConfig,
    encoded: np.ndarray,
    grad_input: np.ndarray,
    a_max: float,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
) -> ActionDecision:
    """Run the policy head for one node and sample (or take the mean) action."""
    enc = encoded.reshape(1, -1)
    gin = grad_input.reshape(1, -1)
    mu_raw, log_std = nets.policy_forward(policy_params, enc, gin, cfg)
    u = nets.sample_presquash(mu_raw, log_std, rng, deterministic)
    lp = nets.log_prob_of_presquash(u, mu_raw, log_std, a_max)
    releases = nets.squash(u, a_max)
    return ActionDecision(
        releases=np.asarray(releases).ravel(),
        presquash=np.asarray(u).ravel(),
        log_prob=float(np.asarray(lp).ravel()[0]),
        mu_raw=np.asarray(mu_raw).ravel(),
        log_std=np.asarray(log_std).ravel(),
    )
