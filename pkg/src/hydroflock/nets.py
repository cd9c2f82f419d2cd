"""Network parameter containers, initialization, and shared forward passes.

Forward functions are written once against the dual-backend helpers in
:mod:`hydroflock.autodiff`: pass plain ndarrays for a no-grad rollout, or
``Tensor``-wrapped parameters (see :func:`wrap_params`) to build the tape
during updates. Weights are initialized uniformly scaled by fan-in; biases
start at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EncoderConfig:
    gnn_dim: int = 64
    lstm_hidden: int = 128
    history_window: int = 6  # lookback steps fed to the recurrent cell
    forecast_horizon: int = 6  # weather forecast steps appended to the encoding
    state_dim: int = 7
    edge_feat_dim: int = 2

    @property
    def encoded_dim(self) -> int:
        return (
            self.state_dim
            + self.gnn_dim
            + self.lstm_hidden
            + self.forecast_horizon * 3
        )


@dataclass(frozen=True)
class PolicyConfig:
    layers: tuple[int, ...] = (256, 256, 128)
    mixer_hidden: int = 32
    grad_width: int = 4  # each rule gradient is padded/truncated to this width
    xi: float = 0.1  # injection strength
    log_std_lo: float = -5.0
    log_std_hi: float = 2.0

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if len(self.layers) < 2:
            raise ValueError("policy needs at least two layers (injection sits after the first)")


@dataclass(frozen=True)
class ValueConfig:
    layers: tuple[int, ...] = (256, 256)


@dataclass(frozen=True)
class TrainHyperparams:
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    clip: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    batch: int = 512
    epochs: int = 10
    update_every: int = 4  # episodes between parameter updates
    beta_mur: float = 0.05  # coordination penalty weight

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must be in (0,1)")
        for name in ("gamma", "gae_lambda"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0,1]")


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(rng: np.random.Generator, cfg: EncoderConfig) -> dict[str, np.ndarray]:
    sd, ed, gd, hd = cfg.state_dim, cfg.edge_feat_dim, cfg.gnn_dim, cfg.lstm_hidden
    params = {
        "gnn_W": _uniform(rng, sd + ed, (sd + ed, gd)),
        "gnn_b": np.zeros(gd),
    }
    for gate in "ifoc":
        params[f"lstm_Wx{gate}"] = _uniform(rng, sd, (sd, hd))
        params[f"lstm_Wh{gate}"] = _uniform(rng, hd, (hd, hd))
        params[f"lstm_b{gate}"] = np.zeros(hd)
    return params


def init_policy(
    rng: np.random.Generator, enc_dim: int, n_out: int, cfg: PolicyConfig
) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    dims = (enc_dim,) + cfg.layers
    for i in range(len(cfg.layers)):
        params[f"W{i}"] = _uniform(rng, dims[i], (dims[i], dims[i + 1]))
        params[f"b{i}"] = np.zeros(dims[i + 1])
    gdim = 3 * cfg.grad_width
    params["mix_W0"] = _uniform(rng, gdim, (gdim, cfg.mixer_hidden))
    params["mix_b0"] = np.zeros(cfg.mixer_hidden)
    params["mix_W1"] = _uniform(rng, cfg.mixer_hidden, (cfg.mixer_hidden, cfg.layers[0]))
    params["mix_b1"] = np.zeros(cfg.layers[0])
    last = cfg.layers[-1]
    params["mu_W"] = _uniform(rng, last, (last, n_out))
    params["mu_b"] = np.zeros(n_out)
    params["ls_W"] = _uniform(rng, last, (last, n_out))
    params["ls_b"] = np.zeros(n_out)
    return params


def init_value(rng: np.random.Generator, enc_dim: int, cfg: ValueConfig) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    dims = (enc_dim,) + cfg.layers
    for i in range(len(cfg.layers)):
        params[f"W{i}"] = _uniform(rng, dims[i], (dims[i], dims[i + 1]))
        params[f"b{i}"] = np.zeros(dims[i + 1])
    params["out_W"] = _uniform(rng, dims[-1], (dims[-1], 1))
    params["out_b"] = np.zeros(1)
    return params


def wrap_params(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def grads_of(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}


# -- forward passes ----------------------------------------------------------


def mixer_forward(P, ginput):
    """Injection MLP over the stacked rule gradients."""
    h = ad.relu(ginput @ P["mix_W0"] + P["mix_b0"])
    return h @ P["mix_W1"] + P["mix_b1"]


def inject_gradients(P, h1, ginput, xi: float):
    """Additive gradient injection: h1 + xi * MLP(stacked rule gradients).

    With xi == 0 the hidden path is returned untouched (bit for bit), which
    is the murmuration-off ablation.
    """
    if xi == 0.0:
        return h1
    return h1 + xi * mixer_forward(P, ginput)


def policy_forward(P, enc, ginput, cfg: PolicyConfig):
    """Trunk with post-first-layer gradient injection; returns (mu_raw, log_std).

    ``enc`` is (B, enc_dim), ``ginput`` (B, 3 * grad_width). The log-std head
    is smoothly squashed into [log_std_lo, log_std_hi].
    """
    h = ad.relu(enc @ P["W0"] + P["b0"])
    h = inject_gradients(P, h, ginput, cfg.xi)
    for i in range(1, len(cfg.layers)):
        h = ad.relu(h @ P[f"W{i}"] + P[f"b{i}"])
    mu_raw = h @ P["mu_W"] + P["mu_b"]
    ls_raw = h @ P["ls_W"] + P["ls_b"]
    log_std = cfg.log_std_lo + (cfg.log_std_hi - cfg.log_std_lo) * ad.sigmoid(ls_raw)
    return mu_raw, log_std


def value_forward(P, enc, cfg: ValueConfig):
    h = enc
    for i in range(len(cfg.layers)):
        h = ad.relu(h @ P[f"W{i}"] + P[f"b{i}"])
    return h @ P["out_W"] + P["out_b"]


def squash(u, a_max):
    """Map pre-squash coordinates to actions in (0, a_max)."""
    return a_max * ad.sigmoid(u)


def log_prob_of_presquash(u, mu_raw, log_std, a_max):
    """Log density of the squashed-Gaussian action expressed at pre-squash u.

    Sums over action dimensions (last axis). Includes the change-of-variables
    correction log|da/du| = log a_max + logsig(u) + logsig(-u), which depends
    only on the stored u, not on the parameters.
    """
    sigma = ad.exp(log_std)
    z = (u - mu_raw) / sigma
    gauss = -0.5 * ad.square(z) - log_std - 0.5 * LOG2PI
    log_jac = np.log(a_max) - ad.softplus(-u) - ad.softplus(u)  # log|da/du|, parameter-free
    lp = gauss - log_jac
    return lp.sum(axis=-1)


def sample_presquash(mu_raw, log_std, rng: np.random.Generator | None, deterministic: bool):
    """Draw pre-squash coordinates; deterministic mode returns the mean."""
    if deterministic or rng is None:
        return np.asarray(mu_raw, float).copy()
    return mu_raw + np.exp(log_std) * rng.standard_normal(np.shape(mu_raw))


def lstm_forward(P, xs):
    """Single-layer recurrent cell over a (T, B, state_dim) stack; returns final hidden."""
    T, B, _ = xs.shape
    hd = P["lstm_bi"].shape[-1] if not isinstance(P["lstm_bi"], Tensor) else P["lstm_bi"].data.shape[-1]
    h = np.zeros((B, hd))
    c = np.zeros((B, hd))
    for t in range(T):
        x = xs[t]
        i = ad.sigmoid(x @ P["lstm_Wxi"] + h @ P["lstm_Whi"] + P["lstm_bi"])
        f = ad.sigmoid(x @ P["lstm_Wxf"] + h @ P["lstm_Whf"] + P["lstm_bf"])
        o = ad.sigmoid(x @ P["lstm_Wxo"] + h @ P["lstm_Who"] + P["lstm_bo"])
        g = ad.tanh(x @ P["lstm_Wxc"] + h @ P["lstm_Whc"] + P["lstm_bc"])
        c = f * c + i * g
        h = o * ad.tanh(c)
    return h


def gnn_aggregate(P, neighbor_feats: np.ndarray):
    """Mean of per-edge linear maps over [neighbor state; edge features] rows."""
    if neighbor_feats.shape[0] == 0:
        gd = P["gnn_b"].shape[-1] if not isinstance(P["gnn_b"], Tensor) else P["gnn_b"].data.shape[-1]
        return np.zeros(gd)
    msgs = neighbor_feats @ P["gnn_W"] + P["gnn_b"]
    return msgs.mean(axis=0) if hasattr(msgs, "mean") else np.mean(msgs, axis=0)


class Adam:
    """Adaptive moment estimation, updating a parameter dict in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """Descend along ``grads`` (pass gradients of the loss to minimize)."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1**self.t)
            vhat = self.v[k] / (1 - b2**self.t)
            self.params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
