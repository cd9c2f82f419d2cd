"""Clipped-surrogate policy optimization with a coordination penalty.

The objective per agent is the usual clipped ratio surrogate minus a
penalty: the kappa-weighted coordination losses, re-evaluated at the
policy's deterministic mean action against the frozen neighborhood snapshot
of each stored step. Re-evaluating at the mean is what makes the penalty a
function of the parameters; a constant snapshot value would contribute no
gradient and could never steer the policy toward coordination. The penalty
weight is scaled per step by the temporal-mode multiplier active when the
step was collected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .nets import PolicyConfig, TrainHyperparams, ValueConfig


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap_value: float,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Standard generalized-advantage recursion; returns (advantages, return targets)."""
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must align")
    T = rewards.size
    vals = np.append(values, bootstrap_value)
    adv = np.zeros(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * vals[t + 1] - vals[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv, adv + values


def normalize_advantages(adv: np.ndarray, guard: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, float)
    return (adv - adv.mean()) / (adv.std() + guard)


@dataclass
class AgentBatch:
    """One agent's collected experience, ready for an update.

    Neighbor arrays are padded to a common width with zero weights / masks.
    ``kappa`` is (B, 3) and ``beta_scale`` the per-step mode multiplier.
    """

    encoded: np.ndarray  # (B, enc_dim)
    grad_input: np.ndarray  # (B, 3 * grad_width)
    presquash: np.ndarray  # (B, n_out)
    log_prob_old: np.ndarray  # (B,)
    rewards: np.ndarray  # (B,)
    values: np.ndarray  # (B,)
    advantages: np.ndarray = field(default=None)  # filled by prepare()
    returns: np.ndarray = field(default=None)
    # coordination snapshot, padded over neighbors
    nbr_weights: np.ndarray = field(default=None)  # (B, J)
    nbr_totals: np.ndarray = field(default=None)  # (B, J)
    nbr_mask: np.ndarray = field(default=None)  # (B, J)
    rho: np.ndarray = field(default=None)  # (B, 1)
    region_other: np.ndarray = field(default=None)  # (B, 1)
    eco_target: np.ndarray = field(default=None)  # (B, 1) = f_eco / region size
    lambda_eco: np.ndarray = field(default=None)  # (B, 1)
    kappa: np.ndarray = field(default=None)  # (B, 3)
    beta_scale: np.ndarray = field(default=None)  # (B,)
    a_max: float = 1.0

    def __len__(self) -> int:
        return self.encoded.shape[0]


@dataclass(frozen=True)
class UpdateDiagnostics:
    objective: float
    surrogate: float
    penalty: float
    clip_fraction: float
    value_loss: float
    aborted: bool = False


def penalty_losses(mu_raw, batch: AgentBatch):
    """Coordination losses at the policy's mean action, vectorized over the batch.

    Returns (align, sep, coh) as (B,) tensors/arrays matching the backend of
    ``mu_raw``.
    """
    mean_actions = nets.squash(mu_raw, batch.a_max)
    s = mean_actions.sum(axis=-1, keepdims=True)  # (B, 1)
    diff = s - batch.nbr_totals  # (B, J)
    l_align = (batch.nbr_weights * ad.square(0.5 * diff)).sum(axis=-1)
    l_sep = (batch.nbr_mask * ad.exp(-ad.square(diff) / ad.square(batch.rho))).sum(axis=-1)
    resid = s + batch.region_other - batch.eco_target  # (B, 1)
    l_coh = (batch.lambda_eco * ad.square(resid)).sum(axis=-1)
    return l_align, l_sep, l_coh


def _policy_objective(P, batch: AgentBatch, pcfg: PolicyConfig, hp: TrainHyperparams, beta_mur: float):
    """Clipped surrogate minus the coordination penalty (to be maximized)."""
    mu_raw, log_std = nets.policy_forward(P, batch.encoded, batch.grad_input, pcfg)
    lp = nets.log_prob_of_presquash(batch.presquash, mu_raw, log_std, batch.a_max)
    ratio = ad.exp(lp - batch.log_prob_old)
    unclipped = ratio * batch.advantages
    clipped = ad.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * batch.advantages
    surrogate = ad.minimum(unclipped, clipped).mean()
    if beta_mur == 0.0:
        return surrogate, surrogate, None, ratio
    l_align, l_sep, l_coh = penalty_losses(mu_raw, batch)
    l_total = (
        batch.kappa[:, 0] * l_align + batch.kappa[:, 1] * l_sep + batch.kappa[:, 2] * l_coh
    )
    penalty = beta_mur * (batch.beta_scale * l_total).mean()
    return surrogate - penalty, surrogate, penalty, ratio


def ppo_update(
    policy_params: dict[str, np.ndarray],
    value_params: dict[str, np.ndarray],
    policy_opt: nets.Adam,
    value_opt: nets.Adam,
    batch: AgentBatch,
    pcfg: PolicyConfig,
    vcfg: ValueConfig,
    hp: TrainHyperparams,
) -> UpdateDiagnostics:
    """Run ``hp.epochs`` ascent steps on the penalized surrogate plus value regression.

    Advantages must already be normalized. A non-finite gradient aborts the
    update before any further parameter change and is reported in the
    diagnostics.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    first: UpdateDiagnostics | None = None
    for epoch in range(hp.epochs):
        for lo in range(0, len(batch), hp.batch):
            mb = _slice_batch(batch, lo, min(lo + hp.batch, len(batch)))
            P = nets.wrap_params(policy_params)
            objective, surrogate, penalty, ratio = _policy_objective(P, mb, pcfg, hp, hp.beta_mur)
            (-1.0 * objective).backward()
            grads = nets.grads_of(P)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                return UpdateDiagnostics(
                    objective=float(objective.data),
                    surrogate=float(surrogate.data),
                    penalty=float(penalty.data) if penalty is not None else 0.0,
                    clip_fraction=_clip_fraction(ratio.data, hp.clip),
                    value_loss=float("nan"),
                    aborted=True,
                )
            policy_opt.step(grads)

            V = nets.wrap_params(value_params)
            v = nets.value_forward(V, mb.encoded, vcfg).sum(axis=-1)
            vloss = ad.square(v - mb.returns).mean()
            vloss.backward()
            vgrads = nets.grads_of(V)
            if not all(np.all(np.isfinite(g)) for g in vgrads.values()):
                return UpdateDiagnostics(
                    objective=float(objective.data),
                    surrogate=float(surrogate.data),
                    penalty=float(penalty.data) if penalty is not None else 0.0,
                    clip_fraction=_clip_fraction(ratio.data, hp.clip),
                    value_loss=float(vloss.data),
                    aborted=True,
                )
            value_opt.step(vgrads)

            if first is None:
                first = UpdateDiagnostics(
                    objective=float(objective.data),
                    surrogate=float(surrogate.data),
                    penalty=float(penalty.data) if penalty is not None else 0.0,
                    clip_fraction=_clip_fraction(ratio.data, hp.clip),
                    value_loss=float(vloss.data),
                )
    return first


def _clip_fraction(ratio: np.ndarray, eps: float) -> float:
    return float(np.mean((ratio < 1.0 - eps) | (ratio > 1.0 + eps)))


def _slice_batch(batch: AgentBatch, lo: int, hi: int) -> AgentBatch:
    if lo == 0 and hi == len(batch):
        return batch
    sl = slice(lo, hi)
    return AgentBatch(
        encoded=batch.encoded[sl],
        grad_input=batch.grad_input[sl],
        presquash=batch.presquash[sl],
        log_prob_old=batch.log_prob_old[sl],
        rewards=batch.rewards[sl],
        values=batch.values[sl],
        advantages=batch.advantages[sl],
        returns=batch.returns[sl],
        nbr_weights=batch.nbr_weights[sl],
        nbr_totals=batch.nbr_totals[sl],
        nbr_mask=batch.nbr_mask[sl],
        rho=batch.rho[sl],
        region_other=batch.region_other[sl],
        eco_target=batch.eco_target[sl],
        lambda_eco=batch.lambda_eco[sl],
        kappa=batch.kappa[sl],
        beta_scale=batch.beta_scale[sl],
        a_max=batch.a_max,
    )
