"""Channel-efficiency modulation, stochastic transfer, and cascade variance.

Two noise scales drive the dual-layer model. ``sigma_base`` is the transfer
noise on channels; its standard deviation is interpreted as a *fraction of a
reference flow scale* (default: the release magnitude itself), since the
7%-per-hop motivating figure is relative. ``sigma_eta`` is the level
measurement noise in flow-equivalent units. The cascade-variance functions
work in normalized level units where both sigmas enter directly; the
translation through surface area and step length is deliberately left out
there, matching the closed-form compounding law being validated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import WeatherVector
from .errors import SimulationError


@dataclass(frozen=True)
class EnvLossCoeffs:
    """Piecewise-linear weather-loss map: heat above a reference plus rain.

    Defaults are calibrated so a 45 C heatwave (15 C above the 30 C
    reference) yields a loss of 0.3.
    """

    temp_ref_c: float = 30.0
    per_deg_c: float = 0.02
    per_mm_h: float = 0.01


@dataclass(frozen=True)
class HumanLossCoeffs:
    """Demand-driven loss map: scale times the mean endpoint demand ratio."""

    scale: float = 0.1
    demand_ref: float = 10.0


@dataclass(frozen=True)
class UncertaintyParams:
    sigma_base: float = 0.05
    sigma_eta: float = 0.0
    epsilon_floor: float = 0.1
    env_coeffs: EnvLossCoeffs = field(default_factory=EnvLossCoeffs)
    human_coeffs: HumanLossCoeffs = field(default_factory=HumanLossCoeffs)
    release_scale: float | None = None  # None: scale transfer noise by the release itself

    def __post_init__(self):
        if self.sigma_base < 0 or self.sigma_eta < 0:
            raise ValueError("noise scales must be nonnegative")
        if not 0.0 < self.epsilon_floor < 1.0:
            raise ValueError("epsilon_floor must be in (0,1)")


def env_loss(
    w_i: WeatherVector, w_j: WeatherVector, coeffs: EnvLossCoeffs = EnvLossCoeffs()
) -> float:
    """Weather-induced efficiency loss in [0,1] from endpoint-mean heat and rain."""
    t_mean = 0.5 * (w_i.temp_c + w_j.temp_c)
    p_mean = 0.5 * (w_i.precip_mm + w_j.precip_mm)
    raw = coeffs.per_deg_c * max(0.0, t_mean - coeffs.temp_ref_c) + coeffs.per_mm_h * p_mean
    return float(min(1.0, max(0.0, raw)))


def human_loss(
    d_i: float,
    d_j: float,
    coeffs: HumanLossCoeffs = HumanLossCoeffs(),
    gamma_hat: float | None = None,
) -> float:
    """Demand-driven efficiency loss in [0,1].

    When a guidance directive supplies ``gamma_hat`` it overrides the
    demand-derived value outright.
    """
    if gamma_hat is not None:
        return float(min(1.0, max(0.0, gamma_hat)))
    if coeffs.demand_ref <= 0:
        raise ValueError("demand_ref must be positive")
    raw = coeffs.scale * (d_i + d_j) / (2.0 * coeffs.demand_ref)
    return float(min(1.0, max(0.0, raw)))


def channel_efficiency(
    alpha_nominal: float, gamma_env: float, gamma_human: float, epsilon_floor: float = 0.1
) -> float:
    """min(1, max(floor, alpha_nominal * (1 - gamma_env - gamma_human)))."""
    return float(
        min(1.0, max(epsilon_floor, alpha_nominal * (1.0 - gamma_env - gamma_human)))
    )


def sample_transfer(
    release: float,
    alpha: float,
    sigma_base: float,
    rng: np.random.Generator,
    release_scale: float | None = None,
) -> tuple[float, bool]:
    """Realize one channel transfer: alpha * release + noise, floored at zero.

    Noise std is sigma_base times ``release_scale`` (the release itself when
    not given). Returns (flow, clamped) where ``clamped`` flags a negative
    draw that was floored; callers count those events.
    """
    if release < 0:
        raise SimulationError(f"negative release {release}")
    scale = release if release_scale is None else release_scale
    f = alpha * release
    if sigma_base > 0.0 and scale > 0.0:
        f += sigma_base * scale * rng.standard_normal()
    if f < 0.0:
        return 0.0, True
    return float(f), False


def predicted_cascade_variance(
    alphas: Sequence[float], sigma_base: float, sigma_eta: float = 0.0
) -> float:
    """Closed-form terminal-level variance of a chain.

    ``alphas`` lists the hop efficiencies along an n-node chain (n-1 values,
    upstream first). Each hop injects independent noise of variance
    sigma_base^2 which is then attenuated by the squared efficiencies of its
    own hop and every hop downstream of it; measurement noise adds
    sigma_eta^2 at the terminal node.
    """
    alphas = list(alphas)
    if not alphas:
        raise ValueError("chain must have at least one hop")
    var = 0.0
    for i in range(len(alphas)):
        prod = 1.0
        for a in alphas[i:]:
            prod *= a * a
        var += prod * sigma_base**2
    return var + sigma_eta**2


def compound_efficiency(alphas: Sequence[float]) -> float:
    """Product of hop efficiencies: the fraction delivered end to end."""
    out = 1.0
    for a in alphas:
        out *= a
    return out


def monte_carlo_cascade_variance(
    alphas: Sequence[float],
    sigma_base: float,
    sigma_eta: float,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Empirical terminal-level variance for a chain, by direct propagation.

    Simulates the per-sample recurrence p <- alpha * (p + eps) hop by hop
    (plus terminal measurement noise) and returns the sample variance. This
    is the independent oracle for :func:`predicted_cascade_variance`; it
    shares no algebra with the closed form.
    """
    alphas = list(alphas)
    if not alphas:
        raise ValueError("chain must have at least one hop")
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    p = np.zeros(n_samples)
    for a in alphas:
        eps = sigma_base * rng.standard_normal(n_samples) if sigma_base > 0 else 0.0
        p = a * (p + eps)
    if sigma_eta > 0:
        p = p + sigma_eta * rng.standard_normal(n_samples)
    return float(np.var(p))


def cumulative_relative_std(sigma_base: float, stages: int) -> float:
    """Root-sum-of-squares growth of relative noise over identical stages."""
    if stages < 0:
        raise ValueError("stages must be nonnegative")
    return sigma_base * float(np.sqrt(stages))
