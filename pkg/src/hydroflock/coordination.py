"""Flocking-style coordination losses over release decisions.

Three local rules score each node's total release against its graph
neighborhood: alignment pulls toward the delayed neighborhood consensus,
separation rewards diverse totals through a Gaussian kernel, and cohesion
holds the ecological region's collective outflow near its target. All
losses come with analytic gradients with respect to the node's own per-edge
releases; neighbor quantities are delayed snapshots and treated as
constants, so the gradients never reach through other agents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-6
CV_CAP = 3.0
MEAN_GUARD = 1e-6


@dataclass(frozen=True)
class CoordinationParams:
    beta_d: float = 0.1  # distance scaling in neighbor weights
    beta_e: float = 0.5  # weather-similarity scaling in neighbor weights
    rho_base: float = 0.3  # base separation radius
    lambda_eco: float = 1.0

    def __post_init__(self):
        if self.beta_d < 0 or self.beta_e < 0 or self.lambda_eco < 0:
            raise ValueError("scaling parameters must be nonnegative")
        if self.rho_base <= 0:
            raise ValueError("rho_base must be positive")


@dataclass(frozen=True)
class CoordinationWeights:
    """Simplex-constrained mixing triple for the three rules."""

    k_align: float = 0.6
    k_sep: float = 0.1
    k_coh: float = 0.3

    def __post_init__(self):
        for k in (self.k_align, self.k_sep, self.k_coh):
            if not -SIMPLEX_TOL <= k <= 1.0 + SIMPLEX_TOL:
                raise ValueError(f"weight {k} outside [0,1]")
        s = self.k_align + self.k_sep + self.k_coh
        if abs(s - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights must sum to 1 (got {s})")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.k_align, self.k_sep, self.k_coh)


DEFAULT_WEIGHTS = CoordinationWeights(0.6, 0.1, 0.3)


def coordination_weights(
    distances: Sequence[float],
    weather_gaps: Sequence[float],
    beta_d: float,
    beta_e: float,
) -> np.ndarray:
    """Softmax neighbor weights from negative distance/weather energies.

    ``weather_gaps`` are the Euclidean norms of the weather-vector
    differences to each neighbor. Output sums to one.
    """
    if len(distances) == 0:
        raise ValueError("neighbor set is empty")
    if len(distances) != len(weather_gaps):
        raise ValueError("distances and weather_gaps must align")
    energy = -beta_d * np.asarray(distances, float) - beta_e * np.asarray(weather_gaps, float)
    energy = energy - energy.max()  # shift-invariant, numerically safe
    w = np.exp(energy)
    return w / w.sum()


def alignment_loss(
    own_releases: np.ndarray,
    neighbor_totals: np.ndarray,
    weights: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Weighted squared gap between own total and the pairwise mean release.

    The pairwise mean is 0.5 * (own total + neighbor's delayed total), so
    the own total enters both the gap and the mean; the gradient per own
    outlet is sum_j w_j * (S - abar_j).
    """
    own_releases = np.asarray(own_releases, float)
    s = own_releases.sum()
    totals = np.asarray(neighbor_totals, float)
    w = np.asarray(weights, float)
    abar = 0.5 * (s + totals)
    resid = s - abar
    loss = float(np.sum(w * resid**2))
    grad = np.full(own_releases.shape, float(np.sum(w * resid)))
    return loss, grad


def adaptive_radius(
    neighbor_levels: Sequence[float], rho_base: float, cv_cap: float = CV_CAP
) -> float:
    """rho_base * (1 + CV) over delayed neighbor levels, with a drained-mean guard.

    CV is population std over mean. When the mean is within MEAN_GUARD of
    zero relative to the largest level magnitude while the spread is not,
    CV is capped at ``cv_cap`` instead of exploding.
    """
    levels = [float(h) for h in neighbor_levels]
    if not levels:
        raise ValueError("need at least one neighbor level")
    n = len(levels)
    mean = sum(levels) / n
    var = sum((h - mean) ** 2 for h in levels) / n
    std = math.sqrt(var)
    scale = max(abs(h) for h in levels)
    if std == 0.0:
        cv = 0.0
    elif abs(mean) < MEAN_GUARD * max(scale, 1e-12):
        cv = cv_cap
    else:
        cv = min(std / abs(mean), cv_cap)
    return float(rho_base * (1.0 + cv))


def separation_loss(
    own_releases: np.ndarray,
    neighbor_totals: np.ndarray,
    rho: float,
) -> tuple[float, np.ndarray]:
    """Gaussian similarity penalty exp(-(S - S_j)^2 / rho^2), summed over neighbors."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    own_releases = np.asarray(own_releases, float)
    s = own_releases.sum()
    totals = np.asarray(neighbor_totals, float)
    diff = s - totals
    kernel = np.exp(-(diff**2) / rho**2)
    loss = float(kernel.sum())
    grad = np.full(own_releases.shape, float(np.sum(kernel * (-2.0 * diff / rho**2))))
    return loss, grad


def cohesion_loss(
    own_total_or_releases: np.ndarray | float,
    other_region_outflows: Sequence[float],
    f_eco: float,
    region_size: int,
    lambda_eco: float,
) -> tuple[float, np.ndarray]:
    """Squared gap between the region's collective outflow and its target share.

    The target is f_eco / region_size, exactly as the rule is stated; the own
    contribution is the only differentiable term, others are delayed
    constants.
    """
    if region_size < 1:
        raise ValueError("region must be nonempty")
    if f_eco < 0:
        raise ValueError("f_eco must be nonnegative")
    releases = np.atleast_1d(np.asarray(own_total_or_releases, float))
    total = releases.sum() + float(np.sum(np.asarray(list(other_region_outflows), float)))
    resid = total - f_eco / region_size
    loss = float(lambda_eco * resid**2)
    grad = np.full(releases.shape, float(2.0 * lambda_eco * resid))
    return loss, grad


def total_coordination_loss(
    losses: tuple[float, float, float], weights: CoordinationWeights
) -> float:
    """kappa-weighted sum of (align, sep, coh)."""
    k = weights.as_tuple()
    if abs(sum(k) - 1.0) > SIMPLEX_TOL:
        raise ValueError("weights off simplex")
    return k[0] * losses[0] + k[1] * losses[1] + k[2] * losses[2]


@dataclass(frozen=True)
class CoordinationContext:
    """Frozen neighborhood snapshot an agent scores its releases against.

    Neighbor arrays are delayed observations; ``region_other_out`` is the sum
    of the other region members' delayed outflows.
    """

    neighbor_weights: np.ndarray
    neighbor_totals: np.ndarray
    rho: float
    region_other_out: float
    f_eco: float
    region_size: int
    lambda_eco: float

    @staticmethod
    def empty(f_eco: float = 0.0, region_size: int = 1, lambda_eco: float = 0.0):
        return CoordinationContext(
            neighbor_weights=np.zeros(0),
            neighbor_totals=np.zeros(0),
            rho=1.0,
            region_other_out=0.0,
            f_eco=f_eco,
            region_size=region_size,
            lambda_eco=lambda_eco,
        )


@dataclass(frozen=True)
class CoordinationLosses:
    align: float
    sep: float
    coh: float
    total: float
    grad_align: np.ndarray
    grad_sep: np.ndarray
    grad_coh: np.ndarray


def coordination_losses(
    own_releases: np.ndarray,
    ctx: CoordinationContext,
    weights: CoordinationWeights = DEFAULT_WEIGHTS,
) -> CoordinationLosses:
    """Evaluate all three rules and their gradients for one agent.

    A node with no neighbors contributes zero alignment and separation
    (there is nothing to agree or disagree with); cohesion always applies.
    """
    own_releases = np.asarray(own_releases, float)
    if ctx.neighbor_totals.size:
        l_align, g_align = alignment_loss(own_releases, ctx.neighbor_totals, ctx.neighbor_weights)
        l_sep, g_sep = separation_loss(own_releases, ctx.neighbor_totals, ctx.rho)
    else:
        l_align, g_align = 0.0, np.zeros_like(own_releases)
        l_sep, g_sep = 0.0, np.zeros_like(own_releases)
    l_coh, g_coh = cohesion_loss(
        own_releases, [ctx.region_other_out], ctx.f_eco, ctx.region_size, ctx.lambda_eco
    )
    total = total_coordination_loss((l_align, l_sep, l_coh), weights)
    return CoordinationLosses(
        align=l_align,
        sep=l_sep,
        coh=l_coh,
        total=total,
        grad_align=g_align,
        grad_sep=g_sep,
        grad_coh=g_coh,
    )


def weather_gap(w_i, w_j) -> float:
    """Euclidean distance between two weather vectors."""
    return float(math.dist(w_i.as_array(), w_j.as_array()))
