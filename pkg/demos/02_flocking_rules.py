"""The three coordination rules on a toy neighborhood.

Shows how the softmax neighbor weights respond to distance and weather
similarity, evaluates alignment / separation / cohesion losses at a few
release profiles, and validates the analytic gradients against finite
differences.
"""

import numpy as np

from hydroflock.coordination import (
    DEFAULT_WEIGHTS,
    adaptive_radius,
    alignment_loss,
    cohesion_loss,
    coordination_weights,
    separation_loss,
    total_coordination_loss,
)

print("=== neighbor weights: close, similar-weather neighbors dominate ===")
dists = [1.0, 10.0, 25.0]
gaps = [0.2, 0.2, 5.0]
w = coordination_weights(dists, gaps, beta_d=0.1, beta_e=0.5)
for d, g, wi in zip(dists, gaps, w):
    print(f"  distance {d:>5.1f} km, weather gap {g:>4.1f} -> weight {wi:.3f}")

print()
print("=== losses as one node's total release sweeps ===")
neighbor_totals = np.array([6.0, 8.0])
levels = [5.2, 4.8]
rho = adaptive_radius(levels, rho_base=0.3)
print(f"adaptive radius from levels {levels}: {rho:.3f}")
print(f"{'own total':>10} {'align':>8} {'sep':>8} {'coh':>8} {'total':>8}")
for s in (2.0, 5.0, 7.0, 10.0):
    own = np.array([s / 2, s / 2])  # two outlets
    la, ga = alignment_loss(own, neighbor_totals, w[:2] / w[:2].sum())
    ls, gs = separation_loss(own, neighbor_totals, rho)
    lc, gc = cohesion_loss(own, [12.0], f_eco=20.0, region_size=2, lambda_eco=0.5)
    lt = total_coordination_loss((la, ls, lc), DEFAULT_WEIGHTS)
    print(f"{s:>10.1f} {la:>8.3f} {ls:>8.3f} {lc:>8.3f} {lt:>8.3f}")

print()
print("=== analytic gradients vs central finite differences ===")
own = np.array([3.0, 4.5])


def fd(fn, x, eps=1e-6):
    out = np.zeros_like(x)
    for i in range(x.size):
        hi, lo = x.copy(), x.copy()
        hi[i] += eps
        lo[i] -= eps
        out[i] = (fn(hi) - fn(lo)) / (2 * eps)
    return out


wn = w[:2] / w[:2].sum()
_, g_align = alignment_loss(own, neighbor_totals, wn)
num = fd(lambda x: alignment_loss(x, neighbor_totals, wn)[0], own)
print(f"  alignment  analytic {g_align}  numeric {num}")
_, g_sep = separation_loss(own, neighbor_totals, rho)
num = fd(lambda x: separation_loss(x, neighbor_totals, rho)[0], own)
print(f"  separation analytic {g_sep}  numeric {num}")
_, g_coh = cohesion_loss(own, [12.0], 20.0, 2, 0.5)
num = fd(lambda x: cohesion_loss(x, [12.0], 20.0, 2, 0.5)[0], own)
print(f"  cohesion   analytic {g_coh}  numeric {num}")
print()
print("These per-action gradients are what the policy network ingests as its")
print("coordination feedback signal each step.")
