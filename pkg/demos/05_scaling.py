"""Decision-time scaling with network size.

Each node's decision work is local (a handful of neighbors), so stepping
the whole network should cost close to O(n). Runs untrained policies over
growing grids and fits the log-log slope. A few minutes of runtime at the
default sizes.
"""

from hydroflock.metrics import scaling_benchmark

SIZES = [64, 128, 256]  # bump toward 100..800 for the full picture
result = scaling_benchmark(SIZES, steps=10, seed=11)

print(f"{'nodes':>7} {'median step (ms)':>18} {'peak RSS (MB)':>15}")
for row in result.rows:
    mem = f"{row.peak_mem_mb:.0f}" if row.peak_mem_mb is not None else "unavailable"
    print(f"{row.nodes:>7} {row.median_step_ms:>18.2f} {mem:>15}")

print()
print(f"doubling ratios: {[round(r, 2) for r in result.doubling_ratios()]}")
print(f"log-log slope:   {result.slope:.3f} (1.0 would be perfectly linear)")
