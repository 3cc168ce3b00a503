# # Simulated bin histogram at the reference operating point
#
# The simulator draws photon arrivals, applies a 45 ns non-paralyzable dead
# time and records the bin of each surviving click. Because the dead time
# is longer than the 40.96 ns period, a detector that fired in one period
# wakes up at a phase that is unrelated to the next period's start, and the
# histogram comes out nearly flat.

import numpy as np

from photonqrng.model import empirical_min_entropy, reference_config, raw_symbol_distribution
from photonqrng.simulator import simulate

config = reference_config()
stream = simulate(config, rng_seed=1, target_symbols=2_000_000)
hist = stream.histogram()
probs = hist / hist.sum()

print(f"count rate {stream.spad_count_rate / 1e6:.2f} Mcps, raw {stream.raw_bit_rate / 1e6:.1f} Mbps")
print(f"max |p_i - 1/256| = {np.abs(probs - 1 / 256).max():.2e}")
print(f"empirical min-entropy {empirical_min_entropy(hist):.4f} bits/symbol")

# Coarse text rendering, 16 groups of 16 bins.

for k, p in enumerate(probs.reshape(16, 16).sum(axis=1)):
    print(f"bins {16 * k:3d}-{16 * k + 15:3d}  {p:.4f}  " + "#" * int(round(p * 400)))

# Switching the dead time off recovers the per-period model exactly.

fast = simulate(config.__class__.from_mu(1.52, config.period, 256), 2, 2_000_000)
model = raw_symbol_distribution(fast.config).probs
print(f"no dead time: first bin {fast.histogram()[0] / 2e6:.5f} vs model {model[0]:.5f}")
