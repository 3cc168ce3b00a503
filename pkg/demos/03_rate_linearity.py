# # Raw bit rate against detector count rate
#
# Every recorded click yields log2(N) = 8 raw bits, so the raw rate should
# track the count rate along a straight line of slope 8.

import numpy as np

from photonqrng.analysis import linear_fit
from photonqrng.model import SourceConfig, reference_config
from photonqrng.simulator import nonparalyzable_rate, simulate

ref = reference_config()
counts, rates = [], []
for k, mu in enumerate(np.linspace(0.1, 1.52, 8)):
    config = SourceConfig.from_mu(mu, ref.period, ref.num_bins, dead_time=ref.dead_time,
                                  dark_rate=ref.dark_rate)
    stream = simulate(config, rng_seed=k, target_symbols=300_000)
    counts.append(stream.spad_count_rate)
    rates.append(stream.raw_bit_rate)
    print(f"mu {mu:.2f}: {stream.spad_count_rate / 1e6:6.2f} Mcps -> {stream.raw_bit_rate / 1e6:6.1f} Mbps")

slope, intercept, r2 = linear_fit(counts, rates)
print(f"slope {slope:.4f} bits/count, intercept {intercept:.3g}, R^2 {r2:.6f}")

# The count rate itself saturates through the dead time, r / (1 + r tau).

print(f"expected {nonparalyzable_rate(ref.lambda_rate, ref.dead_time) / 1e6:.2f} Mcps at mu = 1.52")
