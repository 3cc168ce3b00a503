# # Toeplitz hashing of the raw stream
#
# The extractor compresses n raw bits to m nearly uniform bits with a
# random Toeplitz matrix. m follows from the per-bit min-entropy bound and
# a security parameter; the matrix product is done by FFT convolution and
# checked against the exact bitwise product.

import time

import numpy as np

from photonqrng.extractor import (
    ToeplitzSeed,
    extract_stream,
    reference_geometry,
    plan_extraction,
    symbols_to_bits,
    toeplitz_apply_naive,
)
from photonqrng.model import entropy_report, reference_config
from photonqrng.simulator import simulate

report = entropy_report(reference_config())
plan = plan_extraction(report, 1 << 20)
print(f"n = {plan.n}, m = {plan.m}, ratio {plan.ratio:.4f} <= {report.min_entropy_bound_per_bit:.4f}")
big = reference_geometry(report.min_entropy_bound_per_bit)
print(f"large-block geometry: n = {big.n}, m = {big.m}")

stream = simulate(reference_config(), rng_seed=4, target_symbols=4 * plan.n // 8)
raw = symbols_to_bits(stream)
seed = ToeplitzSeed.random(plan.n, plan.m, generator_seed=2024)

t0 = time.perf_counter()
out = extract_stream(raw, seed)
print(f"hashed {raw.length} bits -> {out.length} bits in {time.perf_counter() - t0:.2f}s")

# One block checked against the word-level reference.

t0 = time.perf_counter()
ref = toeplitz_apply_naive(seed, raw.slice_bits(0, plan.n))
print(f"naive block took {time.perf_counter() - t0:.2f}s; identical:",
      np.array_equal(ref.bits(), out.slice_bits(0, plan.m)))
print(f"ones fraction in output {out.bits().mean():.5f}")
