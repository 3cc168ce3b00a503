# # Statistical battery on extracted output
#
# Eight tests run on S sequences; a test passes when its pass proportion
# reaches (1 - a) - 3 sqrt(a (1 - a) / S). The worst p-value per test is
# shown, matching the usual summary table layout.

from photonqrng.cli import extract_symbols
from photonqrng.extractor import plan_extraction
from photonqrng.model import entropy_report, reference_config
from photonqrng.simulator import simulate
from photonqrng.stattests import format_table, run_battery

config = reference_config()
plan = plan_extraction(entropy_report(config), 1 << 20)
stream = simulate(config, rng_seed=5, target_symbols=24 * plan.n // 8)
bits, manifest = extract_symbols(stream, plan, toeplitz_seed=5)

seq_bits = 10**6
seqs = [bits.slice_bits(k * seq_bits, seq_bits) for k in range(bits.length // seq_bits)]
report = run_battery(seqs)
print(format_table(report))
print("final rate at this count rate:", f"{manifest['rates']['final_bit_rate'] / 1e6:.1f} Mbps")
