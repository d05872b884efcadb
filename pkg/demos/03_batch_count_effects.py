"""How the number of batches shapes the completion-time estimate.

More batches mean earlier partial results, so the completion-time
estimate tau* falls monotonically as any batch count grows, squeezed
between a closed-form supremum (single batch) and infimum (the
infinite-batch limit). Total assigned rows grow alongside: batching
trades storage for speed.
"""

import numpy as np

from bpcc import WorkerProfile, bpcc_allocate, default_batch_counts, l_hat, tau_bounds

rng = np.random.default_rng(11)
N, r = 10, 10_000
mus = rng.uniform(1.0, 50.0, N)
base = [WorkerProfile(float(mu), float(1.0 / mu), 1) for mu in mus]

inf_tau, sup_tau = tau_bounds(r, base)
print(f"bounds: inf tau* = {inf_tau:.3f}   sup tau* = {sup_tau:.3f} (attained at p=1)")

print(f"\n{'p':>6} {'tau*':>9} {'load_1':>8} {'total q':>9}")
for p in (1, 2, 4, 8, 16, 32, 64, 128, 256):
    alloc = bpcc_allocate(r, [w.with_p(p) for w in base])
    print(f"{p:>6} {alloc.tau_star:>9.3f} {alloc.loads[0]:>8} {alloc.total_load:>9}")

hats = l_hat(r, base)
print(f"\nlimiting loads l_hat (p -> inf): first worker {hats[0]:.2f}")
pd = default_batch_counts(r, base)
alloc = bpcc_allocate(r, [w.with_p(v) for w, v in zip(base, pd)])
print(f"default batch counts p_i = floor(l_hat_i): p_1 = {pd[0]}")
print(f"tau* at the default = {alloc.tau_star:.3f} vs infimum {inf_tau:.3f} "
      f"({(alloc.tau_star / inf_tau - 1) * 100:.2f}% above)")

print("\nraising one worker's batch count alone already helps:")
for p1 in (1, 4, 16, 64):
    roster = [base[0].with_p(p1)] + base[1:]
    alloc = bpcc_allocate(r, roster)
    print(f"  p_1 = {p1:>3}: tau* = {alloc.tau_star:.3f}")
