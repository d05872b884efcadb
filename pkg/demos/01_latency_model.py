"""Walk through the worker latency model.

A worker that processes rows sequentially has a deterministic per-row
cost (the shift, alpha) plus an exponential slowdown shared by the whole
run (rate mu): the k-th batch of b rows lands at K*(alpha + X/mu) with
K = k*b cumulative rows. This script samples the model, checks the
sampled distribution against the closed-form CDF, and recovers the
parameters from synthetic timing measurements.
"""

import numpy as np

from bpcc import TimingSample, WorkerProfile, batch_cdf, fit_shift_and_rate
from bpcc.model import expected_batch_time, sample_completion_times, sample_task_times

rng = np.random.default_rng(1)

w = WorkerProfile(mu=2.0, alpha=0.5, p=4)
load = 40
print(f"worker: mu={w.mu}, alpha={w.alpha}, {w.p} batches of {load // w.p} rows")

print("\none sampled run (batch arrival times, strictly increasing):")
print("  ", np.round(sample_completion_times(w, load, rng), 3))

print("\nmean arrival of the full load vs the closed form:")
finals = [sample_completion_times(w, load, rng)[-1] for _ in range(100_000)]
print(f"  empirical {np.mean(finals):.3f}  closed form {expected_batch_time(w, w.p, 10):.3f}")

print("\nempirical CDF of the first batch vs the model CDF:")
first = np.sort([sample_completion_times(w, load, rng)[0] for _ in range(50_000)])
for q in (0.1, 0.5, 0.9):
    t = float(np.quantile(first, q))
    print(f"  t={t:6.3f}: empirical {q:.2f}  model {batch_cdf(w, 1, 10, t):.3f}")

print("\nparameter recovery from repeated task timings (3 sizes, 1000 reps):")
truth = WorkerProfile(mu=100.0, alpha=0.01)
samples = [
    TimingSample(r, tuple(sample_task_times(truth, r, 1000, rng)))
    for r in (500, 1000, 2000)
]
mu_hat, alpha_hat = fit_shift_and_rate(samples)
print(f"  true  mu={truth.mu:.1f}   alpha={truth.alpha:.5f}")
print(f"  fit   mu={mu_hat:.1f}   alpha={alpha_hat:.5f}")
