"""Paired Monte-Carlo comparison of the four schemes.

All schemes see identical random worlds (same straggler picks, same
worker slowdowns per trial), so differences are pure allocation effects.
Three regimes: clean cluster, slowed stragglers (3x), and silent
stragglers that never answer.
"""

import math

import numpy as np

from bpcc import Scenario, StragglerPolicy, WorkerProfile, compare_schemes, default_batch_counts

rng = np.random.default_rng(23)
N, r = 10, 10_000
mus = rng.uniform(1.0, 50.0, N)
base = [WorkerProfile(float(mu), float(1.0 / mu), 1) for mu in mus]
pd = default_batch_counts(r, base)
profiles = tuple(w.with_p(p) for w, p in zip(base, pd))


def show(title, straggler):
    sc = Scenario(r=r, profiles=profiles, scheme="bpcc",
                  straggler=straggler, trials=3000, seed=4)
    res = compare_schemes(sc, trace_grid=None)
    print(f"\n{title}")
    print(f"{'scheme':>14} {'mean time':>10} {'success':>8}")
    for name, s in res.items():
        mean = f"{s.mean_time:10.2f}" if not math.isnan(s.mean_time) else "         -"
        print(f"{name:>14} {mean} {s.success_rate:>8.3f}")
    return res


clean = show("clean cluster (3000 paired trials):", None)
best = min(clean, key=lambda k: clean[k].mean_time)
worst = max(clean, key=lambda k: clean[k].mean_time)
gain = 1 - clean[best].mean_time / clean[worst].mean_time
print(f"  -> {best} beats {worst} by {gain:.0%}")

show("20% stragglers, 3x slower:", StragglerPolicy(0.2, 3.0))
show("20% stragglers, silent (uncoded schemes cannot finish):",
     StragglerPolicy(0.2, math.inf))
