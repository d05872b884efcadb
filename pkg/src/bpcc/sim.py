"""Monte-Carlo simulation of distributed runs under the latency model.

Each trial draws one exponential variate per worker (coupled mode), so a
worker's batch arrivals are its cumulative row counts scaled by
alpha + X/mu, optionally stretched or silenced by a straggler policy.
Uncoded schemes finish when every worker has returned everything; coded
schemes finish at the first crossing of the recovery threshold.

Trial randomness is keyed by (scenario seed, trial index) and consumed
in a scheme-independent order - straggler picks first, then one variate
per worker - so different schemes simulated from the same scenario see
common random numbers and compare pairwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .allocation import Allocation, allocate, bpcc_allocate
from .model import WorkerProfile, batch_layout

UNCODED_SCHEMES = ("uniform", "load_balanced")


@dataclass(frozen=True)
class StragglerPolicy:
    """Randomly slow down (or silence) a fraction of workers each trial.

    delay_factor multiplies every affected arrival time; math.inf drops
    the worker's results entirely.
    """

    fraction: float
    delay_factor: float = math.inf

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must be in [0, 1]")
        if self.delay_factor < 1.0:
            raise ValueError("delay_factor must be >= 1")

    @property
    def infinite(self) -> bool:
        return math.isinf(self.delay_factor)


@dataclass(frozen=True)
class Scenario:
    """One reproducible simulation setup."""

    r: int
    profiles: tuple[WorkerProfile, ...]
    scheme: str = "bpcc"
    straggler: StragglerPolicy | None = None
    trials: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass
class TrialRecord:
    """Outcome of a single simulated run."""

    completion_time: float
    success: bool
    trace_times: np.ndarray
    trace_rows: np.ndarray
    straggler_ids: frozenset[int]

    @property
    def trace(self) -> list[tuple[float, float]]:
        return list(zip(self.trace_times.tolist(), self.trace_rows.tolist()))


@dataclass
class SimSummary:
    """Aggregates over a batch of trials of one scheme."""

    scheme: str
    trials: int
    success_rate: float
    mean_time: float
    completion_times: np.ndarray
    grid_times: np.ndarray | None = None
    mean_rows: np.ndarray | None = None


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """The random stream owned by one trial."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trial_index])))


def _draw_trial(
    scenario: Scenario, rng: np.random.Generator, x_override: float | None
) -> tuple[frozenset[int], np.ndarray]:
    """Straggler picks then per-worker variates, in fixed stream order."""
    n = len(scenario.profiles)
    pol = scenario.straggler
    if pol is not None and pol.fraction > 0:
        k = math.ceil(pol.fraction * n)
        ids = frozenset(int(i) for i in rng.choice(n, size=k, replace=False))
    else:
        ids = frozenset()
    x = rng.standard_exponential(n)
    if x_override is not None:
        x = np.full(n, float(x_override))
    return ids, x


def _worker_events(
    alloc: Allocation, profiles: tuple[WorkerProfile, ...]
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Static per-worker cumulative row grids and batch row counts."""
    cum_rows, row_counts = [], []
    for load, p in zip(alloc.loads, alloc.batch_counts):
        sizes = np.asarray(batch_layout(load, p), dtype=np.float64)
        cum_rows.append(np.cumsum(sizes))
        row_counts.append(sizes)
    return cum_rows, row_counts


def run_trial(
    scenario: Scenario,
    alloc: Allocation,
    rng: np.random.Generator,
    x_override: float | None = None,
) -> TrialRecord:
    """Simulate one run and record every batch arrival."""
    if len(alloc.loads) != len(scenario.profiles):
        raise ValueError("allocation and roster sizes differ")
    stragglers, x = _draw_trial(scenario, rng, x_override)
    cum_rows, row_counts = _worker_events(alloc, scenario.profiles)

    times_parts, rows_parts = [], []
    alive_last_arrival = []
    lost_worker = False
    for i, w in enumerate(scenario.profiles):
        scale = w.alpha + x[i] / w.mu
        if i in stragglers:
            if scenario.straggler.infinite:
                lost_worker = True
                continue
            scale *= scenario.straggler.delay_factor
        t = cum_rows[i] * scale
        times_parts.append(t)
        rows_parts.append(row_counts[i])
        alive_last_arrival.append(t[-1])

    if times_parts:
        times = np.concatenate(times_parts)
        rows = np.concatenate(rows_parts)
        order = np.argsort(times, kind="stable")
        times = times[order]
        cum = np.cumsum(rows[order])
    else:
        times = np.array([])
        cum = np.array([])

    if alloc.scheme in UNCODED_SCHEMES:
        success = not lost_worker
        completion = max(alive_last_arrival) if success else math.inf
    else:
        idx = int(np.searchsorted(cum, scenario.r - 0.5)) if len(cum) else len(cum)
        success = idx < len(cum)
        completion = float(times[idx]) if success else math.inf
    return TrialRecord(
        completion_time=completion,
        success=success,
        trace_times=times,
        trace_rows=cum,
        straggler_ids=stragglers,
    )


def _trial_completion(
    scenario: Scenario,
    alloc: Allocation,
    cum_rows: list[np.ndarray],
    uniform_batch_rows: float | None,
    trial_index: int,
    x_override: float | None,
) -> tuple[float, bool]:
    """Completion time only, skipping trace construction.

    uniform_batch_rows, when set, says every batch in the allocation
    carries the same row count, so the threshold crossing is an order
    statistic and a partition beats a full sort.
    """
    rng = trial_rng(scenario.seed, trial_index)
    stragglers, x = _draw_trial(scenario, rng, x_override)
    profiles = scenario.profiles
    pol = scenario.straggler

    scales = np.array([w.alpha for w in profiles]) + x / np.array(
        [w.mu for w in profiles]
    )
    drop = np.zeros(len(profiles), dtype=bool)
    if stragglers:
        s_idx = np.fromiter(stragglers, dtype=int)
        if pol.infinite:
            drop[s_idx] = True
        else:
            scales[s_idx] *= pol.delay_factor

    if alloc.scheme in UNCODED_SCHEMES:
        if drop.any():
            return math.inf, False
        last = max(cum_rows[i][-1] * scales[i] for i in range(len(profiles)))
        return float(last), True

    live = [i for i in range(len(profiles)) if not drop[i]]
    if not live:
        return math.inf, False
    if uniform_batch_rows is not None:
        k = math.ceil(scenario.r / uniform_batch_rows)
        arr = np.concatenate([cum_rows[i] * scales[i] for i in live])
        if k > len(arr):
            return math.inf, False
        return float(np.partition(arr, k - 1)[k - 1]), True
    times = np.concatenate([cum_rows[i] * scales[i] for i in live])
    rows = np.concatenate([np.diff(cum_rows[i], prepend=0.0) for i in live])
    order = np.argsort(times, kind="stable")
    cum = np.cumsum(rows[order])
    idx = int(np.searchsorted(cum, scenario.r - 0.5))
    if idx >= len(cum):
        return math.inf, False
    return float(times[order[idx]]), True


def monte_carlo(
    scenario: Scenario,
    alloc: Allocation,
    trace_grid: int | None = 1000,
    x_override: float | None = None,
) -> SimSummary:
    """Run scenario.trials independent trials and aggregate.

    mean_time averages successful runs only. When trace_grid is set, the
    summary also carries the mean received-rows curve on a fixed grid
    reaching the 99th percentile of successful completion times.
    """
    cum_rows, row_counts = _worker_events(alloc, scenario.profiles)
    all_rows = np.concatenate(row_counts)
    uniform_rows = float(all_rows[0]) if np.all(all_rows == all_rows[0]) else None

    completions = np.empty(scenario.trials)
    successes = 0
    for t in range(scenario.trials):
        ct, ok = _trial_completion(
            scenario, alloc, cum_rows, uniform_rows, t, x_override
        )
        completions[t] = ct
        successes += ok

    finite = completions[np.isfinite(completions)]
    summary = SimSummary(
        scheme=alloc.scheme,
        trials=scenario.trials,
        success_rate=successes / scenario.trials,
        mean_time=float(finite.mean()) if len(finite) else math.nan,
        completion_times=completions,
    )
    if trace_grid is not None:
        end = float(np.percentile(finite, 99.0)) if len(finite) else 1.0
        grid = np.linspace(0.0, end, trace_grid)
        acc = np.zeros(trace_grid)
        for t in range(scenario.trials):
            rec = run_trial(scenario, alloc, trial_rng(scenario.seed, t), x_override)
            idx = np.searchsorted(rec.trace_times, grid, side="right")
            acc += np.concatenate([[0.0], rec.trace_rows])[idx]
        summary.grid_times = grid
        summary.mean_rows = acc / scenario.trials
    return summary


def allocation_for(scenario: Scenario, scheme: str | None = None) -> Allocation:
    """Allocate for the scenario's roster under the given (or own) scheme."""
    return allocate(scheme or scenario.scheme, scenario.r, list(scenario.profiles))


def compare_schemes(
    scenario: Scenario, trace_grid: int | None = 1000
) -> dict[str, SimSummary]:
    """All four schemes on identical trial seeds (paired comparison)."""
    out = {}
    for scheme in ("uniform", "load_balanced", "hcmm", "bpcc"):
        alloc = allocation_for(scenario, scheme)
        out[scheme] = monte_carlo(scenario, alloc, trace_grid=trace_grid)
    return out


@dataclass(frozen=True)
class SweepPoint:
    p: int
    tau_star: float
    mean_time: float
    total_load: int


def sweep_p(scenario: Scenario, p_values: list[int]) -> list[SweepPoint]:
    """Re-allocate with every worker at batch count p and simulate each."""
    if not p_values:
        raise ValueError("p_values must be non-empty")
    points = []
    for p in p_values:
        profiles = tuple(w.with_p(p) for w in scenario.profiles)
        alloc = bpcc_allocate(scenario.r, list(profiles))
        sc = Scenario(
            r=scenario.r,
            profiles=profiles,
            scheme="bpcc",
            straggler=scenario.straggler,
            trials=scenario.trials,
            seed=scenario.seed,
        )
        summary = monte_carlo(sc, alloc, trace_grid=None)
        points.append(
            SweepPoint(
                p=p,
                tau_star=alloc.tau_star,
                mean_time=summary.mean_time,
                total_load=alloc.total_load,
            )
        )
    return points


def perturbed_profiles(
    profiles: tuple[WorkerProfile, ...],
    delta: float,
    which: str,
    rng: np.random.Generator,
) -> tuple[WorkerProfile, ...]:
    """Deviate mu or alpha uniformly within a relative band of half-width delta.

    The band's lower edge clamps at zero when delta > 1 (the parameters
    must stay positive).
    """
    if which not in ("mu", "alpha"):
        raise ValueError("which must be 'mu' or 'alpha'")
    out = []
    for w in profiles:
        true = w.mu if which == "mu" else w.alpha
        lo = max(0.0, true * (1.0 - delta))
        hi = true * (1.0 + delta)
        val = float(rng.uniform(lo, hi))
        if val <= 0.0:
            val = 1e-12 * true
        out.append(
            WorkerProfile(
                mu=val if which == "mu" else w.mu,
                alpha=val if which == "alpha" else w.alpha,
                p=w.p,
            )
        )
    return tuple(out)


def sensitivity(scenario: Scenario, delta: float, which: str) -> float:
    """Relative mean-time change when the allocator sees wrong parameters.

    Loads are computed from the deviated values, trials are simulated
    under the true model, and both runs share trial seeds, so the
    returned (E'[T] - E[T]) / E[T] isolates the misallocation cost.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    true_alloc = allocation_for(scenario)
    base = monte_carlo(scenario, true_alloc, trace_grid=None)
    if delta == 0.0:
        return 0.0
    pert_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([scenario.seed, 0x5E5E, 1]))
    )
    wrong = perturbed_profiles(scenario.profiles, delta, which, pert_rng)
    wrong_alloc = allocate(scenario.scheme, scenario.r, list(wrong))
    perturbed = monte_carlo(scenario, wrong_alloc, trace_grid=None)
    return (perturbed.mean_time - base.mean_time) / base.mean_time
