"""Shifted-exponential batch latency model and parameter estimation.

A worker that stores ``load`` encoded rows split into ``p`` batches takes

    T_k = K_k * (alpha + X / mu),   X ~ Exp(1)

to deliver its k-th batch, where K_k is the cumulative row count through
batch k. Marginally Pr(T_k <= t) = 1 - exp(-mu*(t/K_k - alpha)) for
t >= K_k * alpha: alpha is the deterministic per-row floor and mu the
rate of the exponential tail. Estimation inverts this from repeated
timing measurements at several task sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class EstimationError(ValueError):
    """Timing data insufficient or degenerate for a parameter fit."""


@dataclass(frozen=True)
class WorkerProfile:
    """Latency parameters and batch count for one worker.

    mu:    straggling rate, rows per second of exponential tail.
    alpha: deterministic shift, seconds per row.
    p:     number of batches the worker's load is split into.
    """

    mu: float
    alpha: float
    p: int = 1

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")

    def with_p(self, p: int) -> "WorkerProfile":
        return WorkerProfile(self.mu, self.alpha, p)


@dataclass(frozen=True)
class TimingSample:
    """Repeated wall-clock measurements of one task size.

    task_size: rows multiplied per execution.
    durations: seconds for each of the repeated executions.
    """

    task_size: int
    durations: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.task_size < 1:
            raise ValueError("task_size must be a positive integer")
        if len(self.durations) == 0:
            raise ValueError("durations must be non-empty")
        if any(d < 0 for d in self.durations):
            raise ValueError("durations must be nonnegative")


def batch_cdf(profile: WorkerProfile, k: int, b: float, t: float) -> float:
    """Probability that batch k (size-b batches) has arrived by time t.

    Lower branch clamps to 0 for t below the deterministic shift
    k*b*alpha, so the expectation curve is evaluable at any t. Only the
    product k*b (cumulative rows) matters.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if b <= 0:
        raise ValueError("b must be positive")
    rows = k * b
    if t < rows * profile.alpha:
        return 0.0
    return 1.0 - math.exp(-profile.mu * (t / rows - profile.alpha))


def expected_batch_time(profile: WorkerProfile, k: int, b: float) -> float:
    """Mean arrival time of batch k: k*b*(alpha + 1/mu)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if b <= 0:
        raise ValueError("b must be positive")
    return k * b * (profile.alpha + 1.0 / profile.mu)


def batch_layout(load: int, p: int) -> list[int]:
    """Per-batch row counts for a load split into p batches.

    All batches carry ceil(load/p) rows except a possibly shorter final
    one. Trailing empty batches (possible when ceil(load/p) * (p-1)
    already covers the load) are dropped, so every returned batch is
    non-empty and arrival times are strictly increasing.
    """
    if load < 1:
        raise ValueError("load must be positive")
    if p < 1:
        raise ValueError("p must be >= 1")
    if load < p:
        raise ValueError(f"load {load} smaller than batch count {p}")
    b = -(-load // p)
    sizes = []
    remaining = load
    while remaining > 0:
        take = min(b, remaining)
        sizes.append(take)
        remaining -= take
    return sizes


def arrival_times(
    mu: float, alpha: float, load: int, p: int, x: float | np.ndarray
) -> np.ndarray:
    """Batch arrival times given pre-drawn standard-exponential noise.

    x is a scalar (coupled mode: one draw for the whole run) or an array
    with one entry per batch (independent mode). Returns cumulative-row
    boundaries K_k scaled by (alpha + x/mu).
    """
    sizes = batch_layout(load, p)
    cum_rows = np.cumsum(sizes, dtype=np.float64)
    return cum_rows * (alpha + np.asarray(x, dtype=np.float64) / mu)


def sample_completion_times(
    profile: WorkerProfile,
    load: int,
    rng: np.random.Generator,
    mode: str = "coupled",
) -> np.ndarray:
    """Draw one run's batch arrival times for a worker.

    coupled (default): a single exponential draw scales the whole run,
    so arrivals are strictly increasing, matching sequential batch
    processing on one machine, while each batch keeps the marginal
    shifted-exponential law. independent: a fresh draw per batch; same
    marginals but arrivals need not be monotone. Provided only for
    studying sensitivity to the within-worker dependence assumption.
    """
    if mode == "coupled":
        x = rng.standard_exponential()
    elif mode == "independent":
        x = rng.standard_exponential(len(batch_layout(load, profile.p)))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return arrival_times(profile.mu, profile.alpha, load, profile.p, x)


def sample_task_times(
    profile: WorkerProfile, task_size: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n whole-task durations (single batch of task_size rows)."""
    x = rng.standard_exponential(n)
    return task_size * (profile.alpha + x / profile.mu)


def fit_shift_and_rate(samples: list[TimingSample]) -> tuple[float, float]:
    """Estimate (mu, alpha) from repeated timings at several task sizes.

    Per size r the shift estimate is the minimum duration (the MLE for a
    shifted exponential's location) and the rate part is the mean minus
    that minimum. Both grow linearly through the origin - shift as
    alpha*r, exponential mean as r/mu - so each is fit by least squares
    with no intercept across sizes.

    Returns (mu_hat, alpha_hat). Raises EstimationError with fewer than
    two distinct sizes or a degenerate (zero-slope) fit.
    """
    by_size: dict[int, list[float]] = {}
    for s in samples:
        if len(s.durations) < 2:
            raise EstimationError(
                f"task size {s.task_size} has {len(s.durations)} durations; need >= 2"
            )
        by_size.setdefault(s.task_size, []).extend(s.durations)
    if len(by_size) < 2:
        raise EstimationError("need timings at >= 2 distinct task sizes")

    sizes = np.array(sorted(by_size), dtype=np.float64)
    t0 = np.array([min(by_size[int(r)]) for r in sizes])
    tc = np.array([float(np.mean(by_size[int(r)])) for r in sizes]) - t0

    denom = float(np.dot(sizes, sizes))
    alpha_hat = float(np.dot(sizes, t0)) / denom
    tc_slope = float(np.dot(sizes, tc)) / denom
    if alpha_hat <= 0 or tc_slope <= 0:
        raise EstimationError(
            f"degenerate fit: shift slope {alpha_hat:.3e}, rate slope {tc_slope:.3e}"
        )
    return 1.0 / tc_slope, alpha_hat


def fit_residuals(samples: list[TimingSample]) -> dict[str, list[float]]:
    """Per-size residuals of the two origin-constrained regressions."""
    mu_hat, alpha_hat = fit_shift_and_rate(samples)
    by_size: dict[int, list[float]] = {}
    for s in samples:
        by_size.setdefault(s.task_size, []).extend(s.durations)
    sizes = sorted(by_size)
    shift_res = [min(by_size[r]) - alpha_hat * r for r in sizes]
    rate_res = [
        float(np.mean(by_size[r])) - min(by_size[r]) - r / mu_hat for r in sizes
    ]
    return {
        "task_sizes": [float(r) for r in sizes],
        "shift_residuals": shift_res,
        "rate_residuals": rate_res,
    }
