"""Load allocators and their closed-form performance bounds.

Four schemes share one result type:

* ``bpcc``          - batch-aware optimal allocation: each worker's rate
                      constant lambda solves a p-dependent equation, the
                      aggregate rate beta turns the required row count
                      into a completion-time estimate tau* = r / beta,
                      and loads are r / (beta * lambda_i).
* ``hcmm``          - the single-batch special case (p_i = 1), solved in
                      closed form via Lambert W.
* ``uniform``       - equal split of exactly r rows, no coding.
* ``load_balanced`` - uncoded split proportional to each worker's
                      expected per-row speed mu / (mu * alpha + 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import WorkerProfile, batch_layout
from .numerics import (
    DEFAULT_ROOT_CONFIG,
    RootSolveConfig,
    scaled_exp_integral_01,
    solve_lambda,
    sup_lambda,
)

SCHEMES = ("uniform", "load_balanced", "hcmm", "bpcc")
CODED_SCHEMES = ("hcmm", "bpcc")


class InfeasibleTaskError(ValueError):
    """Task cannot give every worker at least one row (r < N), or N = 0."""


@dataclass(frozen=True)
class Allocation:
    """Result of a load allocation.

    loads are integer row counts per worker; batch_counts record the
    per-worker batch numbers actually used (reduced from the requested
    p when a rounded load came out smaller); batch_sizes are
    ceil(load / batch_count). lambdas, beta and tau_star are the
    allocator diagnostics, empty/None for the uncoded schemes.
    """

    scheme: str
    loads: tuple[int, ...]
    batch_counts: tuple[int, ...]
    batch_sizes: tuple[int, ...]
    lambdas: tuple[float, ...] = ()
    beta: float | None = None
    tau_star: float | None = None

    @property
    def total_load(self) -> int:
        return sum(self.loads)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "loads": list(self.loads),
            "batch_counts": list(self.batch_counts),
            "batch_sizes": list(self.batch_sizes),
            "lambdas": list(self.lambdas),
            "beta": self.beta,
            "tau_star": self.tau_star,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        return cls(
            scheme=d["scheme"],
            loads=tuple(int(v) for v in d["loads"]),
            batch_counts=tuple(int(v) for v in d["batch_counts"]),
            batch_sizes=tuple(int(v) for v in d["batch_sizes"]),
            lambdas=tuple(float(v) for v in d.get("lambdas", ())),
            beta=d.get("beta"),
            tau_star=d.get("tau_star"),
        )


def _check_roster(r: int, n: int) -> None:
    if n == 0:
        raise InfeasibleTaskError("empty worker roster")
    if r < n:
        raise InfeasibleTaskError(f"r={r} rows cannot cover N={n} workers")


def _round_load(x: float) -> int:
    return max(1, int(math.floor(x + 0.5)))


def beta_term(mu: float, alpha: float, lam: float, p: int) -> float:
    """One worker's contribution to the aggregate rate beta.

    (1/lam) * (1 - (1/p) * sum_k exp(-mu*(lam*p/k - alpha))).
    """
    k = np.arange(1, p + 1, dtype=np.float64)
    s = float(np.mean(np.exp(-mu * (lam * p / k - alpha))))
    return (1.0 - s) / lam


def _finish_coded(
    scheme: str,
    r: int,
    profiles: list[WorkerProfile],
    lambdas: list[float],
    beta: float,
) -> Allocation:
    tau_star = r / beta
    loads = [_round_load(r / (beta * lam)) for lam in lambdas]
    batch_counts = [min(w.p, load) for w, load in zip(profiles, loads)]
    batch_sizes = [-(-load // p) for load, p in zip(loads, batch_counts)]
    return Allocation(
        scheme=scheme,
        loads=tuple(loads),
        batch_counts=tuple(batch_counts),
        batch_sizes=tuple(batch_sizes),
        lambdas=tuple(lambdas),
        beta=beta,
        tau_star=tau_star,
    )


def bpcc_allocate(
    r: int,
    profiles: list[WorkerProfile],
    cfg: RootSolveConfig = DEFAULT_ROOT_CONFIG,
) -> Allocation:
    """Batch-aware allocation minimizing the estimated completion time.

    Solves each worker's rate constant, aggregates beta, and assigns
    loads r / (beta * lambda_i), rounded to the nearest integer with a
    floor of one row. Workers whose rounded load falls below their
    requested batch count get their batch count reduced to the load.
    """
    _check_roster(r, len(profiles))
    lambdas = [solve_lambda(w.mu, w.alpha, w.p, cfg) for w in profiles]
    beta = sum(
        beta_term(w.mu, w.alpha, lam, w.p) for w, lam in zip(profiles, lambdas)
    )
    return _finish_coded("bpcc", r, profiles, lambdas, beta)


def hcmm_allocate(r: int, profiles: list[WorkerProfile]) -> Allocation:
    """Single-batch coded allocation (the p_i = 1 special case).

    Each lambda comes from the closed form (1 + mu*lam) * e^{mu*lam} =
    e^{mu*alpha} ... solved by Lambert W, and beta collapses to
    sum_i mu_i / (1 + mu_i * lambda_i).
    """
    _check_roster(r, len(profiles))
    lambdas = [sup_lambda(w.mu, w.alpha) for w in profiles]
    beta = sum(w.mu / (1.0 + w.mu * lam) for w, lam in zip(profiles, lambdas))
    ones = [w.with_p(1) for w in profiles]
    return _finish_coded("hcmm", r, ones, lambdas, beta)


def uniform_allocate(r: int, n: int) -> Allocation:
    """Equal uncoded split: r // n rows each, remainder spread one-per-worker."""
    _check_roster(r, n)
    base, rem = divmod(r, n)
    loads = tuple(base + 1 if i < rem else base for i in range(n))
    return Allocation(
        scheme="uniform",
        loads=loads,
        batch_counts=(1,) * n,
        batch_sizes=loads,
    )


def load_balanced_allocate(r: int, profiles: list[WorkerProfile]) -> Allocation:
    """Uncoded split proportional to expected per-row speed.

    Weight mu / (mu*alpha + 1) is the reciprocal of a worker's expected
    time per row. Largest-remainder rounding keeps the total exactly r;
    every worker gets at least one row.
    """
    n = len(profiles)
    _check_roster(r, n)
    w = np.array([p.mu / (p.mu * p.alpha + 1.0) for p in profiles])
    raw = r * w / w.sum()
    loads = np.floor(raw).astype(int)
    frac = raw - loads
    for i in np.argsort(-frac)[: r - int(loads.sum())]:
        loads[i] += 1
    # Rounding can zero out a very slow worker; shift rows from the largest.
    while (loads == 0).any():
        loads[int(np.argmax(loads == 0))] += 1
        loads[int(np.argmax(loads))] -= 1
    loads_t = tuple(int(v) for v in loads)
    return Allocation(
        scheme="load_balanced",
        loads=loads_t,
        batch_counts=(1,) * n,
        batch_sizes=loads_t,
    )


def allocate(
    scheme: str, r: int, profiles: list[WorkerProfile]
) -> Allocation:
    """Dispatch to the allocator for a scheme name."""
    if scheme == "uniform":
        return uniform_allocate(r, len(profiles))
    if scheme == "load_balanced":
        return load_balanced_allocate(r, profiles)
    if scheme == "hcmm":
        return hcmm_allocate(r, profiles)
    if scheme == "bpcc":
        return bpcc_allocate(r, profiles)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def expected_results(
    alloc: Allocation, profiles: list[WorkerProfile], t: float
) -> float:
    """Expected rows received by time t under the latency model.

    Sums each batch's true row count weighted by its arrival
    probability, using cumulative true rows in the CDF argument so a
    short final batch is handled exactly.
    """
    if len(alloc.loads) != len(profiles):
        raise ValueError("allocation and roster sizes differ")
    total = 0.0
    for w, load, p in zip(profiles, alloc.loads, alloc.batch_counts):
        sizes = np.array(batch_layout(load, p), dtype=np.float64)
        cum = np.cumsum(sizes)
        with np.errstate(over="ignore"):
            cdf = np.where(
                t >= cum * w.alpha,
                1.0 - np.exp(-w.mu * (t / cum - w.alpha)),
                0.0,
            )
        total += float(np.dot(sizes, cdf))
    return total


def _inf_beta(profiles: list[WorkerProfile]) -> float:
    """Aggregate rate in the infinite-batch-count limit."""
    return sum(
        (1.0 - scaled_exp_integral_01(w.mu * w.alpha)) / w.alpha for w in profiles
    )


def tau_bounds(r: int, profiles: list[WorkerProfile]) -> tuple[float, float]:
    """(infimum, supremum) of the completion-time estimate over batch counts.

    The infimum is approached as every batch count grows without bound;
    the supremum is the single-batch value r / beta(p=1).
    """
    _check_roster(r, len(profiles))
    inf_tau = r / _inf_beta(profiles)
    beta_p1 = 0.0
    for w in profiles:
        lam = sup_lambda(w.mu, w.alpha)
        beta_p1 += (1.0 - math.exp(-w.mu * (lam - w.alpha))) / lam
    return inf_tau, r / beta_p1


def l_hat(r: int, profiles: list[WorkerProfile]) -> list[float]:
    """Limiting per-worker loads as all batch counts grow without bound."""
    _check_roster(r, len(profiles))
    denom = _inf_beta(profiles)
    return [r / (w.alpha * denom) for w in profiles]


def default_batch_counts(r: int, profiles: list[WorkerProfile]) -> list[int]:
    """Largest usable batch counts: floor of the limiting loads.

    A batch count can never exceed the assigned load, and loads shrink
    toward l_hat as batch counts grow, so floor(l_hat) is the natural
    ceiling when no explicit batch count is configured.
    """
    return [max(1, int(math.floor(v))) for v in l_hat(r, profiles)]
