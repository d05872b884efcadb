"""Root finding and special-function evaluation for the load allocator.

The allocator needs three numerical primitives: the per-worker rate
constant lambda (root of a monotone transcendental sum), the Lambert-W
branch that gives lambda's closed-form supremum, and the integral
``int_0^1 exp(-c/x) dx`` that appears in the large-batch-count limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad


class NumericFailure(RuntimeError):
    """A solver failed to reach its tolerance within its iteration budget."""


class DomainError(ValueError):
    """Input outside the mathematical domain of a special function."""


@dataclass(frozen=True)
class RootSolveConfig:
    """Tolerances for the lambda root solve.

    abs_tol bounds the residual |f(lambda) - 1| at the returned root.
    """

    abs_tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self) -> None:
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


DEFAULT_ROOT_CONFIG = RootSolveConfig()


def lambda_equation(lam: float, mu: float, alpha: float, p: int) -> float:
    """Left side of the rate-constant equation.

    f(lam) = sum_{k=1..p} (1/p + mu*lam/k) * exp(-mu*(lam*p/k - alpha)).
    Strictly decreasing in lam for lam > 0, with f(lam) = 1 at the root.
    """
    k = np.arange(1, p + 1, dtype=np.float64)
    expo = -mu * (lam * p / k - alpha)
    return float(np.sum((1.0 / p + mu * lam / k) * np.exp(expo)))


def lambert_w_branch_minus1(x: float) -> float:
    """Lambert W on the lower real branch: w <= -1 with w*exp(w) = x.

    Valid for x in (-1/e, 0). Halley iteration from a branch-point series
    or asymptotic initial guess; falls back to bisection in log form if
    the iteration ever leaves the branch.
    """
    if not (-1.0 / math.e < x < 0.0):
        raise DomainError(f"lambert_w_branch_minus1 requires -1/e < x < 0, got {x}")

    # Initial guess: series near the branch point x = -1/e, asymptotic
    # log-log expansion toward x = 0-.
    s = 1.0 + math.e * x
    if s < 0.5:
        q = -math.sqrt(2.0 * s)
        w = -1.0 + q - q * q / 3.0 + 11.0 / 72.0 * q ** 3
    else:
        l1 = math.log(-x)
        l2 = math.log(-l1)
        w = l1 - l2 + l2 / l1

    w = min(w, -1.0)
    for _ in range(100):
        ew = math.exp(w)
        resid = w * ew - x
        w1 = w + 1.0
        if w1 == 0.0:
            break
        dw = resid / (ew * w1 - (w + 2.0) * resid / (2.0 * w1))
        w -= dw
        if abs(dw) <= 1e-15 * (1.0 + abs(w)):
            break
    if w <= -1.0 and abs(w * math.exp(w) - x) <= 1e-12 * abs(x):
        return w

    # Bisection on g(w) = log(-w) + w - log(-x), increasing on (-inf, -1],
    # immune to exp underflow.
    target = math.log(-x)
    lo, hi = -745.0, -1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.log(-mid) + mid - target > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def sup_lambda(mu: float, alpha: float) -> float:
    """Closed-form supremum of the rate constant, attained at p = 1.

    Solves (1 + mu*lam) * exp(-mu*(lam - alpha)) = 1 via the lower
    Lambert-W branch. Always strictly greater than alpha.
    """
    if mu <= 0 or alpha <= 0:
        raise ValueError("mu and alpha must be positive")
    arg = -math.exp(-alpha * mu - 1.0)
    if arg == 0.0:
        # exp underflow at very large mu*alpha: solve u = mu*alpha + log1p(u)
        # by fixed point instead (u = mu*lam at the root).
        u = alpha * mu + math.log1p(alpha * mu)
        for _ in range(50):
            u_next = alpha * mu + math.log1p(u)
            if abs(u_next - u) <= 1e-15 * u:
                u = u_next
                break
            u = u_next
        return u / mu
    return (lambert_w_branch_minus1(arg) + 1.0) / (-mu)


def solve_lambda(
    mu: float,
    alpha: float,
    p: int,
    cfg: RootSolveConfig = DEFAULT_ROOT_CONFIG,
) -> float:
    """Unique positive root of the rate-constant equation for one worker.

    The root lies in (alpha, sup_lambda(mu, alpha)]: f(alpha) > 1 for any
    finite p, f is strictly decreasing, and f(sup_lambda) <= 1 with
    equality exactly at p = 1. Bracketed bisection; the bracket endpoints
    are trusted from theory rather than evaluated, so endpoint rounding
    cannot flip the search.
    """
    if mu <= 0 or alpha <= 0:
        raise ValueError("mu and alpha must be positive")
    if p < 1:
        raise ValueError("p must be >= 1")

    lo = alpha
    hi = sup_lambda(mu, alpha)
    best = hi
    best_resid = abs(lambda_equation(hi, mu, alpha, p) - 1.0)
    for _ in range(cfg.max_iter):
        mid = 0.5 * (lo + hi)
        resid = lambda_equation(mid, mu, alpha, p) - 1.0
        if abs(resid) < best_resid:
            best, best_resid = mid, abs(resid)
        if best_resid <= cfg.abs_tol:
            return best
        if resid > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 2.0 * math.ulp(hi):
            break
    if best_resid <= cfg.abs_tol:
        return best
    raise NumericFailure(
        f"lambda solve stalled at residual {best_resid:.3e} "
        f"(mu={mu}, alpha={alpha}, p={p}, tol={cfg.abs_tol})"
    )


def scaled_exp_integral_01(c: float) -> float:
    """exp(c) * int_0^1 exp(-c/x) dx, computed on a scale safe for large c.

    Substituting u = c/x - c turns the integral into
    c * int_0^inf exp(-u) / (c + u)^2 du, which stays O(1) for all c and
    avoids the exp(c) * tiny-integral cancellation the bound formulas
    would otherwise hit.
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    if c == 0.0:
        return 1.0

    def integrand(u: float) -> float:
        return c * math.exp(-u) / ((c + u) * (c + u))

    # The integrand concentrates in u ~ c for small c; splitting there
    # keeps the adaptive rule from skipping the spike.
    split = min(10.0 * c, 10.0)
    head, _ = quad(integrand, 0.0, split, epsabs=1e-13, epsrel=1e-13, limit=200)
    tail, _ = quad(integrand, split, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)
    return head + tail


def exp_integral_01(c: float) -> float:
    """int_0^1 exp(-c/x) dx by adaptive quadrature, to ~1e-10 absolute."""
    return math.exp(-c) * scaled_exp_integral_01(c)
