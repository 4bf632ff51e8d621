"""Mean-field count chain for branching-annihilating random walk.

On the complete graph the occupied-site count is a Markov chain: from x
occupied sites each surviving site is kept independently with probability
b(x) = (lam*x/n) * exp(-lam*x/n), so the next count is Bin(n, b(x)).
This module holds the model parameters, the transition kernel in log
domain, the equilibrium level, the threshold integerization and the
Galton-Watson extinction-probability solver used throughout the bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .logdomain import LOG_ZERO, LogValue


GW_MEAN_MARGIN = 1e-12
GW_TOL = 1e-14


@dataclass(frozen=True)
class ModelParams:
    """Offspring mean lam (> 1) and number of sites n for the count chain."""

    lam: float
    n: int

    def __post_init__(self):
        if not (self.lam > 1.0):
            raise ValueError(f"offspring mean must exceed 1, got {self.lam}")
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValueError(f"site count must be a positive integer, got {self.n}")


def branch_prob(params: ModelParams, x: int) -> float:
    """Per-site survival probability b(x) = (lam*x/n) * exp(-lam*x/n).

    Always lies in [0, 1/e]; the maximum is reached where lam*x/n = 1.
    """
    if not 0 <= x <= params.n:
        raise ValueError(f"state {x} outside [0, {params.n}]")
    t = params.lam * x / params.n
    return t * math.exp(-t)


def equilibrium(params: ModelParams) -> float:
    """The level (log(lam)/lam) * n around which the chain oscillates."""
    return math.log(params.lam) / params.lam * params.n


def gw_extinction_prob(mean: float) -> float:
    """Extinction probability of a Galton-Watson process with Poisson(mean) offspring.

    Returns the unique fixed point q of s = exp(-mean*(1-s)) in (0, 1),
    located by bisection and polished by Newton steps.  The residual
    |q - exp(-mean*(1-q))| is at most 1e-14.
    """
    if not mean > 1.0 + GW_MEAN_MARGIN:
        raise ValueError(f"offspring mean must exceed 1 (got {mean}); the fixed point is 1")

    def f(s: float) -> float:
        return s - math.exp(-mean * (1.0 - s))

    lo, hi = 0.0, 1.0 - 1e-9
    if f(hi) <= 0.0:
        # mean barely supercritical: the root sits inside (1-1e-9, 1)
        hi = 1.0 - GW_MEAN_MARGIN
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    q = 0.5 * (lo + hi)
    for _ in range(4):
        e = math.exp(-mean * (1.0 - q))
        deriv = 1.0 - mean * e
        if deriv == 0.0:
            break
        q -= (q - e) / deriv
    if not (0.0 < q < 1.0) or abs(q - math.exp(-mean * (1.0 - q))) > GW_TOL:
        raise ArithmeticError(f"fixed-point refinement failed for mean={mean}")
    return q


def transition_log_row(params: ModelParams, x: int, y_hi: int | None = None) -> np.ndarray:
    """Natural logs of the Bin(n, b(x)) mass at y = 0..y_hi (default n).

    Uses log-gamma for the binomial coefficients so n up to 1e4 poses no
    overflow risk.  Entries with zero mass are -inf.
    """
    n = params.n
    if y_hi is None:
        y_hi = n
    b = branch_prob(params, x)
    y = np.arange(y_hi + 1)
    if b == 0.0:
        row = np.full(y_hi + 1, LOG_ZERO)
        row[0] = 0.0
        return row
    log_b = math.log(b)
    log_1mb = math.log1p(-b)
    row = (
        gammaln(n + 1.0)
        - gammaln(y + 1.0)
        - gammaln(n - y + 1.0)
        + y * log_b
        + (n - y) * log_1mb
    )
    return row


def transition_logpmf(params: ModelParams, x: int, y: int) -> LogValue:
    """Log of the one-step transition mass P[X_{t+1} = y | X_t = x]."""
    n = params.n
    if not 0 <= x <= n or not 0 <= y <= n:
        raise ValueError(f"states ({x}, {y}) outside [0, {n}]")
    b = branch_prob(params, x)
    if b == 0.0:
        return LogValue(1, 0.0) if y == 0 else LogValue(0, LOG_ZERO)
    logp = (
        gammaln(n + 1.0)
        - gammaln(y + 1.0)
        - gammaln(n - y + 1.0)
        + y * math.log(b)
        + (n - y) * math.log1p(-b)
    )
    return LogValue(1, float(logp))


def _ceil_snapped(v: float) -> int:
    """Ceiling that first snaps values within 1e-9 (relative) of an integer.

    Decimal inputs like 0.05 are not exact binary doubles, so products such
    as 0.05 * 100 land a few ulps above 5; a raw ceiling would then be off
    by one against the intended real threshold.
    """
    r = round(v)
    if abs(v - r) <= 1e-9 * max(1.0, abs(v)):
        return int(r)
    return math.ceil(v)


def threshold_u(params: ModelParams, epsilon: float, mode: str) -> int:
    """Integer threshold for upper-passage events.

    mode="low" gives ceil(epsilon*n); mode="window" gives
    ceil(equilibrium - epsilon*n).  For integer states, {X >= r} equals
    {X >= ceil(r)}, which is why the ceiling is the right integerization.
    """
    if mode == "low":
        if not epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        v = epsilon * params.n
    elif mode == "window":
        eq_rate = math.log(params.lam) / params.lam
        if not 0.0 < epsilon < eq_rate:
            raise ValueError(
                f"window mode needs 0 < epsilon < log(lam)/lam = {eq_rate:.6g}, got {epsilon}"
            )
        v = equilibrium(params) - epsilon * params.n
    else:
        raise ValueError(f"mode must be 'low' or 'window', got {mode!r}")
    u = _ceil_snapped(v)
    if not 1 <= u <= params.n:
        raise ValueError(f"threshold {u} outside [1, {params.n}]")
    return u


@dataclass(frozen=True)
class LevelSpec:
    """A resolved threshold: epsilon, how it was derived, and the integer u."""

    epsilon: float | None
    mode: str
    u: int


def level_spec(
    params: ModelParams,
    mode: str,
    epsilon: float | None = None,
    u: int | None = None,
) -> LevelSpec:
    """Build a LevelSpec, deriving u for the low/window modes."""
    if mode == "custom":
        if u is None:
            raise ValueError("custom mode requires an explicit threshold u")
        if not 1 <= u <= params.n:
            raise ValueError(f"threshold {u} outside [1, {params.n}]")
        return LevelSpec(epsilon, "custom", int(u))
    if mode in ("low", "window"):
        if epsilon is None:
            raise ValueError(f"{mode} mode requires epsilon")
        if u is not None:
            raise ValueError(f"{mode} mode derives u; do not pass one")
        return LevelSpec(epsilon, mode, threshold_u(params, epsilon, mode))
    raise ValueError(f"mode must be 'low', 'window' or 'custom', got {mode!r}")
