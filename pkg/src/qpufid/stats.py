"""Small statistics helpers shared by the experiment harnesses."""

from __future__ import annotations

import math

from scipy.stats import beta


def binomial_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Clopper-Pearson interval for a binomial proportion.

    With zero successes the lower end is 0 and the upper end is the one-sided
    ``1 - (1-confidence)/2`` quantile, which is what gets reported when an
    attack is never observed to succeed.
    """
    if trials <= 0:
        return 0.0, 1.0
    a = 1.0 - confidence
    lo = 0.0 if successes == 0 else float(beta.ppf(a / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(beta.ppf(1 - a / 2, successes + 1, trials - successes))
    return lo, hi


def binomial_sigma(p: float, trials: int) -> float:
    """Standard deviation of an empirical frequency with true rate ``p``."""
    return math.sqrt(max(p * (1.0 - p), 0.0) / trials) if trials > 0 else float("inf")
