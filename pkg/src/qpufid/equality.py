"""Equality tests between a stored state and a presented one.

Every test is computed from the squared fidelity of its inputs; no ancilla
circuit is simulated. Outcome bit 0 means the test accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnreachableError
from .qstate import fidelity

SWAP = "swap"
GSWAP = "gswap"
IDEAL = "ideal"
_ONE = 1.0 - 1e-12


@dataclass(frozen=True)
class TestKind:
    """Which equality test to run. ``M`` is only meaningful for GSWAP."""

    __test__ = False

    name: str
    M: int = 1

    def __post_init__(self):
        if self.name not in (SWAP, GSWAP, IDEAL):
            raise ValueError(f"unknown test {self.name!r}")
        if self.name == GSWAP and (not isinstance(self.M, (int, np.integer)) or self.M < 1):
            raise ValueError("GSWAP needs an integer copy count M >= 1")

    @classmethod
    def swap(cls):
        return cls(SWAP)

    @classmethod
    def gswap(cls, M: int):
        return cls(GSWAP, int(M))

    @classmethod
    def ideal(cls):
        return cls(IDEAL)

    @classmethod
    def parse(cls, text: str) -> "TestKind":
        """``"swap"``, ``"ideal"`` or ``"gswap:M"``."""
        text = text.strip().lower()
        if text.startswith(GSWAP):
            _, _, m = text.partition(":")
            return cls.gswap(int(m) if m else 1)
        return cls(text)

    def __str__(self):
        return f"gswap:{self.M}" if self.name == GSWAP else self.name


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False

    accept: bool

    @property
    def outcome_bit(self) -> int:
        return 0 if self.accept else 1


def accept_probability_f2(kind: TestKind, f2):
    """Acceptance probability from squared fidelity; vectorised over ``f2``."""
    f2 = np.clip(np.asarray(f2, dtype=float), 0.0, 1.0)
    f2 = np.where(f2 > _ONE, 1.0, f2)
    if kind.name == SWAP:
        p = 0.5 + 0.5 * f2
    elif kind.name == GSWAP:
        p = (1.0 + kind.M * f2) / (kind.M + 1)
    else:
        p = f2
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def accept_probability(kind: TestKind, a, b) -> float:
    """Probability that ``kind`` accepts the pair ``(a, b)``.

    ``a`` may be mixed, ``b`` should be pure; then ``F**2 = <b|a|b>``.
    """
    return accept_probability_f2(kind, fidelity(a, b) ** 2)


def sample_outcomes(kind: TestKind, f2, rng: np.random.Generator) -> np.ndarray:
    """Outcome bits (0 = accept) for a batch of squared fidelities."""
    p = np.atleast_1d(accept_probability_f2(kind, f2))
    return (rng.random(p.shape) >= p).astype(np.int8)


def sample_outcome(kind: TestKind, a, b, rng: np.random.Generator) -> TestOutcome:
    p = accept_probability(kind, a, b)
    return TestOutcome(bool(rng.random() < p))


def repetitions_for_error(kind: TestKind, F: float, epsilon: float) -> int:
    """Smallest repetition (SWAP) or copy (GSWAP) count with false-accept <= epsilon.

    SWAP and IDEAL count independent repetitions of a single test; GSWAP counts
    reference copies in one run.
    """
    if not 0.0 <= F < 1.0:
        raise ValueError("F must lie in [0, 1)")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    f2 = F * F
    if kind.name == GSWAP:
        if epsilon <= f2:
            raise UnreachableError(f"GSWAP acceptance never drops below F^2={f2:g} >= epsilon={epsilon:g}")
        # (1 + M f2)/(M+1) <= eps  <=>  M >= (1 - eps)/(eps - f2)
        M = max(1, math.ceil((1.0 - epsilon) / (epsilon - f2) - 1e-12))
        while M > 1 and (1 + (M - 1) * f2) / M <= epsilon:
            M -= 1
        while (1 + M * f2) / (M + 1) > epsilon:
            M += 1
        return M
    p = 0.5 + 0.5 * f2 if kind.name == SWAP else f2
    if p == 0.0:
        return 1
    R = max(1, math.ceil(math.log(epsilon) / math.log(p) - 1e-12))
    while R > 1 and p ** (R - 1) <= epsilon:
        R -= 1
    while p ** R > epsilon:
        R += 1
    return R
