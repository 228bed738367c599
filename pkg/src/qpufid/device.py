"""The qPUF device: a hidden Haar unitary behind a metered evaluation call."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import qstate
from .errors import ConfigError, DimensionMismatch, QueryBudgetExhausted
from .qstate import Dimension, as_dimension
from .stats import binomial_interval


class QPufDevice:
    """A unitary qPUF.

    Parties only see :meth:`qeval`. The unitary is regenerated from ``seed`` and
    kept in a private attribute; :meth:`unsafe_unitary` exists for the simulator
    and tests and should never be handed to a prover or adversary.

    ``query_budget=None`` means unmetered. The verifier owns the device during
    setup and needs ``2K`` evaluations for a trap database, so the owner-side
    ledger is unlimited by default and adversarial access goes through a
    :class:`TransitWindow` with its own cap.
    """

    def __init__(self, dim: Dimension | int, seed: int, device_id: str | None = None,
                 query_budget: int | None = None, _unitary: np.ndarray | None = None):
        self.dim = as_dimension(dim)
        self.seed = int(seed)
        self.id = device_id if device_id is not None else f"qpuf-{self.seed & 0xFFFFFFFFFFFF:012x}"
        if query_budget is not None and query_budget < 0:
            raise ValueError("query_budget must be non-negative")
        self.query_budget = query_budget
        self.query_count = 0
        if _unitary is None:
            _unitary = qstate.haar_random_unitary(self.dim, qstate.substream(self.seed, "unitary"))
        self._unitary = _unitary

    @property
    def n(self) -> int:
        return self.dim.n

    @property
    def D(self) -> int:
        return self.dim.D

    @classmethod
    def from_unitary(cls, U: np.ndarray, device_id: str = "fixture", query_budget=None) -> "QPufDevice":
        """Wrap an explicit unitary (test fixtures, e.g. the identity)."""
        U = np.asarray(U, dtype=complex)
        if not qstate.is_unitary(U):
            raise ValueError("matrix is not unitary")
        return cls(Dimension.from_size(U.shape[0]), seed=0, device_id=device_id,
                   query_budget=query_budget, _unitary=U)

    def remaining(self) -> int | None:
        if self.query_budget is None:
            return None
        return self.query_budget - self.query_count

    def _charge(self, k: int):
        if self.query_budget is not None and self.query_count + k > self.query_budget:
            raise QueryBudgetExhausted(
                f"device {self.id}: {k} queries requested, {self.remaining()} left of {self.query_budget}")
        self.query_count += k

    def _apply(self, states: np.ndarray) -> np.ndarray:
        # unmetered; simulator-side ground truth only
        return np.asarray(states) @ self._unitary.T

    def unsafe_unitary(self) -> np.ndarray:
        """Privileged read of the hidden unitary (simulator/debug use only)."""
        return self._unitary.copy()

    def qeval(self, state: np.ndarray) -> np.ndarray:
        """Evaluate on one pure state, charging one query."""
        state = np.asarray(state)
        if state.ndim != 1 or state.shape[0] != self.D:
            raise DimensionMismatch(f"expected a length-{self.D} state, got shape {state.shape}")
        self._charge(1)
        return self._unitary @ state

    def qeval_batch(self, states: np.ndarray) -> np.ndarray:
        """Evaluate on a row-stacked batch, charging one query per row."""
        states = np.atleast_2d(np.asarray(states))
        if states.shape[1] != self.D:
            raise DimensionMismatch(f"expected rows of length {self.D}, got {states.shape[1]}")
        self._charge(states.shape[0])
        return self._apply(states)

    def descriptor(self) -> dict:
        return {"id": self.id, "n": self.n, "seed": self.seed, "query_budget": self.query_budget}

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)

    @classmethod
    def from_descriptor(cls, desc: dict | str) -> "QPufDevice":
        if isinstance(desc, str):
            desc = json.loads(desc)
        return cls(desc["n"], seed=desc["seed"], device_id=desc["id"], query_budget=desc.get("query_budget"))

    def __repr__(self):
        return f"QPufDevice(id={self.id!r}, n={self.n}, queries={self.query_count}, budget={self.query_budget})"


def qgen(dim: Dimension | int, rng: np.random.Generator, query_budget: int | None = None) -> QPufDevice:
    """Manufacture a fresh device; everything about it is a function of ``rng``."""
    seed = qstate.child_seed(rng)
    return QPufDevice(dim, seed=seed, query_budget=query_budget)


def qeval(device: QPufDevice, state: np.ndarray) -> np.ndarray:
    return device.qeval(state)


class TransitWindow:
    """Bounded query access granted while the device is in transit.

    The window charges both its own cap and the underlying device ledger.
    Default cap is ``10 * n``.
    """

    def __init__(self, device: QPufDevice, budget: int | None = None):
        self._device = device
        self.budget = 10 * device.n if budget is None else int(budget)
        self.used = 0

    @property
    def dim(self) -> Dimension:
        return self._device.dim

    @property
    def D(self) -> int:
        return self._device.D

    def remaining(self) -> int:
        return self.budget - self.used

    def query(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states))
        k = states.shape[0]
        if self.used + k > self.budget:
            raise QueryBudgetExhausted(f"transit window: {k} queries requested, {self.remaining()} left")
        out = self._device.qeval_batch(states)
        self.used += k
        return out


@dataclass
class PropertyReport:
    kind: str
    trials: int
    threshold: float
    min_input_fidelity: float
    max_input_fidelity: float
    min_output_fidelity: float
    max_output_fidelity: float
    max_abs_deviation: float
    passed: bool

    @property
    def pass_(self) -> bool:
        return self.passed


def _fidelity_pairs(device, trials, lo, hi, rng):
    f_in = rng.uniform(lo, hi, size=trials)
    a, b = qstate.states_with_fidelity(device.dim, f_in, rng)
    f_in = np.sqrt(qstate.overlap_squared(a, b))
    f_out = np.sqrt(qstate.overlap_squared(device._apply(a), device._apply(b)))
    return f_in, f_out


def check_robustness(device: QPufDevice, trials: int = 1000, delta_r: float = 0.9,
                     rng: np.random.Generator | None = None) -> PropertyReport:
    """Close inputs (``F >= delta_r``) must give close outputs."""
    if not 0.0 <= delta_r <= 1.0:
        raise ConfigError("delta_r must lie in [0, 1]", field="delta_r")
    rng = rng if rng is not None else qstate.substream(device.seed, "robustness")
    f_in, f_out = _fidelity_pairs(device, trials, delta_r, 1.0, rng)
    dev = float(np.max(np.abs(f_out - f_in)))
    passed = bool(np.all(f_out >= delta_r - qstate.ATOL))
    return PropertyReport("robustness", trials, delta_r, float(f_in.min()), float(f_in.max()),
                          float(f_out.min()), float(f_out.max()), dev, passed)


def check_collision_resistance(device: QPufDevice, trials: int = 1000, delta_c: float = 0.1,
                               rng: np.random.Generator | None = None,
                               delta_r: float | None = None) -> PropertyReport:
    """Far inputs (``F <= delta_c``) must give far outputs."""
    if not 0.0 <= delta_c <= 1.0:
        raise ConfigError("delta_c must lie in [0, 1]", field="delta_c")
    if delta_r is not None and delta_c > 1.0 - delta_r:
        raise ConfigError(f"delta_c={delta_c} exceeds 1 - delta_r={1.0 - delta_r}", field="delta_c")
    rng = rng if rng is not None else qstate.substream(device.seed, "collision")
    f_in, f_out = _fidelity_pairs(device, trials, 0.0, delta_c, rng)
    dev = float(np.max(np.abs(f_out - f_in)))
    passed = bool(np.all(f_out <= delta_c + qstate.ATOL))
    return PropertyReport("collision", trials, delta_c, float(f_in.min()), float(f_in.max()),
                          float(f_out.min()), float(f_out.max()), dev, passed)


@dataclass(frozen=True)
class UnforgeabilityExperimentConfig:
    d_learn: int = 10
    trials: int = 10_000
    epsilon: float = 0.1
    mu: float = 0.1
    delta: float = 0.5
    chunk: int = 1024

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must lie in (0, 1]", field="delta")
        if self.d_learn < 0:
            raise ConfigError("d_learn must be non-negative", field="d_learn")
        if self.trials <= 0:
            raise ConfigError("trials must be positive", field="trials")


@dataclass
class UnforgeabilityReport:
    trials: int
    successes: int
    empirical_success_rate: float
    bound: float
    mean_f2: float
    std_f2: float
    ci: tuple[float, float]
    d: int
    D: int
    qpt: bool
    f2: np.ndarray = field(repr=False, default=None)

    @property
    def within_bound(self) -> bool:
        return self.empirical_success_rate <= self.bound


class DeviceHolder:
    """Baseline that simply keeps the device. Not a QPT adversary."""

    qpt = False

    def __init__(self):
        self._device = None

    def prepare(self, device: QPufDevice, window: TransitWindow, d_learn: int, rng):
        self._device = device

    @property
    def d(self) -> int:
        return self._device.D if self._device is not None else 0

    def forge_batch(self, challenges, rng):
        return self._device._apply(challenges)


def run_unforgeability_game(device: QPufDevice, adversary, cfg: UnforgeabilityExperimentConfig,
                            rng: np.random.Generator) -> UnforgeabilityReport:
    """Selective forgery game against Haar-random challenges.

    The adversary gets ``cfg.d_learn`` queries through a transit window via
    ``adversary.prepare(device, window, d_learn, rng)`` and then answers fresh
    challenges through ``adversary.forge_batch(challenges, rng)``. Success on a
    challenge means ``F**2 >= cfg.delta`` against the true response.
    """
    if cfg.d_learn >= device.D:
        raise ConfigError(f"d_learn={cfg.d_learn} must be below D={device.D}", field="d_learn")
    window = TransitWindow(device, budget=cfg.d_learn)
    adversary.prepare(device, window, cfg.d_learn, rng)
    d = int(getattr(adversary, "d", cfg.d_learn))
    f2_all = np.empty(cfg.trials)
    done = 0
    while done < cfg.trials:
        k = min(cfg.chunk, cfg.trials - done)
        ch = qstate.haar_random_states(device.dim, k, rng)
        truth = device._apply(ch)
        forged = adversary.forge_batch(ch, rng)
        f2_all[done:done + k] = qstate.overlap_squared(forged, truth)
        done += k
    hits = int(np.count_nonzero(f2_all >= cfg.delta))
    bound = min((d + 1) / device.D, 1.0)
    return UnforgeabilityReport(
        trials=cfg.trials,
        successes=hits,
        empirical_success_rate=hits / cfg.trials,
        bound=bound,
        mean_f2=float(f2_all.mean()),
        std_f2=float(f2_all.std(ddof=1)) if cfg.trials > 1 else 0.0,
        ci=binomial_interval(hits, cfg.trials),
        d=d,
        D=device.D,
        qpt=bool(getattr(adversary, "qpt", True)),
        f2=f2_all,
    )
