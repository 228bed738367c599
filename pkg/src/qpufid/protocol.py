"""hrv-id and lrv-id identification sessions.

A session is setup (verifier builds a CRP database from the device), transit
(the device travels to the prover and an eavesdropper may query it a bounded
number of times) and verification (challenges go out, responses or outcome
bits come back, the verifier decides).

Provers share a tiny interface::

    prover.prepare(device, window, cfg, rng)    # once, after setup
    prover.respond(challenges, rng)             # hrv-id: response states
    prover.outcome_bits(challenges, states, rng)   # lrv-id: bit string
    prover.bit_probabilities(challenges, states)   # lrv-id exact mode (optional)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import qstate
from .device import QPufDevice, TransitWindow, qgen
from .equality import TestKind, accept_probability_f2, sample_outcomes
from .errors import ConfigError, CopyExhausted
from .qstate import Dimension

HRV_SWAP = "hrv-swap"
HRV_GSWAP = "hrv-gswap"
LRV = "lrv"
PROTOCOLS = (HRV_SWAP, HRV_GSWAP, LRV)
EXACT = "exact"
SAMPLED = "sampled"
_TOL = 1e-9


def _integral(x: float) -> bool:
    return abs(x - round(x)) < 1e-9


@dataclass
class ProtocolConfig:
    """Parameters of one identification session.

    ``tau`` is an absolute tolerance on the count of 1-bits among trap rounds.
    ``K`` defaults to ``N``. ``device_budget`` caps owner-side queries and is
    unlimited by default; ``transit_budget`` caps the eavesdropper and defaults
    to ``10 * n``.
    """

    n: int
    N: int
    K: int | None = None
    M: int = 1
    tau: float = 0
    kappa: float = 0.5
    p: float = 0.5
    mode: str = SAMPLED
    seed: int = 0
    device_budget: int | None = None
    transit_budget: int | None = None
    test: str = "swap"
    enforce_poly_k: bool = True

    def __post_init__(self):
        if self.K is None:
            self.K = self.N
        self.validate()

    @property
    def dim(self) -> Dimension:
        return Dimension(self.n)

    def validate(self, protocol: str | None = None) -> "ProtocolConfig":
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}", field=name)

        for name in ("n", "N", "K", "M"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                bad(name, f"must be an integer, got {v!r}")
        if not 1 <= self.n <= qstate.MAX_QUBITS:
            bad("n", f"must lie in [1, {qstate.MAX_QUBITS}]")
        if self.N < 1:
            bad("N", "must be positive")
        if self.M < 1:
            bad("M", "must be positive")
        if self.N > self.K:
            bad("K", f"database size {self.K} is smaller than N={self.N}")
        if self.enforce_poly_k and self.K > self.n ** 3:
            bad("K", f"K={self.K} exceeds the polynomial cap n^3={self.n ** 3}")
        if self.tau < 0:
            bad("tau", "must be non-negative")
        if not 0.0 <= self.kappa <= 1.0:
            bad("kappa", "must lie in [0, 1]")
        if not 0.0 <= self.p <= 1.0:
            bad("p", "must lie in [0, 1]")
        if self.mode not in (EXACT, SAMPLED):
            bad("mode", f"must be '{EXACT}' or '{SAMPLED}'")
        try:
            TestKind.parse(self.test)
        except ValueError as exc:
            bad("test", str(exc))
        for name in ("device_budget", "transit_budget"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, (int, np.integer)) or v < 0):
                bad(name, "must be a non-negative integer or null")
        if protocol == LRV:
            if self.N % 2:
                bad("N", "lrv-id needs an even number of rounds")
            if not _integral(self.p * self.N):
                bad("p", f"p*N = {self.p * self.N} is not an integer")
            if self.p == 0.5 and self.N % 4:
                bad("N", "with p = 1/2 the round count must be divisible by 4")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}", field=key)
        for key in ("n", "N"):
            if key not in data:
                raise ConfigError(f"missing required configuration key {key!r}", field=key)
        return cls(**data)

    def replace(self, **kw) -> "ProtocolConfig":
        d = self.to_dict()
        d.update(kw)
        return ProtocolConfig(**d)


@dataclass
class CrpRecord:
    label: int
    challenge: np.ndarray
    response: np.ndarray
    copies_remaining: int
    trap_response: np.ndarray | None = None
    trap_copies_remaining: int = 0


class CrpDatabase:
    """Array-backed CRP store. Copies of a response are a count, not clones."""

    def __init__(self, labels, challenges, responses, copies, traps=None, trap_copies=None):
        self.labels = np.asarray(labels, dtype=np.uint64)
        self.challenges = np.asarray(challenges)
        self.responses = np.asarray(responses)
        self.copies = np.asarray(copies, dtype=np.int64).copy()
        self.traps = None if traps is None else np.asarray(traps)
        if trap_copies is None:
            trap_copies = np.zeros(len(self.labels), dtype=np.int64) if traps is None else np.ones(len(self.labels), dtype=np.int64)
        self.trap_copies = np.asarray(trap_copies, dtype=np.int64).copy()

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> CrpRecord:
        return CrpRecord(int(self.labels[i]), self.challenges[i], self.responses[i], int(self.copies[i]),
                         None if self.traps is None else self.traps[i], int(self.trap_copies[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def total_copies(self) -> int:
        return int(self.copies.sum())

    def consume(self, idx, k: int = 1, trap: bool = False):
        idx = np.atleast_1d(np.asarray(idx))
        pool = self.trap_copies if trap else self.copies
        if np.any(pool[idx] < k):
            what = "trap" if trap else "response"
            raise CopyExhausted(f"not enough stored {what} copies for records {idx[pool[idx] < k].tolist()}")
        np.subtract.at(pool, idx, k)


@dataclass
class VerifierState:
    protocol: str
    cfg: ProtocolConfig
    db: CrpDatabase
    setup_seed: int
    device: dict


@dataclass
class TrapPlacement:
    """``marks[i] == 1`` means round ``i`` carries the genuine response."""

    marks: np.ndarray

    @property
    def P(self) -> np.ndarray:
        return np.flatnonzero(self.marks)

    @property
    def N(self) -> int:
        return len(self.marks)


@dataclass
class VerificationResult:
    accepted: bool
    per_round: np.ndarray
    transcript: dict
    acceptance_probability: float | None = None
    outcome_string: np.ndarray | None = None
    placement: TrapPlacement | None = None
    f2: np.ndarray | None = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps(self.transcript, sort_keys=True)


def _encode(setup_seed: int, labels: np.ndarray, dim: Dimension) -> np.ndarray:
    # each classical label gets its own Haar encoding stream
    out = np.empty((len(labels), dim.D), dtype=complex)
    for i, lab in enumerate(labels):
        r = qstate.substream(setup_seed, "encode", i, int(lab) & 0xFFFFFFFF, int(lab) >> 32)
        out[i] = qstate.haar_random_state(dim, r)
    return out


def _setup(cfg: ProtocolConfig, rng, protocol: str):
    cfg.validate(protocol)
    dim = cfg.dim
    setup_seed = qstate.child_seed(rng)
    device = qgen(dim, qstate.substream(setup_seed, "device"), query_budget=cfg.device_budget)
    lab_rng = qstate.substream(setup_seed, "labels")
    labels = lab_rng.integers(0, 2**63 - 1, size=cfg.K, dtype=np.int64).astype(np.uint64)
    challenges = _encode(setup_seed, labels, dim)
    return setup_seed, device, labels, challenges


def hrv_setup(cfg: ProtocolConfig, rng: np.random.Generator, protocol: str = HRV_SWAP):
    """Build a hrv-id database of ``K`` records with ``M`` response copies each.

    Every copy costs one device query. Returns ``(verifier, device, window)``;
    the window is the eavesdropper's bounded access during transit.
    """
    setup_seed, device, labels, challenges = _setup(cfg, rng, protocol)
    responses = None
    for _ in range(cfg.M):
        responses = device.qeval_batch(challenges)
    copies = np.full(cfg.K, cfg.M, dtype=np.int64)
    db = CrpDatabase(labels, challenges, responses, copies)
    verifier = VerifierState(protocol, cfg, db, setup_seed, device.descriptor())
    return verifier, device, TransitWindow(device, cfg.transit_budget)


def lrv_setup(cfg: ProtocolConfig, rng: np.random.Generator):
    """Build a lrv-id database: one response and one trap response per record.

    The trap response is the device output on a Haar state orthogonal to the
    challenge, so it is orthogonal to the genuine response.
    """
    setup_seed, device, labels, challenges = _setup(cfg, rng, LRV)
    responses = device.qeval_batch(challenges)
    perp = qstate.orthogonal_states(challenges, qstate.substream(setup_seed, "perp"))
    traps = device.qeval_batch(perp)
    ones = np.ones(cfg.K, dtype=np.int64)
    db = CrpDatabase(labels, challenges, responses, ones, traps, ones)
    verifier = VerifierState(LRV, cfg, db, setup_seed, device.descriptor())
    return verifier, device, TransitWindow(device, cfg.transit_budget)


def setup(protocol: str, cfg: ProtocolConfig, rng):
    if protocol == LRV:
        return lrv_setup(cfg, rng)
    if protocol in (HRV_SWAP, HRV_GSWAP):
        return hrv_setup(cfg, rng, protocol)
    raise ConfigError(f"unknown protocol {protocol!r}", field="protocol")


def _pick_records(db: CrpDatabase, N: int, need: int, rng, trap_need: int = 0) -> np.ndarray:
    ok = db.copies >= need
    if trap_need:
        ok &= db.trap_copies >= trap_need
    avail = np.flatnonzero(ok)
    if len(avail) < N:
        raise CopyExhausted(f"only {len(avail)} records still hold {need} copies, {N} needed")
    return np.sort(rng.choice(avail, size=N, replace=False))


def _base_transcript(verifier: VerifierState, variant: str, run_seed: int, idx) -> dict:
    return {
        "protocol": variant,
        "config": verifier.cfg.to_dict(),
        "seeds": {"setup": verifier.setup_seed, "run": run_seed},
        "device": verifier.device,
        "records": [int(i) for i in idx],
    }


def hrv_run(cfg: ProtocolConfig, variant: str, verifier: VerifierState, prover,
            rng: np.random.Generator) -> VerificationResult:
    """One hrv-id verification phase.

    ``swap``: ``N`` distinct challenges each sent ``M`` times, one SWAP test
    per round against a fresh stored copy (``R = N*M`` rounds).
    ``gswap``: ``N`` rounds, each a GSWAP test using ``M`` stored copies.
    Accept iff every test accepts.
    """
    variant = {"swap": HRV_SWAP, "gswap": HRV_GSWAP}.get(variant, variant)
    if variant not in (HRV_SWAP, HRV_GSWAP):
        raise ConfigError(f"unknown hrv variant {variant!r}", field="variant")
    db = verifier.db
    run_seed = qstate.child_seed(rng)
    sel_rng = qstate.substream(run_seed, "select")
    idx = _pick_records(db, cfg.N, cfg.M, sel_rng)
    db.consume(idx, cfg.M)
    if variant == HRV_SWAP:
        rounds = np.repeat(idx, cfg.M)
        kind = TestKind.swap()
    else:
        rounds = idx
        kind = TestKind.gswap(cfg.M)
    responses = prover.respond(db.challenges[rounds], qstate.substream(run_seed, "prover"))
    f2 = qstate.overlap_squared(responses, db.responses[rounds])
    probs = np.atleast_1d(accept_probability_f2(kind, f2))
    tr = _base_transcript(verifier, variant, run_seed, idx)
    R = len(rounds)
    tr["rounds"] = R
    tr["messages"] = [m for r, i in enumerate(rounds) for m in (
        {"round": r, "from": "verifier", "channel": "quantum", "type": "challenge", "record": int(i)},
        {"round": r, "from": "prover", "channel": "quantum", "type": "response", "record": int(i)})]
    tr["message_counts"] = {"quantum": 2 * R, "classical": 0}
    tr["copies_consumed"] = int(cfg.N * cfg.M)
    tr["test"] = str(kind)
    if cfg.mode == EXACT:
        pacc = float(np.prod(probs))
        accepted = pacc >= 1.0 - 1e-12
        per_round = probs
        tr["acceptance_probability"] = pacc
    else:
        pacc = None
        per_round = sample_outcomes(kind, f2, qstate.substream(run_seed, "tests"))
        accepted = bool(np.all(per_round == 0))
        tr["outcomes"] = per_round.tolist()
    tr["accepted"] = bool(accepted)
    return VerificationResult(bool(accepted), per_round, tr, acceptance_probability=pacc, f2=f2)


def place_traps(N: int, p: float, rng: np.random.Generator) -> TrapPlacement:
    """Mark ``p*N`` of ``N`` rounds, uniformly over subsets of that size."""
    k = p * N
    if not _integral(k):
        raise ConfigError(f"p*N = {k} is not an integer", field="p")
    marks = np.zeros(N, dtype=np.int8)
    marks[rng.choice(N, size=int(round(k)), replace=False)] = 1
    return TrapPlacement(marks)


def place_traps_batch(trials: int, N: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """``(trials, N)`` mark matrix, each row uniform over size-``p*N`` subsets."""
    k = p * N
    if not _integral(k):
        raise ConfigError(f"p*N = {k} is not an integer", field="p")
    order = np.argsort(rng.random((trials, N)), axis=1)
    marks = np.zeros((trials, N), dtype=np.int8)
    np.put_along_axis(marks, order[:, :int(round(k))], 1, axis=1)
    return marks


def cver(s, placement: TrapPlacement | np.ndarray, tau: float, kappa: float = 0.5) -> bool:
    """Classical verdict on an outcome string.

    test1: every marked round reports 0. test2: the number of 1-bits among
    the unmarked (trap) rounds is within ``tau`` of ``kappa`` times their count.
    """
    marks = placement.marks if isinstance(placement, TrapPlacement) else np.asarray(placement)
    s = np.asarray(s)
    if s.shape != marks.shape:
        raise ValueError(f"outcome string length {s.shape} does not match placement {marks.shape}")
    return bool(cver_batch(s[None, :], marks[None, :], tau, kappa)[0])


def cver_batch(S: np.ndarray, marks: np.ndarray, tau: float, kappa: float = 0.5) -> np.ndarray:
    """Row-wise :func:`cver`; ``marks`` may be one row broadcast over ``S``."""
    S = np.asarray(S, dtype=np.int64)
    marks = np.asarray(marks, dtype=bool)
    test1 = ~np.any(S.astype(bool) & marks, axis=-1)
    nonp = (~marks).sum(axis=-1)
    ones = (S * (~marks)).sum(axis=-1)
    test2 = np.abs(ones - kappa * nonp) <= tau + _TOL
    return test1 & test2


def _count_distribution(q: np.ndarray) -> np.ndarray:
    # Poisson-binomial pmf of the number of 1-bits
    dist = np.zeros(len(q) + 1)
    dist[0] = 1.0
    for j, qj in enumerate(q):
        dist[1:j + 2] = dist[1:j + 2] * (1 - qj) + dist[:j + 1] * qj
        dist[0] *= (1 - qj)
    return dist


def cver_accept_probability(q: np.ndarray, marks: np.ndarray, tau: float, kappa: float = 0.5) -> float:
    """Exact cVer pass probability for independent bits with ``P(s_i = 1) = q_i``."""
    q = np.asarray(q, dtype=float)
    marks = np.asarray(marks, dtype=bool)
    p1 = float(np.prod(1.0 - q[marks]))
    nonp = int((~marks).sum())
    dist = _count_distribution(q[~marks])
    counts = np.arange(nonp + 1)
    ok = np.abs(counts - kappa * nonp) <= tau + _TOL
    return p1 * float(dist[ok].sum())


def lrv_run(cfg: ProtocolConfig, verifier: VerifierState, prover, rng: np.random.Generator,
            placement: TrapPlacement | None = None) -> VerificationResult:
    """One lrv-id verification phase.

    The verifier sends ``N`` (challenge, state) pairs where the state is the
    genuine response on marked rounds and a trap response elsewhere. The
    prover answers with one classical bit string.
    """
    db = verifier.db
    if db.traps is None:
        raise ConfigError("lrv-id needs a database with trap responses", field="protocol")
    run_seed = qstate.child_seed(rng)
    idx = _pick_records(db, cfg.N, 0, qstate.substream(run_seed, "select"))
    if placement is None:
        placement = place_traps(cfg.N, cfg.p, qstate.substream(run_seed, "traps"))
    marks = placement.marks.astype(bool)
    for trap in (False, True):
        sel = idx[~marks] if trap else idx[marks]
        if len(sel):
            db.consume(sel, 1, trap=trap)
    sent = np.where(marks[:, None], db.responses[idx], db.traps[idx])
    ch = db.challenges[idx]
    tr = _base_transcript(verifier, LRV, run_seed, idx)
    tr["rounds"] = cfg.N
    tr["messages"] = [{"round": r, "from": "verifier", "channel": "quantum", "type": "challenge+state",
                       "record": int(i)} for r, i in enumerate(idx)]
    tr["messages"].append({"round": cfg.N, "from": "prover", "channel": "classical", "type": "outcome_string"})
    tr["message_counts"] = {"quantum": cfg.N, "classical": 1}
    tr["copies_consumed"] = int(cfg.N)
    tr["placement"] = placement.marks.tolist()
    prover_rng = qstate.substream(run_seed, "prover")
    if cfg.mode == EXACT:
        if not hasattr(prover, "bit_probabilities"):
            raise ConfigError("exact mode needs a prover exposing bit_probabilities", field="mode")
        q = np.asarray(prover.bit_probabilities(ch, sent), dtype=float)
        pacc = cver_accept_probability(q, marks, cfg.tau, cfg.kappa)
        accepted = pacc >= 1.0 - 1e-12
        tr["acceptance_probability"] = pacc
        tr["bit_probabilities"] = q.tolist()
        tr["accepted"] = bool(accepted)
        return VerificationResult(bool(accepted), q, tr, acceptance_probability=pacc, placement=placement)
    s = np.asarray(prover.outcome_bits(ch, sent, prover_rng), dtype=np.int8)
    if s.shape != (cfg.N,):
        raise ValueError(f"prover returned {s.shape} bits, expected ({cfg.N},)")
    accepted = cver(s, placement, cfg.tau, cfg.kappa)
    tr["outcome_string"] = s.tolist()
    tr["accepted"] = bool(accepted)
    return VerificationResult(bool(accepted), s, tr, outcome_string=s, placement=placement)


def run(protocol: str, cfg: ProtocolConfig, verifier: VerifierState, prover, rng) -> VerificationResult:
    if protocol == LRV:
        return lrv_run(cfg, verifier, prover, rng)
    return hrv_run(cfg, protocol, verifier, prover, rng)


class HonestProver:
    """Holds the genuine device and answers truthfully."""

    qpt = True
    name = "honest"

    def __init__(self, test: str | TestKind = "swap"):
        self.test = test if isinstance(test, TestKind) else TestKind.parse(test)
        self.device: QPufDevice | None = None

    def prepare(self, device: QPufDevice, window: TransitWindow, cfg: ProtocolConfig, rng):
        self.device = device

    def respond(self, challenges, rng):
        return self.device.qeval_batch(challenges)

    def _f2(self, challenges, states):
        return qstate.overlap_squared(self.device.qeval_batch(challenges), states)

    def bit_probabilities(self, challenges, states):
        return 1.0 - np.atleast_1d(accept_probability_f2(self.test, self._f2(challenges, states)))

    def outcome_bits(self, challenges, states, rng):
        return sample_outcomes(self.test, self._f2(challenges, states), rng)


def session(protocol: str, cfg: ProtocolConfig, prover, rng: np.random.Generator) -> VerificationResult:
    """Setup, hand the device over, verify. ``rng`` drives everything."""
    base = qstate.child_seed(rng)
    verifier, device, window = setup(protocol, cfg, qstate.substream(base, "setup"))
    prover.prepare(device, window, cfg, qstate.substream(base, "prepare"))
    return run(protocol, cfg, verifier, prover, qstate.substream(base, "run"))


def hoeffding_completeness(N: int, tau: float) -> float:
    """Unclamped ``1 - 2 exp(-4 tau^2 / N)``."""
    return 1.0 - 2.0 * math.exp(-4.0 * tau * tau / N)
