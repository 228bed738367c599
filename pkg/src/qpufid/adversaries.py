"""Attackers and the attack-game harness.

Classical attackers never look at the quantum states they receive; they just
produce a bit string for cVer. Quantum attackers learn a slice of the device
during transit and then emulate it on that slice.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis, qstate
from .device import QPufDevice, TransitWindow
from .equality import TestKind, TestOutcome, accept_probability_f2, sample_outcomes
from .errors import ConfigError, QueryBudgetExhausted
from .protocol import (HRV_GSWAP, HRV_SWAP, LRV, PROTOCOLS, HonestProver, ProtocolConfig,
                       cver_batch, place_traps_batch, session)
from .qstate import SubspaceBasis
from .stats import binomial_interval

m_valid = analysis.m_valid


# --- classical string guessing ----------------------------------------------

def independent_guess_string(N: int, alpha: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Each bit is 0 with probability ``alpha``, independently."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    shape = (N,) if size is None else (size, N)
    return (rng.random(shape) >= alpha).astype(np.int8)


def global_strategy_string(N: int, p: float, tau: float, rng: np.random.Generator,
                           size: int | None = None, kappa: float = 0.5) -> np.ndarray:
    """A uniformly placed string whose weight ``c1`` is uniform over ``m_valid``."""
    valid = m_valid(N, p, tau, kappa)
    if len(valid) == 0:
        raise ConfigError(f"no admissible one-bit count for N={N}, p={p}, tau={tau}", field="tau")
    T = 1 if size is None else size
    c1 = rng.choice(valid, size=T)
    order = np.argsort(rng.random((T, N)), axis=1)
    ranks = np.argsort(order, axis=1)
    S = (ranks < c1[:, None]).astype(np.int8)
    return S[0] if size is None else S


# --- subspace learning and emulation -----------------------------------------

@dataclass(frozen=True)
class SubspaceAdversary:
    """What an eavesdropper keeps after transit.

    ``learned_in.vectors[i]`` is mapped to ``learned_out.vectors[i]`` by the
    device; together they define a partial isometry on a ``d``-dim subspace.
    """

    learned_in: SubspaceBasis
    learned_out: SubspaceBasis
    queried: np.ndarray = field(repr=False)
    answers: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return self.learned_in.d

    @property
    def D(self) -> int:
        return self.learned_in.D


def learn_subspace(window: TransitWindow, k: int, rng: np.random.Generator,
                   strategy: str = "haar") -> SubspaceAdversary:
    """Spend ``k`` transit queries and keep the resulting input/output bases.

    ``strategy="haar"`` queries Haar-random challenges, ``"basis"`` queries
    the first ``k`` computational basis states.
    """
    D = window.D
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > window.remaining():
        raise QueryBudgetExhausted(f"learning needs {k} queries, window has {window.remaining()}")
    if k == 0:
        empty = np.zeros((0, D), dtype=complex)
        return SubspaceAdversary(SubspaceBasis(empty), SubspaceBasis(empty), empty, empty)
    if strategy == "haar":
        X = qstate.haar_random_states(window.dim, k, rng)
    elif strategy == "basis":
        if k > D:
            raise ValueError("basis strategy cannot exceed D queries")
        X = np.eye(D, dtype=complex)[:k]
    else:
        raise ValueError(f"unknown learning strategy {strategy!r}")
    Y = window.query(X)
    Q, C = qstate.gram_schmidt(X)
    # the device is linear, so the same combinations of answers span the image
    out = C @ Y
    return SubspaceAdversary(SubspaceBasis(Q), SubspaceBasis(out), X, Y)


def _haar_in_complement(basis: SubspaceBasis, count: int, rng) -> np.ndarray:
    z = (rng.standard_normal((count, basis.D)) + 1j * rng.standard_normal((count, basis.D)))
    if basis.d >= basis.D:
        return np.zeros_like(z)
    if basis.d:
        for _ in range(2):
            z -= basis.project(z)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def emulation_forge(adv: SubspaceAdversary, challenge: np.ndarray, rng: np.random.Generator,
                    rule: str = "optimal") -> np.ndarray:
    """Forge responses to one challenge or a row-stacked batch.

    With ``w = |Pi phi|^2`` the learned weight of the challenge and ``V`` the
    learned partial isometry:

    * ``"optimal"``: output ``V Pi phi / sqrt(w)`` when ``w (D - d) > 1 - w``,
      otherwise a Haar state in the unlearned output complement. This picks
      whichever guess has the larger expected ``F**2``.
    * ``"mixed"``: ``normalize(V Pi phi + sqrt(1 - w) r)`` with ``r`` Haar in the
      unlearned output complement.

    With nothing learned the answer is a Haar state in the full space.
    """
    challenge = np.asarray(challenge)
    single = challenge.ndim == 1
    X = np.atleast_2d(challenge)
    if X.shape[1] != adv.D:
        raise qstate.DimensionMismatch(f"challenge dimension {X.shape[1]} != {adv.D}")
    T = X.shape[0]
    if adv.d == 0:
        out = qstate.haar_random_states(qstate.Dimension.from_size(adv.D), T, rng)
        return out[0] if single else out
    a = adv.learned_in.coefficients(X)
    w = np.clip(np.sum(np.abs(a) ** 2, axis=1), 0.0, 1.0)
    mapped = a @ adv.learned_out.vectors
    r = _haar_in_complement(adv.learned_out, T, rng)
    if rule == "optimal":
        norms = np.sqrt(np.maximum(w, 1e-300))[:, None]
        use_map = ((w * (adv.D - adv.d) > 1.0 - w) | (adv.d >= adv.D))[:, None]
        out = np.where(use_map, mapped / norms, r)
    elif rule == "mixed":
        out = mapped + np.sqrt(1.0 - w)[:, None] * r
        out /= np.linalg.norm(out, axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown forging rule {rule!r}")
    return out[0] if single else out


# --- trap distinguishing ------------------------------------------------------

GUESS_RULES = ("accept", "reject", "always-1", "random")


@dataclass
class TrapGuess:
    guessed_b: int
    test_outcome: TestOutcome
    reference_state: np.ndarray = field(repr=False)
    mode: str = "collective"

    @property
    def reference_density(self) -> np.ndarray:
        return qstate.density_matrix(self.reference_state)


def _apply_rule(rule: str, outcome_bits: np.ndarray, rng) -> np.ndarray:
    accept = outcome_bits == 0
    if rule == "accept":
        return accept.astype(np.int8)
    if rule == "reject":
        return (~accept).astype(np.int8)
    if rule == "always-1":
        return np.ones_like(outcome_bits, dtype=np.int8)
    if rule == "random":
        return rng.integers(0, 2, size=outcome_bits.shape).astype(np.int8)
    raise ValueError(f"unknown decision rule {rule!r}")


def trap_distinguish_batch(adv: SubspaceAdversary, challenges, unknown, rng, rule: str = "accept",
                           test: str = "ideal", forge_rule: str = "optimal"):
    """Guess ``b`` for every round: returns ``(guesses, outcome_bits, references, f2)``."""
    kind = TestKind.parse(test)
    if kind.name == "gswap":
        raise ValueError("trap distinguishing supports the ideal and swap tests")
    refs = np.atleast_2d(emulation_forge(adv, challenges, rng, rule=forge_rule))
    f2 = qstate.overlap_squared(refs, np.atleast_2d(unknown))
    bits = sample_outcomes(kind, f2, rng)
    return _apply_rule(rule, bits, rng), bits, refs, f2


def trap_distinguish(adv: SubspaceAdversary, challenge, unknown_response, mode: str = "collective",
                     rng: np.random.Generator | None = None, rule: str = "accept",
                     test: str = "ideal") -> TrapGuess:
    """Guess whether ``unknown_response`` is the genuine response to ``challenge``.

    The reference is the adversary's own forgery of the response. In
    ``coherent`` mode the same single-round map is applied to every round,
    which is the product form the joint attack reduces to.
    """
    if mode not in ("collective", "coherent"):
        raise ValueError(f"unknown attack mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    g, bits, refs, _ = trap_distinguish_batch(adv, challenge, unknown_response, rng, rule, test)
    return TrapGuess(int(g[0]), TestOutcome(bool(bits[0] == 0)), refs[0], mode)


@dataclass
class TrapExperimentReport:
    rounds: int
    correct: int
    accuracy: float
    blocks: int
    block_size: int
    joint_successes: int
    joint_rate: float
    product_prediction: float
    joint_sigma: float
    d: int
    D: int
    rule: str
    test: str

    @property
    def factorizes(self) -> bool:
        return abs(self.joint_rate - self.product_prediction) <= 3 * self.joint_sigma


def trap_experiment(n: int, d: int, rounds: int, rng: np.random.Generator, block_size: int = 8,
                    rule: str = "accept", test: str = "ideal", strategy: str = "haar",
                    chunk: int = 2048) -> TrapExperimentReport:
    """Per-round and joint trap-guess accuracy of a subspace adversary.

    Each round draws a Haar challenge and a fair coin ``b``; the adversary sees
    the genuine response when ``b = 1`` and a trap response otherwise. Rounds
    are grouped into blocks of ``block_size`` for the joint statistic.
    """
    dim = qstate.Dimension(n)
    device = QPufDevice(dim, seed=qstate.child_seed(rng))
    adv = learn_subspace(TransitWindow(device, d), d, rng, strategy) if d < dim.D else None
    U = device.unsafe_unitary()
    if adv is None:
        # full knowledge (not QPT): the reference is the true response itself
        eye = np.eye(dim.D, dtype=complex)
        adv = SubspaceAdversary(SubspaceBasis(eye), SubspaceBasis(U.T.copy()), eye, U.T.copy())
    correct = np.empty(rounds, dtype=bool)
    done = 0
    while done < rounds:
        k = min(chunk, rounds - done)
        ch = qstate.haar_random_states(dim, k, rng)
        b = rng.integers(0, 2, size=k)
        perp = qstate.orthogonal_states(ch, rng)
        unknown = np.where(b[:, None] == 1, ch, perp) @ U.T
        g, *_ = trap_distinguish_batch(adv, ch, unknown, rng, rule, test)
        correct[done:done + k] = g == b
        done += k
    acc = float(correct.mean())
    blocks = rounds // block_size
    joint = correct[:blocks * block_size].reshape(blocks, block_size).all(axis=1) if blocks else np.zeros(0, bool)
    js = int(joint.sum())
    pred = acc ** block_size
    sig_joint = np.sqrt(max(pred * (1 - pred), 1e-300) / max(blocks, 1))
    sig_pred = block_size * acc ** (block_size - 1) * np.sqrt(acc * (1 - acc) / rounds)
    return TrapExperimentReport(rounds, int(correct.sum()), acc, blocks, block_size, js,
                                js / blocks if blocks else float("nan"), pred,
                                float(np.hypot(sig_joint, sig_pred)), adv.d,
                                dim.D, rule, test)


# --- provers ------------------------------------------------------------------

class _Prover:
    name = "prover"
    qpt = True
    classical = False

    def prepare(self, device, window, cfg, rng):
        pass


class HaarResponder(_Prover):
    """Answers every round with a fresh Haar-random state."""

    name = "haar-responder"

    def prepare(self, device, window, cfg, rng):
        self.dim = device.dim

    def respond(self, challenges, rng):
        return qstate.haar_random_states(self.dim, len(challenges), rng)

    def outcome_bits(self, challenges, states, rng):
        h = qstate.haar_random_states(self.dim, len(challenges), rng)
        return sample_outcomes(TestKind.swap(), qstate.overlap_squared(h, states), rng)


def _learn_budget(k, window, cfg):
    if isinstance(cfg, (int, np.integer)):
        return int(cfg)
    return window.remaining() if k is None else min(k, window.remaining())


class ForgingProver(_Prover):
    """Learns during transit, then emulates the device on what it learned."""

    name = "forger"

    def __init__(self, d: int | None = None, strategy: str = "haar", rule: str = "optimal", test: str = "swap"):
        self.k = d
        self.strategy = strategy
        self.rule = rule
        self.test = TestKind.parse(test)
        self.adv: SubspaceAdversary | None = None

    def prepare(self, device, window, cfg, rng):
        self.adv = learn_subspace(window, _learn_budget(self.k, window, cfg), rng, self.strategy)

    @property
    def d(self) -> int:
        return self.adv.d if self.adv is not None else 0

    def forge_batch(self, challenges, rng):
        return np.atleast_2d(emulation_forge(self.adv, challenges, rng, self.rule))

    respond = forge_batch

    def outcome_bits(self, challenges, states, rng):
        forged = self.forge_batch(challenges, rng)
        return sample_outcomes(self.test, qstate.overlap_squared(forged, states), rng)


class IndependentGuesser(_Prover):
    name = "classical-independent"
    classical = True

    def __init__(self, alpha: float = 0.75):
        self.alpha = alpha
        self.N = None

    def bit_probabilities(self, challenges, states):
        return np.full(len(challenges), 1.0 - self.alpha)

    def outcome_bits(self, challenges, states, rng):
        return independent_guess_string(len(challenges), self.alpha, rng)

    def strings(self, cfg: ProtocolConfig, T: int, rng):
        return independent_guess_string(cfg.N, self.alpha, rng, size=T)


class GlobalGuesser(_Prover):
    """Weight drawn uniformly from ``m_valid``; assumes the public default ``p``."""

    name = "classical-global"
    classical = True

    def __init__(self, p_guess: float = 0.5, tau: float | None = None):
        self.p_guess = p_guess
        self.tau = tau
        self._cfg = None

    def prepare(self, device, window, cfg, rng):
        self._cfg = cfg

    def _tau(self, cfg):
        return self.tau if self.tau is not None else cfg.tau

    def outcome_bits(self, challenges, states, rng):
        cfg = self._cfg
        return global_strategy_string(len(challenges), self.p_guess, self._tau(cfg), rng, kappa=cfg.kappa)

    def strings(self, cfg: ProtocolConfig, T: int, rng):
        return global_strategy_string(cfg.N, self.p_guess, self._tau(cfg), rng, size=T, kappa=cfg.kappa)


class TrapDistinguisher(_Prover):
    """Collective (or coherent, via the product form) trap-guessing attacker.

    Rounds guessed genuine report 0. Among rounds guessed to be traps it
    places ``c1`` ones with ``c1`` uniform over ``m_valid``.
    """

    name = "quantum-collective"

    def __init__(self, d: int | None = None, mode: str = "collective", rule: str = "accept",
                 test: str = "ideal", p_guess: float = 0.5, strategy: str = "haar"):
        if mode not in ("collective", "coherent"):
            raise ValueError(f"unknown attack mode {mode!r}")
        self.k = d
        self.mode = mode
        self.rule = rule
        self.test = test
        self.p_guess = p_guess
        self.strategy = strategy
        self.adv = None
        self._cfg = None
        self.last_guesses = None
        if mode == "coherent":
            self.name = "quantum-coherent"

    def prepare(self, device, window, cfg, rng):
        self._cfg = cfg
        self.adv = learn_subspace(window, _learn_budget(self.k, window, cfg), rng, self.strategy)

    @property
    def d(self) -> int:
        return self.adv.d if self.adv is not None else 0

    def outcome_bits(self, challenges, states, rng):
        cfg = self._cfg
        g, *_ = trap_distinguish_batch(self.adv, challenges, states, rng, self.rule, self.test)
        self.last_guesses = g
        N = len(challenges)
        s = np.zeros(N, dtype=np.int8)
        traps = np.flatnonzero(g == 0)
        valid = m_valid(N, self.p_guess, cfg.tau, cfg.kappa)
        c1 = int(rng.choice(valid)) if len(valid) else 0
        s[rng.permutation(traps)[:min(c1, len(traps))]] = 1
        return s


ATTACKERS = ("honest", "haar-responder", "forger", "classical-independent", "classical-global",
             "quantum-collective", "quantum-coherent")


def make_attacker(name: str, **params):
    """Instantiate a prover by name. Unknown parameters raise ``TypeError``."""
    if name == "honest":
        return HonestProver(**params)
    if name == "haar-responder":
        return HaarResponder(**params)
    if name == "forger":
        return ForgingProver(**params)
    if name == "classical-independent":
        return IndependentGuesser(**params)
    if name == "classical-global":
        return GlobalGuesser(**params)
    if name == "quantum-collective":
        return TrapDistinguisher(mode="collective", **params)
    if name == "quantum-coherent":
        return TrapDistinguisher(mode="coherent", **params)
    raise ConfigError(f"unknown attacker {name!r}; choose from {', '.join(ATTACKERS)}", field="attacker")


# --- attack games -------------------------------------------------------------

@dataclass
class AttackGameRecord:
    protocol: str
    attacker: str
    params: dict
    config: dict
    seed: int
    trials: int
    successes: int
    rate: float
    ci: tuple[float, float]
    bound: dict
    expected_rate: float | None = None
    path: str = "full"
    extras: dict = field(default_factory=dict)
    per_trial: list = field(default_factory=list, repr=False)
    transcripts: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_trial")
        d.pop("transcripts")
        d["ci"] = list(self.ci)
        return d

    def to_json(self, include_trials: bool = True) -> str:
        d = self.summary()
        if include_trials:
            d["per_trial"] = self.per_trial
        return json.dumps(d, sort_keys=True, default=_jsonable)

    def trials_csv(self) -> str:
        buf = io.StringIO()
        cols = ["trial", "accepted", "acceptance_probability", "mean_f2", "guess_accuracy"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.per_trial:
            w.writerow([_fmt(row.get(c)) for c in cols])
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def analytic_reference(protocol: str, attacker: str, cfg: ProtocolConfig, params: dict) -> analysis.BoundReport:
    """The closed form an attack game should be compared against."""
    N, M = cfg.N, cfg.M
    if attacker == "honest":
        if protocol == LRV:
            return analysis.cver_completeness_bound(N, cfg.tau)
        return analysis.BoundReport(1.0, "hrv-completeness", {"N": N, "M": M})
    if protocol == HRV_SWAP:
        return analysis.swap_soundness_bound(N, M, 0.0)
    if protocol == HRV_GSWAP:
        return analysis.gswap_soundness_bound(N, M, 0.0)
    if attacker == "classical-independent":
        return analysis.independent_success(N, cfg.tau, params.get("alpha", 0.75), kappa=cfg.kappa)
    if cfg.p != 0.5:
        return analysis.global_success_p(N, cfg.p)
    return analysis.global_success(N, cfg.tau)


def _fast_lrv_classical(prover, cfg, trials, base, chunk=100_000):
    hits = 0
    accepted = np.empty(trials, dtype=bool)
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        r = qstate.substream(base, "fast", done)
        marks = place_traps_batch(k, cfg.N, cfg.p, r)
        S = prover.strings(cfg, k, r)
        acc = cver_batch(S, marks, cfg.tau, cfg.kappa)
        accepted[done:done + k] = acc
        hits += int(acc.sum())
        done += k
    return accepted


def _fast_hrv_haar(cfg, protocol, trials, base):
    # the responder's state is independent of the true response, so each
    # round's F^2 is Beta(1, D-1) whatever the device is
    r = qstate.substream(base, "fast")
    D = cfg.dim.D
    R = cfg.N * cfg.M if protocol == HRV_SWAP else cfg.N
    kind = TestKind.swap() if protocol == HRV_SWAP else TestKind.gswap(cfg.M)
    f2 = r.beta(1.0, D - 1.0, size=(trials, R))
    p = accept_probability_f2(kind, f2)
    exact = np.prod(p, axis=1)
    accepted = np.all(r.random(p.shape) < p, axis=1)
    return accepted, exact, f2.mean(axis=1)


def run_attack_game(protocol: str, attacker: str, cfg: ProtocolConfig, trials: int, seed: int,
                    params: dict | None = None, fast: bool = True, keep_transcripts: int = 0,
                    keep_trials: bool = True) -> AttackGameRecord:
    """Run ``trials`` independent sessions with ``attacker`` as the prover.

    Trial ``t`` draws everything from ``substream(seed, "trial", t)``. With
    ``fast=True`` classical attackers against lrv-id and the Haar responder
    against hrv-id use a batched path that samples the same distribution
    without building devices.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}", field="protocol")
    params = dict(params or {})
    probe = make_attacker(attacker, **params)
    cfg.validate(protocol)
    per_trial: list = []
    transcripts: list = []
    expected = None
    path = "full"
    extras: dict = {}
    if fast and protocol == LRV and getattr(probe, "classical", False) and keep_transcripts == 0:
        path = "batched"
        if isinstance(probe, GlobalGuesser):
            probe._cfg = cfg
        accepted = _fast_lrv_classical(probe, cfg, trials, seed)
        if keep_trials:
            per_trial = [{"trial": t, "accepted": bool(a)} for t, a in enumerate(accepted)]
    elif fast and protocol != LRV and attacker == "haar-responder" and keep_transcripts == 0:
        path = "batched"
        accepted, exact, mf2 = _fast_hrv_haar(cfg, protocol, trials, seed)
        expected = float(exact.mean())
        if keep_trials:
            per_trial = [{"trial": t, "accepted": bool(a), "acceptance_probability": float(e), "mean_f2": float(m)}
                         for t, (a, e, m) in enumerate(zip(accepted, exact, mf2))]
    else:
        accepted = np.empty(trials, dtype=bool)
        probs = []
        guess_hits = guess_total = 0
        for t in range(trials):
            prover = make_attacker(attacker, **params)
            res = session(protocol, cfg, prover, qstate.substream(seed, "trial", t))
            accepted[t] = res.accepted
            row = {"trial": t, "accepted": bool(res.accepted)}
            if res.acceptance_probability is not None:
                row["acceptance_probability"] = float(res.acceptance_probability)
                probs.append(res.acceptance_probability)
            elif res.f2 is not None:
                kind = TestKind.swap() if protocol == HRV_SWAP else TestKind.gswap(cfg.M)
                pa = float(np.prod(accept_probability_f2(kind, res.f2)))
                row["acceptance_probability"] = pa
                probs.append(pa)
            if res.f2 is not None:
                row["mean_f2"] = float(np.mean(res.f2))
            g = getattr(prover, "last_guesses", None)
            if g is not None and res.placement is not None:
                ok = int(np.count_nonzero(g == res.placement.marks))
                row["guess_accuracy"] = ok / len(g)
                guess_hits += ok
                guess_total += len(g)
            if keep_trials:
                per_trial.append(row)
            if len(transcripts) < keep_transcripts:
                transcripts.append(res.transcript)
        if probs and len(probs) == trials:
            expected = float(np.mean(probs))
        if guess_total:
            extras["guess_accuracy"] = guess_hits / guess_total
            extras["guess_rounds"] = guess_total
            extras["guess_ci"] = list(binomial_interval(guess_hits, guess_total))
    hits = int(np.count_nonzero(accepted))
    bound = analytic_reference(protocol, attacker, cfg, params)
    return AttackGameRecord(protocol, attacker, params, cfg.to_dict(), int(seed), trials, hits, hits / trials,
                            binomial_interval(hits, trials), bound.to_dict(), expected, path, extras, per_trial,
                            transcripts)
