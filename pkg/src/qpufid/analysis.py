"""Closed-form bounds, exact enumeration oracles and resource accounting.

Factorials and binomials go through ``gammaln`` so nothing overflows at large
N; the enumeration oracle in :func:`brute_force_cver` works in exact rationals
and is the independent check for the closed forms.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp, xlogy

from .errors import ConfigError


@dataclass
class BoundReport:
    """A probability with provenance.

    ``analytic_value`` is always in ``[0, 1]``; when the raw formula left that
    range the raw number is kept in ``raw_value`` and ``flag`` says why.
    """

    analytic_value: float
    formula_id: str
    inputs: dict
    flag: str | None = None
    raw_value: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.raw_value is None:
            self.raw_value = self.analytic_value

    def __float__(self):
        return float(self.analytic_value)

    def to_dict(self) -> dict:
        return asdict(self)


def _report(raw: float, formula_id: str, inputs: dict, flag: str | None = None, **extras) -> BoundReport:
    val = raw
    if raw > 1.0:
        val, flag = 1.0, flag or "clamped-above-1"
    elif raw < 0.0:
        val, flag = 0.0, flag or "clamped-below-0"
    return BoundReport(float(val), formula_id, inputs, flag, float(raw), extras)


def log_comb(n, k):
    """``log C(n, k)`` via log-Gamma; ``-inf`` outside ``0 <= k <= n``."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    ok = (k >= 0) & (k <= n)
    with np.errstate(invalid="ignore"):
        out = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    out = np.where(ok, out, -np.inf)
    return float(out) if out.ndim == 0 else out


def m_valid(N: int, p: float, tau: float, kappa: float = 0.5) -> np.ndarray:
    """One-bit counts that can pass the count test for some placement."""
    centre = kappa * N * (1.0 - p)
    lo = max(0, int(math.ceil(centre - tau - 1e-9)))
    # ones can only sit outside the trap set
    free = int(math.floor(N * (1.0 - p) + 1e-9))
    hi = min(free, int(math.floor(centre + tau + 1e-9)))
    return np.arange(lo, hi + 1)


def _trap_count(N: int, p: float) -> int:
    k = p * N
    if abs(k - round(k)) > 1e-9:
        raise ConfigError(f"p*N = {k} is not an integer", field="p")
    return N - int(round(k))


# --- hrv-id -------------------------------------------------------------------

def swap_soundness_bound(N: int, M: int, delta: float) -> BoundReport:
    """``(1/2 + delta/2)^(N M)``: every one of ``N M`` SWAP tests accepts."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    raw = (0.5 + 0.5 * delta) ** (N * M)
    return _report(raw, "swap-soundness", {"N": N, "M": M, "delta": delta},
                   "degenerate-delta-1" if delta >= 1.0 else None)


def gswap_soundness_bound(N: int, M: int, delta: float) -> BoundReport:
    """``(1/(M+1) + M delta/(M+1))^N``: every one of ``N`` GSWAP tests accepts."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    raw = ((1.0 + M * delta) / (M + 1)) ** N
    return _report(raw, "gswap-soundness", {"N": N, "M": M, "delta": delta},
                   "degenerate-delta-1" if delta >= 1.0 else None)


# --- lrv-id -------------------------------------------------------------------

def cver_completeness_bound(N: int, tau: float) -> BoundReport:
    """Hoeffding bound ``1 - 2 exp(-4 tau^2 / N)`` on honest acceptance."""
    raw = 1.0 - 2.0 * math.exp(-4.0 * tau * tau / N)
    return _report(raw, "cver-completeness-hoeffding", {"N": N, "tau": tau},
                   "vacuous" if raw < 0 else None)


def independent_success(N: int, tau: float, alpha: float, p: float = 0.5, kappa: float = 0.5) -> BoundReport:
    """Exact pass probability of i.i.d. bits that are 0 with probability ``alpha``.

    ``alpha^|P|`` for the marked rounds times the probability that the number
    of ones among the ``N - |P|`` trap rounds lands in the window.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    nt = _trap_count(N, p)
    npos = N - nt
    x = np.arange(nt + 1)
    ok = np.abs(x - kappa * nt) <= tau + 1e-9
    terms = log_comb(nt, x[ok]) + xlogy(x[ok], 1.0 - alpha) + xlogy(nt - x[ok], alpha)
    log_total = xlogy(npos, alpha) + (logsumexp(terms) if ok.any() else -np.inf)
    raw = float(np.exp(log_total)) if np.isfinite(log_total) else 0.0
    approx = None
    if p == 0.5 and N % 4 == 0:
        # closed form at alpha = 3/4 with every window term replaced by the central one
        approx = float(np.exp(math.log(2 * tau + 1) + 0.75 * N * math.log(3) - 2 * N * math.log(2)
                              + log_comb(N // 2, N // 4)))
    return _report(raw, "independent-exact", {"N": N, "tau": tau, "alpha": alpha, "p": p, "kappa": kappa},
                   approximation_alpha_3_4=approx)


def _global_terms(N: int, tau: float, p: float, kappa: float):
    nt = _trap_count(N, p)
    c1 = m_valid(N, p, tau, kappa)
    c1 = c1[c1 <= nt]
    return c1, np.exp(log_comb(nt, c1) - log_comb(N, c1)) if len(c1) else np.zeros(0)


def global_success(N: int, tau: float, p: float = 0.5, kappa: float = 0.5) -> BoundReport:
    """``sum over c1 in m_valid of C(N - |P|, c1) / C(N, c1)``.

    Each term is the pass probability of a uniformly placed weight-``c1``
    string. For ``tau > 0`` the sum is not itself a probability; it is clamped
    and flagged, and ``extras`` carries the uniform-``c1`` strategy rate and
    the best single term.
    """
    c1, terms = _global_terms(N, tau, p, kappa)
    raw = float(terms.sum())
    nvalid = len(m_valid(N, p, tau, kappa))
    approx = None
    if p == 0.5 and N % 4 == 0:
        approx = float((2 * tau + 1) * np.exp(gammaln(N / 2 + 1) + gammaln(3 * N / 4 + 1)
                                              - gammaln(N + 1) - gammaln(N / 4 + 1)))
    return _report(raw, "global-window-sum", {"N": N, "tau": tau, "p": p, "kappa": kappa},
                   "sum-exceeds-1" if raw > 1.0 else None,
                   strategy_rate=float(raw / nvalid) if nvalid else 0.0,
                   optimum=float(terms.max()) if len(terms) else 0.0,
                   optimum_c1=int(c1[np.argmax(terms)]) if len(terms) else None,
                   terms={int(c): float(t) for c, t in zip(c1, terms)},
                   approximation=approx)


def guess_set_success(N: int) -> BoundReport:
    """``1 / C(N, N/2)``: probability of naming the marked positions exactly."""
    return _report(float(np.exp(-log_comb(N, N // 2))), "guess-set", {"N": N})


def global_success_p(N: int, p: float, interpolate: bool = False) -> BoundReport:
    """Pass probability of the weight-``z`` global string at trap fraction ``1 - p``.

    ``z = (N - Np)/2`` and the conditional value is ``C(N-Np, z) / C(N, z)``,
    evaluated in the Gamma form
    ``(2/sqrt(pi)) 2^(2z-1)/N! Gamma(z+1/2) Gamma(N-z+1)``.
    ``extras["hidden_p"]`` multiplies by the ``1/(N/2 + 1)`` chance of guessing
    ``z`` when ``p`` is secret. ``interpolate=True`` allows non-integral ``z``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    z = (N - N * p) / 2.0
    if not interpolate and abs(z - round(z)) > 1e-9:
        raise ConfigError(f"(1-p)N = {N - N * p} must be even", field="p")
    if not interpolate:
        z = float(round(z))
    log_gamma_form = (math.log(2 / math.sqrt(math.pi)) + (2 * z - 1) * math.log(2) - gammaln(N + 1)
                      + gammaln(z + 0.5) + gammaln(N - z + 1))
    cond = float(np.exp(log_gamma_form))
    binom_form = float(np.exp(log_comb(2 * z, z) - log_comb(N, z)))
    guess = 1.0 / (N / 2 + 1)
    return _report(cond, "global-p-conditional", {"N": N, "p": p},
                   hidden_p=cond * guess, guess_factor=guess, z=z, binomial_form=binom_form)


def avg_success_uniform_p(N: int) -> BoundReport:
    """Eve's pass probability averaged over a secret uniform ``p``.

    Series ``2/(N(N+2)) sum_{k=0}^{N} (N-k)! ((N+k)/2)! / (N! ((N-k)/2)!)``
    with half-integer factorials through Gamma. ``extras`` holds the inner sum,
    the ``6/(N(N+2))`` asymptote, a quadrature of the continuous-``p`` integral
    and the discrete average over ``c1 in {0..N/2}``.
    """
    if N % 2:
        raise ConfigError("N must be even", field="N")
    k = np.arange(N + 1, dtype=float)
    logt = gammaln(N - k + 1) + gammaln((N + k) / 2 + 1) - gammaln(N + 1) - gammaln((N - k) / 2 + 1)
    inner = float(np.exp(logt).sum())
    series = 2.0 / (N * (N + 2)) * inner
    asym = 6.0 / (N * (N + 2))
    guess = 1.0 / (N / 2 + 1)
    quad, _ = integrate.quad(lambda p: global_success_p(N, p, interpolate=True).analytic_value, 0.0, 1.0, limit=200)
    zs = np.arange(N // 2 + 1)
    discrete = float(np.mean(np.exp(log_comb(2 * zs, zs) - log_comb(N, zs))))
    return _report(series, "uniform-p-series", {"N": N},
                   inner_sum=inner, asymptote=asym, integral=guess * quad, discrete=guess * discrete,
                   terms=np.exp(logt).tolist())


# --- exhaustive oracle --------------------------------------------------------

BRUTE_FORCE_MAX_N = 12


@dataclass
class BruteForceResult:
    N: int
    tau: float
    p: float
    strategy: str
    exact: Fraction
    window_sum: Fraction
    optimum: Fraction
    optimum_weight: int
    per_weight: dict

    @property
    def value(self) -> float:
        return float(self.exact)

    @property
    def strategy_rate(self) -> float:
        return float(self.exact)


def _all_strings(N: int) -> np.ndarray:
    idx = np.arange(2 ** N)
    return ((idx[:, None] >> np.arange(N)[::-1]) & 1).astype(np.int8)


def _placements(N: int, npos: int) -> np.ndarray:
    combos = list(itertools.combinations(range(N), npos))
    marks = np.zeros((len(combos), N), dtype=bool)
    for r, c in enumerate(combos):
        marks[r, list(c)] = True
    return marks


def brute_force_cver(N: int, tau: float, p: float = 0.5, strategy="global", alpha: float = 0.75,
                     kappa: float = 0.5) -> BruteForceResult:
    """Exact cVer pass probabilities by enumerating placements and strings.

    Every placement of ``pN`` marked rounds and every one of the ``2^N``
    strings is checked directly against the two tests. ``strategy`` is one of
    ``"global"``, ``"independent"`` (uses ``alpha``), ``"guess-set"``,
    ``"optimal"`` or an explicit ``{bit-tuple: probability}`` mapping.
    ``window_sum`` is the sum over ``m_valid`` of the mean pass probability of
    weight-``c1`` strings, which is what the global closed form computes.
    """
    if N > BRUTE_FORCE_MAX_N:
        raise ValueError(f"N={N} exceeds the enumeration cap {BRUTE_FORCE_MAX_N}")
    nt = _trap_count(N, p)
    npos = N - nt
    S = _all_strings(N)
    marks = _placements(N, npos)
    ones = S.astype(bool)
    # (strings, placements)
    hit_marked = (ones[:, None, :] & marks[None, :, :]).any(axis=2)
    trap_ones = (ones[:, None, :] & ~marks[None, :, :]).sum(axis=2)
    passes = ~hit_marked & (np.abs(trap_ones - kappa * nt) <= tau + 1e-9)
    counts = passes.sum(axis=1)
    nplace = marks.shape[0]
    weight = S.sum(axis=1)

    per_weight = {}
    for w in range(N + 1):
        sel = weight == w
        per_weight[w] = Fraction(int(counts[sel].sum()), int(sel.sum()) * nplace)
    valid = [int(c) for c in m_valid(N, p, tau, kappa)]
    window = sum((per_weight[c] for c in valid), Fraction(0))
    best = int(np.argmax(counts))
    optimum = Fraction(int(counts[best]), nplace)

    if isinstance(strategy, dict):
        exact = Fraction(0)
        for s, prob in strategy.items():
            row = int("".join(str(int(b)) for b in s), 2)
            exact += Fraction(prob) * Fraction(int(counts[row]), nplace)
        name = "custom"
    elif strategy == "global":
        exact = window / len(valid) if valid else Fraction(0)
        name = strategy
    elif strategy == "independent":
        a = Fraction(alpha)
        exact = sum((a ** (N - w) * (1 - a) ** w * math.comb(N, w) * per_weight[w] for w in range(N + 1)),
                    Fraction(0))
        name = strategy
    elif strategy == "guess-set":
        # zeros on a guessed marked set, round(kappa*nt) ones spread over the rest:
        # the resulting string is uniform among strings of that weight
        c = int(round(kappa * nt))
        exact = per_weight[c]
        name = strategy
    elif strategy == "optimal":
        exact = optimum
        name = strategy
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return BruteForceResult(N, tau, p, name, exact, window, optimum, int(weight[best]), per_weight)


# --- resources ----------------------------------------------------------------

@dataclass
class ResourceRow:
    protocol: str
    epsilon: float
    M: int
    security: str
    verifier_memory: int
    prover_memory: int
    verifier_compute: str
    prover_compute: str
    quantum_rounds: int
    classical_rounds: int

    def to_dict(self):
        return asdict(self)


def _ceil(x: float) -> int:
    # guard against 20.000000000000004 style round-off
    return int(math.ceil(x - 1e-9))


def resource_table(epsilon: float, M: int) -> list[ResourceRow]:
    """Memory, compute and round counts needed for soundness ``epsilon``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if M < 1:
        raise ValueError("M must be at least 1")
    L = math.log2(1.0 / epsilon)
    g = math.log2(M + 1)
    return [
        ResourceRow("hrv-swap", epsilon, M, "2^-(MN)", _ceil(L), 0, "poly log D", "0", _ceil(L), 0),
        ResourceRow("hrv-gswap", epsilon, M, "(M+1)^-N", _ceil(M / g * L), 0, "poly log MD", "0", _ceil(L / g), 0),
        ResourceRow("lrv", epsilon, 1, "2^-N", _ceil(L), 0, "0", "poly log D", _ceil(L), 1),
    ]


# --- sweeps -------------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else ("" if v is None else v) for v in r])
    return buf.getvalue()


FIG3_HEADER = ["N", "tau", "p", "M", "independent", "global", "independent_formula", "global_formula", "flag"]


def sweep_figure3(tau: float = 1, Nmax: int = 64, Nmin: int = 4, alpha: float = 0.75) -> str:
    rows = []
    for N in range(Nmin, Nmax + 1, 4):
        ind = independent_success(N, tau, alpha)
        glo = global_success(N, tau)
        rows.append([N, tau, 0.5, 1, ind.raw_value, glo.raw_value, ind.formula_id, glo.formula_id,
                     glo.flag or ind.flag or ""])
    return _csv(FIG3_HEADER, rows)


FIG6_HEADER = ["N", "tau", "p", "M", "formula_id", "value", "hidden_p", "flag"]


def sweep_figure6(Ns=(16, 32, 64)) -> str:
    rows = []
    for N in Ns:
        for z in range(N // 2 + 1):
            p = 1.0 - 2.0 * z / N
            r = global_success_p(N, p)
            rows.append([N, 0, p, 1, r.formula_id, r.analytic_value, r.extras["hidden_p"], r.flag or ""])
    return _csv(FIG6_HEADER, rows)


FIG7_HEADER = ["epsilon", "M", "protocol", "verifier_memory", "prover_memory", "quantum_rounds",
               "quantum_messages", "classical_rounds", "log2_D", "formula_id"]


def sweep_figure7(epsilons=None, Ms=(1, 3, 7)) -> str:
    if epsilons is None:
        epsilons = [10.0 ** (-k) for k in range(1, 7)]
    rows = []
    for eps in epsilons:
        for M in Ms:
            for r in resource_table(eps, M):
                if r.protocol != "hrv-gswap" and M != Ms[0]:
                    continue
                msgs = r.quantum_rounds if r.protocol == "lrv" else 2 * r.quantum_rounds
                rows.append([eps, r.M, r.protocol, r.verifier_memory, r.prover_memory, r.quantum_rounds, msgs,
                             r.classical_rounds, math.log2(1.0 / eps), "resource-table"])
    return _csv(FIG7_HEADER, rows)


FIG8_HEADER = ["M", "N", "test", "epsilon", "log10_epsilon", "memory", "quantum_rounds", "formula_id"]


def sweep_figure8(Mmax: int = 10, Nmax: int = 10) -> str:
    rows = []
    for test in ("swap", "gswap"):
        for M in range(1, Mmax + 1):
            for N in range(1, Nmax + 1):
                if test == "swap":
                    eps = float(swap_soundness_bound(N, M, 0.0).raw_value)
                    rounds = M * N
                else:
                    eps = float(gswap_soundness_bound(N, M, 0.0).raw_value)
                    rounds = N
                rows.append([M, N, test, eps, math.log10(eps), M * N, rounds, f"{test}-soundness"])
    return _csv(FIG8_HEADER, rows)


BOUNDS_HEADER = ["N", "tau", "p", "M", "formula_id", "value", "flag"]


def bounds_csv(N: int, tau: float, M: int, delta: float = 0.0, alpha: float = 0.75, p: float = 0.5) -> str:
    reps = [swap_soundness_bound(N, M, delta), gswap_soundness_bound(N, M, delta),
            cver_completeness_bound(N, tau)]
    if N % 4 == 0:
        reps += [independent_success(N, tau, alpha), global_success(N, tau), guess_set_success(N)]
    if N % 2 == 0:
        try:
            reps.append(global_success_p(N, p))
        except ConfigError:
            pass
        reps.append(avg_success_uniform_p(N))
    rows = [[N, tau, p, M, r.formula_id, r.analytic_value, r.flag or ""] for r in reps]
    return _csv(BOUNDS_HEADER, rows)


def resources_csv(epsilon: float, M: int) -> str:
    rows = [list(r.to_dict().values()) for r in resource_table(epsilon, M)]
    return _csv(list(ResourceRow.__dataclass_fields__), rows)
