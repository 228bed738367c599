"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from qpufid import adversaries as adv
from qpufid import analysis as A
from qpufid import cli
from qpufid import device as dev
from qpufid import equality as eq
from qpufid import protocol as P
from qpufid import qstate
from qpufid.equality import TestKind
from qpufid.protocol import HonestProver, ProtocolConfig


@pytest.fixture
def verdict(capsys):
    def report(label, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, detail
    return report


def test_criterion_01_hrv_completeness(verdict):
    t0 = time.time()
    grid = [(n, N, M) for n in (3, 4, 5, 6) for N in (1, 4, 8) for M in (1, 3, 8)]
    runs = {P.HRV_SWAP: [0, 0], P.HRV_GSWAP: [0, 0]}
    for variant in runs:
        for t in range(1000):
            n, N, M = grid[t % len(grid)]
            cfg = ProtocolConfig(n=n, N=N, M=M, mode="exact")
            res = P.session(variant, cfg, HonestProver(), qstate.substream(1, variant, t))
            runs[variant][0] += 1
            runs[variant][1] += bool(res.accepted and res.acceptance_probability == 1.0)
    dt = time.time() - t0
    rates = {k: v[1] / v[0] for k, v in runs.items()}
    ok = all(r == 1.0 for r in rates.values()) and dt < 60
    verdict("criterion 1 hrv-id completeness", ok, f"rates={rates} runtime={dt:.1f}s")


def test_criterion_02_test_statistics(verdict):
    rng = np.random.default_rng(2)
    T = 100_000
    worst = 0.0
    for n in (1, 4, 8):
        F = rng.random(20)
        a, b = qstate.states_with_fidelity(n, F, rng)
        for kind in (TestKind.swap(), TestKind.gswap(1), TestKind.gswap(3), TestKind.gswap(9)):
            for i in range(20):
                p = float(eq.accept_probability(kind, a[i], b[i]))
                f2 = F[i] ** 2
                expected = 0.5 + 0.5 * f2 if kind.name == "swap" else (1 + kind.M * f2) / (kind.M + 1)
                assert abs(p - expected) < 1e-12
                bits = eq.sample_outcomes(kind, np.full(T, f2), rng)
                z = abs((bits == 0).mean() - expected) / math.sqrt(max(expected * (1 - expected), 1e-12) / T)
                worst = max(worst, z)
    # GSWAP(1) and SWAP as distributions: same accept frequency within two-sample error
    f2 = rng.random(T)
    s = eq.sample_outcomes(TestKind.swap(), f2, rng).mean()
    g = eq.sample_outcomes(TestKind.gswap(1), f2, rng).mean()
    z2 = abs(s - g) / math.sqrt(2 * 0.25 / T)
    verdict("criterion 2 test statistics", worst < 5 and z2 < 5, f"max z={worst:.2f} gswap1-vs-swap z={z2:.2f}")


def test_criterion_03_lrv_completeness(verdict):
    t0 = time.time()
    cfg = ProtocolConfig(n=4, N=64, tau=16)
    T = 10_000
    hits = sum(P.session(P.LRV, cfg, HonestProver(), qstate.substream(3, "trial", t)).accepted for t in range(T))
    target = 1 - 2 * math.exp(-16)
    exact_bound = all(A.cver_completeness_bound(N, N / 4).analytic_value == 1 - 2 * math.exp(-N / 4)
                      for N in (16, 32, 64, 128))
    ok = hits / T >= target and exact_bound
    verdict("criterion 3 lrv-id completeness", ok,
            f"rate={hits / T} target>={target:.9f} bound_exact={exact_bound} runtime={time.time() - t0:.1f}s")


def test_criterion_04_oracle_equivalence(verdict):
    t0 = time.time()
    worst = 0.0
    optimum_ok = True
    for N in (4, 8, 12):
        for tau in (0, 1):
            bf = A.brute_force_cver(N, tau, strategy="global")
            g = A.global_success(N, tau)
            worst = max(worst, abs(float(bf.window_sum) - g.raw_value))
            # the best single string does exactly as well as the best uniform-weight class
            optimum_ok &= abs(float(bf.optimum) - g.extras["optimum"]) < 1e-12
            if tau == 0:
                optimum_ok &= abs(float(bf.optimum) - g.analytic_value) < 1e-12
    spots = (A.brute_force_cver(4, 0).exact == Fraction(1, 2) and A.brute_force_cver(8, 0).exact == Fraction(3, 14)
             and abs(A.global_success(4, 0).analytic_value - 0.5) < 1e-12
             and abs(A.global_success(8, 0).analytic_value - 3 / 14) < 1e-12)
    dt = time.time() - t0
    ok = worst < 1e-12 and spots and optimum_ok and dt < 120
    verdict("criterion 4 classical oracle equivalence", ok,
            f"max|diff|={worst:.2e} spots={spots} optimum={optimum_ok} runtime={dt:.1f}s")


def _alpha_argmax(N, tau=0):
    grid = np.linspace(0, 1, 1001)
    vals = [A.independent_success(N, tau, a).analytic_value for a in grid]
    return float(grid[int(np.argmax(vals))])


def test_criterion_05a_alpha_optimum(verdict):
    argmax = {N: _alpha_argmax(N) for N in range(4, 65, 4)}
    ok = all(abs(a - 0.75) <= 0.001 for a in argmax.values())
    verdict("criterion 5a alpha-optimum at 3/4", ok, f"argmax range=[{min(argmax.values())}, {max(argmax.values())}]")


def test_criterion_05b_dominance(verdict):
    grid = np.round(np.arange(0, 1.0001, 0.01), 2)
    violations = [(N, a) for N in range(4, 65, 4) for a in grid
                  if A.global_success(N, 1).analytic_value < A.independent_success(N, 1, a).analytic_value]
    verdict("criterion 5b global >= independent (tau=1)", not violations, f"violations={violations[:3]}")


def _gap_bits(N):
    return math.log2(A.global_success(N, 0).analytic_value) - math.log2(A.independent_success(N, 0, 0.75).analytic_value)


def test_criterion_05c_bit_rate_gap(verdict):
    rate = _gap_bits(128) / 128
    verdict("criterion 5c per-round bit-rate gap at N=128", rate < 0.5, f"gap={rate:.4f} bits/round")


def test_criterion_05d_absolute_gap(verdict):
    gap = _gap_bits(128)
    verdict("criterion 5d absolute log2 gap at N=128", gap < 0.5, f"gap={gap:.3f} bits")


def test_criterion_06a_p_landscape(verdict):
    ok = True
    for N in (16, 32, 64):
        ps = [1 - 2 * z / N for z in range(N // 2 + 1)]
        vals = np.array([A.global_success_p(N, p).analytic_value for p in ps])
        i = int(np.argmin(vals))
        ok &= abs(vals[0] - 1) < 1e-12 and abs(vals[-1] - 1) < 1e-12 and 0 < i < len(vals) - 1
    verdict("criterion 6a generalized-p landscape", ok, "endpoints 1 and interior minimum for N=16,32,64")


def test_criterion_06b_inner_sum(verdict):
    sums = {N: A.avg_success_uniform_p(N).extras["inner_sum"] for N in (100, 200, 400)}
    ok = all(abs(s - 3) / 3 <= 0.02 for s in sums.values())
    verdict("criterion 6b series inner sum within 2% of 3 (N>=100)", ok,
            " ".join(f"N={N}:{s:.4f}" for N, s in sums.items()))


def test_criterion_06c_uniform_p_average(verdict):
    v = A.avg_success_uniform_p(100).analytic_value
    rel = abs(v - 6 / 10200) / (6 / 10200)
    verdict("criterion 6c avg_success_uniform_p(100) within 20%", rel < 0.2, f"value={v:.4e} rel={rel:.3f}")


def test_criterion_07_selective_unforgeability(verdict):
    t0 = time.time()
    rng = np.random.default_rng(7)
    device = dev.QPufDevice(10, seed=qstate.child_seed(rng))
    cfg = dev.UnforgeabilityExperimentConfig(d_learn=10, trials=10_000, delta=0.5)
    forger = adv.ForgingProver()
    rep = dev.run_unforgeability_game(device, forger, cfg, rng)
    T = cfg.trials
    b = 11 / 1024
    sigma = math.sqrt(b * (1 - b) / T)
    ok_rate = rep.empirical_success_rate <= b + 5 * sigma
    ok_mean = abs(rep.mean_f2 - 10 / 1024) <= 3 * rep.std_f2 / math.sqrt(T)
    # existential forgery: any challenge inside the learned span is answered exactly
    coeffs = qstate.haar_random_states(qstate.Dimension.from_size(16), 100, rng)[:, :10]
    coeffs /= np.linalg.norm(coeffs, axis=1, keepdims=True)
    inspan = coeffs @ forger.adv.learned_in.vectors
    forged = adv.emulation_forge(forger.adv, inspan, rng)
    truth = inspan @ device.unsafe_unitary().T
    minF = float(np.sqrt(qstate.overlap_squared(forged, truth)).min())
    dt = time.time() - t0
    ok = ok_rate and ok_mean and minF >= 1 - 1e-9 and dt < 300
    verdict("criterion 7 selective unforgeability", ok,
            f"rate={rep.empirical_success_rate} limit={b + 5 * sigma:.5f} mean_f2={rep.mean_f2:.6f} "
            f"d/D={10 / 1024:.6f} in-span minF={minF:.12f} runtime={dt:.1f}s")


def test_criterion_08_trap_distinguishing(verdict):
    rep = adv.trap_experiment(10, 10, 10_000, np.random.default_rng(8), block_size=8)
    ok = rep.accuracy <= 0.55 and rep.factorizes
    verdict("criterion 8 trap distinguishing", ok,
            f"accuracy={rep.accuracy:.4f} joint={rep.joint_rate:.5f} product={rep.product_prediction:.5f} "
            f"sigma={rep.joint_sigma:.5f}")


def test_criterion_09_resources(verdict):
    rows = {r.protocol: r for r in A.resource_table(2**-20, 3)}
    got = {
        "hrv-swap": (rows["hrv-swap"].verifier_memory, rows["hrv-swap"].quantum_rounds),
        "hrv-gswap": (rows["hrv-gswap"].verifier_memory, rows["hrv-gswap"].quantum_rounds),
        "lrv": (rows["lrv"].verifier_memory, rows["lrv"].quantum_rounds, rows["lrv"].classical_rounds),
    }
    want = {"hrv-swap": (20, 20), "hrv-gswap": (30, 10), "lrv": (20, 20, 1)}
    verdict("criterion 9 resource accounting", got == want, str(got))


def _rerun_from_manifest(src, dst):
    argv = json.loads((src / "manifest.json").read_text())["argv"]
    i = argv.index("--out")
    argv = argv[:i + 1] + [str(dst)] + argv[i + 2:]
    assert cli.main(argv) == 0


def test_criterion_10_reproducibility(verdict, tmp_path, capsys):
    commands = [
        ["run", "lrv", "--n", "4", "--N", "16", "--tau", "2", "--trials", "50", "--seed", "10"],
        ["run", "hrv-gswap", "--n", "3", "--N", "4", "--M", "3", "--trials", "20", "--seed", "10"],
        ["attack", "lrv", "classical-global", "--N", "8", "--trials", "5000", "--seed", "10"],
        ["attack", "lrv", "quantum-collective", "--n", "6", "--N", "8", "--d", "6", "--trials", "10", "--seed", "10"],
        ["analyze", "sweep-figure3", "--tau", "1", "--Nmax", "64"],
        ["analyze", "sweep-figure6", "--N", "16,32,64"],
    ]
    mismatched = []
    compared = 0
    for k, argv in enumerate(commands):
        a, b = tmp_path / f"{k}a", tmp_path / f"{k}b"
        assert cli.main(argv + ["--out", str(a)]) == 0
        _rerun_from_manifest(a, b)
        for f in sorted(a.rglob("*")):
            if f.is_file() and f.name != "manifest.json":
                compared += 1
                if f.read_bytes() != (b / f.relative_to(a)).read_bytes():
                    mismatched.append(str(f.relative_to(tmp_path)))
    capsys.readouterr()
    verdict("criterion 10 reproducibility", not mismatched and compared > 0,
            f"files compared={compared} mismatched={mismatched}")
