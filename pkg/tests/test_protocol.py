import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qpufid import protocol as P
from qpufid import qstate
from qpufid.adversaries import HaarResponder
from qpufid.errors import ConfigError, CopyExhausted, QueryBudgetExhausted
from qpufid.protocol import HonestProver, ProtocolConfig, TrapPlacement


class TestConfig:
    def test_defaults(self):
        cfg = ProtocolConfig(n=4, N=8)
        assert cfg.K == 8 and cfg.M == 1 and cfg.kappa == 0.5 and cfg.p == 0.5

    @pytest.mark.parametrize("kw,field", [
        ({"n": 0, "N": 4}, "n"),
        ({"n": 3, "N": 8, "K": 4}, "K"),
        ({"n": 2, "N": 8, "K": 9}, "K"),
        ({"n": 3, "N": 4, "M": 0}, "M"),
        ({"n": 3, "N": 4, "tau": -1}, "tau"),
        ({"n": 3, "N": 4, "p": 1.5}, "p"),
        ({"n": 3, "N": 4, "mode": "fast"}, "mode"),
        ({"n": 3, "N": 4, "test": "nope"}, "test"),
    ])
    def test_field_errors(self, kw, field):
        with pytest.raises(ConfigError) as exc:
            ProtocolConfig(**kw)
        assert exc.value.field == field

    @pytest.mark.parametrize("kw,field", [
        ({"n": 3, "N": 6}, "N"),
        ({"n": 3, "N": 5, "p": 0.4}, "N"),
        ({"n": 3, "N": 8, "p": 0.3}, "p"),
    ])
    def test_lrv_constraints(self, kw, field):
        cfg = ProtocolConfig(**kw)
        with pytest.raises(ConfigError) as exc:
            cfg.validate(P.LRV)
        assert exc.value.field == field

    def test_from_dict(self):
        cfg = ProtocolConfig.from_dict({"n": 3, "N": 4, "tau": 1})
        assert cfg.tau == 1
        with pytest.raises(ConfigError) as exc:
            ProtocolConfig.from_dict({"n": 3})
        assert exc.value.field == "N"
        with pytest.raises(ConfigError) as exc:
            ProtocolConfig.from_dict({"n": 3, "N": 4, "colour": 1})
        assert exc.value.field == "colour"

    def test_roundtrip(self):
        cfg = ProtocolConfig(n=3, N=4, M=2, tau=1)
        assert ProtocolConfig(**cfg.to_dict()) == cfg


class TestHrvSetup:
    def test_bookkeeping(self):
        cfg = ProtocolConfig(n=4, N=8, K=8, M=4)
        verifier, device, window = P.hrv_setup(cfg, np.random.default_rng(0))
        assert len(verifier.db) == 8
        assert verifier.db.total_copies == 32
        assert device.query_count == 32
        assert window.budget == 40

    def test_records_match_device(self):
        cfg = ProtocolConfig(n=4, N=8, M=2)
        verifier, device, _ = P.hrv_setup(cfg, np.random.default_rng(1))
        for rec in verifier.db:
            assert qstate.fidelity(device.qeval(rec.challenge), rec.response) == pytest.approx(1.0, abs=1e-10)

    def test_challenges_distinct(self):
        cfg = ProtocolConfig(n=2, N=8)
        verifier, _, _ = P.hrv_setup(cfg, np.random.default_rng(2))
        G = np.abs(verifier.db.challenges @ verifier.db.challenges.conj().T) ** 2
        assert np.max(G - np.diag(np.diag(G))) < 1 - 1e-6

    def test_budget_exceeded_during_setup(self):
        cfg = ProtocolConfig(n=3, N=4, M=3, device_budget=10)
        with pytest.raises(QueryBudgetExhausted):
            P.hrv_setup(cfg, np.random.default_rng(0))

    def test_zero_transit_budget(self):
        from qpufid.adversaries import learn_subspace
        cfg = ProtocolConfig(n=3, N=4, transit_budget=0)
        _, _, window = P.hrv_setup(cfg, np.random.default_rng(0))
        assert learn_subspace(window, 0, np.random.default_rng(1)).d == 0
        with pytest.raises(QueryBudgetExhausted):
            learn_subspace(window, 1, np.random.default_rng(1))


class TestHrvRun:
    @pytest.mark.parametrize("variant", ["swap", "gswap"])
    def test_exact_honest(self, variant):
        cfg = ProtocolConfig(n=3, N=4, M=3, mode="exact")
        verifier, device, window = P.hrv_setup(cfg, np.random.default_rng(0))
        prover = HonestProver()
        prover.prepare(device, window, cfg, None)
        res = P.hrv_run(cfg, variant, verifier, prover, np.random.default_rng(1))
        assert res.accepted
        assert res.acceptance_probability == 1.0

    def test_gswap_sampled_honest(self):
        cfg = ProtocolConfig(n=3, N=4, M=5)
        for s in range(30):
            assert P.session(P.HRV_GSWAP, cfg, HonestProver(), np.random.default_rng(s)).accepted

    @pytest.mark.parametrize("variant,msgs,rounds", [(P.HRV_SWAP, 2 * 4 * 3, 12), (P.HRV_GSWAP, 2 * 4, 4)])
    def test_transcript_counts(self, variant, msgs, rounds):
        cfg = ProtocolConfig(n=3, N=4, M=3)
        verifier, device, window = P.hrv_setup(cfg, np.random.default_rng(0), variant)
        prover = HonestProver()
        prover.prepare(device, window, cfg, None)
        before = verifier.db.total_copies
        res = P.hrv_run(cfg, variant, verifier, prover, np.random.default_rng(1))
        tr = res.transcript
        assert tr["message_counts"] == {"quantum": msgs, "classical": 0}
        assert len(tr["messages"]) == msgs
        assert tr["rounds"] == rounds
        assert before - verifier.db.total_copies == 12 == tr["copies_consumed"]
        assert len(set(tr["records"])) == 4
        json.loads(res.to_json())

    def test_copy_exhaustion(self):
        cfg = ProtocolConfig(n=3, N=4, M=2)
        verifier, device, window = P.hrv_setup(cfg, np.random.default_rng(0))
        prover = HonestProver()
        prover.prepare(device, window, cfg, None)
        P.hrv_run(cfg, "swap", verifier, prover, np.random.default_rng(1))
        with pytest.raises(CopyExhausted):
            P.hrv_run(cfg, "swap", verifier, prover, np.random.default_rng(2))

    def test_haar_responder_rate(self):
        # N=2, M=10 against a Haar responder: compare the sampled rate with the
        # exact per-trial acceptance probability built from measured fidelities
        cfg = ProtocolConfig(n=2, N=2, M=10)
        acc = []
        exact = []
        for s in range(1000):
            res = P.session(P.HRV_SWAP, cfg, HaarResponder(), np.random.default_rng(s))
            acc.append(res.accepted)
            exact.append(np.prod(0.5 + 0.5 * res.f2))
        m = float(np.mean(exact))
        assert abs(np.mean(acc) - m) < 5 * np.sqrt(m * (1 - m) / 1000) + 1e-3
        # Haar fidelities at D=4 average 1/D
        assert m < (0.5 + 0.5 * 0.5) ** 20

    def test_reproducible(self):
        cfg = ProtocolConfig(n=3, N=4, M=2)
        a = P.session(P.HRV_SWAP, cfg, HaarResponder(), np.random.default_rng(5))
        b = P.session(P.HRV_SWAP, cfg, HaarResponder(), np.random.default_rng(5))
        assert a.to_json() == b.to_json()


class TestTraps:
    def test_uniform_over_subsets(self):
        rng = np.random.default_rng(0)
        T = 100_000
        marks = P.place_traps_batch(T, 4, 0.5, rng)
        counts = Counter(map(tuple, marks))
        assert len(counts) == 6
        assert stats.chisquare(list(counts.values())).pvalue > 0.01

    def test_single_uniform(self):
        rng = np.random.default_rng(1)
        counts = Counter(tuple(P.place_traps(4, 0.5, rng).P) for _ in range(12_000))
        assert len(counts) == 6
        assert stats.chisquare(list(counts.values())).pvalue > 0.01

    def test_extremes(self):
        rng = np.random.default_rng(0)
        assert P.place_traps(6, 1.0, rng).marks.tolist() == [1] * 6
        assert P.place_traps(6, 0.0, rng).marks.tolist() == [0] * 6

    def test_non_integral(self):
        with pytest.raises(ConfigError):
            P.place_traps(5, 0.5, np.random.default_rng(0))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), half=st.integers(1, 16))
    def test_size(self, seed, half):
        N = 2 * half
        pl = P.place_traps(N, 0.5, np.random.default_rng(seed))
        assert len(pl.P) == half


class TestCver:
    # positions are 0-based here: P = {0, 2}
    MARKS = np.array([1, 0, 1, 0])

    def test_examples(self):
        assert P.cver([0, 1, 0, 0], self.MARKS, tau=0)
        assert not P.cver([1, 0, 0, 0], self.MARKS, tau=0)
        assert not P.cver([0, 0, 0, 0], self.MARKS, tau=0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            P.cver([0, 1, 0], self.MARKS, tau=0)

    def test_tolerance(self):
        assert P.cver([0, 0, 0, 0], self.MARKS, tau=1)
        assert P.cver([0, 1, 0, 1], self.MARKS, tau=1)

    @settings(max_examples=200, deadline=None)
    @given(bits=st.lists(st.integers(0, 1), min_size=8, max_size=8), seed=st.integers(0, 1000),
           tau=st.integers(0, 3))
    def test_batch_agrees_with_definition(self, bits, seed, tau):
        marks = P.place_traps(8, 0.5, np.random.default_rng(seed)).marks
        s = np.array(bits)
        test1 = all(s[i] == 0 for i in range(8) if marks[i])
        ones = sum(s[i] for i in range(8) if not marks[i])
        expected = test1 and abs(ones - 0.5 * 4) <= tau
        assert P.cver(s, marks, tau) == expected
        assert P.cver(s, marks, tau) == P.cver(s, marks, tau)
        assert bool(P.cver_batch(s[None], marks, tau)[0]) == expected

    def test_exact_probability_matches_enumeration(self):
        rng = np.random.default_rng(3)
        q = rng.random(6)
        marks = np.array([1, 0, 0, 1, 0, 0], dtype=bool)
        total = 0.0
        for row in range(64):
            s = np.array([(row >> k) & 1 for k in range(6)])
            pr = np.prod(np.where(s == 1, q, 1 - q))
            total += pr * P.cver(s, marks, 1)
        assert P.cver_accept_probability(q, marks, 1) == pytest.approx(total, abs=1e-14)


class TestLrv:
    def test_setup_traps_orthogonal(self):
        cfg = ProtocolConfig(n=4, N=8)
        verifier, device, _ = P.lrv_setup(cfg, np.random.default_rng(0))
        db = verifier.db
        ov = np.abs(np.sum(db.responses.conj() * db.traps, axis=1))
        assert ov.max() < 1e-10
        assert device.query_count == 16

    def test_honest_marked_rounds_zero(self):
        cfg = ProtocolConfig(n=4, N=16, tau=4)
        for s in range(50):
            res = P.session(P.LRV, cfg, HonestProver(), np.random.default_rng(s))
            assert np.all(res.outcome_string[res.placement.P] == 0)

    def test_honest_exact_marked_rounds(self):
        cfg = ProtocolConfig(n=4, N=16, tau=4, mode="exact")
        res = P.session(P.LRV, cfg, HonestProver(), np.random.default_rng(0))
        q = res.per_round
        assert np.all(q[res.placement.P] == 0.0)
        unmarked = np.setdiff1d(np.arange(16), res.placement.P)
        assert np.allclose(q[unmarked], 0.5)
        expected = sum(stats.binom.pmf(k, 8, 0.5) for k in range(0, 9) if abs(k - 4) <= 4)
        assert res.acceptance_probability == pytest.approx(expected)

    def test_transcript(self):
        cfg = ProtocolConfig(n=3, N=8)
        verifier, device, window = P.lrv_setup(cfg, np.random.default_rng(0))
        prover = HonestProver()
        prover.prepare(device, window, cfg, None)
        res = P.lrv_run(cfg, verifier, prover, np.random.default_rng(1))
        tr = res.transcript
        assert tr["message_counts"] == {"quantum": 8, "classical": 1}
        assert tr["copies_consumed"] == 8
        assert int(verifier.db.copies.sum() + verifier.db.trap_copies.sum()) == 16 - 8
        assert len(tr["outcome_string"]) == 8

    def test_all_zero_string_rejected(self):
        class Zeros:
            def prepare(self, *a):
                pass

            def outcome_bits(self, challenges, states, rng):
                return np.zeros(len(challenges), dtype=np.int8)

        cfg = ProtocolConfig(n=3, N=8)
        for s in range(20):
            assert not P.session(P.LRV, cfg, Zeros(), np.random.default_rng(s)).accepted

    def test_completeness_small(self):
        cfg = ProtocolConfig(n=3, N=16, tau=4)
        hits = sum(P.session(P.LRV, cfg, HonestProver(), np.random.default_rng(s)).accepted for s in range(300))
        # binomial(8, 1/2) lands in [0, 8] always
        assert hits == 300

    def test_generalised_p(self):
        cfg = ProtocolConfig(n=3, N=8, p=0.25, tau=1)
        res = P.session(P.LRV, cfg, HonestProver(), np.random.default_rng(0))
        assert res.placement.marks.sum() == 2
