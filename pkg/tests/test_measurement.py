from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qcert.ensembles import build_mixedness_instance
from qcert.errors import DimensionMismatch, PovmError
from qcert.measurement import (
    FixedStrategy,
    HaarBasisStrategy,
    KEigenbasisStrategy,
    Povm,
    StandardBasisStrategy,
    Transcript,
    block_restrict_povm,
    born_probabilities,
    haar_basis_povm,
    outcome_distribution,
    pushforward,
    replay_log_p0,
    simulate_transcript,
    standard_basis_povm,
    validate_povm,
)
from qcert.states import DensityMatrix

from conftest import random_density


class TestPovm:
    def test_standard_basis(self):
        P = standard_basis_povm(3)
        assert len(P) == 3 and np.allclose(P.weights, 1 / 3)
        assert np.array_equal(P.vectors, np.eye(3))
        rep = validate_povm(P)
        assert rep.ok and rep.residual == 0

    @pytest.mark.parametrize("real", [True, False])
    def test_haar_is_valid(self, rng, real):
        P = haar_basis_povm(8, rng, real=real)
        assert validate_povm(P).ok
        assert P.is_real == real

    def test_doubled_weight_residual(self):
        w = np.full(4, 1 / 4)
        w[0] *= 2
        rep = validate_povm(Povm(w, np.eye(4)))
        assert not rep.ok and rep.residual == pytest.approx(1.0)
        assert rep.messages

    def test_negative_weight_reported(self):
        rep = validate_povm(Povm(np.array([1.0, -0.5]), np.eye(2)))
        assert not rep.ok and rep.min_weight < 0

    def test_haar_overlap_moment(self, rng):
        d = 6
        overlaps = [haar_basis_povm(d, rng).vectors[:, 0] ** 2 for _ in range(10000)]
        assert np.mean(overlaps) == pytest.approx(1 / d, rel=0.02)

    def test_raw_round_trip(self, rng):
        P = haar_basis_povm(5, rng)
        Q = Povm.from_raw(P.raw())
        assert np.allclose(Q.weights, P.weights) and np.allclose(Q.vectors, P.vectors)

    def test_from_raw_drops_zero_rows(self):
        R = np.array([[1.0, 0], [0, 0], [0, 1.0]])
        P = Povm.from_raw(R)
        assert len(P) == 2 and validate_povm(P).ok
        assert np.allclose(P.weights, 0.5)

    def test_dict_round_trip(self, rng):
        P = haar_basis_povm(4, rng, real=False)
        Q = Povm.from_dict(P.to_dict())
        assert np.array_equal(Q.vectors, P.vectors) and Q.povm_id == P.povm_id

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 2**31 - 1))
    def test_weighted_trace_identity(self, d, seed):
        """sum_x w_x d x^T H x = Tr H for any Hermitian H."""
        g = np.random.default_rng(seed)
        P = haar_basis_povm(d, g)
        H = g.standard_normal((d, d))
        H = H + H.T
        vals = np.einsum("ki,ij,kj->k", P.vectors, H, P.vectors)
        assert np.sum(P.weights * d * vals) == pytest.approx(np.trace(H), abs=1e-9)


class TestDistributions:
    def test_maximally_mixed_gives_weights(self, rng):
        P = haar_basis_povm(5, rng)
        assert np.allclose(outcome_distribution(P, DensityMatrix.maximally_mixed(5)), P.weights)

    def test_pure_state(self):
        p = outcome_distribution(standard_basis_povm(4), np.diag([1.0, 0, 0, 0]))
        assert np.array_equal(p, [1, 0, 0, 0])

    def test_mixedness_alt(self, rng):
        inst = build_mixedness_instance(np.ones(6), 1 / 12, rng)
        p = outcome_distribution(standard_basis_povm(6), inst.alt_state)
        M = inst.perturbation[0]
        assert np.allclose(p, (1 + M.diagonal() / 12) / 6, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            born_probabilities(standard_basis_povm(3), np.eye(2) / 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_normalised(self, d, seed):
        g = np.random.default_rng(seed)
        p = outcome_distribution(haar_basis_povm(d, g, real=False), random_density(d, g))
        assert p.sum() == pytest.approx(1, abs=1e-9) and p.min() >= 0


class TestSimulation:
    def test_empty(self, rng):
        t = simulate_transcript(StandardBasisStrategy(3), DensityMatrix.maximally_mixed(3), 0, rng)
        assert len(t) == 0 and t.log_p0 == 0

    def test_uniform_chi_square(self):
        d = 5
        t = simulate_transcript(StandardBasisStrategy(d), DensityMatrix.maximally_mixed(d), 10000, np.random.default_rng(4))
        counts = np.bincount([s.outcome for s in t], minlength=d)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_adaptive_k_strategy_replays(self, rng):
        d = 4
        rho = DensityMatrix(random_density(d, rng, real=True))
        t = simulate_transcript(KEigenbasisStrategy(d), rho, 12, rng)
        assert len(t) == 12
        assert t.log_p0 == pytest.approx(replay_log_p0(t, rho), abs=1e-9)

    def test_null_log_probs(self, rng):
        inst = build_mixedness_instance(np.ones(4), 1 / 12, rng)
        t = simulate_transcript(HaarBasisStrategy(4, seed=3), inst.alt_state, 8, rng, null=inst.null_state)
        assert t.log_p0 == pytest.approx(replay_log_p0(t, inst.null_state), abs=1e-9)

    def test_same_seed_bit_identical(self):
        rho = DensityMatrix.maximally_mixed(4)
        a = simulate_transcript(HaarBasisStrategy(4, seed=9), rho, 10, np.random.default_rng(1))
        b = simulate_transcript(HaarBasisStrategy(4, seed=9), rho, 10, np.random.default_rng(1))
        assert a.to_jsonl() == b.to_jsonl()

    def test_invalid_povm_aborts(self, rng):
        bad = FixedStrategy(Povm(np.full(2, 0.9), np.eye(2)))
        with pytest.raises(PovmError) as info:
            simulate_transcript(bad, DensityMatrix.maximally_mixed(2), 1, rng)
        assert not info.value.report.ok

    def test_negative_n(self, rng):
        with pytest.raises(ValueError):
            simulate_transcript(StandardBasisStrategy(2), DensityMatrix.maximally_mixed(2), -1, rng)


class TestTranscript:
    def test_jsonl_round_trip(self, rng):
        rho = DensityMatrix(random_density(3, rng))
        t = simulate_transcript(HaarBasisStrategy(3, seed=2, real=False), rho, 5, rng)
        back = Transcript.from_jsonl(t.to_jsonl())
        assert back.digest() == t.digest() and back.log_p0 == t.log_p0
        assert len(t.to_jsonl().splitlines()) == 5

    def test_without_and_slice(self, rng):
        t = Transcript.from_vectors(rng.standard_normal((4, 3)))
        assert len(t.without(1)) == 3 and len(t[:2]) == 2

    def test_from_vectors_log_p0(self, rng):
        rho = np.diag([0.5, 0.3, 0.2])
        V = rng.standard_normal((6, 3))
        t = Transcript.from_vectors(V, rho0=rho)
        assert t.log_p0 == pytest.approx(replay_log_p0(t, rho), abs=1e-12)


class TestBlockRestriction:
    def test_block_supported_is_identity(self):
        P = standard_basis_povm(4)
        Q, f = block_restrict_povm(P, [[0, 1], [2, 3]])
        assert np.array_equal(Q.vectors, P.vectors) and np.array_equal(f, np.arange(4))
        assert Q.block_tags == (0, 0, 1, 1)

    def test_hand_split(self):
        x = np.array([0.6, 0.8])
        y = np.array([-0.8, 0.6])
        P = Povm(np.full(2, 0.5), np.stack([x, y]))
        Q, f = block_restrict_povm(P, [[0], [1]])
        assert np.allclose(Q.weights, [0.5 * 0.36, 0.5 * 0.64, 0.5 * 0.64, 0.5 * 0.36])
        assert np.allclose(np.abs(Q.vectors), [[1, 0], [0, 1], [1, 0], [0, 1]])
        assert list(f) == [0, 0, 1, 1]
        assert validate_povm(Q).ok

    def test_pushforward_equality(self, rng):
        blocks = [[0, 1, 2], [3, 4], [5, 6, 7]]
        worst = 0.0
        for _ in range(100):
            P = haar_basis_povm(8, rng)
            Q, f = block_restrict_povm(P, blocks)
            R = np.zeros((8, 8))
            masses = rng.dirichlet(np.ones(3))
            for b, m in zip(blocks, masses):
                R[np.ix_(b, b)] = m * random_density(len(b), rng, real=True)
            old = born_probabilities(P, R)
            new = pushforward(born_probabilities(Q, R), f, len(P))
            worst = max(worst, float(np.abs(old - new).max()))
        assert worst <= 1e-9

    def test_not_a_partition(self):
        with pytest.raises(ValueError):
            block_restrict_povm(standard_basis_povm(3), [[0], [1]])
