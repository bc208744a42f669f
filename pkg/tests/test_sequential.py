import numpy as np
import pytest

from postselect_bell.errors import ArgumentError, PreconditionError
from postselect_bell.quantum import chsh_quantum_max, make_state, werner_family, joint_probability
from postselect_bell.rng import CounterStream
from postselect_bell.sequential import (SequentialSetting, frame_from_params, postselected_statistics,
                                        quantum_reference, run_sequential_trial, search_settings,
                                        sequential_outcomes, settings_from_frames,
                                        single_measurement_outcomes)
from postselect_bell.werner_hv import (OrthonormalBasis, PrivilegedDecomposition, alice_outcomes,
                                       hidden_rows, qubit_basis, werner_model_phi)
from postselect_bell.classical import Direction3

TSIRELSON = 2 * np.sqrt(2)


def random_settings(d, seed):
    rng = np.random.default_rng(seed)
    fa = frame_from_params(rng.standard_normal(4 * d), d)
    fb = frame_from_params(rng.standard_normal(4 * d), d)
    return settings_from_frames(fa, fb, werner_model_phi(d))


def full_space_setting(directions):
    pairs = tuple(qubit_basis(Direction3.from_vector(v)).vectors for v in directions)
    return SequentialSetting(PrivilegedDecomposition(OrthonormalBasis.standard(2), (0, 1)), pairs)


class TestSetting:
    def test_fine_pair_must_stay_in_subspace(self):
        dec = PrivilegedDecomposition(OrthonormalBasis.standard(3), (0, 1))
        with pytest.raises(PreconditionError):
            SequentialSetting(dec, (np.array([[1, 0, 0], [0, 0, 1]]),))

    def test_fine_pair_must_be_orthonormal(self):
        dec = PrivilegedDecomposition(OrthonormalBasis.standard(3), (0, 1))
        with pytest.raises(PreconditionError):
            SequentialSetting(dec, (np.array([[1, 0, 0], [1, 0, 0]]),))


class TestTrial:
    def test_alice_coarse_zero_rejects(self):
        dec = PrivilegedDecomposition(OrthonormalBasis.standard(3), (0, 1))
        s = SequentialSetting(dec, (np.eye(3)[:2], np.eye(3)[:2]))
        rec = run_sequential_trial(np.array([0.6, 0.8, 0.0]), s, s, 0, 0, CounterStream(0))
        assert rec.alice_coarse == 0
        assert not rec.retained

    def test_full_space_always_retained(self):
        s = full_space_setting([[0, 0, 1], [1, 0, 0]])
        stream = CounterStream(1)
        for r in hidden_rows(CounterStream(2), 0, 200, 2):
            rec = run_sequential_trial(r, s, s, 0, 1, stream)
            assert rec.retained and not rec.escaped
            assert rec.alice_fine in (1, -1) and rec.bob_fine in (1, -1)

    def test_full_space_reduces_bit_for_bit(self):
        alice = full_space_setting([[0, 0, 1], [1, 0, 0]])
        bob = full_space_setting([[1, 1, 0], [0, 1, 1]])
        for i in (0, 1):
            for j in (0, 1):
                batch = sequential_outcomes(alice, bob, 50_000, seed=3, arm_a=i, arm_b=j)
                a, b = single_measurement_outcomes(alice.fine_pairs[i], bob.fine_pairs[j], 50_000, 3, i, j)
                assert batch.retained.all()
                assert np.array_equal(batch.alice_fine, a)
                assert np.array_equal(batch.bob_fine, b)


class TestStatistics:
    def test_retention_self_consistent_in_dimension_five(self):
        alice, bob = random_settings(5, 7)
        n = 1_000_000
        batch = sequential_outcomes(alice, bob, n, seed=11)
        rs = hidden_rows(CounterStream(11, 0x5E9, 0, 0).child(0), 0, n, 5)
        a_coarse = np.isin(alice_outcomes(rs, alice.coarse.basis.vectors), (0, 1))
        direct = a_coarse * (np.abs(rs @ bob.subspace_vectors.conj().T) ** 2).sum(axis=1)
        se = np.sqrt(direct.var(ddof=1) / n + batch.retained.var() / n)
        assert abs(batch.retained.mean() - direct.mean()) < 4 * se

    def test_retention_matches_quantum(self):
        d = 5
        alice, bob = random_settings(d, 8)
        stats = postselected_statistics(alice, bob, 200_000, seed=2)
        p = joint_probability(werner_family(d, werner_model_phi(d)), alice.coarse.projector(), bob.coarse.projector())
        n = sum(a.n_trials for a in stats.arms)
        assert abs(stats.retention_rate - p) < 4 * np.sqrt(p * (1 - p) / n)

    def test_reduction_reproduces_werner_correlations(self):
        alice = full_space_setting([[0, 0, 1], [1, 0, 0]])
        bob = full_space_setting([[0, 0, 1], [0, 1, 0]])
        stats = postselected_statistics(alice, bob, 200_000, seed=4)
        for est, ab in zip(stats.estimates, (1.0, 0.0, 0.0, 0.0)):
            # single-measurement Werner-model correlation is -a.b/2
            assert abs(est.mean + ab / 2) < 4 * est.std_error

    def test_escaped_fraction_in_unit_interval(self):
        alice, bob = random_settings(5, 9)
        for arm in postselected_statistics(alice, bob, 20_000, seed=0).arms:
            assert 0.0 <= arm.escaped_fraction <= 1.0
            assert arm.estimate.n_total == arm.n_trials

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_hidden_variable_ceiling(self, seed):
        alice, bob = random_settings(5, seed)
        chsh = postselected_statistics(alice, bob, 100_000, seed=seed).chsh
        assert chsh.max_over_placements <= 2 + 4 * chsh.std_error

    def test_minimum_trials(self):
        alice, bob = random_settings(3, 0)
        with pytest.raises(ArgumentError):
            postselected_statistics(alice, bob, 100, seed=0)


class TestQuantumReference:
    def test_qubit_identity_coarse(self):
        s = full_space_setting([[0, 0, 1], [1, 0, 0]])
        ref = quantum_reference(-0.25, 2, s, s)
        assert ref.chsh_max == pytest.approx(np.sqrt(2), abs=1e-6)
        assert ref.retention == pytest.approx(1.0)

    def test_singlet_limit(self):
        s = full_space_setting([[0, 0, 1], [1, 0, 0]])
        ref = quantum_reference(-1.0, 2, s, s)
        assert ref.chsh_max == pytest.approx(chsh_quantum_max(make_state("singlet")), abs=1e-9)
        assert ref.chsh_max == pytest.approx(TSIRELSON, abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_quantum_ceiling(self, seed):
        alice, bob = random_settings(5, seed)
        ref = quantum_reference(werner_model_phi(5), 5, alice, bob)
        assert ref.chsh_arms <= ref.chsh_max + 1e-9 <= TSIRELSON + 2e-9
        # fine pairs are chosen optimally, so the arms reach the maximum
        assert ref.chsh_arms == pytest.approx(ref.chsh_max, abs=1e-9)


class TestSearch:
    def test_qubit_never_violates(self):
        res = search_settings(2, -0.25, budget=1000, seed=0, restarts=2, hv_trials=10_000)
        assert res.best_quantum <= 2 + 1e-6

    def test_deterministic(self):
        a = search_settings(3, budget=1000, seed=5, restarts=2, hv_trials=10_000)
        b = search_settings(3, budget=1000, seed=5, restarts=2, hv_trials=10_000)
        assert a.best_quantum == b.best_quantum
        assert [h.hv_chsh for h in a.history] == [h.hv_chsh for h in b.history]

    def test_budget_respected(self):
        res = search_settings(3, budget=1000, seed=1, restarts=2, hv_trials=10_000)
        assert res.evaluations <= 1000

    def test_small_budget_rejected(self):
        with pytest.raises(ArgumentError):
            search_settings(5, budget=10)
