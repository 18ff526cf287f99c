import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iontomo.hilbert import DensityMatrix, PureState, basis_state, fidelity_pure, maximally_mixed
from iontomo.ionsim import w_state
from iontomo.tomo import (
    MLEConfig,
    TomographyDataset,
    CountRecord,
    all_probabilities,
    born_probabilities,
    enumerate_bases,
    expected_dataset,
    format_dataset,
    log_likelihood,
    mle_reconstruct,
    monte_carlo_resample,
    parse_dataset,
    read_dataset,
    rrhor_step,
    sample_counts,
    sample_dataset,
    setting_index,
    setting_rotation,
    weighted_effect_sum,
    write_dataset,
)

from oracles import haar_state, linear_inversion, pauli_projector, random_density

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def dm(m):
    return DensityMatrix(m, (2,) * int(round(math.log2(m.shape[0]))))


def plus_x():
    return PureState(np.array([1, 1]) / math.sqrt(2), (2,))


class TestBases:
    def test_one(self):
        assert enumerate_bases(1) == ["Z", "X", "Y"]

    def test_two_qubit_one_fastest(self):
        assert enumerate_bases(2)[:4] == ["ZZ", "XZ", "YZ", "ZX"]
        assert len(enumerate_bases(2)) == 9

    def test_eight(self):
        bases = enumerate_bases(8)
        assert len(bases) == 6561 == len(set(bases))
        assert len(bases) * 100 == 656_100

    def test_index_inverse(self):
        for i, s in enumerate(enumerate_bases(4)):
            assert setting_index(s) == i

    def test_invalid(self):
        with pytest.raises(ValueError):
            enumerate_bases(0)
        with pytest.raises(ValueError):
            setting_index("ZQ")


class TestRotation:
    def test_z_identity(self):
        np.testing.assert_array_equal(setting_rotation("Z")[0], np.eye(2))

    def test_x_on_plus_x(self):
        np.testing.assert_allclose(born_probabilities(plus_x().to_density_matrix(), "X"), [1, 0], atol=1e-15)

    def test_y_on_plus_x(self):
        np.testing.assert_allclose(born_probabilities(plus_x().to_density_matrix(), "Y"), [0.5, 0.5], atol=1e-15)

    def test_y_eigenstate(self):
        plus_y = PureState(np.array([1, 1j]) / math.sqrt(2), (2,))
        np.testing.assert_allclose(born_probabilities(plus_y.to_density_matrix(), "Y"), [1, 0], atol=1e-15)

    @pytest.mark.parametrize("axis", "ZXY")
    def test_rotated_z_matches_pauli_projectors(self, axis):
        rho = random_density(2, np.random.default_rng(0))
        got = born_probabilities(dm(rho), axis)
        want = [np.trace(pauli_projector(axis, o) @ rho).real for o in (0, 1)]
        np.testing.assert_allclose(got, want, atol=1e-14)


class TestBorn:
    def test_mixed_uniform(self):
        np.testing.assert_allclose(born_probabilities(maximally_mixed(3), "XYZ"), 1 / 8)

    def test_w2_zz(self):
        np.testing.assert_allclose(born_probabilities(w_state(2).to_density_matrix(), "ZZ"), [0, 0.5, 0.5, 0], atol=1e-15)

    def test_d(self):
        np.testing.assert_allclose(born_probabilities(basis_state("D").to_density_matrix(), "Z"), [1, 0])

    def test_all_probabilities_agrees_with_projectors(self):
        rho = random_density(8, np.random.default_rng(2))
        p = all_probabilities(rho, 3)
        for i, s in enumerate(enumerate_bases(3)):
            want = [np.trace(pauli_projector(s, o) @ rho).real for o in range(8)]
            np.testing.assert_allclose(p[i], want, atol=1e-14)

    def test_adjoint_map(self):
        rng = np.random.default_rng(3)
        w = rng.random((27, 8))
        want = sum(w[i, o] * pauli_projector(s, o) for i, s in enumerate(enumerate_bases(3)) for o in range(8))
        np.testing.assert_allclose(weighted_effect_sum(w, 3), want, atol=1e-13)

    @given(seeds, st.integers(1, 3))
    @settings(max_examples=20, deadline=None)
    def test_sums_to_one(self, seed, n):
        rho = dm(random_density(2**n, np.random.default_rng(seed)))
        np.testing.assert_allclose(all_probabilities(rho.entries, n).sum(axis=1), 1, atol=1e-10)

    @given(seeds, st.integers(1, 3))
    @settings(max_examples=15, deadline=None)
    def test_informational_completeness(self, seed, n):
        psi = haar_state(2**n, np.random.default_rng(seed))
        rho = np.outer(psi, psi.conj())
        probs = dict(zip(enumerate_bases(n), all_probabilities(rho, n)))
        assert np.abs(linear_inversion(probs, n) - rho).max() <= 1e-8


class TestSampling:
    def test_deterministic_outcome(self):
        rec = sample_counts(basis_state("D").to_density_matrix(), "Z", 100, seed=1)
        np.testing.assert_array_equal(rec.counts, [100, 0])

    def test_same_seed(self):
        rho = w_state(3).to_density_matrix()
        a = sample_counts(rho, "XYZ", 100, seed=5).counts
        b = sample_counts(rho, "XYZ", 100, seed=5).counts
        np.testing.assert_array_equal(a, b)

    def test_law_of_large_numbers(self):
        rho = dm(random_density(4, np.random.default_rng(7)))
        shots = 10**6
        p = born_probabilities(rho, "XY")
        f = sample_counts(rho, "XY", shots, seed=7).counts / shots
        assert np.all(np.abs(f - p) <= 4 * np.sqrt(p * (1 - p) / shots) + 1e-12)

    def test_dataset_shape_and_shots(self):
        ds = sample_dataset(w_state(3).to_density_matrix(), 100, seed=0)
        assert ds.counts.shape == (27, 8)
        assert (ds.counts.sum(axis=1) == 100).all()

    def test_expected_dataset(self):
        ds = expected_dataset(w_state(2).to_density_matrix(), 100)
        np.testing.assert_allclose(ds.counts[setting_index("ZZ")], [0, 50, 50, 0], atol=1e-12)
        np.testing.assert_allclose(expected_dataset(maximally_mixed(2), 100).counts, 25)
        dd = expected_dataset(basis_state("DDD").to_density_matrix(), 100)
        np.testing.assert_allclose(dd.counts[0], [100] + [0] * 7, atol=1e-12)

    def test_dataset_validation(self):
        with pytest.raises(ValueError):
            TomographyDataset(1, 10, np.array([[5, 5], [5, 5]]))
        with pytest.raises(ValueError):
            TomographyDataset(1, 10, np.array([[5, 5], [5, 4], [10, 0]]))
        with pytest.raises(ValueError):
            TomographyDataset(1, 10, np.array([[5, 5], [11, -1], [10, 0]]))

    def test_from_records(self):
        recs = [CountRecord("Y", np.array([3, 7])), CountRecord("Z", np.array([10, 0])), CountRecord("X", np.array([5, 5]))]
        ds = TomographyDataset.from_records(1, 10, recs)
        np.testing.assert_array_equal(ds.counts, [[10, 0], [5, 5], [3, 7]])
        with pytest.raises(ValueError):
            TomographyDataset.from_records(1, 10, recs[:2])


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ds = sample_dataset(w_state(3).to_density_matrix(), 100, seed=2)
        back = parse_dataset(format_dataset(ds))
        np.testing.assert_array_equal(back.counts, ds.counts)
        assert back.shots == 100 and back.n == 3
        write_dataset(tmp_path / "d.txt", ds)
        np.testing.assert_array_equal(read_dataset(tmp_path / "d.txt").counts, ds.counts)

    def test_float_counts_round_trip(self):
        ds = expected_dataset(dm(random_density(4, np.random.default_rng(1))), 100)
        np.testing.assert_array_equal(parse_dataset(format_dataset(ds)).counts, ds.counts)

    def test_garbage(self):
        with pytest.raises(ValueError):
            parse_dataset("n 1 shots 10\nZ 10 0\nX 5\nY 5 5\n")


class TestLogLikelihood:
    def test_true_state_beats_random(self):
        rho = dm(random_density(4, np.random.default_rng(0)))
        ds = expected_dataset(rho, 100)
        best = log_likelihood(rho, ds)
        rng = np.random.default_rng(1)
        for _ in range(100):
            assert log_likelihood(random_density(4, rng), ds) <= best + 1e-9

    def test_single_qubit_d(self):
        rho = basis_state("D").to_density_matrix()
        ds = expected_dataset(rho, 100)
        # Z contributes 100 ln 1; X and Y each 2 * 50 ln 1/2
        assert log_likelihood(rho, ds) == pytest.approx(200 * math.log(0.5))

    def test_floor(self):
        ds = TomographyDataset(1, 10, np.array([[0, 10], [5, 5], [5, 5]]))
        val = log_likelihood(basis_state("D").to_density_matrix(), ds)
        assert np.isfinite(val)
        assert val == pytest.approx(10 * math.log(1e-12) + 20 * math.log(0.5))


class TestMLE:
    def test_exact_w3(self):
        res = mle_reconstruct(expected_dataset(w_state(3).to_density_matrix(), 100))
        assert fidelity_pure(res.rho, w_state(3)) >= 0.999

    def test_uniform_counts(self):
        ds = TomographyDataset(2, 100, np.full((9, 4), 25))
        res = mle_reconstruct(ds)
        np.testing.assert_allclose(res.rho.entries, np.eye(4) / 4, atol=1e-6)
        assert res.converged

    @pytest.mark.parametrize("state", ["mixed", "pure"])
    def test_fixed_point(self, state):
        rng = np.random.default_rng(9)
        rho = random_density(8, rng) if state == "mixed" else w_state(3).to_density_matrix().entries
        ds = expected_dataset(dm(rho), 100)
        assert np.abs(rrhor_step(rho, ds) - rho).max() <= 1e-8

    def test_matches_linear_inversion_at_high_statistics(self):
        # a full-rank state: the likelihood maximum is the linear-inversion estimate
        rho = 0.7 * random_density(4, np.random.default_rng(4)) + 0.3 * np.eye(4) / 4
        ds = expected_dataset(dm(rho), 1000)
        res = mle_reconstruct(ds, MLEConfig(loglik_tolerance=1e-12))
        probs = dict(zip(enumerate_bases(2), ds.counts / 1000))
        np.testing.assert_allclose(res.rho.entries, linear_inversion(probs, 2), atol=1e-4)

    def test_max_iterations(self):
        ds = sample_dataset(w_state(3).to_density_matrix(), 100, seed=1)
        res = mle_reconstruct(ds, MLEConfig(max_iterations=3))
        assert res.iterations == 3 and not res.converged

    def test_small_dilution(self):
        ds = sample_dataset(w_state(2).to_density_matrix(), 100, seed=1)
        res = mle_reconstruct(ds, MLEConfig(dilution=0.3, max_iterations=20000))
        assert res.converged
        assert fidelity_pure(res.rho, w_state(2)) > 0.9

    def test_callback(self):
        seen = []
        mle_reconstruct(expected_dataset(maximally_mixed(1), 10), callback=lambda i, ll: seen.append(i))
        assert seen and seen[0] == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            MLEConfig(dilution=0)
        with pytest.raises(ValueError):
            MLEConfig(max_iterations=0)

    @given(seeds, st.integers(1, 2), st.integers(1, 50))
    @settings(max_examples=30, deadline=None)
    def test_arbitrary_counts_give_valid_state(self, seed, n, shots):
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(shots, rng.dirichlet(np.full(2**n, 0.3)), size=3**n)
        res = mle_reconstruct(TomographyDataset(n, shots, counts))
        res.rho.validate()
        hist = np.array(res.loglik_history)
        assert np.all(np.diff(hist) >= 0)


class TestMonteCarlo:
    def test_trials_two(self):
        out = monte_carlo_resample(w_state(2).to_density_matrix(), 50, 2, 0, {"f": lambda r: fidelity_pure(r, w_state(2))})
        assert set(out) == {"f"} and np.isfinite(out["f"].std)

    def test_w3_std_range(self):
        out = monte_carlo_resample(w_state(3).to_density_matrix(), 100, 30, 1, {"f": lambda r: fidelity_pure(r, w_state(3))})
        assert 0 < out["f"].std < 0.05
        assert out["f"].samples.shape == (30,)

    def test_reproducible(self):
        f = {"f": lambda r: r.entries[1, 2].real}
        a = monte_carlo_resample(w_state(2).to_density_matrix(), 30, 3, 4, f)
        b = monte_carlo_resample(w_state(2).to_density_matrix(), 30, 3, 4, f)
        np.testing.assert_array_equal(a["f"].samples, b["f"].samples)

    def test_trials_one_rejected(self):
        with pytest.raises(ValueError):
            monte_carlo_resample(maximally_mixed(1), 10, 1, 0, {})
