"""
Tests for the simulation data generators.
"""

import numpy as np
import pytest

from cmtf_fusion.core.exceptions import ValidationError
from cmtf_fusion.core.models import RaggedTensor
from cmtf_fusion.core.tensor_ops import frob_norm, reconstruct_cp, reconstruct_parafac2
from cmtf_fusion.experiments import synthgen


def _assert_reproduces(data, truth):
    X = reconstruct_parafac2(truth.decompositions["X"])
    for a, b in zip(data["X"].slices, X.slices):
        np.testing.assert_allclose(a, b, atol=1e-12)
    Y = truth.decompositions["Y"]
    model = Y.E @ Y.F.T if not hasattr(Y, "G") else reconstruct_cp(Y).data
    expected = data["Y"] if isinstance(data["Y"], np.ndarray) else data["Y"].data
    np.testing.assert_allclose(expected, model, atol=1e-12)


class TestAddNoise:
    def test_zero_level_returns_input(self, rng):
        X = rng.standard_normal((4, 3))
        assert synthgen.add_noise(X, 0.0, rng) is X

    def test_relative_norm(self, rng):
        """The added noise has norm eta times the data norm."""
        X = rng.standard_normal((30, 20))
        noisy = synthgen.add_noise(X, 0.5, rng)
        assert np.linalg.norm(noisy - X) == pytest.approx(0.5 * np.linalg.norm(X))

    def test_ragged(self, rng, ragged):
        noisy = synthgen.add_noise(ragged, 0.25, rng)
        assert isinstance(noisy, RaggedTensor)
        assert noisy.J == ragged.J
        diff = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(noisy.slices, ragged.slices)))
        assert diff == pytest.approx(0.25 * frob_norm(ragged))

    def test_negative_level(self, rng):
        with pytest.raises(ValidationError):
            synthgen.add_noise(np.ones((2, 2)), -0.1, rng)


class TestExperiment1:
    def test_shapes_and_unit_norm(self, rng):
        data, truth = synthgen.gen_experiment1(rng, 0.0)
        assert data["X"].J == (120,) * 50
        assert data["X"].I1 == 40
        assert data["Y"].shape == (40, 60)
        assert frob_norm(data["X"]) == pytest.approx(1.0)
        assert frob_norm(data["Y"]) == pytest.approx(1.0)
        assert truth.scales["X"] > 0

    def test_truth_reproduces_noiseless_data(self, rng):
        data, truth = synthgen.gen_experiment1(rng, 0.0)
        _assert_reproduces(data, truth)

    def test_truth_is_exactly_coupled(self, rng):
        _, truth = synthgen.gen_experiment1(rng, 0.3)
        np.testing.assert_array_equal(truth.decompositions["X"].A, truth.decompositions["Y"].E)

    def test_seeded(self):
        a, _ = synthgen.gen_experiment1(np.random.default_rng(1), 0.5)
        b, _ = synthgen.gen_experiment1(np.random.default_rng(1), 0.5)
        np.testing.assert_array_equal(a["Y"], b["Y"])


class TestExperiment2:
    def test_network_columns_orthonormal(self):
        """Non-overlapping unit-norm supports give B_k^T B_k = I."""
        for B in synthgen.evolving_network_bks():
            np.testing.assert_allclose(B.T @ B, np.eye(3), atol=1e-12)

    def test_network_supports(self):
        first, last = synthgen.evolving_network_bks()[0], synthgen.evolving_network_bks()[-1]
        assert np.count_nonzero(first[:, 0]) == 40
        assert np.count_nonzero(last[:, 0]) == 10
        assert np.flatnonzero(first[:, 1])[0] == 40
        assert np.flatnonzero(last[:, 1])[0] == 60
        assert np.count_nonzero(last[:, 2]) == 40

    def test_labels_and_clusters(self, rng):
        data, truth = synthgen.gen_experiment2(rng, 0.0)
        assert truth.labels.shape == (40,)
        assert np.bincount(truth.labels).tolist() == [10] * 4
        np.testing.assert_array_equal(truth.A_clean, truth.A_noisy)
        _assert_reproduces(data, truth)

    def test_noise_only_on_tensor_side(self, rng):
        _, truth = synthgen.gen_experiment2(rng, 0.5)
        assert not np.allclose(truth.A_noisy, truth.A_clean)
        np.testing.assert_array_equal(truth.decompositions["Y"].E, truth.A_clean)

    def test_temporal_patterns(self, rng):
        C = synthgen.temporal_patterns(rng)
        assert C.shape == (50, 3)
        assert np.all(np.diff(C[:, 0]) < 0)
        assert np.all(np.diff(C[:, 1]) > 0)
        assert np.all((C[:, 2] >= 0) & (C[:, 2] < synthgen.RANDOM_CURVE_SCALE))

    def test_static_loadings_one_component_per_row(self, rng):
        F = synthgen.static_loadings(rng)
        assert F.shape == (60, 3)
        assert np.all(np.count_nonzero(F, axis=1) == 1)
        assert np.count_nonzero(F, axis=0).tolist() == [20, 20, 20]
        low, high = synthgen.STATIC_LOADING_RANGE
        assert np.all((F[F > 0] >= low) & (F[F > 0] < high))


class TestExperiment3:
    def test_cyclic_components_share_cross_product(self):
        B = synthgen.smooth_bks()
        assert len(B) == 30
        for b in B[1:]:
            np.testing.assert_allclose(b.T @ b, B[0].T @ B[0], atol=1e-12)

    def test_components_are_smooth(self):
        """Second differences along the axis stay below a fifth of the column norm."""
        for B in synthgen.smooth_bks():
            second = np.diff(B, n=2, axis=0)
            assert np.all(np.linalg.norm(second, axis=0) <= 0.2 * np.linalg.norm(B, axis=0))

    def test_bumps_are_evenly_spaced(self):
        B0 = synthgen.smooth_bks()[0]
        assert np.argmax(B0, axis=0).tolist() == [33, 100, 167]
        np.testing.assert_allclose(np.linalg.norm(B0, axis=0), 1.0)

    def test_width_and_size_parameters(self):
        B = synthgen.smooth_bks(J=60, K=4, width=6.0)
        assert len(B) == 4
        assert B[0].shape == (60, 3)
        np.testing.assert_allclose(B[3], np.roll(B[0], 3, axis=0))

    def test_partial_coupling_columns(self, rng):
        data, truth = synthgen.gen_experiment3(rng, 0.0)
        A = truth.decompositions["X"].A
        E = truth.decompositions["Y"].E
        np.testing.assert_array_equal(A[:, :2], E[:, :2])
        np.testing.assert_array_equal(A[:, 2], truth.delta[:, 2])
        np.testing.assert_array_equal(E[:, 2], truth.delta[:, 3])
        assert data["Y"].shape == (30, 20, 50)
        _assert_reproduces(data, truth)

    def test_default_noise(self, rng):
        data, truth = synthgen.gen_experiment3(rng)
        assert frob_norm(data["X"]) == pytest.approx(1.0)
        assert truth.scales["X"] > 0


def test_parafac2_bks_constant_cross_product(rng):
    B = synthgen.gen_parafac2_bks(6, 4, 2, rng)
    for b in B[1:]:
        np.testing.assert_allclose(b.T @ b, B[0].T @ B[0], atol=1e-10)
    with pytest.raises(ValidationError):
        synthgen.gen_parafac2_bks(1, 4, 2, rng)
