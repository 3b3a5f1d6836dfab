"""
Tests for FMS, fit, k-means and clustering accuracy.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cmtf_fusion.core.exceptions import ValidationError
from cmtf_fusion.core.metrics import (
    best_column_permutation,
    clustering_accuracy,
    congruence_matrix,
    fit_percentage,
    fms,
    fms_match,
    kmeans,
)
from cmtf_fusion.core.tensor_ops import scale


class TestPermutationMatching:
    def test_picks_best_assignment(self):
        S = np.array([[0.1, 0.9, 0.0], [0.8, 0.2, 0.1], [0.0, 0.3, 0.7]])
        match = best_column_permutation(S)
        assert match.permutation == (1, 0, 2)
        assert match.mean_score == pytest.approx((0.9 + 0.8 + 0.7) / 3)

    def test_hungarian_agrees_with_exhaustive(self, rng):
        """Above the exhaustive limit the assignment solver finds the same optimum."""
        S = rng.uniform(size=(6, 6))
        exhaustive = best_column_permutation(S, exhaustive_limit=8)
        hungarian = best_column_permutation(S, exhaustive_limit=0)
        assert sum(exhaustive.scores) == pytest.approx(sum(hungarian.scores))

    def test_square_only(self):
        with pytest.raises(ValidationError):
            best_column_permutation(np.ones((2, 3)))


class TestFms:
    """Tests for the factor match score."""

    def test_identical_is_one(self, rng):
        U = rng.standard_normal((10, 3))
        assert fms(U, U) == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16))
    def test_invariant_to_permutation_scaling_and_sign(self, seed):
        local = np.random.default_rng(seed)
        U = local.standard_normal((8, 3))
        perm = local.permutation(3)
        gains = local.uniform(0.1, 5.0, size=3) * local.choice([-1.0, 1.0], size=3)
        assert fms(U, U[:, perm] * gains) == pytest.approx(1.0)

    def test_match_recovers_permutation(self, rng):
        U = rng.standard_normal((20, 3))
        match = fms_match(U, U[:, [2, 0, 1]])
        assert match.permutation == (1, 2, 0)

    def test_orthogonal_columns_score_zero(self):
        U = np.eye(4)[:, :2]
        V = np.eye(4)[:, 2:]
        assert fms(U, V) == pytest.approx(0.0)

    def test_congruence_is_bounded(self, rng):
        C = congruence_matrix(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)))
        assert np.all((C >= 0) & (C <= 1))

    def test_zero_column_rejected(self):
        with pytest.raises(ValidationError):
            fms(np.zeros((3, 2)), np.ones((3, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            fms(np.ones((3, 2)), np.ones((3, 3)))


class TestFitPercentage:
    def test_perfect_fit(self, ragged):
        assert fit_percentage(ragged, ragged) == pytest.approx(100.0)

    def test_zero_model(self, dense):
        assert fit_percentage(dense, scale(dense, 0.0)) == pytest.approx(0.0)

    def test_half_scale(self):
        Z = np.ones((2, 2))
        assert fit_percentage(Z, 0.5 * Z) == pytest.approx(75.0)

    def test_zero_data(self):
        with pytest.raises(ValidationError):
            fit_percentage(np.zeros((2, 2)), np.zeros((2, 2)))


class TestClustering:
    """Tests for k-means and the clustering accuracy score."""

    def test_separated_clusters(self, rng):
        centers = np.array([[5.0, 5.0], [-5.0, 5.0], [-5.0, -5.0], [5.0, -5.0]])
        truth = np.repeat(np.arange(4), 10)
        points = centers[truth] + 0.1 * rng.standard_normal((40, 2))
        labels = kmeans(points, 4, rng=0)
        assert clustering_accuracy(truth, labels) == pytest.approx(100.0)

    def test_kmeans_is_seeded(self, rng):
        points = rng.standard_normal((30, 3))
        np.testing.assert_array_equal(kmeans(points, 3, rng=7), kmeans(points, 3, rng=7))

    def test_kmeans_needs_enough_points(self):
        with pytest.raises(ValidationError):
            kmeans(np.zeros((2, 2)), 3)

    def test_accuracy_ignores_label_names(self):
        assert clustering_accuracy([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]) == pytest.approx(100.0)

    def test_accuracy_partial(self):
        assert clustering_accuracy([0, 0, 1, 1], [0, 1, 1, 1]) == pytest.approx(75.0)

    def test_accuracy_with_fewer_estimated_clusters(self):
        assert clustering_accuracy([0, 1, 2, 3], [0, 0, 1, 1]) == pytest.approx(50.0)

    def test_accuracy_length_mismatch(self):
        with pytest.raises(ValidationError):
            clustering_accuracy([0, 1], [0])
