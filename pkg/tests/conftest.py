"""
pytest configuration and fixtures.
"""
import os

import numpy as np
import pytest

from cmtf_fusion.core.coupling import CouplingSpec
from cmtf_fusion.core.models import (
    CpDecomposition,
    MatrixDecomposition,
    Parafac2Decomposition,
)
from cmtf_fusion.core.prox import Regularizer
from cmtf_fusion.core.tensor_ops import reconstruct_cp, reconstruct_parafac2
from cmtf_fusion.solver.config import SolverConfig
from cmtf_fusion.solver.problem import MATRIX, PARAFAC2, DatasetSpec, ProblemSpec


def pytest_collection_modifyitems(config, items):
    """Skip experiment-level runs unless RUN_SLOW_TESTS=1."""
    if os.environ.get("RUN_SLOW_TESTS") == "1":
        return
    skip = pytest.mark.skip(reason="Slow tests disabled. Set RUN_SLOW_TESTS=1 to enable.")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_parafac2_truth(rng, I=8, J=(6, 7, 6, 8, 7), R=2, nonneg=True):
    """Small PARAFAC2 decomposition whose B_k share their cross-product."""
    draw = rng.uniform if nonneg else rng.standard_normal
    A = draw(size=(I, R))
    C = rng.uniform(size=(len(J), R)) + 0.5
    blueprint = rng.standard_normal((R, R))
    B = []
    for j in J:
        Q, _ = np.linalg.qr(rng.standard_normal((j, R)))
        B.append(Q @ blueprint)
    return Parafac2Decomposition(A, tuple(B), C)


@pytest.fixture
def parafac2_truth(rng):
    return make_parafac2_truth(rng)


@pytest.fixture
def ragged(parafac2_truth):
    return reconstruct_parafac2(parafac2_truth)


@pytest.fixture
def matrix_truth(rng, parafac2_truth):
    F = rng.uniform(size=(9, parafac2_truth.rank))
    return MatrixDecomposition(parafac2_truth.A, F)


@pytest.fixture
def cp_truth(rng):
    return CpDecomposition.from_factors(
        rng.standard_normal((6, 2)), rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
    )


@pytest.fixture
def dense(cp_truth):
    return reconstruct_cp(cp_truth)


@pytest.fixture
def coupled_problem(parafac2_truth, ragged, matrix_truth):
    """Exactly coupled PARAFAC2 + matrix problem with noise-free data."""
    X = DatasetSpec("X", PARAFAC2, ragged, parafac2_truth.rank, 1.0)
    Y = DatasetSpec("Y", MATRIX, matrix_truth.E @ matrix_truth.F.T, matrix_truth.rank, 1.0)
    return ProblemSpec((X, Y), CouplingSpec.exact(["X", "Y"], parafac2_truth.rank))


@pytest.fixture
def nonneg_problem(parafac2_truth, ragged, matrix_truth):
    nn = Regularizer.non_negativity()
    X = DatasetSpec("X", PARAFAC2, ragged, parafac2_truth.rank, 0.5, {"A": nn, "C": nn})
    Y = DatasetSpec("Y", MATRIX, matrix_truth.E @ matrix_truth.F.T, matrix_truth.rank, 0.5, {"E": nn, "F": nn})
    return ProblemSpec((X, Y), CouplingSpec.exact(["X", "Y"], parafac2_truth.rank))


@pytest.fixture
def fast_config():
    return SolverConfig(max_outer_iterations=40, inner_admm_iterations=3, initializations=2, seed=3)

