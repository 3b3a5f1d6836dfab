"""
Seeded generators for the three simulation experiments.

Every generator takes a numpy ``Generator`` and returns ``(datasets, truth)``:
``datasets`` maps the dataset ids ``"X"`` (PARAFAC2) and ``"Y"`` (matrix or
CP) to unit-norm data, and ``truth`` holds the generating decompositions
rescaled so that they reproduce the noiseless unit-norm data exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..core.exceptions import ValidationError
from ..core.models import CpDecomposition, DenseTensor3, MatrixDecomposition, Parafac2Decomposition, RaggedTensor
from ..core.tensor_ops import frob_norm, normalize_to_unit_norm, reconstruct_cp, reconstruct_parafac2

logger = logging.getLogger(__name__)

RANK = 3

# Experiment 1 / 2 sizes: X is I x J x K, Y is I x L
EXP1_I, EXP1_J, EXP1_K, EXP1_L = 40, 120, 50, 60

# Experiment 2 network shapes over the 120 nodes
SHRINK_FROM, SHRINK_TO = 40, 10
SHIFT_WIDTH, SHIFT_FROM, SHIFT_TO = 20, 40, 60
GROW_FROM, GROW_TO = 10, 40
DECAY_TIME = 10.0
SIGMOID_CENTER, SIGMOID_WIDTH = 35.0, 3.0
# Amplitude of the random temporal curve, which holds most of the energy of X
RANDOM_CURVE_SCALE = 3.0
STATIC_LOADING_RANGE = (0.5, 1.0)
CLUSTERS, ROWS_PER_CLUSTER, CLUSTER_SPREAD = 4, 10, 0.2

# Experiment 3 sizes and smooth-component shape
EXP3_I, EXP3_J, EXP3_K = 30, 200, 30
EXP3_L, EXP3_M = 20, 50
EXP3_DELTA_COLS = 4
EXP3_X_COLUMNS = (0, 1, 2)
EXP3_Y_COLUMNS = (0, 1, 3)
BUMP_WIDTH = 25.0
EXP3_NOISE = 0.5


@dataclass(frozen=True, eq=False)
class GroundTruth:
    decompositions: Dict[str, Any]
    labels: Optional[np.ndarray] = None
    A_clean: Optional[np.ndarray] = None
    A_noisy: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None
    scales: Dict[str, float] = field(default_factory=dict)


def add_noise(data: Any, eta: float, rng: np.random.Generator) -> Any:
    """
    X + eta (||X|| / ||N||) N with N standard normal of the same shape.

    ``eta == 0`` returns *data* itself without drawing from *rng*.
    """
    if eta < 0:
        raise ValidationError(f"Noise level must be non-negative, got {eta}")
    if eta == 0:
        return data
    norm = frob_norm(data)
    if norm == 0:
        raise ValidationError("Cannot scale noise to zero-norm data")
    if isinstance(data, RaggedTensor):
        N = [rng.standard_normal(s.shape) for s in data.slices]
        factor = eta * norm / np.sqrt(sum(float(np.sum(n * n)) for n in N))
        return RaggedTensor(tuple(s + factor * n for s, n in zip(data.slices, N)))
    if isinstance(data, DenseTensor3):
        N = rng.standard_normal(data.shape)
        return DenseTensor3(data.data + eta * norm / np.linalg.norm(N) * N)
    X = np.asarray(data, dtype=np.float64)
    N = rng.standard_normal(X.shape)
    return X + eta * norm / np.linalg.norm(N) * N


def gen_parafac2_bks(J: int, K: int, R: int, rng: np.random.Generator) -> List[np.ndarray]:
    """B_k = P_k DeltaB with orthonormal P_k (QR of a normal matrix) and one normal DeltaB."""
    if J < R:
        raise ValidationError(f"PARAFAC2 slices need J >= R, got J={J}, R={R}")
    blueprint = rng.standard_normal((R, R))
    out = []
    for _ in range(K):
        Q, _ = np.linalg.qr(rng.standard_normal((J, R)))
        out.append(Q @ blueprint)
    return out


def _finish(
    X: RaggedTensor,
    Y: Any,
    truth_X: Parafac2Decomposition,
    truth_Y: Any,
    eta: float,
    rng: np.random.Generator,
    **extra: Any,
) -> Tuple[Dict[str, Any], GroundTruth]:
    """Add noise, normalize both datasets and rescale the last factor of each truth."""
    noisy_X = add_noise(X, eta, rng)
    noisy_Y = add_noise(Y, eta, rng)
    X_unit, x_norm = normalize_to_unit_norm(noisy_X)
    Y_unit, y_norm = normalize_to_unit_norm(noisy_Y)
    truth_X = Parafac2Decomposition(truth_X.A, truth_X.B, truth_X.C / x_norm)
    if isinstance(truth_Y, CpDecomposition):
        truth_Y = CpDecomposition.from_factors(truth_Y.E, truth_Y.F, truth_Y.G / y_norm)
    else:
        truth_Y = MatrixDecomposition(truth_Y.E, truth_Y.F / y_norm)
    truth = GroundTruth({"X": truth_X, "Y": truth_Y}, scales={"X": x_norm, "Y": y_norm}, **extra)
    return {"X": X_unit, "Y": Y_unit}, truth


def gen_experiment1(rng: np.random.Generator, eta: float = 0.0) -> Tuple[Dict[str, Any], GroundTruth]:
    """
    Exactly coupled 40 x 120 x 50 PARAFAC2 tensor and 40 x 60 matrix, rank 3.

    All factors are standard uniform (C shifted by 0.1); every B_k equals one
    non-negative B, which satisfies the constant cross-product constraint.
    """
    A = rng.uniform(size=(EXP1_I, RANK))
    B = rng.uniform(size=(EXP1_J, RANK))
    C = rng.uniform(size=(EXP1_K, RANK)) + 0.1
    F = rng.uniform(size=(EXP1_L, RANK))
    truth_X = Parafac2Decomposition(A, (B,) * EXP1_K, C)
    truth_Y = MatrixDecomposition(A, F)
    X = reconstruct_parafac2(truth_X)
    Y = A @ F.T
    return _finish(X, Y, truth_X, truth_Y, eta, rng)


def evolving_network_bks(J: int = EXP1_J, K: int = EXP1_K) -> List[np.ndarray]:
    """
    Unit-norm indicator columns over J nodes for a shrinking, a shifting and a growing network.

    Supports change linearly in k and never overlap, so B_k^T B_k = I.
    """
    out = []
    for k in range(K):
        t = k / (K - 1) if K > 1 else 0.0
        B = np.zeros((J, RANK))
        B[: int(round(SHRINK_FROM + (SHRINK_TO - SHRINK_FROM) * t)), 0] = 1.0
        start = int(round(SHIFT_FROM + (SHIFT_TO - SHIFT_FROM) * t))
        B[start : start + SHIFT_WIDTH, 1] = 1.0
        B[J - int(round(GROW_FROM + (GROW_TO - GROW_FROM) * t)) :, 2] = 1.0
        out.append(B / np.linalg.norm(B, axis=0))
    return out


def temporal_patterns(rng: np.random.Generator, K: int = EXP1_K) -> np.ndarray:
    """Exponential decay, sigmoid and a scaled uniform random curve over k = 1..K."""
    k = np.arange(1, K + 1, dtype=np.float64)
    return np.column_stack(
        [
            np.exp(-k / DECAY_TIME),
            1.0 / (1.0 + np.exp(-(k - SIGMOID_CENTER) / SIGMOID_WIDTH)),
            RANDOM_CURVE_SCALE * rng.uniform(size=K),
        ]
    )


def clustered_rows(rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Four clusters at (+-1, +-1) in the first two columns; third column uniform."""
    centroids = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    labels = np.repeat(np.arange(CLUSTERS), ROWS_PER_CLUSTER)
    first_two = centroids[labels] + CLUSTER_SPREAD * rng.standard_normal((labels.size, 2))
    third = rng.uniform(size=(labels.size, 1))
    return np.hstack([first_two, third]), labels


def static_loadings(rng: np.random.Generator, L: int = EXP1_L) -> np.ndarray:
    """
    Non-negative L x 3 loadings with one active component per row.

    Rows are split evenly over the components in random order, and the active
    entry is uniform on ``STATIC_LOADING_RANGE``.
    """
    active = rng.permutation(np.arange(L) % RANK)
    F = np.zeros((L, RANK))
    F[np.arange(L), active] = rng.uniform(*STATIC_LOADING_RANGE, size=L)
    return F


def gen_experiment2(rng: np.random.Generator, eta: float = 0.0) -> Tuple[Dict[str, Any], GroundTruth]:
    """
    Dynamic (PARAFAC2) and static (matrix) data sharing a clustered first mode.

    A is perturbed by noise of level *eta* before X is built; Y uses the clean
    A. The datasets themselves get no additional noise.
    """
    A_clean, labels = clustered_rows(rng)
    B = evolving_network_bks()
    C = temporal_patterns(rng)
    F = static_loadings(rng)
    A_noisy = add_noise(A_clean, eta, rng)
    truth_X = Parafac2Decomposition(A_noisy, tuple(B), C)
    truth_Y = MatrixDecomposition(A_clean, F)
    X = reconstruct_parafac2(truth_X)
    Y = A_clean @ F.T
    return _finish(X, Y, truth_X, truth_Y, 0.0, rng, labels=labels, A_clean=A_clean, A_noisy=A_noisy)


def smooth_bks(J: int = EXP3_J, K: int = EXP3_K, width: float = BUMP_WIDTH) -> List[np.ndarray]:
    """
    Periodic Gaussian bumps of standard deviation *width*, evenly spaced over
    the J axis, whose centers move one point per slice.

    Distances wrap around the axis, so B_k is an exact cyclic shift of B_0 and
    all B_k share their cross-product.
    """
    axis = np.arange(J, dtype=np.float64)
    centers = J * (2 * np.arange(RANK) + 1) / (2 * RANK)
    gap = np.abs(axis[:, None] - centers[None, :])
    distance = np.minimum(gap, J - gap)
    B0 = np.exp(-0.5 * (distance / width) ** 2)
    B0 /= np.linalg.norm(B0, axis=0)
    return [np.roll(B0, k, axis=0) for k in range(K)]


def gen_experiment3(rng: np.random.Generator, eta: float = EXP3_NOISE) -> Tuple[Dict[str, Any], GroundTruth]:
    """
    Partially coupled 30 x 200 x 30 PARAFAC2 tensor and 30 x 20 x 50 CP tensor.

    A and E take Delta columns (0, 1, 2) and (0, 1, 3): two shared components.
    """
    delta = rng.standard_normal((EXP3_I, EXP3_DELTA_COLS))
    A = delta[:, list(EXP3_X_COLUMNS)]
    E = delta[:, list(EXP3_Y_COLUMNS)]
    B = smooth_bks()
    C = rng.uniform(size=(EXP3_K, RANK)) + 0.1
    F = rng.standard_normal((EXP3_L, RANK))
    G = rng.standard_normal((EXP3_M, RANK))
    truth_X = Parafac2Decomposition(A, tuple(B), C)
    truth_Y = CpDecomposition.from_factors(E, F, G)
    X = reconstruct_parafac2(truth_X)
    Y = reconstruct_cp(truth_Y)
    return _finish(X, Y, truth_X, truth_Y, eta, rng, delta=delta)
