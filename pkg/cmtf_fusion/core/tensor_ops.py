"""
Reconstruction, contraction and norm kernels shared by the solver and the metrics.

Everything works in float64 on the containers from ``models``; nothing here
keeps state.
"""
from __future__ import annotations

from typing import Any, Tuple

import numpy as np

from .exceptions import InvariantError, ValidationError
from .models import CpDecomposition, DenseTensor3, Parafac2Decomposition, RaggedTensor


def reconstruct_parafac2(dec: Parafac2Decomposition) -> RaggedTensor:
    """Slices A Diag(C[k]) B_k^T for every k."""
    A, C = dec.A, dec.C
    if any(b.shape[1] != A.shape[1] for b in dec.B) or len(dec.B) != C.shape[0]:
        raise InvariantError("PARAFAC2 factors do not conform")
    return RaggedTensor(tuple((A * C[k]) @ b.T for k, b in enumerate(dec.B)))


def reconstruct_cp(dec: CpDecomposition) -> DenseTensor3:
    E, F, G = dec.factors
    if not (E.shape[1] == F.shape[1] == G.shape[1]):
        raise InvariantError("CP factors must share the component count")
    return DenseTensor3(np.einsum("ir,jr,kr->ijk", E, F, G))


def khatri_rao(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Columnwise Kronecker product; row index runs fastest over *second*."""
    if first.shape[1] != second.shape[1]:
        raise ValidationError(
            f"Khatri-Rao operands need equal column counts, got {first.shape[1]} and {second.shape[1]}"
        )
    rank = first.shape[1]
    return (first[:, None, :] * second[None, :, :]).reshape(-1, rank)


_MTTKRP_SUBSCRIPTS = (
    "ijk,jr,kr->ir",
    "ijk,ir,kr->jr",
    "ijk,ir,jr->kr",
)


def mttkrp(tensor: DenseTensor3 | np.ndarray, factors: CpDecomposition | Tuple[np.ndarray, ...], mode: int) -> np.ndarray:
    """
    Matricized tensor times Khatri-Rao product along *mode*.

    The factor at *mode* only fixes the shape check; its values are not used.
    """
    data = tensor.data if isinstance(tensor, DenseTensor3) else np.asarray(tensor, dtype=np.float64)
    mats = factors.factors if isinstance(factors, CpDecomposition) else tuple(factors)
    if not isinstance(mode, (int, np.integer)) or not 0 <= mode < 3:
        raise ValidationError(f"Mode index must be 0, 1 or 2, got {mode!r}")
    if data.ndim != 3 or len(mats) != 3:
        raise ValidationError("mttkrp needs a 3-way tensor and three factors")
    for n, (size, mat) in enumerate(zip(data.shape, mats)):
        if n != mode and mat.shape[0] != size:
            raise ValidationError(f"Factor {n} has {mat.shape[0]} rows but the tensor mode has {size}")
    others = [m for n, m in enumerate(mats) if n != mode]
    return np.einsum(_MTTKRP_SUBSCRIPTS[mode], data, *others)


def frob_norm(x: Any) -> float:
    if isinstance(x, RaggedTensor):
        return float(np.sqrt(sum(float(np.sum(s * s)) for s in x.slices)))
    if isinstance(x, DenseTensor3):
        return float(np.linalg.norm(x.data.ravel()))
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64).ravel()))


def scale(x: Any, factor: float) -> Any:
    """Multiply every entry of *x* by *factor*, keeping the container type."""
    if isinstance(x, RaggedTensor):
        return RaggedTensor(tuple(s * factor for s in x.slices))
    if isinstance(x, DenseTensor3):
        return DenseTensor3(x.data * factor)
    return np.asarray(x, dtype=np.float64) * factor


def normalize_to_unit_norm(x: Any) -> Tuple[Any, float]:
    """Return (x / ||x||, ||x||); zero-norm input is rejected."""
    norm = frob_norm(x)
    if norm <= 0.0:
        raise ValidationError("Cannot normalize data with zero Frobenius norm")
    return scale(x, 1.0 / norm), norm


def squared_residual(data: Any, reconstruction: Any) -> float:
    """||data - reconstruction||_F^2 for matching containers."""
    if isinstance(data, RaggedTensor):
        if not isinstance(reconstruction, RaggedTensor) or data.J != reconstruction.J or data.I1 != reconstruction.I1:
            raise ValidationError("Ragged data and reconstruction have different slice shapes")
        return float(sum(np.sum((x - z) ** 2) for x, z in zip(data.slices, reconstruction.slices)))
    lhs = data.data if isinstance(data, DenseTensor3) else np.asarray(data, dtype=np.float64)
    rhs = reconstruction.data if isinstance(reconstruction, DenseTensor3) else np.asarray(reconstruction, dtype=np.float64)
    if lhs.shape != rhs.shape:
        raise ValidationError(f"Shape mismatch: {lhs.shape} vs {rhs.shape}")
    return float(np.sum((lhs - rhs) ** 2))


def cross_product_spread(B: Tuple[np.ndarray, ...] | list, relative: bool = False) -> float:
    """
    max over slice pairs of ||B_k1^T B_k1 - B_k2^T B_k2||_F.

    With ``relative=True`` the value is divided by the mean ||B_k^T B_k||_F.
    """
    grams = np.stack([b.T @ b for b in B])
    diffs = grams[:, None, :, :] - grams[None, :, :, :]
    spread = float(np.sqrt(np.max(np.sum(diffs * diffs, axis=(2, 3)))))
    if not relative:
        return spread
    mean_norm = float(np.mean(np.linalg.norm(grams.reshape(len(grams), -1), axis=1)))
    return spread / max(mean_norm, 1e-300)
