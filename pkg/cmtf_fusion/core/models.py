from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .exceptions import InvariantError


def _frozen_matrix(value: Any, name: str) -> np.ndarray:
    """Copy *value* into a read-only float64 matrix."""
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise InvariantError(f"{name} must be a matrix, got an array with {arr.ndim} dimension(s)")
    arr.setflags(write=False)
    return arr


# ---------- Data containers ----------

@dataclass(frozen=True, eq=False)
class RaggedTensor:
    """
    Third-order tensor stored as K frontal slices X_k of shape I1 x J_k.

    The slices share their row count; the column count may vary per slice.
    Slices are never padded, so norms and fits are computed on real entries only.
    """
    slices: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.slices) < 1:
            raise InvariantError("A ragged tensor needs at least one slice")
        frozen = tuple(_frozen_matrix(s, f"slice {k}") for k, s in enumerate(self.slices))
        rows = {s.shape[0] for s in frozen}
        if len(rows) != 1:
            raise InvariantError(f"All slices must share the row count I1, got {sorted(rows)}")
        if any(s.shape[0] < 1 or s.shape[1] < 1 for s in frozen):
            raise InvariantError("Slices must have at least one row and one column")
        object.__setattr__(self, "slices", frozen)

    @classmethod
    def from_slices(cls, slices: Sequence[Any]) -> "RaggedTensor":
        return cls(tuple(slices))

    @property
    def I1(self) -> int:
        return int(self.slices[0].shape[0])

    @property
    def J(self) -> Tuple[int, ...]:
        return tuple(int(s.shape[1]) for s in self.slices)

    @property
    def K(self) -> int:
        return len(self.slices)

    def manifest(self) -> Dict[str, Any]:
        """Shape manifest written next to the slice files."""
        return {"I1": self.I1, "J": list(self.J)}


@dataclass(frozen=True, eq=False)
class DenseTensor3:
    """Dense real I x J x K array."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise InvariantError(f"A dense tensor must have 3 modes, got {arr.ndim}")
        if min(arr.shape) < 1:
            raise InvariantError(f"All dimensions must be positive, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)  # type: ignore[return-value]

    def manifest(self) -> Dict[str, Any]:
        return {"shape": list(self.shape)}


# ---------- Decompositions ----------

@dataclass(frozen=True, eq=False)
class Parafac2Decomposition:
    """
    X_k ~ A Diag(C[k, :]) B_k^T.

    D_k is never stored as a matrix; row k of C holds its diagonal.
    """
    A: np.ndarray
    B: Tuple[np.ndarray, ...]
    C: np.ndarray

    def __post_init__(self):
        A = _frozen_matrix(self.A, "A")
        B = tuple(_frozen_matrix(b, f"B[{k}]") for k, b in enumerate(self.B))
        C = _frozen_matrix(self.C, "C")
        rank = A.shape[1]
        if C.shape[1] != rank or any(b.shape[1] != rank for b in B):
            raise InvariantError(
                "A, every B_k and C must share the column count R; got "
                f"A:{A.shape[1]}, C:{C.shape[1]}, B:{sorted({b.shape[1] for b in B})}"
            )
        if len(B) != C.shape[0]:
            raise InvariantError(f"Number of B_k ({len(B)}) must equal the row count of C ({C.shape[0]})")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def rank(self) -> int:
        return int(self.A.shape[1])

    @property
    def K(self) -> int:
        return len(self.B)

    def stacked_B(self) -> np.ndarray:
        """All B_k concatenated vertically (sum J_k x R)."""
        return np.concatenate(self.B, axis=0)

    def named_factors(self) -> Dict[str, Any]:
        return {"A": self.A, "B": list(self.B), "C": self.C}


@dataclass(frozen=True, eq=False)
class MatrixDecomposition:
    """Y ~ E F^T."""
    E: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        E = _frozen_matrix(self.E, "E")
        F = _frozen_matrix(self.F, "F")
        if E.shape[1] != F.shape[1]:
            raise InvariantError(f"E and F must share the column count, got {E.shape[1]} and {F.shape[1]}")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "F", F)

    @property
    def rank(self) -> int:
        return int(self.E.shape[1])

    def named_factors(self) -> Dict[str, Any]:
        return {"E": self.E, "F": self.F}


@dataclass(frozen=True, eq=False)
class CpDecomposition:
    """Y ~ [[E, F, G]] (sum of R rank-one tensors)."""
    factors: Tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(_frozen_matrix(f, f"factor {n}") for n, f in enumerate(self.factors))
        if len(mats) != 3:
            raise InvariantError(f"A CP decomposition of a 3-way tensor needs 3 factors, got {len(mats)}")
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1:
            raise InvariantError(f"CP factors must share the column count, got {sorted(ranks)}")
        object.__setattr__(self, "factors", mats)

    @classmethod
    def from_factors(cls, E: Any, F: Any, G: Any) -> "CpDecomposition":
        return cls((E, F, G))

    @property
    def E(self) -> np.ndarray:
        return self.factors[0]

    @property
    def F(self) -> np.ndarray:
        return self.factors[1]

    @property
    def G(self) -> np.ndarray:
        return self.factors[2]

    @property
    def rank(self) -> int:
        return int(self.factors[0].shape[1])

    def named_factors(self) -> Dict[str, Any]:
        return {"E": self.E, "F": self.F, "G": self.G}


Decomposition = Parafac2Decomposition | MatrixDecomposition | CpDecomposition
Dataset = RaggedTensor | DenseTensor3 | np.ndarray


def factor_list(dec: Decomposition) -> List[np.ndarray]:
    """Factor matrices of *dec* in mode order; B_k are stacked for PARAFAC2."""
    if isinstance(dec, Parafac2Decomposition):
        return [dec.A, dec.stacked_B(), dec.C]
    return list(dec.named_factors().values())
