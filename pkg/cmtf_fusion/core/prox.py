"""
Regularization penalties g(.) and their proximal operators.

``prox_apply(reg, V, rho)`` returns argmin_U g(U) + (rho/2)||V - U||_F^2.
Indicator penalties are evaluated with a small feasibility tolerance so that
converged iterates do not read as infeasible because of rounding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from .exceptions import ConfigError, ValidationError

logger = logging.getLogger(__name__)

PENALTY_TOLERANCE = 1e-9

NONE = "none"
NONNEG = "nonneg"
RIDGE = "ridge"
L2BALL = "l2ball"
NONNEG_L2BALL = "nonneg-l2ball"
SMOOTHNESS = "smoothness"

KINDS = (NONE, NONNEG, RIDGE, L2BALL, NONNEG_L2BALL, SMOOTHNESS)


def build_path_laplacian(n: int) -> np.ndarray:
    """Degree-minus-adjacency matrix of the path graph on *n* nodes."""
    if n < 2:
        raise ValidationError(f"A path Laplacian needs at least 2 nodes, got {n}")
    L = np.diag(np.full(n, 2.0)) - np.eye(n, k=1) - np.eye(n, k=-1)
    L[0, 0] = L[-1, -1] = 1.0
    return L


@lru_cache(maxsize=32)
def _path_eigh(n: int) -> Tuple[np.ndarray, np.ndarray]:
    w, Q = linalg.eigh(build_path_laplacian(n))
    w = np.clip(w, 0.0, None)
    w.setflags(write=False)
    Q.setflags(write=False)
    return w, Q


def _check_laplacian(L: np.ndarray) -> np.ndarray:
    L = np.array(L, dtype=np.float64, copy=True)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValidationError(f"A Laplacian must be a square matrix, got shape {L.shape}")
    if not np.allclose(L, L.T, rtol=0.0, atol=1e-10):
        raise ValidationError("A Laplacian must be symmetric")
    w = linalg.eigvalsh(L)
    if w.size and w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise ValidationError(f"A Laplacian must be positive semidefinite (smallest eigenvalue {w[0]:.3g})")
    L.setflags(write=False)
    return L


@dataclass(frozen=True, eq=False)
class Regularizer:
    """
    One penalty per factor mode.

    ``kind`` is one of ``KINDS``. Ridge uses ``lam``; smoothness uses ``strength``
    and either an explicit ``laplacian`` or a path Laplacian built for the row count
    of whatever it is applied to. ``nonneg`` adds non-negativity to ridge.
    """
    kind: str = NONE
    lam: float = 0.0
    strength: float = 0.0
    laplacian: Optional[np.ndarray] = None
    nonneg: bool = False
    _eigh: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"Unknown regularizer {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.lam < 0 or self.strength < 0:
            raise ValidationError("Regularization strengths must be non-negative")
        if self.laplacian is not None:
            L = _check_laplacian(self.laplacian)
            w, Q = linalg.eigh(L)
            object.__setattr__(self, "laplacian", L)
            object.__setattr__(self, "_eigh", (np.clip(w, 0.0, None), Q))

    # ---------- constructors ----------

    @classmethod
    def none(cls) -> "Regularizer":
        return cls(NONE)

    @classmethod
    def non_negativity(cls) -> "Regularizer":
        return cls(NONNEG)

    @classmethod
    def ridge(cls, lam: float, nonneg: bool = False) -> "Regularizer":
        return cls(RIDGE, lam=float(lam), nonneg=bool(nonneg))

    @classmethod
    def unit_ball(cls) -> "Regularizer":
        return cls(L2BALL)

    @classmethod
    def nonneg_unit_ball(cls) -> "Regularizer":
        return cls(NONNEG_L2BALL)

    @classmethod
    def smoothness(cls, strength: float, laplacian: Any = None) -> "Regularizer":
        return cls(SMOOTHNESS, strength=float(strength), laplacian=laplacian)

    # ---------- properties ----------

    @property
    def is_identity(self) -> bool:
        if self.kind == NONE:
            return True
        if self.kind == RIDGE:
            return self.lam == 0 and not self.nonneg
        if self.kind == SMOOTHNESS:
            return self.strength == 0
        return False

    @property
    def implies_nonnegativity(self) -> bool:
        return self.kind in (NONNEG, NONNEG_L2BALL) or (self.kind == RIDGE and self.nonneg)

    def laplacian_eigh(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Eigenpairs of the Laplacian acting on vectors of length *n*."""
        if self._eigh is not None:
            if self._eigh[1].shape[0] != n:
                raise ValidationError(
                    f"Laplacian is {self._eigh[1].shape[0]}x{self._eigh[1].shape[0]} but the factor has {n} rows"
                )
            return self._eigh
        return _path_eigh(n)

    # ---------- serialization ----------

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"type": self.kind}
        if self.kind == RIDGE:
            d["lambda"] = self.lam
            if self.nonneg:
                d["nonneg"] = True
        if self.kind == SMOOTHNESS:
            d["strength"] = self.strength
            if self.laplacian is not None:
                d["laplacian"] = self.laplacian.tolist()
        return d

    @classmethod
    def from_dict(cls, d: Optional[Dict[str, Any]], where: str = "regularizer") -> "Regularizer":
        if d is None:
            return cls.none()
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
        kind = d.get("type", NONE)
        if kind not in KINDS:
            raise ConfigError(f"{where}.type: unknown regularizer {kind!r}; expected one of {', '.join(KINDS)}")
        try:
            if kind == RIDGE:
                if "lambda" not in d:
                    raise ConfigError(f"{where}.lambda: required for ridge")
                return cls.ridge(float(d["lambda"]), nonneg=bool(d.get("nonneg", False)))
            if kind == SMOOTHNESS:
                return cls.smoothness(float(d.get("strength", 1.0)), d.get("laplacian"))
            return cls(kind)
        except ConfigError:
            raise
        except ValidationError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from exc


def _check_rho(rho: float) -> None:
    if not rho > 0 or not np.isfinite(rho):
        raise ValidationError(f"Step size rho must be positive and finite, got {rho}")


def _column_ball(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=0)
    return V / np.maximum(1.0, norms)


def prox_apply(reg: Optional[Regularizer], V: np.ndarray, rho: float) -> np.ndarray:
    """Proximal operator of g/rho at V; never modifies V."""
    _check_rho(rho)
    V = np.asarray(V, dtype=np.float64)
    if reg is None or reg.kind == NONE:
        return V.copy()
    if reg.kind == NONNEG:
        return np.maximum(V, 0.0)
    if reg.kind == RIDGE:
        base = np.maximum(V, 0.0) if reg.nonneg else V
        return base * (rho / (rho + 2.0 * reg.lam))
    if reg.kind == L2BALL:
        return _column_ball(V)
    if reg.kind == NONNEG_L2BALL:
        return _column_ball(np.maximum(V, 0.0))
    if reg.kind == SMOOTHNESS:
        if reg.strength == 0:
            return V.copy()
        w, Q = reg.laplacian_eigh(V.shape[0])
        gain = rho / (rho + 2.0 * reg.strength * w)
        return Q @ (gain[:, None] * (Q.T @ V))
    raise ValidationError(f"Unknown regularizer {reg.kind!r}")


def penalty_value(reg: Optional[Regularizer], V: np.ndarray) -> float:
    """g(V); indicator penalties return 0 or +inf."""
    V = np.asarray(V, dtype=np.float64)
    if reg is None or reg.kind == NONE:
        return 0.0
    if reg.kind == NONNEG:
        return 0.0 if np.all(V >= -PENALTY_TOLERANCE) else float("inf")
    if reg.kind == RIDGE:
        if reg.nonneg and np.any(V < -PENALTY_TOLERANCE):
            return float("inf")
        return float(reg.lam * np.sum(V * V))
    if reg.kind in (L2BALL, NONNEG_L2BALL):
        if reg.kind == NONNEG_L2BALL and np.any(V < -PENALTY_TOLERANCE):
            return float("inf")
        return 0.0 if np.all(np.linalg.norm(V, axis=0) <= 1.0 + PENALTY_TOLERANCE) else float("inf")
    if reg.kind == SMOOTHNESS:
        if reg.strength == 0:
            return 0.0
        L = reg.laplacian if reg.laplacian is not None else build_path_laplacian(V.shape[0])
        if L.shape[0] != V.shape[0]:
            raise ValidationError(f"Laplacian is {L.shape[0]}x{L.shape[0]} but the factor has {V.shape[0]} rows")
        return float(reg.strength * np.sum(V * (L @ V)))
    raise ValidationError(f"Unknown regularizer {reg.kind!r}")
