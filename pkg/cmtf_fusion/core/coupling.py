"""
Linear couplings of first-mode factors through a shared generating variable Delta.

Two variants exist:

* ``exact``: every participant factor equals Delta (all columns);
* ``column-selection``: participant p's leading factor columns equal the
  Delta columns listed in ``p.columns``; further factor columns are free.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, ValidationError

logger = logging.getLogger(__name__)

EXACT = "exact"
COLUMN_SELECTION = "column-selection"


@dataclass(frozen=True)
class Participant:
    dataset: str
    columns: Tuple[int, ...]

    @property
    def width(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class CouplingSpec:
    participants: Tuple[Participant, ...]
    delta_cols: int
    variant: str = COLUMN_SELECTION

    def __post_init__(self):
        if not self.participants:
            raise ValidationError("A coupling needs at least one participant")
        if self.delta_cols < 1:
            raise ValidationError(f"delta_cols must be positive, got {self.delta_cols}")
        if self.variant not in (EXACT, COLUMN_SELECTION):
            raise ValidationError(f"Unknown coupling variant {self.variant!r}")
        ids = [p.dataset for p in self.participants]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"A dataset may participate in the coupling only once, got {ids}")
        covered = set()
        for p in self.participants:
            if len(set(p.columns)) != len(p.columns):
                raise ValidationError(f"Coupling columns of {p.dataset!r} must be distinct, got {list(p.columns)}")
            bad = [c for c in p.columns if not 0 <= c < self.delta_cols]
            if bad:
                raise ValidationError(
                    f"Coupling columns of {p.dataset!r} must lie in [0, {self.delta_cols}), got {bad}"
                )
            if self.variant == EXACT and tuple(p.columns) != tuple(range(self.delta_cols)):
                raise ValidationError(f"Exact coupling requires {p.dataset!r} to use all {self.delta_cols} columns")
            covered.update(p.columns)
        missing = sorted(set(range(self.delta_cols)) - covered)
        if missing:
            raise ValidationError(f"Delta columns {missing} are not provided by any participant")

    @classmethod
    def exact(cls, datasets: Sequence[str], delta_cols: int) -> "CouplingSpec":
        cols = tuple(range(delta_cols))
        return cls(tuple(Participant(d, cols) for d in datasets), delta_cols, EXACT)

    @classmethod
    def column_selection(cls, selectors: Mapping[str, Sequence[int]], delta_cols: int) -> "CouplingSpec":
        return cls(
            tuple(Participant(d, tuple(int(c) for c in cols)) for d, cols in selectors.items()),
            delta_cols,
            COLUMN_SELECTION,
        )

    def participant(self, dataset: str) -> Optional[Participant]:
        for p in self.participants:
            if p.dataset == dataset:
                return p
        return None

    def validate_ranks(self, ranks: Mapping[str, int]) -> None:
        """Check participants against the first-mode column counts in *ranks*."""
        for p in self.participants:
            if p.dataset not in ranks:
                raise ValidationError(f"Coupling participant {p.dataset!r} is not a dataset of the problem")
            rank = ranks[p.dataset]
            if self.variant == EXACT and rank != self.delta_cols:
                raise ValidationError(
                    f"Exact coupling needs {p.dataset!r} to have rank {self.delta_cols}, got {rank}"
                )
            if p.width > rank:
                raise ValidationError(f"{p.dataset!r} couples {p.width} columns but has rank {rank}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "participants": [
                {"dataset": p.dataset, "columns": "all" if self.variant == EXACT else list(p.columns)}
                for p in self.participants
            ],
            "delta_cols": self.delta_cols,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], where: str = "coupling") -> "CouplingSpec":
        if not isinstance(d, Mapping):
            raise ConfigError(f"{where}: expected an object")
        try:
            delta_cols = int(d["delta_cols"])
        except KeyError:
            raise ConfigError(f"{where}.delta_cols: required") from None
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.delta_cols: expected an integer, got {d['delta_cols']!r}") from None
        raw = d.get("participants")
        if not isinstance(raw, list) or not raw:
            raise ConfigError(f"{where}.participants: expected a non-empty list")
        participants = []
        for n, item in enumerate(raw):
            here = f"{where}.participants[{n}]"
            if not isinstance(item, Mapping) or "dataset" not in item:
                raise ConfigError(f"{here}.dataset: required")
            cols = item.get("columns", "all")
            if cols == "all":
                cols = tuple(range(delta_cols))
            elif isinstance(cols, list) and all(isinstance(c, int) and not isinstance(c, bool) for c in cols):
                cols = tuple(cols)
            else:
                raise ConfigError(f'{here}.columns: expected a list of integers or "all", got {cols!r}')
            participants.append(Participant(str(item["dataset"]), cols))
        full = tuple(range(delta_cols))
        variant = EXACT if all(p.columns == full for p in participants) else COLUMN_SELECTION
        try:
            return cls(tuple(participants), delta_cols, variant)
        except ValidationError as exc:
            raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class DictionaryVariable:
    """Delta plus one scaled dual per participant, owned by a single fit."""
    delta: np.ndarray
    duals: Dict[str, np.ndarray] = field(default_factory=dict)


def delta_update(spec: CouplingSpec, inputs: Mapping[str, np.ndarray], rhos: Mapping[str, float]) -> np.ndarray:
    """
    Minimize sum_p rho_p ||(F_p + mu_p)[:, :n_p] - Delta[:, cols_p]||^2 over Delta.

    ``inputs[p]`` holds factor plus dual for participant p. Each Delta column is
    the rho-weighted mean of the participant columns mapped onto it.
    """
    if not spec.participants:
        raise ValidationError("A coupling needs at least one participant")
    rows = {np.asarray(inputs[p.dataset]).shape[0] for p in spec.participants}
    if len(rows) != 1:
        raise ValidationError(f"Coupled factors must share the row count, got {sorted(rows)}")
    n_rows = rows.pop()
    numer = np.zeros((n_rows, spec.delta_cols))
    denom = np.zeros(spec.delta_cols)
    for p in spec.participants:
        values = np.asarray(inputs[p.dataset], dtype=np.float64)
        if values.shape[1] < p.width:
            raise ValidationError(f"{p.dataset!r} provides {values.shape[1]} columns, needs {p.width}")
        rho = float(rhos[p.dataset])
        cols = list(p.columns)
        numer[:, cols] += rho * values[:, : p.width]
        denom[cols] += rho
    if np.any(denom <= 0):
        missing = np.flatnonzero(denom <= 0).tolist()
        raise ValidationError(f"Delta columns {missing} are not provided by any participant")
    return numer / denom


def selected_delta(participant: Participant, delta: np.ndarray) -> np.ndarray:
    """The Delta columns participant's leading factor columns are coupled to."""
    return delta[:, list(participant.columns)]


def coupling_residual(participant: Participant, factor: np.ndarray, delta: np.ndarray) -> float:
    """||factor[:, :n] - Delta[:, cols]||_F / max(1, ||factor||_F)."""
    factor = np.asarray(factor, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if factor.ndim != 2 or delta.ndim != 2 or factor.shape[0] != delta.shape[0] or factor.shape[1] < participant.width:
        raise ValidationError(f"Factor shape {factor.shape} does not conform to Delta shape {delta.shape}")
    if any(c >= delta.shape[1] for c in participant.columns):
        raise ValidationError(f"Delta has {delta.shape[1]} columns; participant selects {list(participant.columns)}")
    diff = factor[:, : participant.width] - selected_delta(participant, delta)
    return float(np.linalg.norm(diff) / max(1.0, np.linalg.norm(factor)))
