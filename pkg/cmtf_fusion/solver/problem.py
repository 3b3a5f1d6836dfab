"""
Problem declaration: datasets, their models, weights, per-mode regularizers and the coupling.

``ProblemSpec.from_dict`` reads the JSON document accepted by ``cmtf fit``::

    {"datasets": [{"id": "X", "model": "parafac2", "path": "X", "rank": 3,
                   "weight": 0.5, "regularizers": {"A": {"type": "nonneg"}}}],
     "coupling": {"participants": [{"dataset": "X", "columns": "all"}], "delta_cols": 3},
     "solver": {...}}
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..core import storage
from ..core.coupling import CouplingSpec
from ..core.exceptions import CmtfError, ConfigError, ValidationError
from ..core.models import DenseTensor3, RaggedTensor
from ..core.prox import SMOOTHNESS, Regularizer
from ..core.utils import make_data_path_portable, resolve_data_path

logger = logging.getLogger(__name__)

PARAFAC2 = "parafac2"
MATRIX = "matrix"
CP = "cp"

MODE_NAMES: Dict[str, Tuple[str, ...]] = {
    PARAFAC2: ("A", "B", "C"),
    MATRIX: ("E", "F"),
    CP: ("E", "F", "G"),
}


@dataclass(frozen=True, eq=False)
class DatasetSpec:
    id: str
    model: str
    data: Any
    rank: int
    weight: float = 1.0
    regularizers: Mapping[str, Regularizer] = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODE_NAMES:
            raise ValidationError(f"Dataset {self.id!r}: unknown model {self.model!r}")
        if isinstance(self.rank, bool) or not isinstance(self.rank, (int, np.integer)) or self.rank < 1:
            raise ValidationError(f"Dataset {self.id!r}: rank must be a positive integer, got {self.rank!r}")
        if not np.isfinite(self.weight) or self.weight <= 0:
            raise ValidationError(f"Dataset {self.id!r}: weight must be positive, got {self.weight!r}")
        if self.model == PARAFAC2 and not isinstance(self.data, RaggedTensor):
            raise ValidationError(f"Dataset {self.id!r}: a PARAFAC2 model needs a ragged tensor")
        if self.model == CP and not isinstance(self.data, DenseTensor3):
            raise ValidationError(f"Dataset {self.id!r}: a CP model needs a dense 3-way tensor")
        if self.model == MATRIX:
            if isinstance(self.data, (RaggedTensor, DenseTensor3)) or np.ndim(self.data) != 2:
                raise ValidationError(f"Dataset {self.id!r}: a matrix model needs a matrix")
            arr = np.array(self.data, dtype=np.float64, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, "data", arr)
        unknown = sorted(set(self.regularizers) - set(self.modes))
        if unknown:
            raise ValidationError(
                f"Dataset {self.id!r}: no mode named {unknown} for a {self.model} model "
                f"(modes are {', '.join(self.modes)})"
            )
        if self.model == PARAFAC2:
            narrow = [k for k, j in enumerate(self.data.J) if j < self.rank]
            if narrow:
                raise ValidationError(
                    f"Dataset {self.id!r}: rank {self.rank} exceeds the width of slice(s) {narrow[:5]} "
                    f"(min J_k = {min(self.data.J)})"
                )
        self._check_laplacians()

    def _check_laplacians(self) -> None:
        for mode, reg in self.regularizers.items():
            if reg.kind != SMOOTHNESS:
                continue
            lengths = set(self.mode_lengths(mode))
            if reg.laplacian is None:
                if reg.strength > 0 and min(lengths) < 2:
                    raise ValidationError(
                        f"Dataset {self.id!r}: smoothness on mode {mode} needs at least 2 rows, "
                        f"got length(s) {sorted(lengths)}"
                    )
                continue
            n = reg.laplacian.shape[0]
            if lengths != {n}:
                raise ValidationError(
                    f"Dataset {self.id!r}: mode {mode} has length(s) {sorted(lengths)} but its Laplacian is {n}x{n}"
                )

    @property
    def modes(self) -> Tuple[str, ...]:
        return MODE_NAMES[self.model]

    @property
    def first_mode(self) -> str:
        return self.modes[0]

    @property
    def n_rows(self) -> int:
        """Length of the first (couplable) mode."""
        if isinstance(self.data, RaggedTensor):
            return self.data.I1
        return int(np.shape(self.data.data if isinstance(self.data, DenseTensor3) else self.data)[0])

    def mode_lengths(self, mode: str) -> Tuple[int, ...]:
        """Row count of the factor for *mode*; one entry per slice for PARAFAC2 B."""
        index = self.modes.index(mode)
        if self.model == PARAFAC2:
            return (self.data.I1,) if index == 0 else (self.data.J if index == 1 else (self.data.K,))
        shape = self.data.shape if self.model == CP else np.shape(self.data)
        return (int(shape[index]),)

    def regularizer(self, mode: str) -> Regularizer:
        return self.regularizers.get(mode) or Regularizer.none()


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    datasets: Tuple[DatasetSpec, ...]
    coupling: Optional[CouplingSpec] = None

    def __post_init__(self):
        if not self.datasets:
            raise ValidationError("A problem needs at least one dataset")
        ids = [d.id for d in self.datasets]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"Dataset ids must be unique, got {ids}")
        if self.coupling is not None:
            self.coupling.validate_ranks({d.id: d.rank for d in self.datasets})
            rows = {d.id: d.n_rows for d in self.datasets if self.coupling.participant(d.id) is not None}
            if len(set(rows.values())) != 1:
                raise ValidationError(f"Coupled datasets must share the first-mode length, got {rows}")

    def dataset(self, dataset_id: str) -> DatasetSpec:
        for d in self.datasets:
            if d.id == dataset_id:
                return d
        raise KeyError(dataset_id)

    @property
    def ids(self) -> List[str]:
        return [d.id for d in self.datasets]

    def to_dict(self, paths: Mapping[str, str], config_path: str = "") -> Dict[str, Any]:
        """Config document for *paths* (dataset id -> data location), portable relative to *config_path*."""
        return {
            "datasets": [
                {
                    "id": d.id,
                    "model": d.model,
                    "path": make_data_path_portable(paths[d.id], config_path),
                    "rank": int(d.rank),
                    "weight": float(d.weight),
                    "regularizers": {m: r.to_dict() for m, r in d.regularizers.items()},
                }
                for d in self.datasets
            ],
            "coupling": self.coupling.to_dict() if self.coupling is not None else None,
        }

    @classmethod
    def from_dict(cls, config: Mapping[str, Any], config_path: str = "") -> "ProblemSpec":
        """
        Parse a config document and load its data files.

        Relative data paths are resolved against *config_path*'s directory.
        Errors name the offending field, e.g. ``datasets[1].rank``.
        """
        if not isinstance(config, Mapping):
            raise ConfigError("config: expected a JSON object at the top level")
        raw = config.get("datasets")
        if not isinstance(raw, list) or not raw:
            raise ConfigError("datasets: expected a non-empty list")
        datasets = [_dataset_from_dict(item, n, config_path) for n, item in enumerate(raw)]
        coupling = None
        if config.get("coupling") is not None:
            coupling = CouplingSpec.from_dict(config["coupling"])
        try:
            return cls(tuple(datasets), coupling)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc


def _dataset_from_dict(item: Any, n: int, config_path: str) -> DatasetSpec:
    where = f"datasets[{n}]"
    if not isinstance(item, Mapping):
        raise ConfigError(f"{where}: expected an object")
    for key in ("id", "model", "path", "rank"):
        if key not in item:
            raise ConfigError(f"{where}.{key}: required")
    model = item["model"]
    if model not in MODE_NAMES:
        raise ConfigError(f"{where}.model: expected one of {', '.join(MODE_NAMES)}, got {model!r}")
    rank = item["rank"]
    if isinstance(rank, bool) or not isinstance(rank, int) or rank < 1:
        raise ConfigError(f"{where}.rank: expected a positive integer, got {rank!r}")
    weight = item.get("weight", 1.0)
    if isinstance(weight, bool) or not isinstance(weight, (int, float)) or weight <= 0:
        raise ConfigError(f"{where}.weight: expected a positive number, got {weight!r}")
    regs_raw = item.get("regularizers") or {}
    if not isinstance(regs_raw, Mapping):
        raise ConfigError(f"{where}.regularizers: expected an object keyed by mode name")
    regularizers = {}
    for mode, block in regs_raw.items():
        if mode not in MODE_NAMES[model]:
            raise ConfigError(
                f"{where}.regularizers.{mode}: no such mode for a {model} model "
                f"(modes are {', '.join(MODE_NAMES[model])})"
            )
        regularizers[mode] = Regularizer.from_dict(block, where=f"{where}.regularizers.{mode}")
    path = resolve_data_path(str(item["path"]), config_path)
    data = storage.load_dataset(path, model)
    logger.debug("Loaded %s dataset %r from %s", model, item["id"], path)
    try:
        return DatasetSpec(str(item["id"]), model, data, rank, float(weight), regularizers)
    except CmtfError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
