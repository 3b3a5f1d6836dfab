from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

from ..core.exceptions import ConfigError


@dataclass(frozen=True)
class SolverConfig:
    """
    Knobs of the AO-ADMM loop.

    - max_outer_iterations: hard cap on AO sweeps over all modes
    - inner_admm_iterations: ADMM iterations per mode per sweep (no inner stopping rule)
    - absolute_tolerance: stop once the objective itself falls below this
    - relative_tolerance: relative objective change that counts as stalled
    - feasibility_tolerance: bound on every coupling/split/cross-product residual
    - parafac2_projection_iterations: flip-flop rounds of the PARAFAC2 projection
    - initializations: random starts tried by ``multi_init_fit``
    - seed: seed of the first start; start i uses ``seed + i``
    - workers: starts fitted concurrently
    - min_outer_iterations: sweeps done before the stopping rule is consulted
    """
    max_outer_iterations: int = 2000
    inner_admm_iterations: int = 5
    absolute_tolerance: float = 1e-9
    relative_tolerance: float = 1e-9
    feasibility_tolerance: float = 1e-4
    parafac2_projection_iterations: int = 5
    initializations: int = 5
    seed: int = 0
    workers: int = 1
    min_outer_iterations: int = 2

    def __post_init__(self):
        for name in (
            "max_outer_iterations",
            "inner_admm_iterations",
            "parafac2_projection_iterations",
            "initializations",
            "workers",
            "min_outer_iterations",
        ):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"solver.{name}: expected a positive integer, got {value!r}")
        for name in ("absolute_tolerance", "relative_tolerance", "feasibility_tolerance"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not 0 < value < 1:
                raise ConfigError(f"solver.{name}: expected a number in (0, 1), got {value!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"solver.seed: expected a non-negative integer, got {self.seed!r}")

    def replace(self, **changes: Any) -> "SolverConfig":
        """Copy with *changes* applied; ``None`` values are ignored."""
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        return SolverConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "SolverConfig":
        """Build from a config block; missing keys keep defaults, unknown keys are ignored."""
        if data is None:
            return cls()
        if not isinstance(data, dict):
            raise ConfigError(f"solver: expected an object, got {type(data).__name__}")
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})
