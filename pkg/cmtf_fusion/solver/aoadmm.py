"""
AO-ADMM outer loop: initialization, mode sweeps, objective, feasibility and stopping.

One outer iteration updates, in order, the first modes (all coupled factors
jointly with Delta, uncoupled ones one at a time), every PARAFAC2 B-mode,
every PARAFAC2 C-mode and finally the remaining matrix/CP modes.
"""
from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from ..core.coupling import DictionaryVariable, coupling_residual, delta_update
from ..core.exceptions import SolverAbort, ValidationError, map_exception
from ..core.models import (
    CpDecomposition,
    Decomposition,
    MatrixDecomposition,
    Parafac2Decomposition,
)
from ..core.prox import penalty_value
from ..core.tensor_ops import cross_product_spread, reconstruct_cp, reconstruct_parafac2, squared_residual
from . import admm
from .admm import ModeState, Parafac2BState
from .config import SolverConfig
from .problem import CP, MATRIX, PARAFAC2, DatasetSpec, ProblemSpec

logger = logging.getLogger(__name__)

CONVERGED = "converged"
ABSOLUTE_TOLERANCE = "absolute_tolerance"
MAX_ITERATIONS = "max_iterations"

_TINY = 1e-300


# ---------- records ----------

@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    objective: float
    relative_change: float
    feasibility: Mapping[str, float]
    seed: int

    @property
    def max_feasibility(self) -> float:
        return max(self.feasibility.values(), default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iteration": self.iteration,
            "objective": self.objective,
            "relative_change": self.relative_change,
            "max_feasibility": self.max_feasibility,
            "seed": self.seed,
        }


def _json_float(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


@dataclass(frozen=True, eq=False)
class FitResult:
    decompositions: Dict[str, Decomposition]
    objective_trace: List[float]
    initial_objective: float
    feasibility: Dict[str, float]
    seed: int
    iterations: int
    termination_reason: str
    records: List[TraceRecord] = field(default_factory=list)
    delta: Optional[np.ndarray] = None
    all_objectives: Dict[int, Optional[float]] = field(default_factory=dict)

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready diagnostics (factors are written separately)."""
        return {
            "seed": self.seed,
            "iterations": self.iterations,
            "termination_reason": self.termination_reason,
            "objective": _json_float(self.final_objective),
            "initial_objective": _json_float(self.initial_objective),
            "feasibility": {k: _json_float(v) for k, v in self.feasibility.items()},
            "all_objectives": {str(s): _json_float(v) for s, v in self.all_objectives.items()},
        }


class StopDecision(NamedTuple):
    stop: bool
    reason: str = ""


# ---------- state ----------

@dataclass
class FitState:
    """Mutable iterates of one fit, keyed by dataset id then mode name."""
    modes: Dict[str, Dict[str, Any]]
    dictionary: Optional[DictionaryVariable] = None

    def factor(self, dataset_id: str, mode: str) -> Any:
        st = self.modes[dataset_id][mode]
        return st.factors if isinstance(st, Parafac2BState) else st.factor


def _random_factor(rng: np.random.Generator, rows: int, rank: int, nonneg: bool) -> np.ndarray:
    M = rng.uniform(size=(rows, rank)) if nonneg else rng.standard_normal((rows, rank))
    norms = np.linalg.norm(M, axis=0)
    return M / np.where(norms > 0, norms, 1.0)


def _check_start(ds: DatasetSpec, start: Decomposition) -> None:
    expected = {PARAFAC2: Parafac2Decomposition, MATRIX: MatrixDecomposition, CP: CpDecomposition}[ds.model]
    if not isinstance(start, expected):
        raise ValidationError(f"Initial value for {ds.id!r} must be a {expected.__name__}")
    if start.rank != ds.rank:
        raise ValidationError(f"Initial value for {ds.id!r} has rank {start.rank}, expected {ds.rank}")
    named = start.named_factors()
    for mode in ds.modes:
        mats = named[mode] if isinstance(named[mode], list) else [named[mode]]
        rows = tuple(m.shape[0] for m in mats)
        if rows != ds.mode_lengths(mode):
            raise ValidationError(
                f"Initial factor {ds.id}.{mode} has row count(s) {rows[:5]}, expected {ds.mode_lengths(mode)[:5]}"
            )


def initialize_state(
    problem: ProblemSpec,
    config: SolverConfig,
    rng: np.random.Generator,
    initial: Optional[Mapping[str, Decomposition]] = None,
) -> FitState:
    """
    Random (or given) factors, splits equal to the factors, zero duals.

    Random factors are uniform where the mode's regularizer implies
    non-negativity and standard normal otherwise, with unit-norm columns.
    """
    initial = initial or {}
    modes: Dict[str, Dict[str, Any]] = {}
    for ds in problem.datasets:
        start = initial.get(ds.id)
        if start is not None:
            _check_start(ds, start)
            named = start.named_factors()
        else:
            named = {}
            for mode in ds.modes:
                nonneg = ds.regularizer(mode).implies_nonnegativity
                mats = [_random_factor(rng, n, ds.rank, nonneg) for n in ds.mode_lengths(mode)]
                named[mode] = mats if (ds.model == PARAFAC2 and mode == "B") else mats[0]
        entry: Dict[str, Any] = {}
        for mode in ds.modes:
            if ds.model == PARAFAC2 and mode == "B":
                entry[mode] = Parafac2BState.from_factors(named[mode], config.parafac2_projection_iterations)
            else:
                entry[mode] = ModeState.from_factor(named[mode])
        modes[ds.id] = entry

    dictionary = None
    if problem.coupling is not None:
        coupling = problem.coupling
        first = {p.dataset: modes[p.dataset][problem.dataset(p.dataset).first_mode].factor for p in coupling.participants}
        delta = delta_update(coupling, first, {p.dataset: 1.0 for p in coupling.participants})
        duals = {p.dataset: np.zeros((delta.shape[0], p.width)) for p in coupling.participants}
        dictionary = DictionaryVariable(delta, duals)
    return FitState(modes, dictionary)


def decompositions(problem: ProblemSpec, state: FitState) -> Dict[str, Decomposition]:
    out: Dict[str, Decomposition] = {}
    for ds in problem.datasets:
        f = {mode: state.factor(ds.id, mode) for mode in ds.modes}
        if ds.model == PARAFAC2:
            out[ds.id] = Parafac2Decomposition(f["A"], tuple(f["B"]), f["C"])
        elif ds.model == MATRIX:
            out[ds.id] = MatrixDecomposition(f["E"], f["F"])
        else:
            out[ds.id] = CpDecomposition.from_factors(f["E"], f["F"], f["G"])
    return out


def split_variables(problem: ProblemSpec, state: FitState) -> Dict[str, Dict[str, Any]]:
    """Regularization splits Z per dataset and mode (a list of Z_k for PARAFAC2 B)."""
    out: Dict[str, Dict[str, Any]] = {}
    for ds in problem.datasets:
        out[ds.id] = {}
        for mode in ds.modes:
            st = state.modes[ds.id][mode]
            out[ds.id][mode] = st.splits if isinstance(st, Parafac2BState) else st.split
    return out


def reconstruct(dec: Decomposition) -> Any:
    if isinstance(dec, Parafac2Decomposition):
        return reconstruct_parafac2(dec)
    if isinstance(dec, CpDecomposition):
        return reconstruct_cp(dec)
    return dec.E @ dec.F.T


# ---------- objective, feasibility, stopping ----------

def objective(
    problem: ProblemSpec,
    decs: Mapping[str, Decomposition],
    splits: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> float:
    """
    sum_i w_i ||data_i - model_i||^2 plus every penalty.

    Penalties are evaluated at ``splits`` when given, otherwise at the factors.
    """
    total = 0.0
    for ds in problem.datasets:
        dec = decs[ds.id]
        total += ds.weight * squared_residual(ds.data, reconstruct(dec))
        named = splits[ds.id] if splits is not None else dec.named_factors()
        for mode in ds.modes:
            reg = ds.regularizers.get(mode)
            if reg is None:
                continue
            values = named[mode]
            if isinstance(values, (list, tuple)):
                total += sum(penalty_value(reg, v) for v in values)
            else:
                total += penalty_value(reg, values)
    return float(total)


def _relative(diff_sq: float, ref_sq: float) -> float:
    return float(np.sqrt(diff_sq) / max(np.sqrt(ref_sq), _TINY))


def feasibility(problem: ProblemSpec, state: FitState) -> Dict[str, float]:
    """
    Residuals checked by the stopping rule.

    Keys: ``coupling:<id>``, ``split:<id>:<mode>`` (relative), ``parafac2:<id>``
    (||B_k - P_k DeltaB|| relative to ||B_k||) and ``cross_product:<id>``
    (relative spread of B_k^T B_k).
    """
    out: Dict[str, float] = {}
    if problem.coupling is not None and state.dictionary is not None:
        for p in problem.coupling.participants:
            first = problem.dataset(p.dataset).first_mode
            out[f"coupling:{p.dataset}"] = coupling_residual(
                p, state.modes[p.dataset][first].factor, state.dictionary.delta
            )
    for ds in problem.datasets:
        for mode in ds.modes:
            st = state.modes[ds.id][mode]
            if isinstance(st, Parafac2BState):
                ref = sum(float(np.sum(b * b)) for b in st.factors)
                split_diff = sum(float(np.sum((b - z) ** 2)) for b, z in zip(st.factors, st.splits))
                pf2_diff = sum(float(np.sum((b - c) ** 2)) for b, c in zip(st.factors, st.constrained()))
                out[f"split:{ds.id}:{mode}"] = _relative(split_diff, ref)
                out[f"parafac2:{ds.id}"] = _relative(pf2_diff, ref)
                out[f"cross_product:{ds.id}"] = cross_product_spread(st.factors, relative=True)
            else:
                out[f"split:{ds.id}:{mode}"] = _relative(
                    float(np.sum((st.factor - st.split) ** 2)), float(np.sum(st.factor**2))
                )
    return out


def relative_change(trace: Sequence[float]) -> float:
    if len(trace) < 2:
        return float("inf")
    prev, cur = trace[-2], trace[-1]
    if prev == 0:
        return 0.0 if cur == 0 else float("inf")
    return abs(cur - prev) / abs(prev)


def stopping_check(trace: Sequence[float], feasibility_: Mapping[str, float], config: SolverConfig) -> StopDecision:
    """
    Stop when the objective is below the absolute tolerance, or when its
    relative change is below the relative tolerance and every feasibility
    residual is below the feasibility tolerance.
    """
    if len(trace) < 2:
        return StopDecision(False)
    if trace[-1] < config.absolute_tolerance:
        return StopDecision(True, ABSOLUTE_TOLERANCE)
    feasible = all(v < config.feasibility_tolerance for v in feasibility_.values())
    if relative_change(trace) < config.relative_tolerance and feasible:
        return StopDecision(True, CONVERGED)
    return StopDecision(False)


# ---------- one sweep ----------

def _first_mode_system(ds: DatasetSpec, state: FitState):
    w = ds.weight
    if ds.model == PARAFAC2:
        return admm.parafac2_first_mode_system(ds.data.slices, state.factor(ds.id, "B"), state.factor(ds.id, "C"), w)
    if ds.model == MATRIX:
        return admm.matrix_mode_system(ds.data, state.factor(ds.id, "F"), w, transpose=False)
    factors = [state.factor(ds.id, m) for m in ds.modes]
    return admm.cp_mode_system(ds.data.data, factors, 0, w)


def outer_iteration(problem: ProblemSpec, state: FitState, config: SolverConfig) -> None:
    inner = config.inner_admm_iterations
    coupling = problem.coupling

    coupled = set()
    if coupling is not None:
        coupled = {p.dataset for p in coupling.participants}
        states = {d: state.modes[d][problem.dataset(d).first_mode] for d in coupled}
        systems = {d: _first_mode_system(problem.dataset(d), state) for d in coupled}
        regs = {d: problem.dataset(d).regularizers.get(problem.dataset(d).first_mode) for d in coupled}
        admm.admm_coupled_first_mode(states, systems, regs, coupling, state.dictionary, inner)
    for ds in problem.datasets:
        if ds.id in coupled:
            continue
        gram, rhs = _first_mode_system(ds, state)
        admm.admm_uncoupled_matrix_mode(
            state.modes[ds.id][ds.first_mode], gram, rhs, ds.regularizers.get(ds.first_mode), inner
        )

    for ds in problem.datasets:
        if ds.model == PARAFAC2:
            admm.admm_bk_mode(
                state.modes[ds.id]["B"],
                ds.data.slices,
                state.factor(ds.id, "A"),
                state.factor(ds.id, "C"),
                ds.regularizers.get("B"),
                ds.weight,
                inner,
                config.parafac2_projection_iterations,
            )
    for ds in problem.datasets:
        if ds.model == PARAFAC2:
            admm.admm_c_mode(
                state.modes[ds.id]["C"],
                ds.data.slices,
                state.factor(ds.id, "A"),
                state.factor(ds.id, "B"),
                ds.regularizers.get("C"),
                ds.weight,
                inner,
            )

    for ds in problem.datasets:
        if ds.model == MATRIX:
            gram, rhs = admm.matrix_mode_system(ds.data, state.factor(ds.id, "E"), ds.weight, transpose=True)
            admm.admm_uncoupled_matrix_mode(state.modes[ds.id]["F"], gram, rhs, ds.regularizers.get("F"), inner)
        elif ds.model == CP:
            for n, mode in enumerate(ds.modes[1:], start=1):
                factors = [state.factor(ds.id, m) for m in ds.modes]
                gram, rhs = admm.cp_mode_system(ds.data.data, factors, n, ds.weight)
                admm.admm_uncoupled_matrix_mode(state.modes[ds.id][mode], gram, rhs, ds.regularizers.get(mode), inner)


# ---------- drivers ----------

ProgressCallback = Callable[[TraceRecord], None]


def fit(
    problem: ProblemSpec,
    config: Optional[SolverConfig] = None,
    seed: Optional[int] = None,
    progress: Optional[ProgressCallback] = None,
    initial: Optional[Mapping[str, Decomposition]] = None,
) -> FitResult:
    """
    Fit *problem* from one starting point.

    The run depends only on (problem, config, seed). Raises ``SolverAbort``
    when a mode system becomes singular or an iterate/objective is non-finite.
    """
    config = config or SolverConfig()
    seed = config.seed if seed is None else int(seed)
    rng = np.random.default_rng(seed)
    state = initialize_state(problem, config, rng, initial)
    initial_objective = objective(problem, decompositions(problem, state), split_variables(problem, state))

    trace: List[float] = []
    records: List[TraceRecord] = []
    feas: Dict[str, float] = {}
    reason = MAX_ITERATIONS
    iteration = 0
    for iteration in range(1, config.max_outer_iterations + 1):
        try:
            outer_iteration(problem, state, config)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise map_exception(exc) from exc
        value = objective(problem, decompositions(problem, state), split_variables(problem, state))
        if not np.isfinite(value):
            raise SolverAbort(f"Objective became non-finite at iteration {iteration} (seed {seed})")
        trace.append(value)
        feas = feasibility(problem, state)
        record = TraceRecord(iteration, value, relative_change(trace), feas, seed)
        records.append(record)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                "seed=%d it=%d f=%.10g rel=%.3g feas=%.3g",
                seed, iteration, value, record.relative_change, record.max_feasibility,
            )
        if progress is not None:
            progress(record)
        if iteration >= config.min_outer_iterations:
            decision = stopping_check(trace, feas, config)
            if decision.stop:
                reason = decision.reason
                break

    logger.info("Fit seed=%d stopped after %d iterations (%s), objective %.6g", seed, iteration, reason, trace[-1])
    delta = state.dictionary.delta.copy() if state.dictionary is not None else None
    return FitResult(
        decompositions=decompositions(problem, state),
        objective_trace=trace,
        initial_objective=initial_objective,
        feasibility=feas,
        seed=seed,
        iterations=iteration,
        termination_reason=reason,
        records=records,
        delta=delta,
        all_objectives={seed: trace[-1]},
    )


def multi_init_fit(
    problem: ProblemSpec,
    config: Optional[SolverConfig] = None,
    progress: Optional[ProgressCallback] = None,
) -> FitResult:
    """
    Run ``config.initializations`` fits with seeds seed, seed+1, ... and keep the
    one with the lowest final objective (ties go to the lower seed).

    With ``config.workers > 1`` the fits run on a thread pool; *progress* may
    then be called from several threads. Aborted fits are logged and skipped.
    """
    config = config or SolverConfig()
    seeds = [config.seed + i for i in range(config.initializations)]

    def run(seed: int):
        try:
            return fit(problem, config, seed=seed, progress=progress)
        except SolverAbort as exc:
            logger.warning("Initialization with seed %d aborted: %s", seed, exc)
            return exc

    if config.workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=min(config.workers, len(seeds))) as pool:
            outcomes = list(pool.map(run, seeds))
    else:
        outcomes = [run(s) for s in seeds]

    finals = {s: (o.final_objective if isinstance(o, FitResult) else None) for s, o in zip(seeds, outcomes)}
    results = [o for o in outcomes if isinstance(o, FitResult)]
    if not results:
        raise SolverAbort(f"All {len(seeds)} initializations aborted; last error: {outcomes[-1]}")
    best = min(results, key=lambda r: (r.final_objective, r.seed))
    logger.info(
        "Selected seed %d of %d initializations (objective %.6g)", best.seed, len(seeds), best.final_objective
    )
    return dataclasses.replace(best, all_objectives=finals)
