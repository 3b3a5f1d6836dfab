"""
Replicated simulation experiments: generate data, fit, score, aggregate, write reports.

Output directory layout::

    results.csv          one row per (condition, noise, replicate) plus a "mean" row per group
    summary.json         options, group means and wall times
    components_*.csv     aligned true/recovered components of replicate 0 (exp2, exp3)
    data/...             datasets, ground truth and fit configs (with dump_data)

``results.csv`` holds no timing so that identical seeds and options give
byte-identical files.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import __version__
from ..core import storage
from ..core.coupling import CouplingSpec
from ..core.exceptions import ConfigError, ValidationError
from ..core.metrics import clustering_accuracy, fit_percentage, fms, fms_match, kmeans
from ..core.models import Parafac2Decomposition, RaggedTensor
from ..core.prox import Regularizer
from ..solver.aoadmm import FitResult, multi_init_fit, reconstruct
from ..solver.config import SolverConfig
from ..solver.problem import CP, MATRIX, PARAFAC2, DatasetSpec, ProblemSpec
from . import synthgen
from .synthgen import GroundTruth

logger = logging.getLogger(__name__)

WEIGHT = 0.5
RIDGE_PENALTY = 1e-4
SMOOTHNESS_STRENGTH = 1.0
CLUSTER_COUNT = 4
# Slices written to the component CSVs.
COMPONENT_SLICE_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ExperimentOptions:
    noise: Optional[Tuple[float, ...]] = None
    replicates: int = 20
    inits: int = 5
    seed: int = 0
    max_iter: Optional[int] = None
    workers: int = 1
    dump_data: bool = False
    coupling: Optional[bool] = None
    ridge: Optional[bool] = None
    smoothness: Optional[bool] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"--replicates must be positive, got {self.replicates}")
        if self.inits < 1:
            raise ConfigError(f"--inits must be positive, got {self.inits}")
        if self.workers < 1:
            raise ConfigError(f"--workers must be positive, got {self.workers}")
        if self.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {self.seed}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ConfigError(f"--max-iter must be positive, got {self.max_iter}")
        if self.noise is not None and any(n < 0 for n in self.noise):
            raise ConfigError(f"--noise levels must be non-negative, got {list(self.noise)}")


@dataclass(frozen=True)
class Condition:
    name: str
    coupled: bool = True
    ridge: bool = False
    smoothness: bool = False


@dataclass
class ReplicateRow:
    condition: str
    noise: float
    replicate: int
    seed: int
    metrics: Dict[str, float]
    objective: float
    iterations: int
    termination_reason: str
    wall_time: float = 0.0


@dataclass(frozen=True)
class Experiment:
    name: str
    generate: Callable[[np.random.Generator, float], Tuple[Dict[str, Any], GroundTruth]]
    default_noise: Tuple[float, ...]
    metric_names: Tuple[str, ...]
    conditions: Callable[[ExperimentOptions], List[Condition]]
    build_problem: Callable[[Dict[str, Any], Condition], ProblemSpec]
    evaluate: Callable[[Dict[str, Any], GroundTruth, FitResult], Dict[str, float]]
    component_modes: Tuple[str, ...] = ()


# ---------- problem builders ----------

def _parafac2(data: Any, regs: Dict[str, Regularizer]) -> DatasetSpec:
    return DatasetSpec("X", PARAFAC2, data, synthgen.RANK, WEIGHT, regs)


def _exp1_problem(datasets: Dict[str, Any], condition: Condition) -> ProblemSpec:
    nn = Regularizer.non_negativity()
    X = _parafac2(datasets["X"], {"A": nn, "B": nn, "C": nn})
    Y = DatasetSpec("Y", MATRIX, datasets["Y"], synthgen.RANK, WEIGHT, {"E": nn, "F": nn})
    coupling = CouplingSpec.exact(["X", "Y"], synthgen.RANK) if condition.coupled else None
    return ProblemSpec((X, Y), coupling)


def _exp2_problem(datasets: Dict[str, Any], condition: Condition) -> ProblemSpec:
    if condition.ridge:
        ridge = Regularizer.ridge(RIDGE_PENALTY)
        ridge_nn = Regularizer.ridge(RIDGE_PENALTY, nonneg=True)
        x_regs = {"A": ridge, "B": ridge, "C": ridge_nn}
        y_regs = {"E": ridge, "F": ridge_nn}
    else:
        x_regs = {"C": Regularizer.non_negativity()}
        y_regs = {"F": Regularizer.non_negativity()}
    X = _parafac2(datasets["X"], x_regs)
    Y = DatasetSpec("Y", MATRIX, datasets["Y"], synthgen.RANK, WEIGHT, y_regs)
    coupling = CouplingSpec.exact(["X", "Y"], synthgen.RANK) if condition.coupled else None
    return ProblemSpec((X, Y), coupling)


def _exp3_problem(datasets: Dict[str, Any], condition: Condition) -> ProblemSpec:
    x_regs = {"A": Regularizer.unit_ball(), "C": Regularizer.nonneg_unit_ball()}
    if condition.smoothness:
        x_regs["B"] = Regularizer.smoothness(SMOOTHNESS_STRENGTH)
    X = _parafac2(datasets["X"], x_regs)
    Y = DatasetSpec("Y", CP, datasets["Y"], synthgen.RANK, WEIGHT, {"E": Regularizer.unit_ball()})
    coupling = None
    if condition.coupled:
        coupling = CouplingSpec.column_selection(
            {"X": synthgen.EXP3_X_COLUMNS, "Y": synthgen.EXP3_Y_COLUMNS}, synthgen.EXP3_DELTA_COLS
        )
    return ProblemSpec((X, Y), coupling)


# ---------- conditions ----------

def _exp1_conditions(options: ExperimentOptions) -> List[Condition]:
    coupled = True if options.coupling is None else options.coupling
    return [Condition("coupled" if coupled else "uncoupled", coupled=coupled)]


def _exp2_conditions(options: ExperimentOptions) -> List[Condition]:
    if options.coupling is None and options.ridge is None:
        return [
            Condition("uncoupled", coupled=False),
            Condition("coupled", coupled=True),
            Condition("coupled_ridge", coupled=True, ridge=True),
        ]
    coupled = True if options.coupling is None else options.coupling
    ridge = bool(options.ridge)
    name = ("coupled" if coupled else "uncoupled") + ("_ridge" if ridge else "")
    return [Condition(name, coupled=coupled, ridge=ridge)]


def _exp3_conditions(options: ExperimentOptions) -> List[Condition]:
    coupled = True if options.coupling is None else options.coupling
    if options.smoothness is None:
        return [
            Condition("smoothness", coupled=coupled, smoothness=True),
            Condition("no_smoothness", coupled=coupled, smoothness=False),
        ]
    name = "smoothness" if options.smoothness else "no_smoothness"
    return [Condition(name, coupled=coupled, smoothness=options.smoothness)]


# ---------- evaluation ----------

def _unit_columns(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=0)
    return M / np.where(norms > 0, norms, 1.0)


def _safe_fms(true: np.ndarray, est: np.ndarray) -> float:
    try:
        return fms(true, est)
    except ValidationError as exc:
        logger.warning("FMS undefined: %s", exc)
        return float("nan")


def _fits(datasets: Dict[str, Any], result: FitResult) -> Dict[str, float]:
    return {
        f"fit_{i}": fit_percentage(datasets[i], reconstruct(result.decompositions[i])) for i in ("X", "Y")
    }


def _factor_scores(truth: GroundTruth, result: FitResult, modes: Dict[str, Sequence[str]]) -> Dict[str, float]:
    out = {}
    for dataset_id, names in modes.items():
        true_dec = truth.decompositions[dataset_id]
        est_dec = result.decompositions[dataset_id]
        for mode in names:
            if mode == "B":
                out["fms_B"] = _safe_fms(true_dec.stacked_B(), est_dec.stacked_B())
            else:
                out[f"fms_{mode}"] = _safe_fms(getattr(true_dec, mode), getattr(est_dec, mode))
    return out


def _exp1_evaluate(datasets, truth, result) -> Dict[str, float]:
    scores = _fits(datasets, result)
    scores.update(_factor_scores(truth, result, {"X": ("A", "B", "C"), "Y": ("E", "F")}))
    return scores


def _exp2_evaluate(datasets, truth, result) -> Dict[str, float]:
    scores = _fits(datasets, result)
    A_est = result.decompositions["X"].A
    scores["fms_A_noisy"] = _safe_fms(truth.A_noisy, A_est)
    scores["fms_A_clean"] = _safe_fms(truth.A_clean, A_est)
    scores.update(_factor_scores(truth, result, {"X": ("B", "C"), "Y": ("E", "F")}))
    for dataset_id, mode in (("X", "A"), ("Y", "E")):
        # k-means on unit-norm columns; the column scale is not identifiable
        rows = _unit_columns(getattr(result.decompositions[dataset_id], mode))
        labels = kmeans(rows, CLUSTER_COUNT, rng=result.seed)
        scores[f"cluster_acc_{mode}"] = clustering_accuracy(truth.labels, labels)
    return scores


def _exp3_evaluate(datasets, truth, result) -> Dict[str, float]:
    scores = _fits(datasets, result)
    scores.update(_factor_scores(truth, result, {"X": ("A", "B", "C"), "Y": ("E", "F", "G")}))
    return scores


EXPERIMENTS: Dict[str, Experiment] = {
    "exp1": Experiment(
        "exp1",
        synthgen.gen_experiment1,
        (0.0, 0.2, 0.5),
        ("fit_X", "fit_Y", "fms_A", "fms_B", "fms_C", "fms_E", "fms_F"),
        _exp1_conditions,
        _exp1_problem,
        _exp1_evaluate,
    ),
    "exp2": Experiment(
        "exp2",
        synthgen.gen_experiment2,
        (0.0, 0.5, 1.0),
        (
            "fit_X", "fit_Y", "fms_A_noisy", "fms_A_clean", "fms_B", "fms_C", "fms_E", "fms_F",
            "cluster_acc_A", "cluster_acc_E",
        ),
        _exp2_conditions,
        _exp2_problem,
        _exp2_evaluate,
        component_modes=("B", "C"),
    ),
    "exp3": Experiment(
        "exp3",
        synthgen.gen_experiment3,
        (synthgen.EXP3_NOISE,),
        ("fit_X", "fit_Y", "fms_A", "fms_B", "fms_C", "fms_E", "fms_F", "fms_G"),
        _exp3_conditions,
        _exp3_problem,
        _exp3_evaluate,
        component_modes=("B",),
    ),
}


# ---------- components for plotting ----------

def align_columns(true: np.ndarray, est: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-norm columns of *true* and of *est* permuted and sign-flipped to match them."""
    match = fms_match(true, est)
    est = est[:, list(match.permutation)]
    signs = np.sign(np.sum(true * est, axis=0))
    signs[signs == 0] = 1.0
    est = est * signs
    return _unit_columns(true), _unit_columns(est)


def _component_rows(
    condition: str, noise: float, replicate: int, truth: Parafac2Decomposition, est: Parafac2Decomposition, mode: str
) -> List[List[Any]]:
    rows: List[List[Any]] = []
    K = truth.K
    slices = sorted({int(round(f * (K - 1))) for f in COMPONENT_SLICE_FRACTIONS})
    if mode == "B":
        sizes = [b.shape[0] for b in truth.B]
        true_all, est_all = align_columns(truth.stacked_B(), est.stacked_B())
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for source, stacked in (("true", true_all), ("estimated", est_all)):
            for k in slices:
                block = stacked[offsets[k] : offsets[k + 1]]
                for index, values in enumerate(block):
                    for r, v in enumerate(values):
                        rows.append([condition, noise, replicate, source, k, index, r, repr(float(v))])
    else:
        true_C, est_C = align_columns(truth.C, est.C)
        for source, M in (("true", true_C), ("estimated", est_C)):
            for k, values in enumerate(M):
                for r, v in enumerate(values):
                    rows.append([condition, noise, replicate, source, k, r, repr(float(v))])
    return rows


COMPONENT_HEADERS = {
    "B": ["condition", "noise", "replicate", "source", "slice", "index", "component", "value"],
    "C": ["condition", "noise", "replicate", "source", "slice", "component", "value"],
}


# ---------- report ----------

@dataclass
class ExperimentReport:
    name: str
    options: ExperimentOptions
    metric_names: Tuple[str, ...]
    rows: List[ReplicateRow] = field(default_factory=list)
    components: Dict[str, List[List[Any]]] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def columns(self) -> List[str]:
        return ["condition", "noise", "replicate", "seed", *self.metric_names, "objective", "iterations"]

    def groups(self) -> List[Tuple[str, float]]:
        seen: List[Tuple[str, float]] = []
        for row in self.rows:
            key = (row.condition, row.noise)
            if key not in seen:
                seen.append(key)
        return seen

    def means(self) -> Dict[Tuple[str, float], Dict[str, float]]:
        out = {}
        for key in self.groups():
            members = [r for r in self.rows if (r.condition, r.noise) == key]
            avg = {m: float(np.mean([r.metrics[m] for r in members])) for m in self.metric_names}
            avg["objective"] = float(np.mean([r.objective for r in members]))
            avg["iterations"] = float(np.mean([r.iterations for r in members]))
            out[key] = avg
        return out

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        means = self.means()
        with open(os.path.join(out_dir, "results.csv"), "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self.columns)
            for key in self.groups():
                for row in (r for r in self.rows if (r.condition, r.noise) == key):
                    writer.writerow(
                        [row.condition, repr(row.noise), row.replicate, row.seed]
                        + [repr(float(row.metrics[m])) for m in self.metric_names]
                        + [repr(float(row.objective)), row.iterations]
                    )
                avg = means[key]
                writer.writerow(
                    [key[0], repr(key[1]), "mean", ""]
                    + [repr(avg[m]) for m in self.metric_names]
                    + [repr(avg["objective"]), repr(avg["iterations"])]
                )
        for mode, rows in self.components.items():
            with open(os.path.join(out_dir, f"components_{mode}.csv"), "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(COMPONENT_HEADERS[mode])
                writer.writerows(rows)
        summary = {
            "experiment": self.name,
            "version": __version__,
            "options": asdict(self.options),
            "wall_time_seconds": self.wall_time,
            "groups": [
                {"condition": c, "noise": n, "mean": {k: (v if np.isfinite(v) else None) for k, v in means[(c, n)].items()}}
                for c, n in self.groups()
            ],
            "replicates": [
                {
                    "condition": r.condition,
                    "noise": r.noise,
                    "replicate": r.replicate,
                    "seed": r.seed,
                    "termination_reason": r.termination_reason,
                    "wall_time_seconds": r.wall_time,
                }
                for r in self.rows
            ],
        }
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2)
            f.write("\n")
        logger.info("Wrote %s report to %s", self.name, out_dir)


# ---------- running ----------

def replicate_seeds(seed: int, replicate: int, noise: float) -> Tuple[np.random.Generator, int]:
    """Data generator and fit seed for one replicate; independent of the noise grid and worker count."""
    root = np.random.SeedSequence([seed, replicate, int(round(noise * 1000))])
    data_ss, fit_ss = root.spawn(2)
    return np.random.default_rng(data_ss), int(fit_ss.generate_state(1)[0])


def _noise_tag(noise: float) -> str:
    return f"noise_{noise:g}"


def _dump(
    directory: str,
    experiment: Experiment,
    datasets: Dict[str, Any],
    truth: GroundTruth,
    conditions: Sequence[Condition],
    solver: SolverConfig,
) -> None:
    paths = {}
    for dataset_id, data in datasets.items():
        suffix = ".csv" if not isinstance(data, RaggedTensor) and np.ndim(data) == 2 else ""
        paths[dataset_id] = os.path.join(directory, dataset_id + suffix)
        storage.save_dataset(paths[dataset_id], data)
    for dataset_id, dec in truth.decompositions.items():
        storage.save_factors(os.path.join(directory, "truth"), dataset_id, dec)
    if truth.labels is not None:
        storage.write_csv_matrix(os.path.join(directory, "truth", "labels.csv"), truth.labels, header=["label"])
    if truth.A_clean is not None:
        storage.write_csv_matrix(os.path.join(directory, "truth", "A_clean.csv"), truth.A_clean)
    if truth.delta is not None:
        storage.write_csv_matrix(os.path.join(directory, "truth", "delta.csv"), truth.delta)
    for condition in conditions:
        config_path = os.path.join(directory, f"config_{condition.name}.json")
        document = experiment.build_problem(datasets, condition).to_dict(paths, config_path)
        document["solver"] = solver.to_dict()
        with open(config_path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2)
            f.write("\n")


def _run_job(
    experiment: Experiment,
    options: ExperimentOptions,
    conditions: Sequence[Condition],
    noise: float,
    replicate: int,
    out_dir: Optional[str],
) -> Tuple[List[ReplicateRow], Dict[str, List[List[Any]]]]:
    rng, fit_seed = replicate_seeds(options.seed, replicate, noise)
    datasets, truth = experiment.generate(rng, noise)
    solver = SolverConfig(initializations=options.inits, seed=fit_seed).replace(max_outer_iterations=options.max_iter)
    if options.dump_data and out_dir:
        _dump(
            os.path.join(out_dir, "data", _noise_tag(noise), f"rep_{replicate:03d}"),
            experiment, datasets, truth, conditions, solver,
        )
    rows: List[ReplicateRow] = []
    components: Dict[str, List[List[Any]]] = {m: [] for m in experiment.component_modes}
    for condition in conditions:
        started = time.perf_counter()
        problem = experiment.build_problem(datasets, condition)
        result = multi_init_fit(problem, solver)
        metrics = experiment.evaluate(datasets, truth, result)
        rows.append(
            ReplicateRow(
                condition.name, noise, replicate, result.seed, metrics,
                result.final_objective, result.iterations, result.termination_reason,
                time.perf_counter() - started,
            )
        )
        logger.info(
            "%s %s noise=%g replicate=%d: %s",
            experiment.name, condition.name, noise, replicate,
            ", ".join(f"{k}={v:.4g}" for k, v in metrics.items()),
        )
        if replicate == 0:
            for mode in experiment.component_modes:
                components[mode].extend(
                    _component_rows(condition.name, noise, replicate, truth.decompositions["X"], result.decompositions["X"], mode)
                )
    return rows, components


def run_experiment(name: str, options: ExperimentOptions, out_dir: Optional[str] = None) -> ExperimentReport:
    """
    Run every (noise, replicate) job of experiment *name* and collect a report.

    Jobs run on ``options.workers`` threads; rows are gathered in job order so
    the report does not depend on scheduling. The report is written to
    *out_dir* when given.
    """
    if name not in EXPERIMENTS:
        raise ConfigError(f"Unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
    experiment = EXPERIMENTS[name]
    conditions = experiment.conditions(options)
    noise_levels = tuple(options.noise) if options.noise else experiment.default_noise
    jobs = [(noise, r) for noise in noise_levels for r in range(options.replicates)]
    logger.info(
        "Running %s: %d noise level(s) x %d replicate(s) x %d condition(s), %d initialization(s) each",
        name, len(noise_levels), options.replicates, len(conditions), options.inits,
    )
    started = time.perf_counter()

    def run(job):
        return _run_job(experiment, options, conditions, job[0], job[1], out_dir)

    if options.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=min(options.workers, len(jobs))) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]

    report = ExperimentReport(name, options, experiment.metric_names)
    if experiment.component_modes:
        report.components = {m: [] for m in experiment.component_modes}
    for rows, components in outcomes:
        report.rows.extend(rows)
        for mode, comp_rows in components.items():
            report.components[mode].extend(comp_rows)
    report.wall_time = time.perf_counter() - started
    if out_dir:
        report.write(out_dir)
    return report
