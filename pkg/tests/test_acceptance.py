"""
Experiment-level recovery checks on the full simulation sizes.

These take minutes. Run with:
    RUN_SLOW_TESTS=1 pytest tests/test_acceptance.py -v
"""

import numpy as np
import pytest

from cmtf_fusion.core.metrics import fit_percentage
from cmtf_fusion.core.tensor_ops import reconstruct_parafac2
from cmtf_fusion.experiments.runner import ExperimentOptions, run_experiment
from cmtf_fusion.solver.aoadmm import multi_init_fit, reconstruct
from cmtf_fusion.solver.config import SolverConfig
from cmtf_fusion.solver.problem import PARAFAC2, DatasetSpec, ProblemSpec

from conftest import make_parafac2_truth

pytestmark = pytest.mark.slow


class TestExperiment1:
    def test_noiseless_recovery(self):
        report = run_experiment("exp1", ExperimentOptions(noise=(0.0,), replicates=5, inits=3))
        avg = report.means()[("coupled", 0.0)]
        assert avg["fit_X"] >= 99.9
        assert avg["fit_Y"] >= 99.9
        for mode in ("A", "B", "C", "E", "F"):
            assert avg[f"fms_{mode}"] >= 0.999

    def test_moderate_noise(self):
        report = run_experiment("exp1", ExperimentOptions(noise=(0.2,), replicates=5, inits=3))
        avg = report.means()[("coupled", 0.2)]
        assert 93.0 <= avg["fit_X"] <= 99.0
        for mode in ("A", "B", "C", "E", "F"):
            assert avg[f"fms_{mode}"] >= 0.95

    def test_high_noise(self):
        report = run_experiment("exp1", ExperimentOptions(noise=(0.5,), replicates=5, inits=3))
        avg = report.means()[("coupled", 0.5)]
        for mode in ("A", "B", "C", "E", "F"):
            assert avg[f"fms_{mode}"] >= 0.85


class TestExperiment2:
    def test_coupling_helps_clustering(self):
        report = run_experiment("exp2", ExperimentOptions(noise=(0.0, 1.0), replicates=5, inits=3))
        avg = report.means()
        uncoupled, coupled, ridge = (avg[(c, 1.0)] for c in ("uncoupled", "coupled", "coupled_ridge"))
        assert coupled["cluster_acc_A"] - uncoupled["cluster_acc_A"] >= 10.0
        assert ridge["cluster_acc_A"] >= 95.0
        assert coupled["fms_A_clean"] - uncoupled["fms_A_clean"] >= 0.1


class TestExperiment3:
    def test_smoothness_recovers_components(self):
        report = run_experiment("exp3", ExperimentOptions(replicates=3, inits=3))
        avg = report.means()
        smooth = avg[("smoothness", 0.5)]
        rough = avg[("no_smoothness", 0.5)]
        assert smooth["fms_B"] >= 0.97
        for mode in ("A", "C", "E", "F", "G"):
            assert smooth[f"fms_{mode}"] >= 0.99
        assert rough["fms_B"] < smooth["fms_B"]


def test_uncoupled_noiseless_parafac2_fit():
    """An unregularized PARAFAC2 fit of exact data explains at least 99.9% of it."""
    rng = np.random.default_rng(11)
    truth = make_parafac2_truth(rng, I=10, J=(8, 9, 8, 10, 9, 8), R=3)
    data = reconstruct_parafac2(truth)
    problem = ProblemSpec((DatasetSpec("X", PARAFAC2, data, 3),))
    result = multi_init_fit(problem, SolverConfig(initializations=3, max_outer_iterations=5000))
    assert fit_percentage(data, reconstruct(result.decompositions["X"])) >= 99.9
