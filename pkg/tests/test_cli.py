"""
Tests for the cmtf command line and the experiment runner behind it.
"""

import csv
import json
import os
import re

import numpy as np
import pytest

from cmtf_fusion import __version__, app
from cmtf_fusion.core import storage
from cmtf_fusion.core.exceptions import ConfigError, SolverAbort
from cmtf_fusion.core.models import MatrixDecomposition, Parafac2Decomposition, RaggedTensor
from cmtf_fusion.experiments import runner, synthgen
from cmtf_fusion.experiments.runner import EXPERIMENTS, ExperimentOptions, replicate_seeds, run_experiment
from cmtf_fusion.solver.aoadmm import FitResult

QUICK = ["--noise", "0", "--replicates", "1", "--inits", "1", "--max-iter", "3"]


def _rows(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.reader(f))


class TestParser:
    def test_version(self, capsys):
        assert app.main(["--version"]) == 0
        assert "cmtf" in capsys.readouterr().out

    def test_version_matches_package_metadata(self, capsys):
        root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        with open(os.path.join(root, "pyproject.toml"), encoding="utf-8") as f:
            declared = re.search(r'^version = "([^"]+)"', f.read(), re.MULTILINE).group(1)
        assert declared == __version__ == "0.1.0"
        app.main(["--version"])
        assert __version__ in capsys.readouterr().out

    def test_missing_command(self):
        assert app.main([]) == 1

    def test_unknown_experiment(self):
        assert app.main(["experiment", "exp9"]) == 1

    @pytest.mark.parametrize("flag, value", [("--replicates", "0"), ("--noise", "-1"), ("--seed", "x")])
    def test_bad_values(self, flag, value):
        assert app.main(["experiment", "exp1", flag, value]) == 1

    def test_fit_needs_config(self):
        assert app.main(["fit", "--out", "somewhere"]) == 1

    def test_flag_defaults(self):
        args = app.build_parser().parse_args(["experiment", "exp2", "--no-coupling"])
        assert args.coupling is False
        assert args.ridge is None
        assert args.replicates == 20
        assert args.inits == 5


class TestExperimentCommand:
    """Tests for `cmtf experiment`."""

    def test_exp1_writes_report(self, tmp_path):
        out = str(tmp_path / "exp1")
        assert app.main(["-q", "experiment", "exp1", *QUICK, "--out", out]) == 0
        rows = _rows(os.path.join(out, "results.csv"))
        assert rows[0][:4] == ["condition", "noise", "replicate", "seed"]
        assert rows[0][-2:] == ["objective", "iterations"]
        assert [r[2] for r in rows[1:]] == ["0", "mean"]
        assert rows[1][0] == "coupled"
        with open(os.path.join(out, "summary.json"), encoding="utf-8") as f:
            summary = json.load(f)
        assert summary["experiment"] == "exp1"
        assert summary["replicates"][0]["termination_reason"] == "max_iterations"

    def test_results_are_reproducible(self, tmp_path):
        """Same seed and options give byte-identical results files."""
        for name in ("a", "b"):
            assert app.main(["-q", "experiment", "exp1", *QUICK, "--seed", "4", "--out", str(tmp_path / name)]) == 0
        first = (tmp_path / "a" / "results.csv").read_bytes()
        assert first == (tmp_path / "b" / "results.csv").read_bytes()

    def test_uncoupled_flag(self, tmp_path):
        out = str(tmp_path / "u")
        assert app.main(["-q", "experiment", "exp1", *QUICK, "--no-coupling", "--out", out]) == 0
        assert _rows(os.path.join(out, "results.csv"))[1][0] == "uncoupled"

    def test_dump_data_then_fit(self, tmp_path):
        """Dumped configs can be fitted directly with `cmtf fit`."""
        out = str(tmp_path / "exp1")
        assert app.main(["-q", "experiment", "exp1", *QUICK, "--dump-data", "--out", out]) == 0
        rep = os.path.join(out, "data", "noise_0", "rep_000")
        config = os.path.join(rep, "config_coupled.json")
        assert os.path.isfile(os.path.join(rep, "X", "manifest.json"))
        assert os.path.isfile(os.path.join(rep, "truth", "X_A.csv"))
        with open(config, encoding="utf-8") as f:
            assert [d["path"] for d in json.load(f)["datasets"]] == ["X", "Y.csv"]

        fit_out = str(tmp_path / "fit")
        assert app.main(["-q", "fit", "--config", config, "--out", fit_out, "--inits", "1"]) == 0
        for name in ("X_A.csv", "X_B_000.csv", "X_C.csv", "Y_E.csv", "Y_F.csv", "delta.csv"):
            assert os.path.isfile(os.path.join(fit_out, "factors", name))
        with open(os.path.join(fit_out, "diagnostics.json"), encoding="utf-8") as f:
            diagnostics = json.load(f)
        assert diagnostics["iterations"] == 3
        trace = _rows(os.path.join(fit_out, "trace.csv"))
        assert trace[0] == app.TRACE_COLUMNS
        assert len(trace) == 4


def _small_config(tmp_path, rank=2):
    rng = np.random.default_rng(0)
    storage.save_dataset(str(tmp_path / "X"), RaggedTensor(tuple(rng.uniform(size=(5, j)) for j in (3, 4, 3))))
    storage.save_dataset(str(tmp_path / "Y.csv"), rng.uniform(size=(5, 6)))
    document = {
        "datasets": [
            {"id": "X", "model": "parafac2", "path": "X", "rank": rank},
            {"id": "Y", "model": "matrix", "path": "Y.csv", "rank": rank},
        ],
        "coupling": {"participants": [{"dataset": "X"}, {"dataset": "Y"}], "delta_cols": rank},
        "solver": {"max_outer_iterations": 5, "initializations": 1},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    return str(path)


class TestFitCommand:
    """Tests for `cmtf fit` exit codes and error messages."""

    def test_fit_small_problem(self, tmp_path):
        config = _small_config(tmp_path)
        assert app.main(["-q", "fit", "--config", config, "--out", str(tmp_path / "out"), "--seed", "2"]) == 0
        with open(tmp_path / "out" / "diagnostics.json", encoding="utf-8") as f:
            diagnostics = json.load(f)
        assert diagnostics["seed"] == 2
        assert diagnostics["all_objectives"].keys() == {"2"}

    def test_missing_config(self, tmp_path, caplog):
        assert app.main(["fit", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
        assert "Config file not found" in caplog.text

    def test_invalid_json_reports_position(self, tmp_path, caplog):
        path = tmp_path / "config.json"
        path.write_text('{\n  "datasets": [,\n}', encoding="utf-8")
        assert app.main(["fit", "--config", str(path), "--out", str(tmp_path / "out")]) == 1
        assert "line 2" in caplog.text

    def test_load_config_error(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"a": }', encoding="utf-8")
        with pytest.raises(ConfigError, match="line 1 column 7"):
            app.load_config(str(path))

    def test_rank_above_slice_width(self, tmp_path, caplog):
        config = _small_config(tmp_path, rank=4)
        assert app.main(["fit", "--config", config, "--out", str(tmp_path / "out")]) == 1
        assert "exceeds the width" in caplog.text

    def test_solver_abort_exit_code(self, tmp_path, monkeypatch):
        def abort(problem, config):
            raise SolverAbort("Mode system is not positive definite")

        monkeypatch.setattr(app, "multi_init_fit", abort)
        assert app.main(["-q", "fit", "--config", _small_config(tmp_path), "--out", str(tmp_path / "out")]) == 2

    def test_interrupt_exit_code(self, tmp_path, monkeypatch):
        def interrupt(problem, config):
            raise KeyboardInterrupt

        monkeypatch.setattr(app, "multi_init_fit", interrupt)
        assert app.main(["-q", "fit", "--config", _small_config(tmp_path), "--out", str(tmp_path / "out")]) == 130


class TestRunner:
    """Tests for experiment options, conditions and seeding."""

    def test_exp2_default_grid(self):
        names = [c.name for c in EXPERIMENTS["exp2"].conditions(ExperimentOptions())]
        assert names == ["uncoupled", "coupled", "coupled_ridge"]

    def test_exp2_explicit_flags(self):
        [condition] = EXPERIMENTS["exp2"].conditions(ExperimentOptions(ridge=True))
        assert condition.name == "coupled_ridge"
        [condition] = EXPERIMENTS["exp2"].conditions(ExperimentOptions(coupling=False))
        assert condition.name == "uncoupled"

    def test_exp3_conditions(self):
        assert [c.name for c in EXPERIMENTS["exp3"].conditions(ExperimentOptions())] == [
            "smoothness",
            "no_smoothness",
        ]
        [condition] = EXPERIMENTS["exp3"].conditions(ExperimentOptions(smoothness=False))
        assert not condition.smoothness

    def test_replicate_seeds(self):
        """Seeds depend only on (seed, replicate, noise)."""
        rng_a, seed_a = replicate_seeds(0, 1, 0.5)
        rng_b, seed_b = replicate_seeds(0, 1, 0.5)
        assert seed_a == seed_b
        assert rng_a.random() == rng_b.random()
        assert replicate_seeds(0, 2, 0.5)[1] != seed_a

    @pytest.mark.parametrize("field, value", [("replicates", 0), ("inits", 0), ("workers", 0), ("noise", (-0.1,))])
    def test_invalid_options(self, field, value):
        with pytest.raises(ConfigError):
            ExperimentOptions(**{field: value})

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="exp9"):
            run_experiment("exp9", ExperimentOptions())

    def test_workers_do_not_change_rows(self):
        options = ExperimentOptions(noise=(0.0,), replicates=2, inits=1, max_iter=2)
        serial = run_experiment("exp1", options)
        threaded = run_experiment("exp1", ExperimentOptions(noise=(0.0,), replicates=2, inits=1, max_iter=2, workers=2))
        assert [(r.replicate, r.seed, r.objective) for r in serial.rows] == [
            (r.replicate, r.seed, r.objective) for r in threaded.rows
        ]

    def test_align_columns(self, rng):
        true = rng.standard_normal((10, 3))
        est = -2.0 * true[:, [2, 0, 1]]
        a, b = runner.align_columns(true, est)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_clustering_ignores_column_scale(self, rng):
        """Rescaling columns of the estimated A and E between modes leaves clustering accuracy at 100."""
        datasets, truth = synthgen.gen_experiment2(rng, 0.0)
        X, Y = truth.decompositions["X"], truth.decompositions["Y"]
        s = np.array([1.0, 1e-2, 1e3])
        estimate = FitResult(
            decompositions={
                "X": Parafac2Decomposition(X.A * s, X.B, X.C / s),
                "Y": MatrixDecomposition(Y.E * s, Y.F / s),
            },
            objective_trace=[0.0],
            initial_objective=0.0,
            feasibility={},
            seed=0,
            iterations=1,
            termination_reason="converged",
        )
        scores = EXPERIMENTS["exp2"].evaluate(datasets, truth, estimate)
        assert scores["cluster_acc_A"] == pytest.approx(100.0)
        assert scores["cluster_acc_E"] == pytest.approx(100.0)
        assert scores["fit_X"] == pytest.approx(100.0)
