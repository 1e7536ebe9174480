import json
from pathlib import Path

import pandas as pd
import pytest

from hypokinetic import harness
from hypokinetic.cli import main
from hypokinetic.config import ExperimentConfig
from hypokinetic.errors import ConfigError
from hypokinetic.estimates import EstimateReport, _row
from hypokinetic.harness import RunManifest, cmd_solve, cmd_sweep, cmd_verify, run_check


@pytest.fixture
def config(output_root):
    return ExperimentConfig().updated(corpus={"size": 2})


def _inventory(manifest):
    directory = Path(manifest.files[-1]).parent
    return {p.name for p in directory.iterdir()}, {Path(f).name for f in manifest.files}


class TestManifest:
    def test_stage_timing(self):
        manifest = RunManifest(command="verify", config_hash="abc")
        with manifest.stage("work"):
            pass
        assert manifest.stages["work"] >= 0

    def test_passed_needs_every_check(self):
        manifest = RunManifest(command="verify", config_hash="abc", checks={"a": True, "b": False})
        assert not manifest.passed

    def test_write(self, tmp_path):
        manifest = RunManifest(command="solve", config_hash="abc", checks={"solve": True})
        path = manifest.write(tmp_path)
        payload = json.loads(path.read_text())
        assert payload["passed"] is True
        assert payload["files"] == [str(path)]


class TestSolve:
    def test_constant_coefficient_against_oracle(self, config):
        manifest = cmd_solve(config)
        assert manifest.passed
        assert manifest.checks["oracle-agreement"]
        assert manifest.results["oracle_discrepancy"] <= 1e-2
        on_disk, listed = _inventory(manifest)
        assert on_disk == listed == {"trajectory.hypo", "final.hypo", "oracle.hypo", "solve.json", "manifest.json"}

    def test_bump_coefficient(self, config):
        manifest = cmd_solve(config.updated(model={"coefficient": "bump"}))
        assert manifest.checks == {"solve": True}
        assert manifest.results["final_norm"] < manifest.results["initial_norm"] * 1.5

    @pytest.mark.parametrize("T", [0.125, 0.25, 0.375])
    def test_short_horizons(self, config, T):
        manifest = cmd_solve(config.updated(solve={"T": T}))
        assert manifest.passed
        assert manifest.results["steps"] == round(T / 0.125)
        assert manifest.checks["oracle-agreement"]

    def test_zero_datum(self, config):
        manifest = cmd_solve(config.updated(solve={"initial": "zero"}))
        assert manifest.results["final_norm"] == 0.0
        assert manifest.passed


class TestVerify:
    @pytest.mark.parametrize("check", ["prop-bouchut", "step1", "thm1", "thm2", "split-ab", "balance", "step4", "ivp-term"])
    def test_catalogue_passes(self, config, check):
        assert run_check(config, check).passed

    def test_report_files(self, config):
        manifest = cmd_verify(config, "step1")
        assert manifest.checks == {"step1": True}
        on_disk, listed = _inventory(manifest)
        assert on_disk == listed == {"step1.jsonl", "step1.csv", "manifest.json"}

    def test_deterministic(self, config):
        first = Path(cmd_verify(config, "step2").files[0]).read_text()
        second = Path(cmd_verify(config, "step2").files[0]).read_text()
        assert first == second

    @pytest.mark.parametrize("check", ["step1", "thm1"])
    def test_refinement_stable_by_default(self, config, check):
        report = run_check(config, check)
        assert report.refinement_delta is not None
        assert report.refinement_delta < config.check.refinement_tol
        assert "refinement-unstable" not in report.flags

    def test_refinement_instability_fails(self, config, monkeypatch):
        def growing(config, name, grid):
            return EstimateReport.from_rows(name, [_row(grid.N_v / 64, 1.0, 0.0)])

        monkeypatch.setattr(harness, "_corpus_check", growing)
        report = run_check(config, "thm1")
        assert report.refinement_delta == pytest.approx(1.0)
        assert not report.passed
        assert "refinement-unstable" in report.flags

    def test_refinement_opt_out(self, config):
        report = run_check(config.updated(check={"refine": False}), "step1")
        assert report.refinement_delta is None

    @pytest.mark.parametrize("check", ["split-ab", "balance", "ivp-term"])
    def test_split_checks_need_positive_alpha(self, config, check):
        with pytest.raises(ConfigError, match="check.alpha"):
            run_check(config.updated(check={"alpha": 0.0}), check)

    def test_zero_alpha_averaging(self, config):
        report = run_check(config.updated(check={"alpha": 0.0}), "prop-bouchut")
        assert report.passed

    def test_unknown_check(self, config):
        with pytest.raises(ConfigError, match="catalogue"):
            cmd_verify(config, "step5")

    def test_commutator_without_modifier(self, config):
        report = run_check(config.updated(model={"beta": 0.25}), "lemma-q")
        assert report.passed
        assert report.constant == 0.0
        assert report.extra["kernel_discrepancy"] == 0.0

    def test_exponent_fit(self, config):
        small = config.updated(scaling={"count": 5, "N_v": 128, "N_t": 32})
        report = run_check(small, "exponent-fit")
        assert report.passed
        assert report.extra["target"] == pytest.approx(2 / 3)


class TestSweep:
    def test_beta_sweep(self, config):
        manifest = cmd_sweep(config, "step1", "beta", [0.5, 1.0])
        sweep = pd.read_csv(next(f for f in manifest.files if f.endswith("sweep.csv")))
        assert sweep["value"].tolist() == [0.5, 1.0]
        assert sweep["passed"].all()
        on_disk, listed = _inventory(manifest)
        assert on_disk == listed

    def test_empty_values(self, config):
        with pytest.raises(ConfigError):
            cmd_sweep(config, "step1", "beta", [])

    def test_unknown_parameter(self, config):
        with pytest.raises(ConfigError):
            cmd_sweep(config, "step1", "gamma", [1.0])


class TestCli:
    def test_defaults(self, capsys):
        assert main(["defaults"]) == 0
        assert json.loads(capsys.readouterr().out)["model"]["beta"] == 1.0

    def test_unknown_check_exit_code(self, output_root, capsys):
        assert main(["verify", "nonsense"]) == 2
        error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert error["exit_code"] == 2
        assert error["error"] == "ConfigError"

    def test_bad_config_file(self, output_root, tmp_path, capsys):
        path = tmp_path / "run.toml"
        path.write_text("[model]\nbeta = 3.0\n")
        assert main(["verify", "step1", "--config", str(path)]) == 2
        assert "model.beta" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])["message"]

    def test_verify_from_file(self, output_root, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[corpus]\nsize = 2\n")
        assert main(["verify", "step3", "--config", str(path), "--beta", "0.5"]) == 0

    def test_inspect(self, config, capsys):
        manifest = cmd_solve(config)
        capsys.readouterr()
        final = next(f for f in manifest.files if f.endswith("final.hypo"))
        assert main(["inspect", final]) == 0
        out = capsys.readouterr().out
        assert "N_v=64" in out
        assert "L2 norm=" in out
