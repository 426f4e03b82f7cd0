"""End-to-end tests of the command-line driver."""

import json
from pathlib import Path

import pytest

from lossconf.cli import main

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def run_cli(*argv):
    return main(list(argv))


def read(path: Path) -> str:
    return Path(path).read_text()


class TestBound:
    def test_writes_curve_and_sidecar(self, tmp_path):
        code = run_cli(
            "bound",
            "--out",
            str(tmp_path),
            "--set",
            "mean_photons=500",
            "--set",
            'tau0_grid={"start":0.9,"stop":1.0,"count":5}',
            "--set",
            'defective={"kind":"uniform","mean":0.95,"half_width":0.02}',
        )
        assert code == 0
        lines = read(tmp_path / "bound.csv").strip().splitlines()
        assert lines[0] == "tau0,C"
        assert len(lines) == 6
        sidecar = json.loads(read(tmp_path / "bound.config.json"))
        assert sidecar["command"] == "bound"
        assert sidecar["mean_photons"] == 500

    def test_zero_energy_constant_half(self, tmp_path):
        code = run_cli(
            "bound",
            "--out",
            str(tmp_path),
            "--set",
            "mean_photons=0",
            "--set",
            'tau0_grid=[0.8,0.9,1.0]',
        )
        assert code == 0
        rows = read(tmp_path / "bound.csv").strip().splitlines()[1:]
        assert all(row.split(",")[1] == "0.5" for row in rows)

    def test_default_config_curve_peaks_at_defect_mean(self, tmp_path):
        # the default bound grid brackets the defect mean at 0.96
        code = run_cli("bound", "--out", str(tmp_path))
        assert code == 0
        rows = [
            line.split(",")
            for line in read(tmp_path / "bound.csv").strip().splitlines()[1:]
        ]
        taus = [float(r[0]) for r in rows]
        values = [float(r[1]) for r in rows]
        assert taus[values.index(max(values))] == pytest.approx(0.96, abs=0.005)

    def test_empty_grid_is_usage_error(self, tmp_path, capsys):
        code = run_cli("bound", "--out", str(tmp_path), "--set", "tau0_grid=[]")
        assert code == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config-invalid"

    def test_invalid_distribution_is_error(self, tmp_path, capsys):
        code = run_cli(
            "bound",
            "--out",
            str(tmp_path),
            "--set",
            'defective={"kind":"uniform","mean":0.99,"half_width":0.05}',
        )
        assert code != 0


class TestSweep:
    def test_shipped_config_runs_scaled_down(self, tmp_path):
        code = run_cli(
            "sweep",
            "--config",
            str(CONFIG_DIR / "sweep_uniform_defect.json"),
            "--out",
            str(tmp_path),
            "--set",
            'tau0_grid={"start":0.94,"stop":0.98,"count":5}',
        )
        assert code == 0
        lines = read(tmp_path / "sweep_uniform_defect.csv").strip().splitlines()
        assert lines[0] == "tau0,C,Cpc,Q,Q_se,C_method,Cpc_method,Q_method"
        assert len(lines) == 6

    def test_plot_flag_writes_figure(self, tmp_path):
        code = run_cli(
            "sweep",
            "--out",
            str(tmp_path),
            "--plot",
            "--set",
            "mean_photons=2000",
            "--set",
            'tau0_grid={"start":0.95,"stop":0.97,"count":3}',
            "--set",
            'defective={"kind":"gaussian","mean":0.96,"sigma":0.005}',
        )
        assert code == 0
        assert (tmp_path / "sweep.png").exists()

    def test_unit_efficiency_override_improves_quantum(self, tmp_path):
        # the shipped lossy comparison, scaled down, with the ideal override
        common = [
            "sweep",
            "--config",
            str(CONFIG_DIR / "efficiency_comparison.json"),
            "--set",
            "mean_photons=60",
            "--set",
            'tau0_grid=[0.8]',
        ]
        assert run_cli(*common, "--out", str(tmp_path / "lossy")) == 0
        assert (
            run_cli(
                *common,
                "--out",
                str(tmp_path / "ideal"),
                "--set",
                "detection.eta_signal=1.0",
                "--set",
                "detection.eta_idler=1.0",
                "--set",
                "detection.dark_counts=0.0",
            )
            == 0
        )

        def q_of(path):
            row = read(path / "efficiency_comparison.csv").strip().splitlines()[1]
            return float(row.split(",")[3])

        assert q_of(tmp_path / "ideal") < q_of(tmp_path / "lossy")

    def test_rerun_from_sidecar_reproduces_bytes_across_threads(self, tmp_path):
        args = [
            "sweep",
            "--out",
            str(tmp_path / "a"),
            "--set",
            "mean_photons=1500",
            "--set",
            'tau0_grid={"start":0.93,"stop":0.99,"count":5}',
            "--set",
            'defective={"kind":"uniform","mean":0.96,"sigma":0.005}',
            "--set",
            "quantum_mode=monte-carlo",
            "--set",
            "mc_samples=20000",
            "--seed",
            "77",
        ]
        assert run_cli(*args) == 0
        reference_csv = read(tmp_path / "a" / "sweep.csv")
        reference_sidecar = read(tmp_path / "a" / "sweep.config.json")
        for threads in ("1", "4", "8"):
            assert (
                run_cli(
                    "sweep",
                    "--config",
                    str(tmp_path / "a" / "sweep.config.json"),
                    "--threads",
                    threads,
                )
                == 0
            )
            assert read(tmp_path / "a" / "sweep.csv") == reference_csv
            assert read(tmp_path / "a" / "sweep.config.json") == reference_sidecar


class TestCost:
    def test_outputs_and_ordering(self, tmp_path):
        code = run_cli(
            "cost",
            "--config",
            str(CONFIG_DIR / "cost_bias_study.json"),
            "--out",
            str(tmp_path),
            "--set",
            "mean_photons=300",
            "--set",
            'photon_grid={"start":200,"stop":400,"count":2}',
            "--set",
            'weight_grid=[0.25,0.5]',
        )
        assert code == 0
        report = json.loads(read(tmp_path / "cost_bias_study.json"))
        assert report["quantum"]["cost_opt"] <= report["classical"]["cost_opt"] + 1e-12
        curves = read(tmp_path / "cost_bias_study_cost_vs_bias.csv").splitlines()
        assert curves[0] == "bias,cla_cost,qua_cost"
        assert len(curves) == 202

    def test_half_weight_reports_near_zero_bias(self, tmp_path):
        code = run_cli(
            "cost",
            "--out",
            str(tmp_path),
            "--set",
            "mean_photons=300",
            "--set",
            "false_negative_weight=0.5",
            "--set",
            'photon_grid=[300]',
            "--set",
            'weight_grid=[0.5]',
        )
        assert code == 0
        report = json.loads(read(tmp_path / "cost.json"))
        assert abs(report["classical"]["bias_opt"]) <= 0.015
        assert abs(report["quantum"]["bias_opt"]) <= 0.015

    def test_degenerate_bias_grid_advisory(self, tmp_path):
        code = run_cli(
            "cost",
            "--out",
            str(tmp_path),
            "--set",
            "mean_photons=200",
            "--set",
            'photon_grid=[200]',
            "--set",
            'weight_grid=[0.5]',
            "--set",
            'bias_grid=[0.0]',
        )
        # a width-1 bias grid cannot be optimized: advisory, not an error
        assert code == 0
        report = json.loads(read(tmp_path / "cost.json"))
        assert report["classical"]["advisory"] == "degenerate-bias-grid"


class TestSimulate:
    def test_seeded_rerun_byte_identical(self, tmp_path):
        base_args = [
            "simulate",
            "--config",
            str(CONFIG_DIR / "simulate_demo.json"),
            "--set",
            "samples=5000",
        ]
        assert run_cli(*base_args, "--out", str(tmp_path / "a")) == 0
        assert run_cli(*base_args, "--out", str(tmp_path / "b")) == 0
        assert read(tmp_path / "a" / "simulate_demo.json") == read(
            tmp_path / "b" / "simulate_demo.json"
        )

    def test_save_records(self, tmp_path):
        code = run_cli(
            "simulate",
            "--out",
            str(tmp_path),
            "--set",
            "samples=1200",
            "--set",
            "save_records=true",
            "--set",
            'probe={"kind":"tmsv","mean_pairs":20}',
        )
        assert code == 0
        records = read(tmp_path / "simulate_reference_records.csv").splitlines()
        assert records[0] == "n_s,n_i,tau_true"
        assert len(records) == 1201


class TestReweight:
    def test_shipped_demo_reaches_reported_similarity(self, tmp_path):
        code = run_cli(
            "reweight",
            "--config",
            str(CONFIG_DIR / "reweight_demo.json"),
            "--out",
            str(tmp_path),
            "--plot",
        )
        assert code == 0
        report = json.loads(read(tmp_path / "reweight_demo.json"))
        assert report["T_star"] >= 0.99
        assert report["accepted"] is True
        assert (tmp_path / "reweight_demo.png").exists()
        weights = read(tmp_path / "reweight_demo_weights.csv").splitlines()
        assert weights[0] == "bin_lo,bin_hi,weight"

    def test_csv_dataset_round_trip(self, tmp_path):
        from lossconf.distributions import Uniform
        from lossconf.photon_statistics import ClassicalPoisson
        from lossconf.reweighting import synthesize_dataset

        ds = synthesize_dataset(
            Uniform(center=0.6, half_width=0.1), 20, 50, ClassicalPoisson(5.0), seed=3
        )
        csv_path = tmp_path / "data.csv"
        ds.to_csv(csv_path)
        code = run_cli(
            "reweight",
            "--out",
            str(tmp_path),
            "--set",
            f'dataset={{"csv":"{csv_path}"}}',
            "--set",
            'target={"kind":"uniform","mean":0.6,"half_width":0.08}',
            "--set",
            "sample_budget=400",
            "--set",
            "threshold=0.5",
        )
        assert code == 0
        report = json.loads(read(tmp_path / "reweight.json"))
        assert 0.0 <= report["T_star"] <= 1.0

    def test_infeasible_budget_fails_cleanly(self, tmp_path, capsys):
        code = run_cli(
            "reweight",
            "--out",
            str(tmp_path),
            "--set",
            'dataset.synthetic.n_values=5',
            "--set",
            'dataset.synthetic.frames_per_value=10',
            "--set",
            "sample_budget=1000",
        )
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "budget-infeasible"


class TestConfigHandling:
    def test_env_var_default_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LOSSCONF_OUTDIR", str(tmp_path / "envout"))
        code = run_cli(
            "bound",
            "--set",
            "mean_photons=100",
            "--set",
            'tau0_grid=[0.9]',
            "--set",
            'defective={"kind":"delta","tau0":0.95}',
        )
        assert code == 0
        assert (tmp_path / "envout" / "bound.csv").exists()

    def test_bad_override_is_usage_error(self, tmp_path, capsys):
        code = run_cli("bound", "--out", str(tmp_path), "--set", "oops")
        assert code == 2

    def test_missing_config_file(self, tmp_path, capsys):
        code = run_cli("bound", "--config", str(tmp_path / "nope.json"))
        assert code == 2
