import json
import math

import pytest

import barw.cli as cli
from barw import (
    ModelParams,
    SolverError,
    TruncationError,
    equilibrium,
    gw_extinction_prob,
    hitting_profile,
    threshold_u,
)
from barw.cli import ExperimentConfig, cache_lookup, cache_path, cache_store, run_experiment


def run(argv):
    return cli.main(argv)


class TestProfileExperiment:
    def test_u_one_single_row(self, tmp_path):
        out = tmp_path / "out"
        assert run(["profile", "--lambda", "2", "--n", "10", "--u", "1", "--out", str(out)]) == 0
        lines = (out / "phi.csv").read_text().splitlines()
        assert lines == ["x,log_phi_natural,phi_if_representable", "0,0,1"]

    def test_row_count_matches_u(self, tmp_path):
        out = tmp_path / "out"
        assert (
            run(["profile", "--lambda", "2", "--n", "50", "--u", "10", "--out", str(out)]) == 0
        )
        lines = (out / "phi.csv").read_text().splitlines()
        assert len(lines) == 11

    def test_mode_low_resolution(self, tmp_path):
        out = tmp_path / "out"
        code = run(
            ["profile", "--lambda", "2", "--n", "100", "--mode", "low",
             "--epsilon", "0.05", "--out", str(out)]
        )
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["constants"]["u"] == 5

    def test_summary_constants_match_modules(self, tmp_path):
        out = tmp_path / "out"
        run(
            ["profile", "--lambda", "1.5", "--n", "300", "--mode", "window",
             "--epsilon", "0.05", "--out", str(out)]
        )
        summary = json.loads((out / "summary.json").read_text())
        params = ModelParams(1.5, 300)
        assert summary["constants"]["eq"] == equilibrium(params)
        assert summary["constants"]["q"] == gw_extinction_prob(1.5)
        assert summary["constants"]["u"] == threshold_u(params, 0.05, "window")


class TestFigureExperiments:
    def test_figure1_row_count(self, tmp_path):
        out = tmp_path / "f1"
        assert (
            run(["figure1", "--lambda", "1.5", "--n", "60", "--epsilon", "0.05",
                 "--out", str(out)]) == 0
        )
        lines = (out / "logh.csv").read_text().splitlines()
        u = threshold_u(ModelParams(1.5, 60), 0.05, "window")
        assert lines[0] == "x,log10_h"
        assert len(lines) == u + 1

    def test_figure1_base_conversion(self, tmp_path):
        out = tmp_path / "f1"
        run(["figure1", "--lambda", "1.5", "--n", "60", "--epsilon", "0.05", "--out", str(out)])
        lines = (out / "logh.csv").read_text().splitlines()
        params = ModelParams(1.5, 60)
        profile = hitting_profile(params, threshold_u(params, 0.05, "window"))
        x, val = lines[2].split(",")
        assert float(val) == pytest.approx(profile.log_phi[1] / math.log(10.0), abs=0)

    def test_figure2_full_matrix(self, tmp_path):
        out = tmp_path / "f2"
        assert (
            run(["figure2", "--lambda", "2", "--n", "100", "--epsilon", "0.05",
                 "--out", str(out)]) == 0
        )
        lines = (out / "kernel.csv").read_text().splitlines()
        u = threshold_u(ModelParams(2.0, 100), 0.05, "window")
        assert lines[0] == "x,y,p_phi"
        assert len(lines) == 1 + (u - 1) * u

    def test_figure1_canonical_row_count(self, tmp_path):
        out = tmp_path / "f1c"
        run(["figure1", "--lambda", "1.5", "--n", "1200", "--epsilon", "0.05",
             "--out", str(out)])
        lines = (out / "logh.csv").read_text().splitlines()
        assert len(lines) == 266  # header plus x = 0..264

    def test_rerun_bit_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        args = ["figure1", "--lambda", "1.5", "--n", "60", "--epsilon", "0.05"]
        run(args + ["--out", str(out1)])
        run(args + ["--out", str(out2)])
        assert (out1 / "logh.csv").read_bytes() == (out2 / "logh.csv").read_bytes()


class TestTimeExperiments:
    def test_cond_time_columns(self, tmp_path):
        out = tmp_path / "ct"
        assert (
            run(["cond-time", "--lambda", "1.5", "--n", "100", "--epsilon", "0.05",
                 "--out", str(out)]) == 0
        )
        lines = (out / "t.csv").read_text().splitlines()
        assert lines[0] == "x,t,t_over_log1p"
        assert lines[1] == "0,0,"  # ratio undefined at x=0

    def test_uncond_time_sweep(self, tmp_path):
        out = tmp_path / "T"
        assert run(["uncond-time", "--lambda", "2", "--n", "10,20", "--out", str(out)]) == 0
        lines = (out / "T.csv").read_text().splitlines()
        assert lines[0] == "n,x,expected_T0,ln_expected_T0"
        assert len(lines) == 3
        assert lines[1].startswith("10,5,")  # default start is ceil(n/2)

    def test_occupation(self, tmp_path):
        out = tmp_path / "occ"
        code = run(
            ["occupation", "--lambda", "1.5", "--n", "100", "--epsilon", "0.05",
             "--delta", "0.1", "--out", str(out)]
        )
        assert code == 0
        lines = (out / "h_occ.csv").read_text().splitlines()
        assert lines[0] == "x,expected_band_time"
        assert lines[1] == "0,0"


class TestStochasticExperiments:
    def test_mc_hitting_output(self, tmp_path):
        out = tmp_path / "mc"
        code = run(
            ["mc-hitting", "--lambda", "2", "--n", "50", "--u", "10", "--x0", "3",
             "--trials", "2000", "--seed", "42", "--out", str(out)]
        )
        assert code == 0
        lines = (out / "est.csv").read_text().splitlines()
        assert lines[0] == "estimate,std_error,trials,seed"
        assert lines[1].endswith(",2000,42")

    def test_seed_mandatory(self, tmp_path):
        code = run(
            ["mc-hitting", "--lambda", "2", "--n", "50", "--u", "10", "--x0", "3",
             "--trials", "100", "--out", str(tmp_path / "x")]
        )
        assert code == 2

    def test_worker_count_invisible_in_output(self, tmp_path):
        outs = []
        for i, workers in enumerate(("1", "3")):
            out = tmp_path / f"w{i}"
            run(
                ["mc-hitting", "--lambda", "2", "--n", "50", "--u", "10", "--x0", "3",
                 "--trials", "3000", "--seed", "11", "--workers", workers, "--out", str(out)]
            )
            outs.append((out / "est.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_mc_cond_path(self, tmp_path):
        out = tmp_path / "cp"
        code = run(
            ["mc-cond-path", "--lambda", "1.5", "--n", "100", "--epsilon", "0.05",
             "--x0", "5", "--trials", "2000", "--seed", "9", "--out", str(out)]
        )
        assert code == 0
        estimate = float((out / "est.csv").read_text().splitlines()[1].split(",")[0])
        assert estimate >= 1.0

    def test_equivalence_complete_graph(self, tmp_path):
        out = tmp_path / "eq"
        code = run(
            ["equivalence", "--lambda", "2", "--n", "30", "--x0", "10",
             "--trials", "4000", "--seed", "3", "--out", str(out)]
        )
        assert code == 0
        lines = (out / "tv.csv").read_text().splitlines()
        assert lines[0] == "n,lambda,x,trials,tv_distance"
        assert lines[1].startswith("30,2,10,4000,")

    def test_equivalence_named_graph(self, tmp_path):
        out = tmp_path / "eq2"
        code = run(
            ["equivalence", "--lambda", "2", "--graph", "complete:20", "--x0", "5",
             "--trials", "2000", "--seed", "3", "--out", str(out)]
        )
        assert code == 0
        assert (out / "tv.csv").read_text().splitlines()[1].startswith("20,")


class TestBoundsReport:
    def test_report_written(self, tmp_path):
        out = tmp_path / "br"
        code = run(
            ["bounds-report", "--lambda", "2", "--n", "200", "--epsilon", "0.05",
             "--out", str(out)]
        )
        assert code == 0
        text = (out / "report.txt").read_text()
        for name in ("envelope", "ratio-beta", "geometric-upper", "ratio-kappa", "ratio-gamma"):
            assert f"check: {name}" in text
        summary = json.loads((out / "summary.json").read_text())
        assert all(summary["checks"].values())


class TestCache:
    def test_lookup_miss_on_empty_dir(self, tmp_path):
        assert cache_lookup(tmp_path, 2.0, 50, 10) is None

    def test_store_then_lookup(self, tmp_path):
        profile = hitting_profile(ModelParams(2.0, 50), 10)
        cache_store(tmp_path, profile)
        back = cache_lookup(tmp_path, 2.0, 50, 10)
        assert back is not None
        assert back.log_phi.tobytes() == profile.log_phi.tobytes()

    def test_tampered_key_is_miss(self, tmp_path):
        profile = hitting_profile(ModelParams(2.0, 50), 10)
        path = cache_store(tmp_path, profile)
        text = path.read_text().replace("lambda=2", "lambda=2.5")
        path.write_text(text)
        assert cache_lookup(tmp_path, 2.0, 50, 10) is None

    def test_out_of_contract_residual_is_miss(self, tmp_path):
        profile = hitting_profile(ModelParams(2.0, 50), 10)
        path = cache_store(tmp_path, profile)
        lines = path.read_text().splitlines()
        lines[4] = "residual=0.001"
        path.write_text("\n".join(lines) + "\n")
        assert cache_lookup(tmp_path, 2.0, 50, 10) is None

    def test_run_uses_cache_and_stays_identical(self, tmp_path):
        cache = tmp_path / "cache"
        args = ["profile", "--lambda", "2", "--n", "50", "--u", "10", "--cache", str(cache)]
        run(args + ["--out", str(tmp_path / "a")])
        assert cache_path(cache, 2.0, 50, 10).exists()
        run(args + ["--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "phi.csv").read_bytes() == (
            tmp_path / "b" / "phi.csv"
        ).read_bytes()

    def test_run_refuses_mismatched_cache_file(self, tmp_path):
        cache = tmp_path / "cache"
        args = ["profile", "--lambda", "2", "--n", "50", "--u", "10", "--cache", str(cache)]
        run(args + ["--out", str(tmp_path / "a")])
        path = cache_path(cache, 2.0, 50, 10)
        lines = path.read_text().splitlines()
        lines[4] = "residual=0.001"
        path.write_text("\n".join(lines) + "\n")
        assert run(args + ["--out", str(tmp_path / "b")]) == 2

    def test_corrupted_cache_is_parse_error_naming_file(self, tmp_path, capsys):
        cache = tmp_path / "cache"
        profile = hitting_profile(ModelParams(2.0, 50), 10)
        path = cache_store(cache, profile)
        path.write_text("garbage\n")
        code = run(
            ["profile", "--lambda", "2", "--n", "50", "--u", "10",
             "--cache", str(cache), "--out", str(tmp_path / "b")]
        )
        assert code == 2
        assert path.name in capsys.readouterr().err


class TestExitCodes:
    def test_invalid_config(self, tmp_path):
        assert run(["profile", "--n", "50", "--u", "10", "--out", str(tmp_path / "x")]) == 2

    def test_bad_lambda(self, tmp_path):
        assert (
            run(["profile", "--lambda", "0.5", "--n", "50", "--u", "10",
                 "--out", str(tmp_path / "x")]) == 2
        )

    def test_solver_failure_maps_to_three(self, tmp_path, monkeypatch):
        def boom(params, u):
            raise SolverError("synthetic failure", residual=1.0)

        monkeypatch.setattr(cli, "hitting_profile", boom)
        assert (
            run(["profile", "--lambda", "2", "--n", "50", "--u", "10",
                 "--out", str(tmp_path / "x")]) == 3
        )

    def test_truncation_maps_to_four(self, tmp_path, monkeypatch):
        def boom(*args, **kwargs):
            raise TruncationError("synthetic cap hit")

        monkeypatch.setattr(cli, "estimate_hitting_prob", boom)
        code = run(
            ["mc-hitting", "--lambda", "2", "--n", "50", "--u", "10", "--x0", "3",
             "--trials", "10", "--seed", "1", "--out", str(tmp_path / "x")]
        )
        assert code == 4

    def test_validation_precedes_output(self, tmp_path):
        out = tmp_path / "never"
        assert (
            run(["mc-hitting", "--lambda", "2", "--n", "50", "--u", "10", "--x0", "99",
                 "--trials", "10", "--seed", "1", "--out", str(out)]) == 2
        )
        assert not (out / "est.csv").exists()


class TestRunExperimentApi:
    def test_unknown_experiment(self, tmp_path):
        with pytest.raises(ValueError):
            run_experiment(ExperimentConfig(experiment="nope", out_dir=tmp_path))

    def test_workers_validated(self, tmp_path):
        cfg = ExperimentConfig(
            experiment="profile", out_dir=tmp_path, lam=2.0, n=50, u=10, workers=0
        )
        with pytest.raises(ValueError):
            run_experiment(cfg)

    def test_summary_returned_and_written(self, tmp_path):
        cfg = ExperimentConfig(experiment="profile", out_dir=tmp_path, lam=2.0, n=50, u=10)
        summary = run_experiment(cfg)
        on_disk = json.loads((tmp_path / "summary.json").read_text())
        assert summary["experiment"] == "profile"
        assert on_disk["constants"] == summary["constants"]
