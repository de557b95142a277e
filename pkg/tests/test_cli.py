import json

from snsflow.cli import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, main


def run_cli(*argv):
    return main(list(argv))


def test_solve_deterministic_happy_path(tmp_path, capsys):
    code = run_cli("solve", "--method", "deterministic", "--nu", "0.02",
                   "--mesh-n", "6", "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    assert (tmp_path / "field_deterministic.csv").exists()
    assert (tmp_path / "samples.csv").exists()
    out = capsys.readouterr().out
    assert "converged=1" in out and "method=deterministic" in out


def test_solve_split_writes_field(tmp_path):
    code = run_cli("solve", "--method", "split", "--mesh-n", "4", "--sigma", "1.0",
                   "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    header = (tmp_path / "field_split.csv").read_text().splitlines()[0]
    assert header == "x,y,u1,u2,umag"


def test_usage_error_names_offending_flag(capsys):
    assert run_cli("solve", "--method", "deterministic", "--mesh-n", "0") == EXIT_USAGE
    assert "--mesh-n" in capsys.readouterr().err
    assert run_cli("solve", "--method", "deterministic", "--mesh-n", "4",
                   "--noise-n", "3") == EXIT_USAGE
    assert "--noise-n" in capsys.readouterr().err
    assert run_cli("mc", "--methods", "nope") == EXIT_USAGE
    assert "--methods" in capsys.readouterr().err
    assert run_cli("mc", "--samples", "two") == EXIT_USAGE
    assert "--samples" in capsys.readouterr().err


def test_unknown_method_flag_value(capsys):
    assert run_cli("solve", "--method", "warp") == EXIT_USAGE
    err = capsys.readouterr().err
    assert "--method" in err and err.count("\n") == 1


def test_monolithic_nonconvergence_exits_2(tmp_path, capsys):
    code = run_cli("solve", "--method", "monolithic", "--sigma", "80", "--init", "zero",
                   "--mesh-n", "4", "--newton-max-iter", "3", "--out-dir", str(tmp_path))
    assert code == EXIT_NOT_CONVERGED
    rows = (tmp_path / "samples.csv").read_text().strip().splitlines()
    assert rows[-1].startswith("monolithic,0,0,")  # recorded, not crashed


def test_mc_defaults_shrunk(tmp_path, capsys):
    code = run_cli("mc", "--mesh-n", "4", "--samples", "2,3", "--sigma", "1.0",
                   "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("eps_sh=") == 2  # one summary line per sample count
    stats_lines = (tmp_path / "stats.csv").read_text().strip().splitlines()
    assert len(stats_lines) == 1 + 2 * 3
    for name in ("samples.csv", "field_monolithic.csv", "field_split.csv",
                 "field_modified.csv", "field_deterministic.csv"):
        assert (tmp_path / name).exists()


def test_sweep_produces_row_per_amplitude(tmp_path, capsys):
    code = run_cli("sweep", "--mesh-n", "4", "--samples", "2",
                   "--sigmas", "0.5,1.0", "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "sigma=0.5" in out and "sigma=1" in out
    stats_lines = (tmp_path / "stats.csv").read_text().strip().splitlines()
    assert len(stats_lines) == 1 + 2 * 3


def test_mc_sigma_sweep_flag(tmp_path, capsys):
    code = run_cli("mc", "--mesh-n", "4", "--samples", "2",
                   "--sigma-sweep", "0.5,1.0", "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "sigma=0.5" in out and "sigma=1" in out


def test_mc_paper_scale_defaults(tmp_path, capsys):
    # the built-in defaults reproduce the headline statistics: the splitting
    # error sits at the arithmetic floor and the linearized error near 1e-3
    code = run_cli("mc", "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    out = capsys.readouterr().out
    values = dict(part.split("=") for part in out.split())
    assert float(values["eps_sh"]) <= 1e-10
    assert 1e-4 <= float(values["eps_mh"]) <= 1e-2


def test_config_file_merge_flags_win(tmp_path, capsys):
    cfg = {"sigma": 0.25, "mesh_n": 4, "samples": "2"}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    code = run_cli("mc", "--config", str(cfg_path), "--sigma", "0.5",
                   "--out-dir", str(tmp_path))
    assert code == EXIT_OK
    assert "sigma=0.5" in capsys.readouterr().out  # flag beat the file


def test_config_file_unknown_key(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"bogus": 1}))
    assert run_cli("mc", "--config", str(cfg_path)) == EXIT_USAGE
    assert "--config" in capsys.readouterr().err


def test_jobs_flag_changes_nothing(tmp_path, capsys):
    args = ("mc", "--mesh-n", "4", "--samples", "3", "--sigma", "1.0")
    assert run_cli(*args, "--jobs", "1", "--out-dir", str(tmp_path / "a")) == EXIT_OK
    line_a = capsys.readouterr().out
    assert run_cli(*args, "--jobs", "4", "--out-dir", str(tmp_path / "b")) == EXIT_OK
    line_b = capsys.readouterr().out
    assert line_a == line_b
    assert (tmp_path / "a" / "stats.csv").read_text() == \
        (tmp_path / "b" / "stats.csv").read_text()


def test_verify_battery_passes(capsys):
    assert run_cli("verify") == EXIT_OK
    out = capsys.readouterr().out
    assert "status=pass" in out and "status=FAIL" not in out
    assert "indicator=" in out  # smallness diagnostics line


def test_verify_detects_injected_sign_error(capsys):
    assert run_cli("verify", "--mutate", "convection-sign") == EXIT_USAGE
    out = capsys.readouterr().out
    assert "status=FAIL" in out


def test_verify_convergence_prints_observed_orders(capsys):
    assert run_cli("verify", "--convergence") == EXIT_OK
    out = capsys.readouterr().out
    assert "manufactured_convergence" in out
    assert "velocity_orders" in out and "pressure_orders" in out
