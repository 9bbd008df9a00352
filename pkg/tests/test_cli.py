import json

import numpy as np
import pytest

from fracrearr.cli import ConfigError, load_config, main

BASE = ["--N", "64", "--s", "0.5"]


def read_json(path):
    return json.loads(path.read_text())


def outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_missing_beta_names_key(tmp_path, capsys):
    assert main(["rearrange", *BASE, "--out", str(tmp_path)]) == 2
    assert "problem.beta" in capsys.readouterr().err


def test_unknown_key_and_section(tmp_path, capsys):
    assert main(["dirichlet", *BASE, "--set", "kernel.sigma=1", "--out", str(tmp_path)]) == 2
    assert "kernel.sigma" in capsys.readouterr().err
    assert main(["dirichlet", *BASE, "--set", "plot.color=red"]) == 2
    assert "[plot]" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["--s", "1.5"], ["--set", "kernel.self_cell=none"],
                                   ["--set", "solver.method=newton"], ["--domain", "sphere"],
                                   ["--set", "solver.max_iter=many"], ["--set", "novalue"]])
def test_invalid_values_exit_2(tmp_path, extra):
    assert main(["dirichlet", *BASE, *extra, "--out", str(tmp_path)]) == 2


def test_obstacle_requires_alpha():
    with pytest.raises(ConfigError, match="problem.alpha"):
        load_config("obstacle", {"grid": {"n": "8"}, "kernel": {"s": "0.5"}})


def test_sweep_rejects_unnormalized():
    with pytest.raises(ConfigError, match="normalized"):
        load_config("sweep", {"grid": {"n": "8"}, "kernel": {"s_list": "0.6", "normalized": "false"},
                              "problem": {"beta": "1"}})


def test_dirichlet_n64(tmp_path):
    assert main(["dirichlet", *BASE, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "x,u" and len(lines) == 65
    # 17 significant digits round-trip exactly
    assert all(len(v.split(",")[1].lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 17
               for v in lines[1:])
    summary = read_json(tmp_path / "summary.json")
    assert 0 < summary["getoor_rel_l2"] < 0.05
    assert summary["seed"] == 0 and summary["n_cells"] == 64
    assert all(k == k.lower() and not isinstance(v, dict) for k, v in summary.items())


def test_config_file_with_flag_override(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[grid]\nn = 16\n[kernel]\ns = 0.3\nnormalized = false\n[problem]\nf = 2.0\n")
    out = tmp_path / "out"
    assert main(["dirichlet", "--config", str(ini), "--s", "0.6", "--out", str(out)]) == 0
    summary = read_json(out / "summary.json")
    assert summary["s"] == 0.6 and summary["f"] == 2.0
    assert summary["interior_nodes"] == 16 and summary["normalized"] is False
    # the written config reproduces the run
    out2 = tmp_path / "out2"
    assert main(["dirichlet", "--config", str(out / "config.ini"), "--out", str(out2)]) == 0
    assert (out / "u.csv").read_bytes() == (out2 / "u.csv").read_bytes()


def test_rearrange_then_verify(tmp_path, capsys):
    run = tmp_path / "run"
    args = ["rearrange", *BASE, "--beta", "1.0", "--out", str(run), "--set", "output.dump_matrix=true"]
    assert main(args) == 0
    assert (run / "f_hat.csv").exists() and (run / "operator.flap").exists()
    summary = read_json(run / "summary.json")
    assert summary["gap"] >= 0 and summary["mass"] == pytest.approx(1.0, rel=1e-12)
    capsys.readouterr()
    check = tmp_path / "check"
    assert main(["verify", "--input", str(run), "--out", str(check)]) == 0
    text = capsys.readouterr().out
    assert "PASS operator_reproduced" in text and "FAIL" not in text
    assert read_json(check / "summary.json")["passed"] is True


def test_verify_projected_gradient_disk(tmp_path):
    run = tmp_path / "run"
    args = ["rearrange", "--domain", "disk", "--N", "14", "--s", "0.4", "--set", "problem.beta_fraction=0.4",
            "--set", "solver.method=projected_gradient", "--out", str(run)]
    assert main(args) == 0
    assert main(["verify", "--input", str(run), "--out", str(tmp_path / "check")]) == 0


def test_verify_detects_tampered_density(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["rearrange", *BASE, "--beta", "1.0", "--out", str(run)]) == 0
    lines = (run / "f_hat.csv").read_text().splitlines()
    x, _ = lines[10].split(",")
    lines[10] = f"{x},0.0"
    (run / "f_hat.csv").write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["verify", "--input", str(run), "--out", str(tmp_path / "check")]) == 1
    out = capsys.readouterr().out
    assert "FAIL state_consistent: margin" in out


def test_verify_missing_input(tmp_path):
    assert main(["verify", "--input", str(tmp_path / "nothing"), "--out", str(tmp_path / "c")]) == 2


def test_obstacle_command(tmp_path):
    assert main(["obstacle", *BASE, "--alpha", "0.3", "--out", str(tmp_path)]) == 0
    summary = read_json(tmp_path / "summary.json")
    assert summary["u_min"] >= -1e-10 * 0.3
    assert summary["subharmonic"] is True
    assert (tmp_path / "U.csv").exists() and (tmp_path / "free_boundary.csv").exists()


def test_non_convergence_exit_1(tmp_path, capsys):
    args = ["rearrange", *BASE, "--beta", "1.0", "--out", str(tmp_path),
            "--set", "solver.variant=vanilla", "--set", "solver.max_iter=2", "--set", "solver.gap_tol=1e-14"]
    assert main(args) == 1
    assert "did not converge" in capsys.readouterr().err


def test_determinism(tmp_path):
    args = ["rearrange", *BASE, "--beta", "1.0", "--set", "output.dump_matrix=true",
            "--set", "solver.method=projected_gradient"]
    assert main([*args, "--out", str(tmp_path)]) == 0
    first = outputs(tmp_path)
    assert main([*args, "--out", str(tmp_path)]) == 0
    assert outputs(tmp_path) == first
    assert "seed" in read_json(tmp_path / "summary.json")


def test_sweep_command(tmp_path):
    args = ["sweep", "--N", "32", "--s-list", "0.6,0.8", "--beta", "1.0", "--out", str(tmp_path)]
    assert main(args) == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    data = read_json(tmp_path / "sweep.json")
    assert [r["s"] for r in data["rows"]] == [0.6, 0.8]
    assert len(list((tmp_path / "gnuplot").glob("*.dat"))) == 5
    sd = np.array([r["state_dist"] for r in data["rows"]])
    assert sd[1] < sd[0]


def test_sweep_cap_is_config_error(tmp_path):
    args = ["sweep", "--N", "16", "--s-list", "0.99", "--beta", "1.0", "--out", str(tmp_path)]
    assert main(args) == 2


def test_documented_config_parses(tmp_path):
    from pathlib import Path
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    block = readme.split("```ini\n", 1)[1].split("```", 1)[0]
    ini = tmp_path / "doc.ini"
    ini.write_text(block)
    out = tmp_path / "out"
    assert main(["rearrange", "--config", str(ini), "--N", "32", "--out", str(out)]) == 0
    summary = read_json(out / "summary.json")
    assert summary["s"] == 0.5 and summary["beta"] == 1.0 and summary["domain"] == "interval"
