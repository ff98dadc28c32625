import json

import numpy as np

from rgl.cli import main
from rgl.experiments import PHASE_HEADER
from rgl.matrixio import load_matrix_bin


def test_phase_writes_outputs(tmp_path, capsys):
    rc = main([
        "phase", "--n", "24", "--m", "16", "--L", "2",
        "--trials", "3", "--seed", "5", "--out", str(tmp_path / "run"),
    ])
    assert rc == 0
    csv = (tmp_path / "run" / "phase.csv").read_text().splitlines()
    assert csv[0] == PHASE_HEADER
    assert (tmp_path / "run" / "phase.dat").exists()
    assert "recovered" in capsys.readouterr().out


def test_phase_respects_config_and_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "[experiment]\ntrials = 2\nbase_seed = 3\n\n"
        "[problem]\nn = 24\nm = 16\nL = 2\nkt_grid = 1\nkcol_grid = 0\n"
    )
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["phase", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["phase", "--config", str(cfg), "--seed", "3", "--out", str(out2)]) == 0
    assert (out1 / "phase.csv").read_bytes() == (out2 / "phase.csv").read_bytes()


def test_cert_subcommand(tmp_path):
    rc = main([
        "cert", "--n", "64", "--m", "256", "--L", "2",
        "--trials", "2", "--seed", "1", "--out", str(tmp_path),
    ])
    assert rc == 0
    assert (tmp_path / "cert.csv").exists()
    assert (tmp_path / "cert_ratios.csv").exists()


def test_compare_subcommand(tmp_path):
    rc = main([
        "compare", "--n", "24", "--m", "16", "--L", "2",
        "--trials", "2", "--seed", "1", "--out", str(tmp_path),
    ])
    assert rc == 0
    assert (tmp_path / "compare.csv").exists()


def test_gen_solve_round_trip(tmp_path, capsys):
    bundle = tmp_path / "bundle"
    assert main([
        "gen", "--out", str(bundle), "--n", "24", "--m", "16", "--L", "2",
        "--kT", "2", "--kcol", "1", "--seed", "9",
    ]) == 0
    capsys.readouterr()
    out = tmp_path / "solution"
    assert main([
        "solve", "--bundle", str(bundle), "--program", "rgl", "--out", str(out),
    ]) == 0
    printed = capsys.readouterr().out
    summary = json.loads(printed[: printed.rindex("}") + 1])
    assert summary["converged"] and summary["success"]
    report = json.loads((out / "report.json").read_text())
    assert report["success"]
    Y = load_matrix_bin(out / "Y_hat.bin")
    assert Y.shape == (24, 2)


def test_solve_l21_and_group_lasso(tmp_path, capsys):
    bundle = tmp_path / "bundle"
    main(["gen", "--out", str(bundle), "--n", "24", "--m", "16", "--L", "2",
          "--kT", "2", "--kcol", "0", "--seed", "4"])
    for program in ("l21", "group-lasso"):
        capsys.readouterr()
        assert main(["solve", "--bundle", str(bundle), "--program", program]) == 0
        out = capsys.readouterr().out
        assert json.loads(out[: out.rindex("}") + 1])["converged"]


def test_missing_bundle_is_an_error(tmp_path, capsys):
    rc = main(["solve", "--bundle", str(tmp_path / "nothing")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_theorem_regime_gen_rejects_super_budget(tmp_path, capsys):
    rc = main([
        "gen", "--out", str(tmp_path / "b"), "--n", "24", "--m", "16", "--L", "2",
        "--kT", "6", "--kcol", "1", "--seed", "0", "--mode", "theorem_regime",
    ])
    assert rc == 1
    assert "budget" in capsys.readouterr().err
