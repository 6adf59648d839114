import numpy as np
import pytest

from evostep.cli import main
from evostep.config import config_from_mapping, load_config_file


def test_solve_paper_problem(tmp_path, capsys):
    code = main(
        [
            "solve",
            "--problem",
            "paper1d",
            "--k",
            "2",
            "--r",
            "1",
            "--N",
            "8",
            "--M",
            "8",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 0
    assert (tmp_path / "solution_cgp.dat").exists()
    assert (tmp_path / "stability_cgp.txt").exists()
    rows = np.loadtxt(tmp_path / "solution_cgp.dat")
    assert rows.shape[1] == 4


def test_solve_kink_not_resolved_exit_2(tmp_path, capsys):
    code = main(["solve", "--problem", "paper1d", "--M", "63", "--out", str(tmp_path)])
    captured = capsys.readouterr()
    assert code == 2
    assert "KinkNotResolved" in captured.err


def test_unknown_scheme_exits_2(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["solve", "--scheme", "bogus", "--out", str(tmp_path)])
    assert err.value.code == 2


def test_solve_manufactured_writes_error_report(tmp_path):
    code = main(
        [
            "solve",
            "--problem",
            "manufactured-smooth",
            "--k",
            "2",
            "--r",
            "1",
            "--N",
            "8",
            "--M",
            "8",
            "--T",
            "1.0",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 0
    text = (tmp_path / "errors_cgp.txt").read_text()
    assert "err_full" in text and "err_proj" in text


def test_study_deterministic_csv(tmp_path):
    args = [
        "study",
        "--problem",
        "manufactured-smooth",
        "--scheme",
        "both",
        "--k",
        "2",
        "--r",
        "1",
        "--levels",
        "8,16",
        "--T",
        "1.0",
    ]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    b1 = (out1 / "study.csv").read_bytes()
    b2 = (out2 / "study.csv").read_bytes()
    assert b1 == b2
    header = b1.decode().splitlines()[0]
    assert header == "M,N,k,r,scheme,err_full,err_proj,err_final_energy,err_L2,rate_full,rate_proj"
    assert len(b1.decode().strip().splitlines()) == 5  # header + 2 levels x 2 schemes


def test_study_rejects_bad_levels(tmp_path, capsys):
    code = main(
        [
            "study",
            "--problem",
            "manufactured-smooth",
            "--levels",
            "8,24",
            "--T",
            "1.0",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 2


def test_reference_roundtrip_and_solve_against_it(tmp_path):
    ref_args = [
        "reference",
        "--problem",
        "paper1d",
        "--k",
        "1",
        "--r",
        "1",
        "--N",
        "8",
        "--M",
        "8",
        "--out",
        str(tmp_path),
    ]
    assert main(ref_args) == 0
    ref_path = tmp_path / "reference.npz"
    assert ref_path.exists()

    # the same run compared against its own dump reports zero error
    solve_args = [
        "solve",
        "--problem",
        "paper1d",
        "--k",
        "1",
        "--r",
        "1",
        "--N",
        "8",
        "--M",
        "8",
        "--reference",
        str(ref_path),
        "--out",
        str(tmp_path / "run"),
    ]
    assert main(solve_args) == 0
    text = (tmp_path / "run" / "errors_cgp.txt").read_text()
    err_full = float(text.splitlines()[0].split("=")[1])
    assert err_full <= 1e-12


def test_compare_runs(tmp_path, capsys):
    code = main(
        [
            "compare",
            "--problem",
            "manufactured-smooth",
            "--k",
            "1",
            "--r",
            "1",
            "--N",
            "8",
            "--M",
            "8",
            "--T",
            "1.0",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "cgp" in out and "dg" in out


def test_exactness_problem_through_cli(tmp_path):
    code = main(
        [
            "solve",
            "--problem",
            "manufactured-exactness",
            "--k",
            "2",
            "--r",
            "2",
            "--N",
            "6",
            "--M",
            "4",
            "--T",
            "1.0",
            "--layout",
            "paper",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 0
    text = (tmp_path / "errors_cgp.txt").read_text()
    err_full = float(text.splitlines()[0].split("=")[1])
    ref_norm = float([l for l in text.splitlines() if l.startswith("reference_norm")][0].split("=")[1])
    assert err_full <= 1e-9 * max(1.0, ref_norm)


def test_study_generates_and_caches_reference(tmp_path):
    cfg_path = tmp_path / "study.toml"
    cfg_path.write_text(
        "\n".join(
            [
                'problem = "paper1d"',
                'scheme = "cgp"',
                "k = 1",
                "r = 1",
                "levels = [8, 16]",
                "[reference]",
                "M = 32",
                "N = 16",
                "k = 2",
                "r = 1",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    out = tmp_path / "out"
    assert main(["study", "--config", str(cfg_path), "--out", str(out)]) == 0
    cached = list(out.glob("reference_*.npz"))
    assert len(cached) == 1
    assert (out / "study.csv").exists()
    # second run reuses the cached dump and reproduces the table
    csv_first = (out / "study.csv").read_bytes()
    assert main(["study", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "study.csv").read_bytes() == csv_first


def test_config_file_parsing(tmp_path):
    cfg_path = tmp_path / "run.toml"
    cfg_path.write_text(
        "\n".join(
            [
                'problem = "custom"',
                'scheme = "cgp"',
                "k = 1",
                "r = 1",
                "N = 8",
                "M = 8",
                "levels = [8, 16]",
                'regions = [[-3.141592653589793, 0.0, "hyperbolic"], [0.0, 3.141592653589793, "elliptic"]]',
                'source = "zero"',
                "[domain]",
                "a = -3.141592653589793",
                "b = 3.141592653589793",
                "[time]",
                "T = 3.141592653589793",
                "rho = 0.8",
                "[output]",
                'dir = "outdir"',
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    cfg = config_from_mapping(load_config_file(cfg_path))
    assert cfg.problem == "custom"
    assert cfg.rho == 0.8
    assert cfg.levels == (8, 16)
    assert cfg.regions is not None and cfg.regions[0][2] == "hyperbolic"

    code = main(["solve", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert code == 0
    assert (tmp_path / "o" / "solution_cgp.dat").exists()
