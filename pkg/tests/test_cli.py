import subprocess
import sys

import pytest

from brokenray.cli import EXIT_OK, EXIT_PARSE, EXIT_RUNTIME, EXIT_TOLERANCE, build_parser, config_from_args, main
from brokenray.config import ExperimentConfig

FAST = ["--eps-count", "4"]


def test_selftest_passes(capsys):
    assert main(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10


def test_selftest_is_byte_identical(tmp_path):
    # the output path is part of the embedded provenance, so reuse it
    p = tmp_path / "s.csv"
    runs = []
    for _ in range(2):
        assert main(["selftest", "--out", str(p)]) == EXIT_OK
        runs.append(p.read_bytes())
    assert runs[0] == runs[1]


def test_malformed_expression_names_the_token(capsys):
    assert main(["brt", "--field", "x0 + * x1"]) == EXIT_PARSE
    err = capsys.readouterr().err
    assert "offending token '*'" in err and "position 5" in err


def test_malformed_config_is_a_parse_error(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nflavour = 1\n")
    assert main(["brt", "--config", str(p)]) == EXIT_PARSE
    assert "flavour" in capsys.readouterr().err
    assert main(["brt", "--config", str(tmp_path / "missing.ini")]) == EXIT_PARSE


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["trace", "--colour", "red"])
    assert err.value.code == 2


def test_flags_override_config_file(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(ExperimentConfig(chart="band", field="x0^2", k=2).serialize())
    args = build_parser().parse_args(["reconstruct", "--config", str(p), "--k", "1", "--eps-max", "0.05"])
    cfg = config_from_args(args)
    assert cfg.chart == "band" and cfg.field == "x0^2"
    assert cfg.k == 1 and cfg.eps_max == 0.05 and cfg.command == "reconstruct"


def test_reconstruct_meets_and_misses_tolerance(capsys, tmp_path):
    out = tmp_path / "rec.csv"
    assert main(["reconstruct", "--field", "x0", "--k", "1", *FAST, "--out", str(out)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    text = out.read_text()
    assert text.startswith("# [experiment]") and "eps [1]" in text
    assert main(["reconstruct", "--field", "x0", "--k", "1", *FAST, "--tolerance", "1e-14"]) == EXIT_TOLERANCE


def test_inadmissible_curve_is_a_runtime_error(capsys):
    assert main(["reconstruct", "--E", "x1 - 10", *FAST]) == EXIT_RUNTIME
    assert "AdmissibilityError" in capsys.readouterr().err


def test_reconstruct_output_is_deterministic(tmp_path):
    p = tmp_path / "r.csv"
    runs = []
    for _ in range(2):
        assert main(["reconstruct", "--chart", "band", "--field", "2 + sin(x1)", "--k", "1", *FAST,
                     "--out", str(p)]) == EXIT_OK
        runs.append(p.read_bytes())
    assert runs[0] == runs[1]


def test_trace_writes_csv_and_svg(tmp_path):
    csv, svg = tmp_path / "ray.csv", tmp_path / "ray.svg"
    code = main(["trace", "--chart", "band:kappa=ellipse-like", "--sigma", "start=0;dir=1;L=2*pi", "--out", str(csv),
                 "--svg", str(svg)])
    assert code == EXIT_OK
    assert csv.read_text().splitlines()[0].startswith("#")
    assert svg.read_text().count("<polyline") >= 2


def test_brt_runs(capsys):
    assert main(["brt", "--chart", "disk", "--field", "1"]) == EXIT_OK


@pytest.mark.parametrize("mode, field, code", [
    ("transform", "two-squares", EXIT_OK),
    ("identities", "two-squares", EXIT_OK),
    ("witness", "annulus", EXIT_OK),
    ("witness", "two-squares", EXIT_TOLERANCE),
])
def test_laplace_modes(mode, field, code):
    assert main(["laplace", "--mode", mode, "--planar-field", field]) == code


def test_laplace_recover(capsys):
    code = main(["laplace", "--mode", "recover", "--field", "1", "--lambda-grid=-1:1:8", "--bins", "2", *FAST])
    assert code == EXIT_OK
    assert "bin [0, 1.5708]" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "brokenray", "brt", "--field", "x0/0"], capture_output=True,
                          text=True)
    assert proc.returncode == EXIT_PARSE and "division by zero" in proc.stderr
