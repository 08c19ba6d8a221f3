"""Exit-code and output contract for the async-iter-lab command line."""

import subprocess
import sys

import pytest

from async_iter_lab.certificates import Trace, worst_case_trace, write_trace_csv
from async_iter_lab.cli import main

RHO_LINE = f"rho = {0.8 ** 0.25!r}"

PG_CONFIG = """
[experiment]
kind = run
seed = 7

[problem]
family = least-squares
n = 12
d = 6
noise = 0.0

[algorithm]
name = pg
K = 40
gamma = 0.02
"""


def _write_worst_case(tmp_path, tamper=False):
    trace = worst_case_trace(0.5, 0.3, 3, 1.0, 120)
    V = trace.V.copy()
    if tamper:
        V[49] *= 1.5
    path = tmp_path / "trace.csv"
    write_trace_csv(Trace(V=V, delays=trace.delays), path)
    config = tmp_path / "verify.cfg"
    config.write_text(
        f"[experiment]\nkind = verify\n\n[verify]\ntrace = {path}\nq = 0.5\np = 0.3\ntau = 3\n"
    )
    return config


def test_rate_flags_print_certificate(tmp_path, capsys):
    code = main(["rate", "--q", "0.5", "--p", "0.3", "--tau", "3", "--out", str(tmp_path)])
    out = capsys.readouterr()
    assert code == 0
    assert out.out == RHO_LINE + "\n"
    assert out.err == ""
    assert RHO_LINE in (tmp_path / "report.kv").read_text()


def test_rate_flags_growing_mode(tmp_path, capsys):
    code = main(["rate", "--q", "0.0", "--p", "0.9", "--alpha", "0.2", "--out", str(tmp_path)])
    out = capsys.readouterr()
    assert code == 0
    assert out.out.startswith("eta = ")


def test_rate_flags_require_both_coefficients(capsys):
    code = main(["rate", "--q", "0.5"])
    err = capsys.readouterr().err
    assert code == 2
    assert "rate requires --config, or both --q and --p" in err


def test_rate_rejects_config_plus_flags(tmp_path, capsys):
    config = tmp_path / "r.cfg"
    config.write_text("[experiment]\nkind = rate\n\n[rate]\nq = 0.5\np = 0.3\n")
    code = main(["rate", "--config", str(config), "--q", "0.5", "--p", "0.3"])
    err = capsys.readouterr().err
    assert code == 2
    assert "not both" in err


def test_run_requires_config(capsys):
    code = main(["run"])
    err = capsys.readouterr().err
    assert code == 2
    assert "run requires --config" in err


def test_unreadable_config(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "missing.cfg")])
    err = capsys.readouterr().err
    assert code == 2
    assert err.startswith("error: cannot read config:")


def test_kind_mismatch(tmp_path, capsys):
    config = _write_worst_case(tmp_path)
    code = main(["run", "--config", str(config)])
    err = capsys.readouterr().err
    assert code == 2
    assert "config kind 'verify' does not match subcommand 'run'" in err


def test_config_errors_printed_per_line(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text(
        "[experiment]\nkind = run\n\n[problem]\nfamily = least-squares\nn = 10\nd = 5\n\n"
        "[delays]\nkind = constant\ntau = 2\n\n"
        "[algorithm]\nname = delayed-gradient\nK = 0\ngamma = -1\nmystery = 3\n"
    )
    code = main(["run", "--config", str(config)])
    err = capsys.readouterr().err
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 4
    assert all(line.startswith("semantic-error: ") for line in lines)


def test_malformed_config_reports_parse_error(tmp_path, capsys):
    config = tmp_path / "broken.cfg"
    config.write_text("kind = rate\n")
    code = main(["rate", "--config", str(config)])
    err = capsys.readouterr().err
    assert code == 2
    assert err.startswith("parse-error: ")


def test_verify_pass_exit_zero(tmp_path, capsys):
    config = _write_worst_case(tmp_path)
    code = main(["verify", "--config", str(config), "--out", str(tmp_path / "out")])
    out = capsys.readouterr()
    assert code == 0
    assert out.out == "PASS\n"


def test_verify_fail_exit_one(tmp_path, capsys):
    config = _write_worst_case(tmp_path, tamper=True)
    code = main(["verify", "--config", str(config), "--out", str(tmp_path / "out")])
    out = capsys.readouterr()
    assert code == 1
    assert out.out == "FAIL k=48\n"
    kv = (tmp_path / "out" / "report.kv").read_text()
    assert "first_violation = 48" in kv


def test_missing_trace_is_internal_error(tmp_path, capsys):
    config = tmp_path / "v.cfg"
    config.write_text(
        "[experiment]\nkind = verify\n\n[verify]\ntrace = /nonexistent/x.csv\nq = 0.5\np = 0.3\n"
    )
    code = main(["verify", "--config", str(config), "--out", str(tmp_path)])
    err = capsys.readouterr().err
    assert code == 3
    assert err.startswith("internal error:")


def test_invalid_subcommand_is_usage_error(capsys):
    assert main(["bogus"]) == 2
    assert main([]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    assert "rate" in out and "verify" in out


def test_seed_override(tmp_path, capsys):
    code = main(
        ["rate", "--q", "0.5", "--p", "0.3", "--seed", "123", "--out", str(tmp_path)]
    )
    capsys.readouterr()
    assert code == 0
    assert "seed = 123" in (tmp_path / "report.kv").read_text()
    assert main(["rate", "--q", "0.5", "--p", "0.3", "--seed", "-1"]) == 2
    err = capsys.readouterr().err
    assert "seed" in err
    config = tmp_path / "r.cfg"
    config.write_text("[experiment]\nkind = rate\n\n[rate]\nq = 0.5\np = 0.3\n")
    assert main(["rate", "--config", str(config), "--seed", "-1"]) == 2
    err = capsys.readouterr().err
    assert "--seed must be a 64-bit unsigned integer" in err


def test_run_writes_artifacts(tmp_path, capsys):
    config = tmp_path / "pg.cfg"
    config.write_text(PG_CONFIG)
    out_dir = tmp_path / "out"
    code = main(["run", "--config", str(config), "--out", str(out_dir)])
    out = capsys.readouterr()
    assert code == 0
    assert out.out == "PASS\n"
    for name in ("trace.csv", "bound.csv", "report.kv"):
        assert (out_dir / name).exists()


def test_out_flag_beats_config_out(tmp_path, capsys):
    config = tmp_path / "r.cfg"
    config.write_text(
        f"[experiment]\nkind = rate\nout = {tmp_path / 'from-config'}\n\n[rate]\nq = 0.5\np = 0.3\n"
    )
    code = main(["rate", "--config", str(config), "--out", str(tmp_path / "from-flag")])
    capsys.readouterr()
    assert code == 0
    assert (tmp_path / "from-flag" / "report.kv").exists()
    assert not (tmp_path / "from-config").exists()


def test_sweep_via_cli(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    config.write_text(
        "[experiment]\nkind = sweep\n\n[rate]\nq = 0.5\np = 0.3\n\n"
        "[sweep]\nparam = rate.tau\nvalues = 0, 1, 2\n"
    )
    code = main(["sweep", "--config", str(config), "--out", str(tmp_path / "out")])
    out = capsys.readouterr()
    assert code == 0
    lines = out.out.strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("run-00 rho = ")
    rhos = [float(line.split("=")[1]) for line in lines]
    assert rhos == sorted(rhos)


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "async_iter_lab.cli", "rate", "--q", "0.5", "--p", "0.3",
         "--tau", "3", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout == RHO_LINE + "\n"


def test_rerun_is_byte_identical(tmp_path, capsys):
    config = tmp_path / "pg.cfg"
    config.write_text(PG_CONFIG)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(config), "--out", str(a)]) == 0
    assert main(["run", "--config", str(config), "--out", str(b)]) == 0
    capsys.readouterr()
    for name in ("trace.csv", "bound.csv", "report.kv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
