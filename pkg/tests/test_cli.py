import json
import subprocess
import sys

import pytest

from cpwlsa.cli import main
from cpwlsa.cpwl import load_table
from cpwlsa.report import read_csv


def run(*argv):
    return main([str(a) for a in argv])


def test_table_command(tmp_path, capsys):
    out = tmp_path / "gelu.json"
    assert run("table", "--function", "gelu", "--granularity", 0.25, "--out", out) == 0
    assert load_table(out).num_segments == 64
    assert "num_segments=64" in capsys.readouterr().out
    first = out.read_bytes()
    assert run("table", "--function", "GELU", "--granularity", 0.25, "--out", out) == 0
    assert out.read_bytes() == first


def test_table_identity_slopes(tmp_path):
    out = tmp_path / "id.json"
    assert run("table", "--function", "IDENTITY", "--granularity", 0.5, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert set(doc["k_values"]) == {2 ** doc["format_k"]["frac_bits"]}


def test_table_bad_bounds_is_usage_error(tmp_path, capsys):
    rc = run("table", "--granularity", 0.3, "--x-min", -1, "--x-max", 1, "--out", tmp_path / "t.json")
    assert rc == 2
    assert "integer" in capsys.readouterr().err


def test_approx_err_csv(tmp_path):
    out = tmp_path / "err.csv"
    assert run("approx-err", "--function", "GELU,TANH", "--granularity", "0.25,1", "--samples", 2000, "--out", out) == 0
    meta, rows = read_csv(out)
    assert meta.startswith("# tool=cpwlsa") and "config_hash=" in meta
    assert [(r["function"], r["granularity"]) for r in rows] == [
        ("GELU", "0.25"), ("GELU", "1"), ("TANH", "0.25"), ("TANH", "1")]


def test_gemm_and_baseline(tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert run("gemm", "--m", 12, "--n", 20, "--k", 70, "--baseline-model", "--out", out) == 0
    assert "identical" in capsys.readouterr().out
    _, rows = read_csv(out)
    assert rows[0]["mode"] == "GEMM" and rows[0]["mac_ops"] == str(12 * 20 * 70)


def test_mhp_command_and_fault(capsys):
    assert run("mhp", "--rows", 9, "--cols", 5) == 0
    assert "multiplies=90" in capsys.readouterr().out
    assert run("mhp", "--inject-fault") == 1
    assert "mode invariant" in capsys.readouterr().err
    assert run("mhp", "--granularity", 0.3) == 2


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"pe_rows": 4, "bogus": 1}')
    assert run("gemm", "--config", bad) == 2
    assert "bogus" in capsys.readouterr().err
    assert run("gemm", "--config", tmp_path / "missing.json") == 2


def test_config_file_is_used(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"pe_rows": 4, "pe_cols": 4, "macs_per_pe": 8}')
    out = tmp_path / "g.csv"
    assert run("gemm", "--config", cfg, "--out", out) == 0
    assert read_csv(out)[1][0]["config_id"] == "4x4m8"


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        run("cliff", "--arrays", "8by8")
    assert exc.value.code == 2


def test_run_net_writes_trace_and_manifest(tmp_path, capsys):
    out, man = tmp_path / "trace.csv", tmp_path / "net.json"
    assert run("run-net", "--samples", 200, "--out", out, "--save-manifest", man) == 0
    _, rows = read_csv(out)
    assert [r["kind"] for r in rows] == ["DENSE", "GELU", "DENSE", "SOFTMAX"]
    assert (tmp_path / "net.bin").exists()
    capsys.readouterr()
    assert run("run-net", "--samples", 200, "--manifest", man) == 0
    assert "accuracy=" in capsys.readouterr().out


def test_sweep_single_granularity(tmp_path):
    out = tmp_path / "s.csv"
    assert run("sweep", "--samples", 300, "--granularity", 0.25, "--out", out) == 0
    _, rows = read_csv(out)
    assert [k for k in rows[0] if k.startswith("delta_")] == ["delta_g0.25"]


def test_sweep_functional_gate(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run("sweep", "--samples", 200, "--granularity", 0.1, "--out", out) == 2
    assert "power-of-two" in capsys.readouterr().err
    assert run("sweep", "--samples", 200, "--granularity", 0.1, "--functional", "--out", out) == 0
    assert "delta_g0.1" in out.read_text()


def test_sweep_and_cliff_are_deterministic(tmp_path):
    for cmd in (["sweep", "--samples", 300, "--granularity", "0.25,1"],
                ["cliff", "--arrays", "4x4,8x8", "--macs", "8,16", "--sizes", "32,64", "--workers", 2]):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(*cmd, "--out", a) == 0
        assert run(*cmd, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()


def test_cliff_simulate_and_calibrate(tmp_path):
    out = tmp_path / "c.csv"
    assert run("cliff", "--arrays", "16x16", "--macs", 16, "--sizes", "32", "--simulate", "--calibrate",
               "--out", out) == 0
    _, rows = read_csv(out)
    assert abs(float(rows[0]["drain_fraction"]) - 0.848) <= 0.05


def test_verify_scopes(capsys):
    assert run("verify", "--scope", "cpwl") == 0
    text = capsys.readouterr().out
    assert text.count("65536 inputs checked") == 16
    assert run("verify", "--scope", "FABRIC", "--cases", 8, "--inject-fault") == 1
    assert "mode invariant" in capsys.readouterr().out


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cpwlsa.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "cpwlsa" in proc.stdout


def test_verify_all_passes(capsys):
    assert run("verify", "--cases", 40) == 0
    assert capsys.readouterr().out.rstrip().endswith("22/22 checks passed")
