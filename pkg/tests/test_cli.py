import io
import os

import pytest

from cerisier import cases
from cerisier.cli import main


def cli(*argv, env=None):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_case_soc():
    code, out, _ = cli("--ci", "case", "soc")
    assert code == 0
    assert "result=42 flag=0" in out.splitlines()
    assert "golden matches" in out


def test_case_variants_exit_zero_when_expected():
    assert cli("--ci", "case", "soc", "--variant", "modified")[0] == 0
    assert cli("case", "sensor", "--variant", "nope")[0] == 4


def test_ci_suppresses_timing_footer():
    _, _, err = cli("--ci", "case", "soc")
    assert err == ""
    _, _, err = cli("case", "soc")
    assert err.startswith("elapsed ")


def test_fuzz_twice_identical():
    a = cli("--ci", "fuzz", "soc", "--runs", "100", "--seed", "7", "--fuel", "5000")
    b = cli("--ci", "fuzz", "soc", "--runs", "100", "--seed", "7", "--fuel", "5000")
    assert a == b and a[0] == 0
    assert a[1].splitlines()[-1] == "SUMMARY runs=100 failures=0"
    assert len(a[1].splitlines()) == 101


def test_fuzz_tsv_and_mutation(tmp_path):
    code, out, _ = cli("--ci", "--format", "tsv", "fuzz", "soc", "--runs", "5", "--fuel", "2000")
    assert out.splitlines()[0].split("\t") == ["seed", "outcome", "steps", "flag", "violations"]
    code, out, _ = cli("--ci", "fuzz", "soc", "--runs", "3", "--mutation", "bogus")
    assert code == 4


def test_run_and_snapshot_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.snap", tmp_path / "b.snap"
    r1 = cli("--ci", "run", "soc", "--snapshot", str(p1), "--result", "r8")
    r2 = cli("--ci", "run", "soc", "--snapshot", str(p2), "--result", "r8")
    assert r1 == r2 and r1[0] == 0
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().startswith("cerisier-snapshot v1 addrmax=4095 otypemax=4095 ec=1 status=Halted")
    assert "result=42" in r1[1]


def test_run_exit_statuses():
    assert cli("--ci", "run", cases.spec_path("soc_modified"))[0] == 1
    assert cli("--ci", "run", cases.spec_path("soc_broken"))[0] == 3
    assert cli("--ci", "run", "soc", "--fuel", "10")[0] == 2


def test_trace_prints_steps_then_report():
    code, out, _ = cli("--ci", "trace", "soc")
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("step=1 pc=cap:RX:")
    assert lines[-1].startswith("seed=- outcome=Halted steps=61")


def test_check_overlap_exit_4(tmp_path):
    text = open(cases.spec_path("soc")).read().replace("region advdata 768", "region advdata 700")
    p = tmp_path / "bad.spec"
    p.write_text(text.replace("soc_client.casm", os.path.join(cases.HERE, "soc_client.casm"))
                 .replace(" soc_adv.casm", " " + os.path.join(cases.HERE, "soc_adv.casm"))
                 .replace(" soc_enclave.casm", " " + os.path.join(cases.HERE, "soc_enclave.casm"))
                 .replace(" leaky_enclave.casm", " " + os.path.join(cases.HERE, "leaky_enclave.casm")))
    code, out, _ = cli("--ci", "check", str(p))
    assert code == 4
    assert any(ln.startswith("violation ") and "overlap" in ln for ln in out.splitlines())
    assert cli("--ci", "check", "soc")[:2] == (0, "check ok violations=0\n")


def test_parse_errors_exit_4(tmp_path):
    p = tmp_path / "x.casm"
    p.write_text("halt\nmov r1\n")
    code, _, err = cli("--ci", "asm", str(p))
    assert code == 4 and f"{p}:2:" in err
    assert cli("--ci", "run", str(tmp_path / "missing.spec"))[0] == 4
    assert cli()[0] == 4


def test_asm_outputs(tmp_path):
    p = tmp_path / "x.casm"
    p.write_text("top: mov r1 1\nhalt\n")
    out_path = tmp_path / "x.img"
    assert cli("--ci", "asm", str(p), "--base", "16", "-o", str(out_path), "--sym")[0] == 0
    assert out_path.read_text().splitlines()[0] == "cerisier-image v1 base=16 size=2"
    assert (tmp_path / "x.img.sym").read_text() == "sym top 16\n"
    code, out, err = cli("--ci", "asm", os.path.join(cases.HERE, "soc_client.casm"), "--allow-unresolved")
    assert code == 0 and "id:soc" in err


def test_config_env_overrides_defaults(tmp_path, monkeypatch):
    cfg = tmp_path / "m.cfg"
    cfg.write_text("otypemax=64\n")
    p = tmp_path / "tiny.spec"
    p.write_text(f"region client 0 RWX {tmp_path / 'c.casm'} role=client\n"
                 "entry pc cap:RX:client:client.end:client\nflag client.flag\n")
    (tmp_path / "c.casm").write_text("halt\nflag: .word 0\n")
    monkeypatch.setenv("CERISIER_CONFIG", str(cfg))
    snap = tmp_path / "s"
    assert cli("--ci", "run", str(p), "--snapshot", str(snap))[0] == 0
    assert "otypemax=64" in snap.read_text().splitlines()[0]
