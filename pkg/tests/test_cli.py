import json
import subprocess
import sys
from pathlib import Path

import pytest

from acx.cli import main
from acx.ledger import Ledger


def run(*argv) -> int:
    return main([str(a) for a in argv])


def _synth(tmp_path: Path, name: str, seed=None) -> Path:
    d = tmp_path / name
    args = ["synth", "generate", "--scenario", name, "--out", d]
    if seed is not None:
        args += ["--seed", seed]
    assert run(*args) == 0
    return d


def _data(d: Path) -> list:
    return ["--panel", d / "panel.csv", "--schema", d / "panel.acxschema"]


def _audit(d: Path, ledger: Path) -> int:
    return run(
        "audit", "run", *_data(d), "--contract", d / "contract.acx", "--attestations", d / "attestations.acx",
        "--out", d / "audit.acxr", "--ledger", ledger,
    )


def test_full_pipeline(tmp_path, capsys):
    d = _synth(tmp_path, "clean-2x2")
    led = tmp_path / "a.acxl"
    pc = tmp_path / "precommit.acx"
    assert _audit(d, led) == 0
    assert run("commit", "init", "--out", pc) == 0
    assert run("estimate", "run", "--exploratory", "--estimator", "TWFE_Static", *_data(d), "--ledger", led) == 0
    assert run("commit", "lock", "--statement", pc, "--audit", d / "audit.acxr", "--ledger", led) == 0
    assert run("commit", "verify", "--statement", pc, "--ledger", led) == 0
    capsys.readouterr()
    assert run("estimate", "run", "--confirmatory", *_data(d), "--ledger", led, "--statement", pc) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["taint"] == "confirmatory" and out["spec"]["estimator"] == "DiD2x2"
    assert run("evaluate", "--statement", pc, "--audit", d / "audit.acxr", "--ledger", led) == 0
    assert "overall: Trustworthy-as-committed" in capsys.readouterr().out
    rep = tmp_path / "report"
    assert run("report", "build", "--contract", d / "contract.acx", "--audit", d / "audit.acxr", "--ledger", led,
               "--statement", pc, "--out", rep) == 0
    assert "label: causal" in capsys.readouterr().out
    assert (rep / "report.md").exists() and (rep / "report.acxr").exists()
    assert (rep / "plots" / "parallel_trends.svg").exists()
    assert run("ledger", "verify", led) == 0
    assert capsys.readouterr().out.startswith("ok: 4 entries")
    assert run("ledger", "multiplicity", led) == 0
    m = json.loads(capsys.readouterr().out)
    assert (m["total_specs"], m["distinct_specs"], m["exploratory"], m["confirmatory"]) == (2, 2, 1, 1)


@pytest.mark.parametrize("name", ["health-plan-2.1", "education-its-2.2"])
def test_blocked_cases_refuse_confirmatory(tmp_path, name):
    d = _synth(tmp_path, name)
    led = tmp_path / "b.acxl"
    pc = tmp_path / "precommit.acx"
    assert _audit(d, led) == 2
    assert run("commit", "init", "--out", pc) == 0
    assert run("commit", "lock", "--statement", pc, "--audit", d / "audit.acxr", "--ledger", led) == 2
    assert run("estimate", "run", "--confirmatory", *_data(d), "--ledger", led, "--statement", pc) == 2
    assert run("estimate", "run", "--exploratory", "--estimator", "DiD2x2", *_data(d), "--ledger", led) == 0


def test_confirmatory_refused_after_downgrade(tmp_path):
    d = _synth(tmp_path, "health-plan-2.1")
    led = tmp_path / "c.acxl"
    pc = tmp_path / "precommit.acx"
    _audit(d, led)
    run("commit", "init", "--out", pc)
    pc.write_text(pc.read_text().replace("downgrade =\n", "downgrade = descriptive\n"))
    assert run("commit", "lock", "--statement", pc, "--audit", d / "audit.acxr", "--ledger", led) == 0
    assert run("estimate", "run", "--confirmatory", *_data(d), "--ledger", led, "--statement", pc) == 2


def test_confirmatory_must_be_primary(tmp_path):
    d = _synth(tmp_path, "clean-2x2")
    led, pc = tmp_path / "d.acxl", tmp_path / "pc.acx"
    _audit(d, led)
    run("commit", "init", "--out", pc)
    run("commit", "lock", "--statement", pc, "--audit", d / "audit.acxr", "--ledger", led)
    assert run("estimate", "run", "--confirmatory", "--estimator", "TWFE_Static", *_data(d), "--ledger", led,
               "--statement", pc) == 2


def test_tamper_exit_codes(tmp_path):
    d = _synth(tmp_path, "clean-2x2")
    led, pc = tmp_path / "t.acxl", tmp_path / "pc.acx"
    _audit(d, led)
    run("commit", "init", "--out", pc)
    run("commit", "lock", "--statement", pc, "--audit", d / "audit.acxr", "--ledger", led)
    pc.write_text(pc.read_text().replace("pretrend.p < 0.10", "pretrend.p < 0.01"))
    assert run("commit", "verify", "--statement", pc, "--ledger", led) == 4
    data = led.read_bytes()
    led.write_bytes(data.replace(b'"gate":"Open"', b'"gate":"Opem"'))
    assert run("ledger", "verify", led) == 4
    assert run("ledger", "note", led, "--text", "x") == 4


def test_validation_errors_exit_3(tmp_path):
    bad = tmp_path / "bad.acx"
    bad.write_text("[contract]\nmethod = DiD2x2\nbogus = 1\n")
    assert run("contract", "validate", bad) == 3
    assert run("synth", "generate", "--scenario", "nope", "--out", tmp_path / "x") == 3
    assert run("ledger", "verify", tmp_path / "missing.acxl") == 3


def test_contract_init_validates(tmp_path):
    out = tmp_path / "c.acx"
    assert run("contract", "init", "--method", "PSM", "--out", out) == 0
    assert run("contract", "validate", out) == 0


def test_missing_plot_exit_3(tmp_path):
    d = _synth(tmp_path, "clean-2x2")
    led = tmp_path / "m.acxl"
    _audit(d, led)
    (d / "plots" / "parallel_trends.svg").unlink()
    assert run("report", "build", "--contract", d / "contract.acx", "--audit", d / "audit.acxr", "--ledger", led,
               "--out", tmp_path / "r") == 3


def test_acx_seed_env(tmp_path, monkeypatch):
    a = _synth(tmp_path / "a", "clean-2x2")
    monkeypatch.setenv("ACX_SEED", "77")
    b = _synth(tmp_path / "b", "clean-2x2")
    c = _synth(tmp_path / "c", "clean-2x2", seed=77)
    assert (a / "panel.csv").read_bytes() != (b / "panel.csv").read_bytes()
    assert (b / "panel.csv").read_bytes() == (c / "panel.csv").read_bytes()


def test_second_writer_gets_concurrent_writer(tmp_path):
    led = Ledger.create(tmp_path / "w.acxl")
    with led.writer():
        proc = subprocess.run(
            [sys.executable, "-m", "acx.cli", "ledger", "note", str(led.path), "--text", "from another process"],
            capture_output=True,
            text=True,
        )
    assert proc.returncode == 3
    assert "ConcurrentWriter" in proc.stderr
    assert run("ledger", "note", led.path, "--text", "ok now") == 0
