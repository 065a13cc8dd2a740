import json
import subprocess
import sys

import numpy as np
import pytest

from wel.calculus import field_to_csv
from wel.cli import main
from wel.grid import build_disk


def run(capsys, *args):
    code = main(list(args) + ["--json"])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_lemma_fuzz(capsys):
    code, rep = run(capsys, "lemma-fuzz", "--samples", "200000", "--seed", "7")
    assert code == 0 and rep["result"]["max_defect"] <= 1e-12
    assert rep["result"]["hand_triple"] == {"lhs": -245.0, "rhs": -245.0}
    code, rep = run(capsys, "lemma-fuzz", "--samples", "50000", "--adversarial")
    assert code == 0


def test_lemma_fuzz_rejects_zero_samples(capsys):
    assert main(["lemma-fuzz", "--samples", "0"]) == 2


def test_check_epsilon_example(capsys):
    code, rep = run(capsys, "check", "--kind", "epsilon", "--weight", "|x|", "--eps", "0.5",
                    "--seeds", "20", "--resolution", "256")
    assert code == 0
    reports = rep["result"]["reports"]
    assert len(reports) == 20 and all(r["verdict"] == "pass" for r in reports)
    assert len({r["seed"] for r in reports}) == 20


def test_check_bad_tau(capsys):
    assert main(["check", "--kind", "elliptic", "--tau", "0"]) == 2
    assert main(["check", "--kind", "nonsense"]) == 2


def test_check_computed_lambda1_on_square(capsys):
    code, rep = run(capsys, "check", "--kind", "ckn", "--lambda1", "computed", "--domain", "square",
                    "--resolution", "128", "--seeds", "2", "--weight", '{"family": "constant"}')
    assert code == 0
    lam = rep["result"]["reports"][0]["constants"]["lambda1"]
    assert abs(lam - 19.74) < 0.02 and rep["result"]["lambda1_mode"] == "computed"


def test_check_elliptic_two_point_weight(capsys):
    code, rep = run(capsys, "check", "--kind", "elliptic", "--weight", "|x||x-e1|", "--seeds", "5")
    assert code == 0


def test_decompose(capsys, tmp_path):
    code, rep = run(capsys, "decompose", "--weight", "1", "--resolution", "64")
    assert code == 0 and rep["result"]["gap"]["lhs"] < 1e-20
    code, rep = run(capsys, "decompose", "--weight", "|x|", "--eps", "0.5", "--resolution", "64",
                    "--out", str(tmp_path))
    assert code == 0 and rep["result"]["gap"]["verdict"] == "pass"
    for name in ("xi1", "xi2", "phi1", "phi2", "A"):
        assert (tmp_path / f"{name}.csv").exists()
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert on_disk["result"] == rep["result"]


def test_decompose_from_form_file(capsys, tmp_path):
    g = build_disk((0, 0), 1.0, h=1 / 32)
    A = np.zeros((2,) + g.shape)
    A[0][np.hypot(g.x - 0.5, g.y) < 0.2] = 1.0
    field_to_csv(g, A, tmp_path / "A.csv")
    code, rep = run(capsys, "decompose", "--resolution", "32", "--form", str(tmp_path / "A.csv"))
    assert code == 0
    assert main(["decompose", "--resolution", "64", "--form", str(tmp_path / "A.csv")]) == 2
    field_to_csv(g, A[0], tmp_path / "s.csv")
    assert main(["decompose", "--resolution", "32", "--form", str(tmp_path / "s.csv")]) == 2


def test_verify_weight(capsys):
    code, rep = run(capsys, "verify-weight", "--weight", "|x|", "--resolutions", "64,128")
    assert code == 0
    for run_ in rep["result"]["runs"]:
        assert abs(run_["ratios"][0] - 4) <= 1.0
    code, rep = run(capsys, "verify-weight", "--weight", "1")
    assert code == 0
    assert all(v["residual"] == 0.0 for r in rep["result"]["runs"] for v in r["residuals"])
    assert main(["verify-weight", "--weight", "{not json"]) == 2


def test_verify_weight_detects_wrong_kappa(capsys):
    w = json.dumps({"family": "power_product", "points": [[0, 0]], "alphas": [1.0]})
    code, _ = run(capsys, "verify-weight", "--weight", w, "--kappa", "3.0")
    assert code == 1


def test_logpolar(capsys):
    code, rep = run(capsys, "logpolar")
    sin = rep["result"]["cases"]["sin-theta"]
    assert code == 0 and sin["fourth"] <= 1e-10
    assert sin["zeroth"] == pytest.approx(np.pi * 12, rel=1e-8)
    code, rep = run(capsys, "logpolar", "--case", "constant", "--eps", "0.5")
    const = rep["result"]["cases"]["constant"]
    assert const["fourth"] == pytest.approx(2 * np.pi * 12, rel=1e-9)
    assert const["eps"]["zeroth"] == pytest.approx(2 * np.pi * (1 - np.exp(-12)), rel=1e-9)
    assert main(["logpolar", "--case", "file"]) == 2


def test_logpolar_mode_file(capsys, tmp_path):
    modes = np.zeros((3, 64), dtype=complex)
    modes[1] = np.sin(np.linspace(0, np.pi, 64)) ** 2
    np.save(tmp_path / "m.npy", modes)
    code, rep = run(capsys, "logpolar", "--case", "file", "--mode-file", str(tmp_path / "m.npy"), "--t-max", "3")
    assert code == 0 and rep["result"]["cases"]["file"]["fourth"] > 0


def test_eigenvalue_and_sweep(capsys):
    code, rep = run(capsys, "eigenvalue", "--domain", "rect1x2", "--resolution", "64")
    assert code == 0 and rep["result"]["lambda1"] == pytest.approx(1.25 * np.pi**2, rel=2e-3)
    code, rep = run(capsys, "sweep", "--kind", "ckn", "--resolutions", "32,64")
    assert code == 0 and len(rep["result"]["rows"]) == 2
    assert main(["sweep", "--lambda1", "computed"]) == 2


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "epsilon", "eps": 0.25, "seeds": 3, "resolution": 64}))
    code, rep = run(capsys, "check", "--config", str(cfg), "--seeds", "2")
    assert code == 0
    assert rep["config"]["eps"] == 0.25 and rep["config"]["seeds"] == 2
    assert len(rep["result"]["reports"]) == 2
    cfg.write_text(json.dumps({"kind": "ckn", "colour": "blue"}))
    assert main(["check", "--config", str(cfg)]) == 2
    cfg.write_text("[1, 2]")
    assert main(["check", "--config", str(cfg)]) == 2
    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 2


def _strip(text):
    rep = json.loads(text)
    rep.pop("timestamp")
    return json.dumps(rep, sort_keys=True)


@pytest.mark.parametrize("args", [
    ["check", "--kind", "elliptic", "--weight", "|x|^0.5", "--seeds", "4", "--resolution", "64"],
    ["decompose", "--resolution", "64", "--seed", "3"],
    ["lemma-fuzz", "--samples", "10000"],
])
def test_determinism(tmp_path, monkeypatch, args):
    texts = []
    for threads in ("1", "4"):
        monkeypatch.setenv("WEL_THREADS", threads)
        assert main(args + ["--out", str(tmp_path)]) == 0
        texts.append((tmp_path / "report.json").read_text())
    assert _strip(texts[0]) == _strip(texts[1])


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "wel.cli", "lemma-fuzz", "--samples", "100"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip().endswith("PASS")
