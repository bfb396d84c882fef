import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from switchtrack import cli
from switchtrack.errors import IncompatibleWeightsError, ProblemValidationError
from switchtrack.io import bundled_document, load_config, read_weights, write_weights
from switchtrack.snac import TrainConfig, train


def small_doc(**overrides):
    doc = bundled_document("lq_two_mode")
    doc["dthat"] = 0.02
    doc["train"] = {"eta": 80, "gamma": 1e-4, "max_inner": 30, "seed": 1}
    doc["x0"] = [0.5, -0.5]
    doc.update(overrides)
    return doc


@pytest.fixture
def config(tmp_path):
    def make(name="problem.json", **overrides):
        path = tmp_path / name
        path.write_text(json.dumps(small_doc(**overrides)))
        return str(path)
    return make


@pytest.fixture
def trained(config, tmp_path):
    cfg = config()
    assert cli.main(["train", cfg, "--outdir", str(tmp_path), "-o", "w.json"]) == 0
    return cfg, str(tmp_path / "w.json")


def _data_rows(path):
    return [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")][1:]


def test_bundled_documents_load():
    for name in ("vdp", "lq_two_mode"):
        loaded = load_config(bundled_document(name))
        assert loaded.problem.K == 1
    assert load_config(bundled_document("vdp")).grid.Nprime == 2000


def test_missing_keys_and_bad_json(tmp_path):
    with pytest.raises(ProblemValidationError, match="missing keys"):
        load_config({"modes": []})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ProblemValidationError, match="not valid JSON"):
        load_config(str(bad))


def test_weights_round_trip(tmp_path):
    loaded = load_config(small_doc())
    net, _ = train(loaded.problem, loaded.grid, TrainConfig(eta=80, gamma=1e-3, seed=0))
    path = tmp_path / "w.json"
    write_weights(path, net, loaded, 0)
    back, header = read_weights(path, loaded)
    assert np.array_equal(back.weights, net.weights)
    assert header["config_hash"] == loaded.config_hash and header["seed"] == 0
    other = load_config(small_doc(tf=0.6))
    with pytest.raises(IncompatibleWeightsError, match="hash mismatch"):
        read_weights(path, other)


def test_train_is_byte_identical(config, tmp_path):
    cfg = config()
    for name in ("a.json", "b.json"):
        assert cli.main(["train", cfg, "--seed", "7", "--outdir", str(tmp_path), "-o", name]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    head = json.loads((tmp_path / "a.json").read_text())
    assert head["seed"] == 7 and len(head["config_hash"]) == 16
    hist = (tmp_path / "a.history.csv").read_text().splitlines()
    assert hist[0] == f"# seed=7 config_hash={head['config_hash']}"
    assert hist[1] == "khat,iteration,frobenius_change,residual_rms"
    assert len(_data_rows(tmp_path / "a.steps.csv")) == head["Nprime"] - 1


def test_underdetermined_train_exits_1(config, tmp_path, capsys):
    cfg = config(train={"eta": 10})
    assert cli.main(["train", cfg, "--outdir", str(tmp_path)]) == 1
    assert "fit underdetermined" in capsys.readouterr().err


def test_invalid_problem_exits_1(config, tmp_path, capsys):
    cfg = config(Rbar=[[0.0]])
    assert cli.main(["validate", cfg]) == 1
    assert "Rbar not positive definite" in capsys.readouterr().err


def test_incompatible_weights_exit_1(trained, config, tmp_path, capsys):
    _, weights = trained
    other = config("other.json", tf=0.7)
    code = cli.main(["rollout", other, "-w", weights, "--tsw", "0.3", "--outdir", str(tmp_path)])
    assert code == 1 and "hash mismatch" in capsys.readouterr().err


def test_rollout_outputs(trained, tmp_path):
    cfg, weights = trained
    assert cli.main(["rollout", cfg, "-w", weights, "--tsw", "0.25", "--outdir", str(tmp_path)]) == 0
    rows = _data_rows(tmp_path / "trajectory.csv")
    assert len(rows) == 101
    summary = json.loads((tmp_path / "trajectory.summary.json").read_text())
    assert summary["policy"] == "costate-feedback" and summary["_header"].startswith("seed=1 ")
    assert cli.main(["rollout", cfg, "--policy", "zero", "--tsw", "0.25", "--outdir", str(tmp_path),
                     "-o", "z.csv"]) == 0
    zero_u = [r.split(",")[9] for r in _data_rows(tmp_path / "z.csv")[:-1]]
    assert set(zero_u) == {"0.0"}


def test_sweep_method3_and_method2(trained, tmp_path):
    cfg, weights = trained
    assert cli.main(["sweep", cfg, "-w", weights, "--method", "3", "--outdir", str(tmp_path)]) == 0
    rows = [r.split(",") for r in _data_rows(tmp_path / "value_curve.csv")]
    assert len(rows) == 30 and sum(int(r[-1]) for r in rows) == 1
    chosen = json.loads((tmp_path / "value_curve.chosen.json").read_text())
    best = min((float(r[1]), i) for i, r in enumerate(rows))[1]
    assert chosen["switch_times"][0] == float(rows[best][0])
    assert cli.main(["sweep", cfg, "-w", weights, "--method", "2", "--outdir", str(tmp_path),
                     "-o", "m2.csv"]) == 0
    assert (tmp_path / "m2.poly.txt").exists()


def test_method2_with_two_switches_is_unsupported(config, tmp_path, capsys):
    cfg = config(sequence=[1, 2, 1], dthat=0.05, train={"eta": 80, "max_inner": 2})
    assert cli.main(["train", cfg, "--outdir", str(tmp_path), "-o", "w.json"]) == 0
    code = cli.main(["sweep", cfg, "-w", str(tmp_path / "w.json"), "--method", "2", "--outdir", str(tmp_path)])
    assert code == 1 and "unsupported" in capsys.readouterr().err


def test_oracle_check_pass_and_fail(config, tmp_path, capsys):
    cfg = config(train={"eta": 300, "gamma": 1e-4, "max_inner": 50, "seed": 3}, terminal_factor=2.0)
    assert cli.main(["oracle-check", cfg, "--outdir", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("PASS")
    assert cli.main(["oracle-check", cfg, "--max-inner", "1", "--outdir", str(tmp_path)]) == 3
    assert capsys.readouterr().out.startswith("FAIL")


def test_oracle_check_rejects_nonlinear(tmp_path, capsys):
    path = tmp_path / "vdp.json"
    path.write_text(json.dumps(bundled_document("vdp")))
    assert cli.main(["oracle-check", str(path), "--outdir", str(tmp_path)]) == 1
    assert "oracle requires linear modes" in capsys.readouterr().err


def test_output_dir_from_environment(config, tmp_path, monkeypatch):
    cfg = config()
    target = tmp_path / "env_out"
    monkeypatch.setenv("SWITCHTRACK_OUTPUT_DIR", str(target))
    assert cli.main(["rollout", cfg, "--policy", "zero", "--tsw", "0.2"]) == 0
    assert (target / "trajectory.csv").exists()


def test_version_and_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "switchtrack", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "switchtrack 0.1.0 (config schema 1)"
