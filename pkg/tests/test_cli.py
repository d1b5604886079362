import json

import pytest

from conftest import TINY_RUN
from diffava import cli, pipeline
from diffava.errors import NumericalDivergenceError


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg_path = root / "tiny.json"
    cfg_path.write_text(json.dumps(TINY_RUN))
    assert cli.main(["run-all", "--config", str(cfg_path), "--run-dir", str(root / "run")]) == 0
    return cfg_path, root / "run"


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_run_all_layout(tiny_run):
    _, run = tiny_run
    for rel in ("config.json", "data/train.dava", "data/test.dava.json", "models/alignment.bin",
                "models/codec.json", "models/denoiser.bin", "models/denoiser_raw_text.bin",
                "models/alignment_loss.csv", "samples/visual.dava", "reports/visual.json", "reports/text.json"):
        assert (run / rel).exists(), rel
    report = json.loads((run / "reports/visual.json").read_text())
    assert {"is", "kl", "fad", "fd", "onset_error", "sample_counts", "config_hash"} <= set(report)
    header = (run / "models/alignment_loss.csv").read_text().splitlines()[0]
    assert header == "epoch,split,value"


def test_evaluate_reference_against_itself(tiny_run, tmp_path, capsys):
    cfg, run = tiny_run
    out = tmp_path / "self.json"
    code = cli.main(["evaluate", "--config", str(cfg), "--models", str(run / "models"), "--data", str(run / "data"),
                     "--generated", str(run / "data/test.dava"), "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["fd"] < 1e-6 and rep["fad"] < 1e-6 and rep["kl"] == 0.0
    assert rep["onset_error"] == 0.0


def test_config_hash_mismatch_refused(tiny_run, tmp_path, capsys):
    cfg, run = tiny_run
    args = ["evaluate", "--config", str(cfg), "--set", "eval.seed=99", "--models", str(run / "models"),
            "--data", str(run / "data"), "--generated", str(run / "samples/visual.dava"), "--out", str(tmp_path / "r.json")]
    assert cli.main(args) == 2
    assert _err(capsys)["error"] == "ConfigError"
    assert cli.main(args + ["--force"]) == 0


def test_assert_flag(tiny_run, tmp_path, capsys):
    cfg, run = tiny_run
    base = ["evaluate", "--config", str(cfg), "--models", str(run / "models"), "--data", str(run / "data"),
            "--generated", str(run / "samples/visual.dava"), "--out", str(tmp_path / "r.json"), "--assert"]
    # comparing a report with itself can never show a positive gap
    assert cli.main(base + ["--baseline-report", str(run / "reports/visual.json")]) == 5
    assert _err(capsys)["error"] == "AcceptanceFailure"
    assert cli.main(base) == 5


def test_missing_and_corrupt_inputs(tiny_run, tmp_path, capsys):
    cfg, run = tiny_run
    assert cli.main(["train-codec", "--config", str(cfg), "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 3
    data = tmp_path / "data"
    data.mkdir()
    for name in ("train.dava", "val.dava", "train.dava.json", "val.dava.json"):
        (data / name).write_bytes((run / "data" / name).read_bytes())
    raw = (data / "train.dava").read_bytes()
    (data / "train.dava").write_bytes(raw[:-7])
    assert cli.main(["train-codec", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "m")]) == 3
    err = _err(capsys)
    assert err["error"] == "DataFormatError" and "offset" in err["message"]


def test_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["gen-data", "--set", "align.heads=5", "--out", str(tmp_path)]) == 2
    assert cli.main(["gen-data", "--set", "broken", "--out", str(tmp_path)]) == 2


def test_divergence_exit_4(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise NumericalDivergenceError("non-finite value at sampling step 7")

    monkeypatch.setattr(pipeline, "gen_data", boom)
    assert cli.main(["gen-data", "--out", str(tmp_path)]) == 4
    assert "step 7" in _err(capsys)["message"]


def test_grad_check_command(capsys):
    assert cli.main(["grad-check", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    for name in ("contrastive", "alignment", "diffusion"):
        assert name in out
