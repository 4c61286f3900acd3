from __future__ import annotations

import json

import numpy as np
import pytest

from crowdmotion.cli import (
    EXIT_CONFIG,
    EXIT_GRADCHECK,
    EXIT_IO,
    EXIT_METRIC,
    EXIT_MISMATCH,
    EXIT_OK,
    main,
)
from crowdmotion.flowio import read_flow_file, read_labels


@pytest.fixture()
def small(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"width": 32, "height": 24, "epochs": 2, "m": 8, "batch_size": 4}))
    return tmp_path, ["--config", str(cfg), "--log-level", "WARNING"]


def _pipeline(d, base):
    assert main(["synth", *base, "--segments", "laminar:20", "--flow", str(d / "tr.mscf"),
                 "--labels", str(d / "tr.txt")]) == EXIT_OK
    assert main(["synth", *base, "--synth-seed", "5", "--segments", "laminar:10,turbulence:10,counter_flow:10",
                 "--flow", str(d / "te.mscf"), "--labels", str(d / "te.txt")]) == EXIT_OK
    for name in ("tr", "te"):
        assert main(["extract", *base, "--flow", str(d / f"{name}.mscf"),
                     "--graphs", str(d / f"{name}.jsonl")]) == EXIT_OK
    assert main(["train", *base, "--graphs", str(d / "tr.jsonl"), "--checkpoint", str(d / "ck.json")]) == EXIT_OK
    assert main(["score", *base, "--graphs", str(d / "te.jsonl"), "--checkpoint", str(d / "ck.json"),
                 "--scores", str(d / "s.tsv")]) == EXIT_OK
    return main(["eval", *base, "--scores", str(d / "s.tsv"), "--labels", str(d / "te.txt"),
                 "--metrics", str(d / "m.json")])


def test_full_pipeline_outputs(small):
    d, base = small
    assert _pipeline(d, base) == EXIT_OK
    seq = read_flow_file(d / "te.mscf")
    assert (seq.width, seq.height, len(seq)) == (32, 24, 30)
    assert read_labels(d / "te.txt").tolist() == [0] * 10 + [1] * 20
    lines = (d / "s.tsv").read_text().splitlines()
    assert len(lines) == 30
    assert all(line.split("\t")[0] == str(i) for i, line in enumerate(lines))
    scores = np.array([float(line.split("\t")[1]) for line in lines])
    assert ((scores >= 0) & (scores <= 1)).all()
    metrics = json.loads((d / "m.json").read_text())
    assert {"auc", "eer", "auc_percent", "eer_percent", "roc"} <= set(metrics)
    log = [json.loads(x) for x in (d / "ck.json.log").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]
    assert {"fus", "aux", "sof", "total"} <= set(log[0])
    for out in ("tr.mscf", "tr.jsonl", "ck.json", "s.tsv", "m.json"):
        assert (d / f"{out}.config.json").exists()


def test_rerun_from_echo_is_bit_identical(small):
    d, base = small
    _pipeline(d, base)
    first = (d / "s.tsv").read_bytes()
    ck = (d / "ck.json").read_bytes()
    echo = d / "s.tsv.config.json"
    assert main(["train", "--config", str(d / "ck.json.config.json"), "--log-level", "WARNING",
                 "--checkpoint", str(d / "ck2.json")]) == EXIT_OK
    assert main(["score", "--config", str(echo), "--log-level", "WARNING",
                 "--checkpoint", str(d / "ck2.json"), "--scores", str(d / "s2.tsv")]) == EXIT_OK
    assert (d / "s2.tsv").read_bytes() == first
    a = json.loads(ck)
    b = json.loads((d / "ck2.json").read_bytes())
    a["config"].pop("checkpoint")
    b["config"].pop("checkpoint")
    assert a == b


def test_eval_perfect_separation_fixture(tmp_path, capsys):
    (tmp_path / "s.tsv").write_text("0\t0.9\n1\t0.8\n2\t0.2\n3\t0.1\n")
    (tmp_path / "l.txt").write_text("1\n1\n0\n0\n")
    rc = main(["eval", "--scores", str(tmp_path / "s.tsv"), "--labels", str(tmp_path / "l.txt"),
               "--metrics", str(tmp_path / "m.json"), "--min-auc", "0.99", "--max-eer", "0.01"])
    assert rc == EXIT_OK
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["auc"] == 1.0 and m["eer"] == 0.0
    assert "AUC 1.0000 (100.00%)" in capsys.readouterr().out


def test_eval_threshold_failure(tmp_path):
    (tmp_path / "s.tsv").write_text("0\t0.1\n1\t0.9\n")
    (tmp_path / "l.txt").write_text("1\n0\n")
    rc = main(["eval", "--scores", str(tmp_path / "s.tsv"), "--labels", str(tmp_path / "l.txt"),
               "--metrics", str(tmp_path / "m.json"), "--min-auc", "0.5"])
    assert rc == EXIT_METRIC


def test_exit_codes(small, tmp_path):
    d, base = small
    assert main(["extract", *base, "--flow", str(d / "missing.mscf"), "--graphs", str(d / "g.jsonl")]) == EXIT_IO
    assert main(["train", *base, "--graphs", str(d / "g.jsonl")]) == EXIT_CONFIG  # no --checkpoint
    bad = d / "bad.json"
    bad.write_text('{"epochz": 3}')
    assert main(["train", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["train", "--config", str(d / "nope.json")]) == EXIT_CONFIG
    (d / "junk.mscf").write_bytes(b"XXXX" + bytes(40))
    assert main(["extract", *base, "--flow", str(d / "junk.mscf"), "--graphs", str(d / "g.jsonl")]) == EXIT_IO
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_mismatch_exit_codes(small):
    d, base = small
    _pipeline(d, base)
    rc = main(["score", *base, "--embed-dim", "8", "--graphs", str(d / "te.jsonl"),
               "--checkpoint", str(d / "ck.json"), "--scores", str(d / "x.tsv")])
    assert rc == EXIT_MISMATCH
    rc = main(["score", *base, "--m", "6", "--graphs", str(d / "te.jsonl"),
               "--checkpoint", str(d / "ck.json"), "--scores", str(d / "x.tsv")])
    assert rc == EXIT_MISMATCH
    rc = main(["train", *base, "--scale-factors", "1,2", "--graphs", str(d / "tr.jsonl"),
               "--checkpoint", str(d / "x.json")])
    assert rc == EXIT_MISMATCH


def test_gradcheck_command(small, monkeypatch):
    d, base = small
    rc = main(["gradcheck", *base, "--gradcheck-coords", "40", "--report", str(d / "gc.txt")])
    assert rc == EXIT_OK
    assert "gradcheck: PASS" in (d / "gc.txt").read_text()
    # negative control: a sign-flipped analytic gradient must fail the gate
    import crowdmotion.training as training

    real = training.loss_and_grads

    def flipped(*args, **kwargs):
        report, grads = real(*args, **kwargs)
        return report, {k: -g for k, g in grads.items()}

    monkeypatch.setattr(training, "loss_and_grads", flipped)
    rc = main(["gradcheck", *base, "--gradcheck-coords", "40"])
    assert rc == EXIT_GRADCHECK
