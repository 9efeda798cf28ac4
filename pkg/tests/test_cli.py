import json

import numpy as np
import pytest

from egotraj import cli
from egotraj.errors import NumericalError
from egotraj.evaluation import read_labels, read_predictions

from conftest import TINY


def flags(values):
    out = []
    for k, v in values.items():
        out += [f"--{k.replace('_', '-')}", str(v)]
    return out


def test_synth_and_extract_windows(tmp_path, capsys):
    assert cli.main(["synth", "-o", str(tmp_path / "v"), "--classes", "stir", "--frames", "31",
                     "--width", "72", "--height", "56"]) == 0
    args = ["extract", str(tmp_path / "v"), "-o", str(tmp_path / "a.ext")] + flags(TINY)
    assert cli.main(args) == 0
    assert "31 frames" in capsys.readouterr().out
    args[3] = str(tmp_path / "b.ext")
    assert cli.main(args) == 0
    assert (tmp_path / "a.ext").read_bytes() == (tmp_path / "b.ext").read_bytes()


def test_error_exit_codes(tmp_path, capsys, monkeypatch):
    (tmp_path / "empty").mkdir()
    assert cli.main(["extract", str(tmp_path / "empty"), "-o", str(tmp_path / "x.ext")]) == 2
    assert "error" in capsys.readouterr().err
    assert cli.main(["extract", str(tmp_path / "empty"), "-o", str(tmp_path / "x.ext"), "--window", "7"]) == 3
    assert cli.main(["eval", str(tmp_path / "nope.csv"), str(tmp_path / "nope2.csv")]) == 2

    def boom(args):
        raise NumericalError("diverged")

    monkeypatch.setattr(cli, "cmd_eval", boom)
    assert cli.main(["eval", "a", "b"]) == 4


def test_full_cli_flow(tiny_video, tmp_path, capsys):
    root, ext, _ = tiny_video
    ann = root / "frames" / "annotations.csv"
    model = tmp_path / "model"
    assert cli.main(["train", "--pair", str(root / "video.ext"), str(ann), "-o", str(model)] + flags(TINY)) == 0
    assert (model / "svm.bin").is_file() and (model / "codebook_hog.cbk").is_file()

    pred = tmp_path / "pred.csv"
    assert cli.main(["predict", str(root / "video.ext"), "--model", str(model), "-o", str(pred)]) == 0
    frames, labels, scores, classes = read_predictions(pred)
    assert frames == list(range(1, 81)) and scores.shape == (80, 2)
    assert classes == ["stir", "translate-right"]

    seg = tmp_path / "seg.csv"
    capsys.readouterr()
    assert cli.main(["segment", str(pred), "--extraction", str(root / "video.ext"), "-o", str(seg)]) == 0
    words = capsys.readouterr().out.split()
    before, after = float(words[2]), float(words[4])
    assert after <= before

    seg0 = tmp_path / "seg0.csv"
    assert cli.main(["segment", str(pred), "--extraction", str(root / "video.ext"), "-o", str(seg0),
                     "--mrf-lambda", "0"]) == 0
    _, p0, s0 = read_labels(seg0)
    assert s0 == p0
    big = tmp_path / "big.csv"
    assert cli.main(["segment", str(pred), "--extraction", str(root / "video.ext"), "-o", str(big),
                     "--mrf-lambda", "1e6"]) == 0
    assert len(set(read_labels(big)[2])) == 1

    capsys.readouterr()
    assert cli.main(["eval", str(seg), str(ann), "-o", str(tmp_path / "r.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert 0.0 <= report["frame_accuracy"] <= 1.0 and report["post_mrf_accuracy"] is not None
    assert np.sum(report["confusion"]) == 80
    assert json.loads((tmp_path / "r.json").read_text()) == report

    pred2 = tmp_path / "pred2.csv"
    assert cli.main(["predict", str(root / "video.ext"), "--model", str(model), "-o", str(pred2)]) == 0
    assert pred.read_bytes() == pred2.read_bytes()

    feats = tmp_path / "f.csv"
    assert cli.main(["extract", str(root / "frames"), "-o", str(tmp_path / "e.ext"), "--model", str(model),
                     "--features", str(feats)]) == 0
    assert len(feats.read_text().splitlines()) == 81
    assert (tmp_path / "e.ext").read_bytes() == (root / "video.ext").read_bytes()


def test_segment_needs_scores(tmp_path, tiny_video):
    root, _, _ = tiny_video
    (tmp_path / "p.csv").write_text("frame,label\n1,a\n")
    assert cli.main(["segment", str(tmp_path / "p.csv"), "--extraction", str(root / "video.ext"),
                     "-o", str(tmp_path / "s.csv")]) == 2
