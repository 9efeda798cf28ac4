import numpy as np
import pytest

from egotraj.config import Config
from egotraj.descriptors import CHANNELS, camera_dim
from egotraj.encoding import Codebook
from egotraj.errors import InputError
from egotraj.pipeline import (Extraction, collect_training, encode_video, load_extraction, load_trained,
                              padded_order, predict_video, save_extraction, save_trained, train_model,
                              usable_windows)
from egotraj.video_io import ActionAnnotation, read_annotations

DIMS = {"shape": 30, "hog": 96, "hof": 108, "mbhx": 96, "mbhy": 96, "kinematic": 48}


def empty_extraction(n, window=30):
    """An extraction without trajectories; windows still get their globals."""
    rng = np.random.default_rng(n)
    z8 = np.zeros(0, dtype=np.int8)
    z64 = np.zeros(0, dtype=np.int64)
    return Extraction(np.arange(1, n + 1), 72, 56, window, z8, z8, z64, z64,
                      {c: np.zeros((0, d), dtype=np.float32) for c, d in DIMS.items()},
                      rng.random((n, 13)), rng.random((n, camera_dim(window))), np.full((n, 9), 1 / 9))


def books(k=4):
    rng = np.random.default_rng(0)
    return {c: Codebook(c, rng.random((k, DIMS[c]))) for c in ("hog", "hof", "mbhx", "mbhy", "kinematic")}


def test_padded_order_reflects_both_ends():
    order = padded_order(40, 30)
    assert len(order) == 70
    assert order[:16] == list(range(15, 0, -1)) + [0]
    assert order[-16:] == [39] + list(range(38, 23, -1))


def test_usable_windows_rule():
    labels = ["bg"] * 30 + ["a"] * 100 + ["bg"] * 30
    ok = usable_windows(labels, 30)
    # centres within 15 frames of a label change are dropped
    assert ok[:15].all() and not ok[15:45].any()
    assert ok[45:115].all() and not ok[115:145].any() and ok[145:].all()
    assert usable_windows(["a"] * 10, 30).all()


def test_boundary_exclusion_row_count():
    ext = empty_extraction(160)
    ann = ActionAnnotation(((31, 130, "a"),))
    data = collect_training([ext], [ann], Config(vocab_size=4), books())
    labels = np.array(data.labels)
    assert np.sum(labels == "a") == 100 - 2 * 15
    assert np.sum(labels == "background") == 2 * 15
    centres = sorted(m for _, m in data.rows)
    assert centres == list(range(15)) + list(range(45, 115)) + list(range(145, 160))
    assert data.X.shape == (100, 7 * 4 * 2 + 4 * 3 + 13 + 68)


def test_class_without_usable_samples():
    ext = empty_extraction(120)
    ann = ActionAnnotation(((50, 60, "blink"),))
    with pytest.raises(InputError, match="no usable samples"):
        train_model([ext], [ann], Config(vocab_size=4))


def test_window_count_equals_frame_count(tiny_video):
    _, ext, cfg = tiny_video
    assert ext.num_frames == 80
    assert ext.statistical.shape == (80, 13) and ext.camera.shape == (80, 68) and ext.hofs.shape == (80, 9)
    assert ext.num_trajectories > 0
    for c in CHANNELS:
        assert ext.descriptors[c].shape == (ext.num_trajectories, DIMS[c])
    assert (ext.hi - ext.lo == 15).all() and (np.diff(ext.lo) >= 0).all()


def test_window_membership(tiny_video):
    _, ext, _ = tiny_video
    for m in (0, 17, 79):
        idx = ext.members(m)
        assert (ext.lo[idx] >= m).all() and (ext.hi[idx] <= m + 30).all()
        inside = np.flatnonzero((ext.lo >= m) & (ext.hi <= m + 30))
        np.testing.assert_array_equal(idx, inside)


def test_extraction_roundtrip(tiny_video, tmp_path):
    root, ext, _ = tiny_video
    back = load_extraction(root / "video.ext")
    np.testing.assert_array_equal(back.lo, ext.lo)
    np.testing.assert_array_equal(back.statistical, ext.statistical)
    for c in CHANNELS:
        np.testing.assert_array_equal(back.descriptors[c], ext.descriptors[c])
    save_extraction(tmp_path / "again.ext", back)
    assert (tmp_path / "again.ext").read_bytes() == (root / "video.ext").read_bytes()
    raw = (root / "video.ext").read_bytes()
    (tmp_path / "cut.ext").write_bytes(raw[:-10])
    with pytest.raises(InputError):
        load_extraction(tmp_path / "cut.ext")


def test_train_predict_roundtrip(tiny_video, tmp_path):
    root, ext, cfg = tiny_video
    ann = read_annotations(root / "frames" / "annotations.csv")
    model = train_model([ext], [ann], cfg)
    assert model.svm.classes == ["stir", "translate-right"]
    labels, scores = predict_video(model, ext)
    assert len(labels) == 80 and scores.shape == (80, 2)
    truth = ann.frame_labels(ext.frame_ids.tolist())
    print(f"training video refit accuracy: {np.mean([a == b for a, b in zip(labels, truth)]):.3f}")
    save_trained(tmp_path / "model", model)
    back = load_trained(tmp_path / "model")
    assert back.config == cfg
    np.testing.assert_array_equal(predict_video(back, ext)[1], scores)
    with pytest.raises(InputError):
        encode_video(ext, back.codebooks, cfg.replace(window=20))
    with pytest.raises(InputError):
        load_trained(tmp_path)
