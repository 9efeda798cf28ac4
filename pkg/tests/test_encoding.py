import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egotraj.descriptors import WindowGlobalFeatures
from egotraj.encoding import (Codebook, EncodingConfig, PyramidSpec, assemble_window_feature,
                              build_codebook, feature_layout, global_columns, kmeans, pyramid_from_words,
                              pyramid_histogram, quantize, read_codebook, read_feature_csv, write_codebook,
                              write_feature_csv)
from egotraj.errors import InputError


def blobs(seed=0, n=200, sigma=0.01):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    X = np.concatenate([c + sigma * rng.normal(size=(n, 3)) for c in centers])
    return X, centers


def brute_quantize(d, C):
    best, arg = np.inf, -1
    for j, c in enumerate(C):
        dist = float(((d - c) ** 2).sum())
        if dist < best:
            best, arg = dist, j
    return arg


def test_kmeans_two_blobs():
    X, centers = blobs()
    C, labels, _ = kmeans(X, 2, seed=42)
    got = C[np.argsort(C[:, 0])]
    assert np.abs(got - centers).max() <= 0.1
    assert len(set(labels[:200])) == 1 and len(set(labels[200:])) == 1


def test_codebook_two_blobs_and_determinism():
    X, centers = blobs(n=1000)
    a = build_codebook(X, k=2, sample_frac=0.1, seed=7)
    b = build_codebook(X, k=2, sample_frac=0.1, seed=7)
    assert np.array_equal(a.centroids, b.centroids)
    got = a.centroids[np.argsort(a.centroids[:, 0])]
    assert np.abs(got - centers).max() <= 0.1


def test_kmeans_exact_cover():
    X = np.random.default_rng(1).normal(size=(12, 4))
    C, labels, inertia = kmeans(X, 12, seed=3)
    assert inertia == 0.0
    assert sorted(map(tuple, C)) == sorted(map(tuple, X))


def test_codebook_errors():
    with pytest.raises(InputError):
        build_codebook(np.zeros((10, 3)), k=5, sample_frac=0.1)
    with pytest.raises(InputError):
        Codebook("hog", np.zeros((1, 3)))
    with pytest.raises(InputError):
        Codebook("colour", np.zeros((2, 3)))
    with pytest.raises(InputError):
        Codebook("hog", np.array([[np.nan], [0.0]]))


def test_quantize_examples():
    C = np.random.default_rng(2).normal(size=(10, 5))
    cb = Codebook("hof", C)
    assert quantize(C[7], cb) == 7
    assert list(quantize(C, cb)) == list(range(10))
    C2 = np.array([[5.0, 5.0], [3.0, 0.0], [-1.0, 0.0], [4.0, 0.0], [6.0, 0.0], [1.0, 0.0]])
    assert quantize(np.zeros(2), Codebook("hof", C2)) == 2
    with pytest.raises(InputError):
        quantize(np.zeros(3), cb)


@given(seed=st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_quantize_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(20, 6))
    D = rng.normal(size=(40, 6))
    # integer grids produce exact ties
    if seed % 2:
        C, D = np.round(C), np.round(D)
    cb = Codebook("mbhx", C)
    assert list(quantize(D, cb)) == [brute_quantize(d, C) for d in D]


def test_pyramid_dims_and_examples():
    assert PyramidSpec(3).segments == 7
    k = 2000
    h = pyramid_from_words([5, 9, 5], [0, 3, 14], k, levels=3)
    assert len(h) == 14000
    lvl1 = h[k:3 * k]
    assert not lvl1[k:].any()
    single = pyramid_from_words([42], [20], k, levels=3)
    for lv in (single[:k], single[k:3 * k], single[3 * k:]):
        assert np.count_nonzero(lv) == 1 and lv.sum() == 1.0
        assert np.flatnonzero(lv)[0] % k == 42
    assert not pyramid_from_words([], [], k, levels=3).any()
    with pytest.raises(InputError):
        PyramidSpec(0)


def test_pyramid_segment_boundaries():
    # span 31: level 1 splits at position 16, level 2 at 8, 16, 24
    k = 1
    h = pyramid_from_words([0] * 4, [7, 8, 15, 16], k, levels=3)
    np.testing.assert_allclose(h[1:3], [0.75, 0.25])
    np.testing.assert_allclose(h[3:7], [0.25, 0.5, 0.25, 0.0])


@given(words=st.lists(st.integers(0, 9), min_size=1, max_size=50), seed=st.integers(0, 100))
@settings(max_examples=50, deadline=None)
def test_pyramid_level_properties(words, seed):
    pos = np.random.default_rng(seed).integers(0, 31, size=len(words))
    k = 10
    h = pyramid_from_words(words, pos, k, levels=3)
    l0, l1 = h[:k], h[k:3 * k]
    assert l0.sum() == pytest.approx(1.0) and l1.sum() == pytest.approx(1.0)
    # level 0 is the sum of the level-1 halves before normalisation
    n = len(words)
    np.testing.assert_allclose(l0 * n, (l1[:k] + l1[k:]) * n, atol=1e-9)
    raw = np.bincount(words, minlength=k)
    more = np.bincount(list(words) + [3], minlength=k)
    assert (more >= raw).all()


def test_pyramid_histogram_quantizes():
    C = np.eye(4)
    cb = Codebook("hog", C)
    h = pyramid_histogram(C[[1, 1, 3]], [0, 0, 30], cb, PyramidSpec(2))
    np.testing.assert_allclose(h[:4], [0, 2 / 3, 0, 1 / 3])
    np.testing.assert_allclose(h[4:], [0, 2 / 3, 0, 0, 0, 0, 0, 1 / 3])


def test_default_layout_dims():
    cfg = EncodingConfig()
    layout = feature_layout(cfg)
    assert layout == [("hog", 14000), ("hof", 14000), ("mbhx", 2000), ("mbhy", 2000), ("kinematic", 2000),
                      ("statistical", 13), ("camera", 68)]
    assert sum(d for _, d in layout) == 34081
    cols = global_columns(layout)
    assert len(cols) == 81 and cols[0] == 34000
    assert ("shape", 2000) in feature_layout(EncodingConfig(channels=("shape", "hog")))


def small_books(k=4):
    rng = np.random.default_rng(0)
    dims = {"hog": 96, "hof": 108, "mbhx": 96, "mbhy": 96, "kinematic": 48}
    return {c: Codebook(c, rng.random((k, d))) for c, d in dims.items()}, dims


def test_assemble_window_feature():
    books, dims = small_books()
    cfg = EncodingConfig(vocab_size=4)
    g = WindowGlobalFeatures(np.arange(13.0), np.ones(68))
    rng = np.random.default_rng(1)
    descs = {c: rng.random((6, d)) for c, d in dims.items()}
    pos = [0, 5, 10, 15, 20, 30]
    a = assemble_window_feature(descs, pos, g, books, cfg)
    b = assemble_window_feature(descs, pos, g, books, cfg)
    assert a.total_dim == 28 + 28 + 4 + 4 + 4 + 13 + 68
    assert np.array_equal(a.vector, b.vector)
    assert [n for n, _ in a.blocks] == ["hog", "hof", "mbhx", "mbhy", "kinematic", "statistical", "camera"]
    np.testing.assert_array_equal(a.block("statistical"), np.arange(13.0))
    empty = assemble_window_feature({}, [], g, books, cfg)
    assert not empty.vector[:68].any() and empty.vector[68:].any()
    del books["mbhy"]
    with pytest.raises(InputError):
        assemble_window_feature(descs, pos, g, books, cfg)


def test_codebook_roundtrip(tmp_path):
    cb = Codebook("mbhy", np.random.default_rng(3).random((5, 96)), seed=11)
    write_codebook(tmp_path / "c.cbk", cb)
    raw = (tmp_path / "c.cbk").read_bytes()
    assert raw[:4] == b"CBK1" and len(raw) == 21 + 5 * 96 * 4
    back = read_codebook(tmp_path / "c.cbk")
    assert back.channel == "mbhy" and back.seed == 11
    np.testing.assert_array_equal(back.centroids, cb.centroids.astype(np.float32))
    (tmp_path / "x.cbk").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(InputError):
        read_codebook(tmp_path / "x.cbk")


def test_feature_csv_roundtrip(tmp_path):
    X = np.random.default_rng(4).random((3, 5))
    write_feature_csv(tmp_path / "f.csv", X, ["a", "b", ""])
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header.endswith(",label")
    Y, labels = read_feature_csv(tmp_path / "f.csv")
    assert np.array_equal(X, Y) and labels == ["a", "b", ""]
