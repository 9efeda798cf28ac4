"""Codebooks, vector quantisation and temporal-pyramid bag-of-words features."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .descriptors import CHANNELS, N_STATISTICAL, camera_dim
from .errors import InputError

HIST_ORDER = ("shape", "hog", "hof", "mbhx", "mbhy", "kinematic")
DEFAULT_PYRAMID = {"hog": 3, "hof": 3}


@dataclass(frozen=True)
class Codebook:
    channel: str
    centroids: np.ndarray
    seed: int = 42

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64)
        if c.ndim != 2 or len(c) < 2:
            raise InputError(f"codebook needs k >= 2 centroid rows, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InputError("codebook centroids must be finite")
        if self.channel not in CHANNELS:
            raise InputError(f"unknown channel {self.channel!r}")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class PyramidSpec:
    levels: int = 1

    def __post_init__(self):
        if self.levels < 1:
            raise InputError("pyramid needs at least one level")

    @property
    def segments(self) -> int:
        return 2 ** self.levels - 1


@dataclass(frozen=True)
class EncodingConfig:
    vocab_size: int = 2000
    channels: tuple = ("hog", "hof", "mbhx", "mbhy", "kinematic")
    pyramid: dict = field(default_factory=lambda: dict(DEFAULT_PYRAMID))
    use_statistical: bool = True
    use_camera: bool = True
    window: int = 30
    sample_frac: float = 0.1
    seed: int = 42

    def levels(self, channel: str) -> int:
        return int(self.pyramid.get(channel, 1))

    def ordered_channels(self) -> list:
        for c in self.channels:
            if c not in HIST_ORDER:
                raise InputError(f"unknown histogram channel {c!r}")
        return [c for c in HIST_ORDER if c in self.channels]


@dataclass(frozen=True)
class WindowFeature:
    blocks: tuple  # ((name, array), ...) in fixed order

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([b for _, b in self.blocks]) if self.blocks else np.zeros(0)

    @property
    def total_dim(self) -> int:
        return sum(len(b) for _, b in self.blocks)

    def block(self, name: str) -> np.ndarray:
        for n, b in self.blocks:
            if n == name:
                return b
        raise KeyError(name)


def feature_layout(cfg: EncodingConfig, ks=None) -> list:
    """``[(block name, dim), ...]`` of the final window vector."""
    out = []
    for c in cfg.ordered_channels():
        k = cfg.vocab_size if ks is None else ks[c]
        out.append((c, k * PyramidSpec(cfg.levels(c)).segments))
    if cfg.use_statistical:
        out.append(("statistical", N_STATISTICAL))
    if cfg.use_camera:
        out.append(("camera", camera_dim(cfg.window)))
    return out


def global_columns(layout) -> np.ndarray:
    """Column indices of the non-histogram blocks."""
    cols, start = [], 0
    for name, dim in layout:
        if name in ("statistical", "camera"):
            cols.extend(range(start, start + dim))
        start += dim
    return np.array(cols, dtype=np.intp)


# -- k-means ------------------------------------------------------------------

def _sq_dists(X, C, cc=None):
    xx = np.einsum("ij,ij->i", X, X)[:, None]
    if cc is None:
        cc = np.einsum("ij,ij->i", C, C)
    return np.maximum(xx - 2.0 * (X @ C.T) + cc[None], 0.0)


def _assign(X, C, chunk=4096):
    """Nearest centroid (ties to the lowest index) and its exact squared distance."""
    n = len(X)
    labels = np.empty(n, dtype=np.intp)
    dist = np.empty(n)
    cc = np.einsum("ij,ij->i", C, C)
    for s in range(0, n, chunk):
        Xs = X[s:s + chunk]
        D = _sq_dists(Xs, C, cc)
        best = D.min(axis=1)
        # the expansion can misorder near-ties; recheck them exactly
        slack = 1e-9 * (np.einsum("ij,ij->i", Xs, Xs) + cc.max()) + 1e-12
        cand = D <= (best + slack)[:, None]
        lab = np.argmax(cand, axis=1)
        labels[s:s + chunk] = lab
        dist[s:s + chunk] = ((Xs - C[lab]) ** 2).sum(axis=1)
        for r in np.flatnonzero(cand.sum(axis=1) > 1):
            idx = np.flatnonzero(cand[r])
            exact = ((C[idx] - Xs[r]) ** 2).sum(axis=1)
            j = int(np.argmin(exact))
            labels[s + r] = idx[j]
            dist[s + r] = exact[j]
    return labels, dist


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = np.empty(k, dtype=np.intp)
    centers[0] = rng.integers(n)
    d2 = ((X - X[centers[0]]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            rest = np.setdiff1d(np.arange(n), centers[:i])
            centers[i] = rest[rng.integers(len(rest))]
        else:
            centers[i] = min(int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right")), n - 1)
        d2 = np.minimum(d2, ((X - X[centers[i]]) ** 2).sum(axis=1))
    return X[centers].copy()


def kmeans(X, k: int, seed: int = 42, max_iter: int = 100, tol: float = 1e-4, rng=None):
    """Lloyd iterations from a k-means++ start.

    Stops when the relative decrease of inertia falls below ``tol``. Empty
    clusters are re-seeded with the points farthest from their centroid.
    Returns ``(centroids, labels, inertia)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if len(X) < k:
        raise InputError(f"k-means: {len(X)} samples for k={k}")
    rng = np.random.default_rng(seed) if rng is None else rng
    C = _kmeans_pp(X, k, rng)
    labels, dist = _assign(X, C)
    inertia = dist.sum()
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=X[:, j], minlength=k) for j in range(X.shape[1])], axis=1)
        empty = np.flatnonzero(counts == 0)
        C = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], C)
        if len(empty):
            far = np.argsort(-dist, kind="stable")[: len(empty)]
            C[empty] = X[far]
        labels, dist = _assign(X, C)
        new = dist.sum()
        done = inertia - new <= tol * max(inertia, 1e-300)
        inertia = new
        if done:
            break
    return C, labels, inertia


def build_codebook(descriptors, k: int = 2000, sample_frac: float = 0.1, seed: int = 42,
                   channel: str = "hog") -> Codebook:
    """k-means codebook on a seeded uniform subsample of ``descriptors``."""
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise InputError("descriptors must be a 2-D array")
    rng = np.random.default_rng(seed)
    m = int(round(sample_frac * len(X)))
    if m < k:
        raise InputError(f"codebook {channel}: {m} sampled descriptors for k={k}")
    pick = np.sort(rng.choice(len(X), size=m, replace=False))
    C, _, _ = kmeans(X[pick], k, rng=rng)
    # stored as f32 on disk; keep the in-memory copy identical
    return Codebook(channel, C.astype(np.float32).astype(np.float64), seed)


def quantize(d, cb: Codebook):
    """Nearest codeword index (ties to the lowest index); accepts one row or many."""
    d = np.asarray(d, dtype=np.float64)
    single = d.ndim == 1
    X = d[None] if single else d
    if X.shape[1] != cb.dim:
        raise InputError(f"descriptor dim {X.shape[1]} does not match codebook dim {cb.dim}")
    labels, _ = _assign(np.ascontiguousarray(X), cb.centroids)
    return int(labels[0]) if single else labels


# -- pyramid histograms -------------------------------------------------------

def _l1(h):
    s = h.sum()
    return h / s if s > 0 else h


def pyramid_from_words(words, positions, k: int, levels: int = 1, span: int = 31) -> np.ndarray:
    """Temporal-pyramid bag of words.

    Level ``l`` splits the ``span`` window positions into ``2**l`` equal
    segments; each word votes into the segment holding its start position.
    Every level block is L1-normalised on its own.
    """
    words = np.asarray(words, dtype=np.intp)
    pos = np.asarray(positions, dtype=np.int64)
    out = []
    for lvl in range(levels):
        nseg = 2 ** lvl
        seg = np.clip((pos * nseg) // span, 0, nseg - 1)
        h = np.bincount(seg * k + words, minlength=nseg * k).astype(np.float64)
        out.append(_l1(h))
    return np.concatenate(out)


def pyramid_histogram(descriptors, positions, cb: Codebook, spec: PyramidSpec | None = None,
                      span: int = 31) -> np.ndarray:
    spec = spec or PyramidSpec()
    d = np.asarray(descriptors, dtype=np.float64).reshape(-1, cb.dim)
    words = quantize(d, cb) if len(d) else np.zeros(0, dtype=np.intp)
    return pyramid_from_words(words, positions, cb.k, spec.levels, span)


def assemble_from_words(words: dict, positions, ks: dict, globals_, cfg: EncodingConfig) -> WindowFeature:
    """Window vector from pre-quantised trajectories (one word per channel each)."""
    blocks = []
    span = cfg.window + 1
    for c in cfg.ordered_channels():
        if c not in ks:
            raise InputError(f"no codebook for configured channel {c!r}")
        blocks.append((c, pyramid_from_words(words[c], positions, ks[c], cfg.levels(c), span)))
    if cfg.use_statistical:
        blocks.append(("statistical", np.asarray(globals_.statistical, dtype=np.float64)))
    if cfg.use_camera:
        cam = np.asarray(globals_.camera_activity, dtype=np.float64)
        if len(cam) != camera_dim(cfg.window):
            raise InputError(f"camera block has {len(cam)} entries, expected {camera_dim(cfg.window)}")
        blocks.append(("camera", cam))
    return WindowFeature(tuple(blocks))


def assemble_window_feature(descriptors: dict, positions, globals_, codebooks: dict,
                            cfg: EncodingConfig | None = None) -> WindowFeature:
    """Concatenate the configured blocks for one window.

    ``descriptors`` maps channel to an ``(n, dim)`` array over the window's
    trajectories (both playback directions pooled); ``positions`` holds each
    trajectory's start position within the window.
    """
    cfg = cfg or EncodingConfig()
    words, ks = {}, {}
    for c in cfg.ordered_channels():
        if c not in codebooks:
            raise InputError(f"no codebook for configured channel {c!r}")
        cb = codebooks[c]
        d = np.asarray(descriptors.get(c, np.zeros((0, cb.dim))), dtype=np.float64).reshape(-1, cb.dim)
        words[c] = quantize(d, cb) if len(d) else np.zeros(0, dtype=np.intp)
        ks[c] = cb.k
    return assemble_from_words(words, positions, ks, globals_, cfg)


# -- files --------------------------------------------------------------------

_CBK_MAGIC = b"CBK1"


def write_codebook(path, cb: Codebook) -> None:
    with open(path, "wb") as fh:
        fh.write(_CBK_MAGIC)
        fh.write(struct.pack("<BIIQ", CHANNELS.index(cb.channel), cb.k, cb.dim, cb.seed))
        fh.write(np.ascontiguousarray(cb.centroids, dtype="<f4").tobytes())


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CBK_MAGIC:
        raise InputError(f"{path}: not a CBK1 file")
    cid, k, dim, seed = struct.unpack("<BIIQ", raw[4:21])
    if cid >= len(CHANNELS) or len(raw) != 21 + 4 * k * dim:
        raise InputError(f"{path}: corrupt CBK1 header or payload")
    C = np.frombuffer(raw, dtype="<f4", offset=21).reshape(k, dim).astype(np.float64)
    return Codebook(CHANNELS[cid], C, seed)


def write_feature_csv(path, X, labels) -> None:
    """One window per row, label in the last column."""
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(X.shape[1])] + ["label"])
        for row, lab in zip(X, labels):
            w.writerow([repr(float(v)) for v in row] + [lab])


def read_feature_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[-1] != "label":
            raise InputError(f"{path}: feature CSV must end with a label column")
        rows, labels = [], []
        for lineno, row in enumerate(r, start=2):
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed feature row") from None
            labels.append(row[-1])
    return np.array(rows).reshape(len(rows), len(header) - 1), labels
