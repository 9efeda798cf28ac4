"""Video-level extraction, training and prediction.

Trajectories are tracked once per video over the reflection-padded frame
sequence (forward and reversed playback). Window ``m`` covers padded
positions ``m .. m + M`` and owns every trajectory whose span fits inside
it, so overlapping windows share tracking and descriptor work.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import SvmModel, load_model, predict_many, save_model, train_ovr
from .config import Config, read_config, write_config
from .context import VideoContext
from .descriptors import (CHANNELS, N_STATISTICAL, N_SUMMARY, WindowGlobalFeatures, camera_activity,
                          camera_dim, describe_trajectories, global_gradient_means,
                          statistical_from_summaries, trajectory_summaries)
from .encoding import (Codebook, assemble_from_words, build_codebook, feature_layout, global_columns,
                       quantize, read_codebook, write_codebook)
from .errors import InputError
from .motion import camera_translation, estimate_affine
from .segmentation import global_hof
from .trajectories import BACKWARD, FORWARD, iter_tracks, make_trajectories
from .video_io import FrameSequence, reflect_index

log = logging.getLogger(__name__)

FLUSH_EVERY = 16
HOF_BINS = 9


@dataclass
class Extraction:
    """Per-video trajectory descriptors and per-window/per-frame globals."""

    frame_ids: np.ndarray
    width: int
    height: int
    window: int
    level: np.ndarray
    direction: np.ndarray  # 0 forward, 1 backward
    lo: np.ndarray  # span in padded positions
    hi: np.ndarray
    descriptors: dict  # channel -> float32 (n, dim)
    statistical: np.ndarray  # (N, 13)
    camera: np.ndarray  # (N, 2(M-1)+10)
    hofs: np.ndarray  # (N, 9) global HOF of each frame

    @property
    def num_frames(self) -> int:
        return len(self.frame_ids)

    @property
    def num_trajectories(self) -> int:
        return len(self.lo)

    @property
    def start_pos(self) -> np.ndarray:
        return np.where(self.direction == 0, self.lo, self.hi)

    def members(self, m: int) -> np.ndarray:
        """Indices of trajectories inside window ``m`` (``lo`` is sorted)."""
        a, b = np.searchsorted(self.lo, [m, m + self.window + 1])
        idx = np.arange(a, b)
        return idx[self.hi[idx] <= m + self.window]

    def window_globals(self, m: int) -> WindowGlobalFeatures:
        return WindowGlobalFeatures(self.statistical[m], self.camera[m])


def padded_order(n: int, window: int) -> list:
    half = window // 2
    return [reflect_index(p - half, n) for p in range(n + window)]


def extract_video(seq: FrameSequence, cfg: Config | None = None) -> Extraction:
    cfg = cfg or Config()
    N = len(seq)
    if N < 2:
        raise InputError("need at least 2 frames")
    M = cfg.window
    tcfg, dcfg = cfg.tracker(), cfg.descriptor()
    L = tcfg.traj_length
    order = padded_order(N, M)
    P = len(order)
    if P < L + 1:
        raise InputError(f"padded sequence of {P} frames is shorter than a trajectory")
    cache = 3 * (FLUSH_EVERY + L + 2)
    ctx = VideoContext(seq.frames, seq.frame_ids, tcfg.num_scales, tcfg.scale_factor, cfg.flow(),
                       cfg.median_kernel, max_cached=cache)
    h, w = ctx.shapes[0]

    affines, grad_means, hofs = {}, {}, {}

    def affine_of(a, b):
        if (a, b) not in affines:
            affines[(a, b)] = estimate_affine(ctx.flow(a, b, 0), seed=cfg.seed, grid_step=cfg.affine_grid,
                                              iterations=cfg.ransac_iters, thresh=cfg.ransac_thresh)
        return affines[(a, b)]

    def frame_stats(a, b):
        affine_of(a, b)
        if (a, b) not in grad_means:
            grad_means[(a, b)] = global_gradient_means(ctx.gradients(a, b, 0))
        if (b == a + 1 or (a == N - 1 and b == N - 2)) and a not in hofs:
            hofs[a] = global_hof(ctx.flow(a, b, 0), dcfg.zero_flow_thresh)

    parts = {"level": [], "direction": [], "lo": [], "summ": []}
    descs = {c: [] for c in CHANNELS}

    def flush(trajs, direction):
        if not trajs:
            return
        d = describe_trajectories(ctx, trajs, affine_of, dcfg)
        for c in CHANNELS:
            descs[c].append(d[c].astype(np.float32))
        lo = np.array([t.span[0] for t in trajs], dtype=np.int64)
        pts = np.stack([t.points * ctx.scale_of(t.scale_level) for t in trajs])
        parts["level"].append(np.array([t.scale_level for t in trajs], dtype=np.int8))
        parts["direction"].append(np.full(len(trajs), 0 if direction == FORWARD else 1, dtype=np.int8))
        parts["lo"].append(lo)
        parts["summ"].append(trajectory_summaries(pts, (w, h)))

    for level in range(ctx.num_scales):
        for direction, seq_order in ((FORWARD, order), (BACKWARD, order[::-1])):
            position_of = (lambda s: s) if direction == FORWARD else (lambda s: P - 1 - s)
            pend_s, pend_t = [], []
            for t, starts, tracks in iter_tracks(ctx, seq_order, level, tcfg):
                if level == 0:
                    frame_stats(seq_order[t], seq_order[t + 1])
                if len(starts):
                    pend_s.append(starts)
                    pend_t.append(tracks)
                if pend_s and (t % FLUSH_EVERY == FLUSH_EVERY - 1 or t == P - 2):
                    trajs = make_trajectories(ctx, seq_order, level, direction, np.concatenate(pend_s),
                                              np.concatenate(pend_t), tcfg, position_of)
                    flush(trajs, direction)
                    pend_s, pend_t = [], []
        log.debug("level %d done, %d flows so far", level, ctx.flow_count)

    if parts["lo"]:
        level = np.concatenate(parts["level"])
        direction = np.concatenate(parts["direction"])
        lo = np.concatenate(parts["lo"])
        summ = np.concatenate(parts["summ"])
        descriptors = {c: np.concatenate(descs[c]) for c in CHANNELS}
    else:
        level = np.zeros(0, dtype=np.int8)
        direction = np.zeros(0, dtype=np.int8)
        lo = np.zeros(0, dtype=np.int64)
        summ = np.zeros((0, N_SUMMARY))
        descriptors = {c: np.zeros((0, dcfg.dim(c)), dtype=np.float32) for c in CHANNELS}
    # canonical order: by span start, then level, then direction
    perm = np.lexsort((direction, level, lo))
    level, direction, lo, summ = level[perm], direction[perm], lo[perm], summ[perm]
    descriptors = {c: descriptors[c][perm] for c in CHANNELS}
    hi = lo + L

    statistical = np.zeros((N, N_STATISTICAL))
    camera = np.zeros((N, camera_dim(M)))
    for m in range(N):
        a, b = np.searchsorted(lo, [m, m + M - L + 1])
        statistical[m] = statistical_from_summaries(summ[a:b])
        pairs = [(order[m + j], order[m + j + 1]) for j in range(M)]
        trans = [camera_translation(affine_of(*p), (w, h), p) for p in pairs]
        gm = np.array([grad_means[p] for p in pairs])
        camera[m] = camera_activity(trans, gm, M)
    H = np.array([hofs[f] for f in range(N)])
    return Extraction(np.asarray(seq.frame_ids, dtype=np.int64), w, h, M, level, direction, lo, hi,
                      descriptors, statistical, camera, H)


# -- EXT1 container -------------------------------------------------------------

_EXT_MAGIC = b"EXT1"
_EXT_VERSION = 1


def save_extraction(path, ext: Extraction) -> None:
    header = {
        "frames": int(ext.num_frames),
        "width": int(ext.width),
        "height": int(ext.height),
        "window": int(ext.window),
        "trajectories": int(ext.num_trajectories),
        "channels": [[c, int(ext.descriptors[c].shape[1])] for c in CHANNELS],
        "camera_dim": int(ext.camera.shape[1]),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_EXT_MAGIC)
        fh.write(struct.pack("<II", _EXT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.asarray(ext.frame_ids, dtype="<i8").tobytes())
        fh.write(np.asarray(ext.level, dtype="<i1").tobytes())
        fh.write(np.asarray(ext.direction, dtype="<i1").tobytes())
        fh.write(np.asarray(ext.lo, dtype="<i8").tobytes())
        fh.write(np.asarray(ext.hi, dtype="<i8").tobytes())
        for c in CHANNELS:
            fh.write(np.ascontiguousarray(ext.descriptors[c], dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ext.statistical, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ext.camera, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ext.hofs, dtype="<f8").tobytes())


def load_extraction(path) -> Extraction:
    raw = Path(path).read_bytes()
    if raw[:4] != _EXT_MAGIC:
        raise InputError(f"{path}: not an EXT1 extraction file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _EXT_VERSION:
        raise InputError(f"{path}: unsupported extraction version {version}")
    try:
        h = json.loads(raw[12:12 + hlen])
    except ValueError:
        raise InputError(f"{path}: corrupt extraction header") from None
    off = 12 + hlen

    def take(dtype, count, shape=None):
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        if off + size > len(raw):
            raise InputError(f"{path}: truncated extraction payload")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += size
        return arr.reshape(shape) if shape else arr

    N, n = h["frames"], h["trajectories"]
    frame_ids = take("<i8", N)
    level = take("<i1", n)
    direction = take("<i1", n)
    lo = take("<i8", n)
    hi = take("<i8", n)
    descs = {}
    for c, dim in h["channels"]:
        descs[c] = take("<f4", n * dim, (n, dim)).astype(np.float32)
    statistical = take("<f8", N * N_STATISTICAL, (N, N_STATISTICAL))
    camera = take("<f8", N * h["camera_dim"], (N, h["camera_dim"]))
    hofs = take("<f8", N * HOF_BINS, (N, HOF_BINS))
    if off != len(raw):
        raise InputError(f"{path}: trailing bytes after extraction payload")
    return Extraction(frame_ids, h["width"], h["height"], h["window"], level, direction, lo, hi,
                      descs, statistical, camera, hofs)


# -- encoding -----------------------------------------------------------------

def video_words(ext: Extraction, codebooks: dict, channels) -> dict:
    out = {}
    for c in channels:
        d = np.asarray(ext.descriptors[c], dtype=np.float64)
        out[c] = quantize(d, codebooks[c]) if len(d) else np.zeros(0, dtype=np.intp)
    return out


def encode_video(ext: Extraction, codebooks: dict, cfg: Config) -> np.ndarray:
    """``(N, D)`` window features, one row per frame (window centre)."""
    enc = cfg.encoding()
    if ext.window != enc.window:
        raise InputError(f"extraction used window {ext.window}, configuration expects {enc.window}")
    chans = enc.ordered_channels()
    for c in chans:
        if c not in codebooks:
            raise InputError(f"no codebook for configured channel {c!r}")
        if ext.descriptors[c].shape[1] != codebooks[c].dim:
            raise InputError(f"channel {c}: descriptor dim {ext.descriptors[c].shape[1]} "
                             f"does not match codebook dim {codebooks[c].dim}")
    words = video_words(ext, codebooks, chans)
    ks = {c: codebooks[c].k for c in chans}
    start = ext.start_pos
    rows = []
    for m in range(ext.num_frames):
        idx = ext.members(m)
        wf = assemble_from_words({c: words[c][idx] for c in chans}, start[idx] - m, ks,
                                 ext.window_globals(m), enc)
        rows.append(wf.vector)
    return np.array(rows)


def usable_windows(frame_labels, window: int = 30) -> np.ndarray:
    """Windows whose ``window + 1`` frames all carry one label.

    A label change between frames ``f`` and ``f + 1`` removes the windows
    centred on ``f - half + 1 .. f + half``.
    """
    labels = list(frame_labels)
    N = len(labels)
    half = window // 2
    ok = np.ones(N, dtype=bool)
    for f in range(N - 1):
        if labels[f] != labels[f + 1]:
            ok[max(0, f - half + 1):min(N, f + half + 1)] = False
    return ok


def _trajectory_usable(ext: Extraction, usable: np.ndarray) -> np.ndarray:
    """Trajectories lying inside at least one usable window."""
    N, M = ext.num_frames, ext.window
    L = int(ext.hi[0] - ext.lo[0]) if ext.num_trajectories else 0
    cum = np.concatenate([[0], np.cumsum(usable)])
    a = np.clip(ext.lo - (M - L), 0, N)
    b = np.clip(ext.lo + 1, 0, N)
    return cum[b] - cum[a] > 0


@dataclass
class TrainedModel:
    config: Config
    codebooks: dict
    svm: SvmModel


@dataclass
class TrainingData:
    X: np.ndarray
    labels: list
    rows: list  # (video index, window index)


def collect_training(extractions, annotations, cfg: Config, codebooks: dict) -> TrainingData:
    Xs, labels, rows = [], [], []
    for vi, (ext, ann) in enumerate(zip(extractions, annotations)):
        fl = ann.frame_labels(ext.frame_ids.tolist())
        ok = usable_windows(fl, cfg.window)
        X = encode_video(ext, codebooks, cfg)
        for m in np.flatnonzero(ok):
            labels.append(fl[m])
            rows.append((vi, int(m)))
        Xs.append(X[ok])
    return TrainingData(np.concatenate(Xs), labels, rows)


def train_model(extractions, annotations, cfg: Config | None = None) -> TrainedModel:
    """Codebooks on non-boundary descriptors, then the one-vs-rest SVM."""
    cfg = cfg or Config()
    enc = cfg.encoding()
    if len(extractions) != len(annotations) or not extractions:
        raise InputError("need one annotation per extraction and at least one video")
    seen, usable_labels = set(), set()
    pools = {c: [] for c in enc.ordered_channels()}
    for ext, ann in zip(extractions, annotations):
        fl = ann.frame_labels(ext.frame_ids.tolist())
        ok = usable_windows(fl, cfg.window)
        seen.update(fl)
        usable_labels.update(l for l, u in zip(fl, ok) if u)
        tmask = _trajectory_usable(ext, ok)
        for c in pools:
            pools[c].append(np.asarray(ext.descriptors[c][tmask], dtype=np.float64))
    for c in sorted(seen - usable_labels):
        raise InputError(f"class {c!r} has no usable samples outside action boundaries")
    if len(usable_labels) < 2:
        raise InputError(f"need at least 2 classes with usable samples, got {sorted(usable_labels)}")
    codebooks = {}
    for c, parts in pools.items():
        codebooks[c] = build_codebook(np.concatenate(parts), enc.vocab_size, enc.sample_frac, enc.seed, c)
        log.info("codebook %s: k=%d", c, codebooks[c].k)
    data = collect_training(extractions, annotations, cfg, codebooks)
    layout = feature_layout(enc, {c: cb.k for c, cb in codebooks.items()})
    svm = train_ovr(data.X, data.labels, cfg.training(), global_columns(layout))
    log.info("svm: %d classes, C=%g, gamma=%.4g", len(svm.classes), svm.C, svm.gamma)
    return TrainedModel(cfg, codebooks, svm)


def predict_video(model: TrainedModel, ext: Extraction):
    """Per-frame labels and ``(N, n_classes)`` scores."""
    X = encode_video(ext, model.codebooks, model.config)
    return predict_many(model.svm, X)


# -- model directory ------------------------------------------------------------

def save_trained(directory, model: TrainedModel) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "config.ini", model.config)
    save_model(out / "svm.bin", model.svm)
    for c, cb in model.codebooks.items():
        write_codebook(out / f"codebook_{c}.cbk", cb)
    return out


def load_trained(directory) -> TrainedModel:
    d = Path(directory)
    if not (d / "svm.bin").is_file():
        raise InputError(f"{d}: not a model directory (svm.bin missing)")
    cfg = read_config(d / "config.ini")
    codebooks = {}
    for c in cfg.encoding().ordered_channels():
        p = d / f"codebook_{c}.cbk"
        if not p.is_file():
            raise InputError(f"{d}: codebook for channel {c} missing")
        codebooks[c] = read_codebook(p)
    return TrainedModel(cfg, codebooks, load_model(d / "svm.bin"))
