"""Trajectory-aligned descriptors and per-window global features.

Per trajectory: normalised shape, HOG, HOF, MBHx/MBHy and a kinematic
histogram. Per window: trajectory statistics and camera activity.

All histograms use hard assignment. Orientation bins span 45 degrees and
bin 0 is centred on 0 rad (positive x); angles grow towards positive y.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .flow import FlowField, FlowGradients
from .kernels import cell_histograms

CHANNELS = ("shape", "hog", "hof", "mbhx", "mbhy", "kinematic")
KIN_EDGES = np.array([0.01, 0.05, 0.1, 0.5, 1.0, 10.0])
KIN_BINS = 12


@dataclass(frozen=True)
class DescriptorConfig:
    patch_size: int = 32
    n_sigma: int = 2
    n_tau: int = 3
    traj_length: int = 15
    hog_bins: int = 8
    hof_bins: int = 9
    mbh_bins: int = 8
    zero_flow_thresh: float = 0.4

    def __post_init__(self):
        if self.patch_size % self.n_sigma:
            raise InputError(f"patch size {self.patch_size} not divisible by n_sigma={self.n_sigma}")
        if self.traj_length % self.n_tau:
            raise InputError(f"trajectory length {self.traj_length} not divisible by n_tau={self.n_tau}")

    @property
    def n_cells(self) -> int:
        return self.n_sigma * self.n_sigma * self.n_tau

    def dim(self, channel: str) -> int:
        if channel == "shape":
            return 2 * self.traj_length
        if channel == "hog":
            return self.n_cells * self.hog_bins
        if channel == "hof":
            return self.n_cells * self.hof_bins
        if channel in ("mbhx", "mbhy"):
            return self.n_cells * self.mbh_bins
        if channel == "kinematic":
            return 4 * KIN_BINS
        raise InputError(f"unknown descriptor channel {channel!r}")


@dataclass(frozen=True)
class DescriptorBundle:
    shape: np.ndarray
    hog: np.ndarray
    hof: np.ndarray
    mbhx: np.ndarray
    mbhy: np.ndarray
    kinematic: np.ndarray

    def channel(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass(frozen=True)
class WindowGlobalFeatures:
    statistical: np.ndarray
    camera_activity: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.statistical, self.camera_activity])


# -- per-pixel binning --------------------------------------------------------

def orientation_bins(gx, gy, nbins: int = 8) -> np.ndarray:
    """Full-circle orientation bin of each vector; bin 0 is centred on 0 rad."""
    theta = np.arctan2(gy, gx)
    width = 2.0 * np.pi / nbins
    return (np.floor((theta + 0.5 * width) / width).astype(np.int64) % nbins).astype(np.int8)


def gradient_maps(img, nbins: int = 8):
    """HOG votes: orientation bin and magnitude per pixel (central differences)."""
    gy, gx = np.gradient(np.asarray(img, dtype=np.float64))
    mag = np.hypot(gx, gy)
    bins = orientation_bins(gx, gy, nbins)
    bins[mag == 0.0] = -1
    return bins, mag


def flow_maps(flow: FlowField, thresh: float = 0.4, nbins: int = 8):
    """HOF votes: small vectors go to the extra zero bin with unit weight."""
    mag = flow.magnitude()
    bins = orientation_bins(flow.u, flow.v, nbins)
    small = mag < thresh
    bins[small] = nbins
    weights = np.where(small, 1.0, mag)
    return bins, weights


def mbh_maps(grads: FlowGradients, nbins: int = 8):
    """MBH votes for the u and v components, each treated as an image."""
    out = []
    for gx, gy in ((grads.du_dx, grads.du_dy), (grads.dv_dx, grads.dv_dy)):
        mag = np.hypot(gx, gy)
        bins = orientation_bins(gx, gy, nbins)
        bins[mag == 0.0] = -1
        out.append((bins, mag))
    return out[0], out[1]


def _l2(h: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(h * h, axis=-1, keepdims=True))
    return np.divide(h, norm, out=np.zeros_like(h), where=norm > 0)


# -- trajectory volumes -------------------------------------------------------

@dataclass(frozen=True)
class VolumeCell:
    t_cell: int
    y_cell: int
    x_cell: int
    boxes: tuple  # (slice, y0, y1, x0, x1) per frame slice, half-open, clamped


def rounded_positions(points) -> np.ndarray:
    return np.floor(np.asarray(points, dtype=np.float64) + 0.5).astype(np.intp)


def volume_cells(points, frame_shape, cfg: DescriptorConfig | None = None) -> list:
    """The ``n_sigma x n_sigma x n_tau`` cells of the volume around a trajectory.

    ``points`` are the first ``L`` trajectory positions; on each slice the
    ``N x N`` square is centred on the rounded position and clipped to the
    frame.
    """
    cfg = cfg or DescriptorConfig()
    pts = rounded_positions(points)[: cfg.traj_length]
    if len(pts) != cfg.traj_length:
        raise InputError(f"need {cfg.traj_length} trajectory points, got {len(pts)}")
    h, w = frame_shape
    cw = cfg.patch_size // cfg.n_sigma
    half = cfg.patch_size // 2
    L = cfg.traj_length
    cells = []
    for tc in range(cfg.n_tau):
        for yc in range(cfg.n_sigma):
            for xc in range(cfg.n_sigma):
                boxes = []
                for j in range(L):
                    if (j * cfg.n_tau) // L != tc:
                        continue
                    x, y = pts[j]
                    y0 = min(max(y - half + yc * cw, 0), h)
                    y1 = min(max(y - half + (yc + 1) * cw, 0), h)
                    x0 = min(max(x - half + xc * cw, 0), w)
                    x1 = min(max(x - half + (xc + 1) * cw, 0), w)
                    boxes.append((j, int(y0), int(y1), int(x0), int(x1)))
                cells.append(VolumeCell(tc, yc, xc, tuple(boxes)))
    return cells


def _volume_histogram(points, maps, nbins, cfg):
    """One trajectory's raw cell histograms over per-slice ``(bins, weights)`` maps."""
    pts = rounded_positions(points)[: cfg.traj_length]
    if len(maps) != cfg.traj_length or len(pts) != cfg.traj_length:
        raise InputError(f"need {cfg.traj_length} volume slices, got {len(maps)}")
    bins = np.stack([m[0] for m in maps])
    weights = np.stack([m[1] for m in maps])
    idx = np.arange(cfg.traj_length)[None]
    return cell_histograms(bins, weights, idx, pts[None, :, 0], pts[None, :, 1],
                           nbins, cfg.patch_size, cfg.n_sigma, cfg.n_tau)[0]


def hog_descriptor(points, images, cfg: DescriptorConfig | None = None) -> np.ndarray:
    """HOG over ``L`` grayscale slices following ``points``; unit L2 norm or zero."""
    cfg = cfg or DescriptorConfig()
    maps = [gradient_maps(im, cfg.hog_bins) for im in images]
    return _l2(_volume_histogram(points, maps, cfg.hog_bins, cfg))


def hof_descriptor(points, flows, cfg: DescriptorConfig | None = None) -> np.ndarray:
    """HOF (8 orientations plus zero bin) over ``L`` flow slices."""
    cfg = cfg or DescriptorConfig()
    maps = [flow_maps(f, cfg.zero_flow_thresh, cfg.hof_bins - 1) for f in flows]
    return _l2(_volume_histogram(points, maps, cfg.hof_bins, cfg))


def mbh_descriptor(points, grads, cfg: DescriptorConfig | None = None):
    """``(mbhx, mbhy)``, each normalised separately."""
    cfg = cfg or DescriptorConfig()
    pairs = [mbh_maps(g, cfg.mbh_bins) for g in grads]
    hx = _volume_histogram(points, [p[0] for p in pairs], cfg.mbh_bins, cfg)
    hy = _volume_histogram(points, [p[1] for p in pairs], cfg.mbh_bins, cfg)
    return _l2(hx), _l2(hy)


# -- shape and kinematics ------------------------------------------------------

def traj_shape(displacements, traj_length: int = 15) -> np.ndarray:
    """Displacements divided by the sum of their magnitudes, flattened.

    Accepts an ``(L, 2)`` array or a batch ``(n, L, 2)``.
    """
    d = np.asarray(displacements, dtype=np.float64)
    if d.shape[-2:] != (traj_length, 2):
        raise InputError(f"shape descriptor needs ({traj_length}, 2) displacements, got {d.shape}")
    total = np.hypot(d[..., 0], d[..., 1]).sum(axis=-1)
    scale = np.where(total < 1e-6, 0.0, 1.0 / np.where(total < 1e-6, 1.0, total))
    return (d * scale[..., None, None]).reshape(d.shape[:-2] + (2 * traj_length,))


def kinematic_bins(values) -> np.ndarray:
    """12-bin signed-magnitude index of each value.

    Bins 0..4 hold negative values (most negative first), 5 is the central
    ``|v| < 0.01`` bin, 6..10 positive values, 11 everything with
    ``|v| >= 10``.
    """
    v = np.asarray(values, dtype=np.float64)
    a = np.abs(v)
    k = np.searchsorted(KIN_EDGES, a, side="right") - 1  # -1 central, 0..4, 5 overflow
    out = np.where(v > 0, 6 + k, 4 - k)
    out = np.where(k < 0, 5, out)
    out = np.where(k >= 5, 11, out)
    return out.astype(np.intp)


def kinematic_quantities(grads: FlowGradients):
    return grads.divergence, grads.curl, grads.hyperbolic1, grads.hyperbolic2


def kinematic_descriptor(samples) -> np.ndarray:
    """48-vector from an ``(L, 4)`` (or ``(n, L, 4)``) array of
    ``(div, curl, hyp1, hyp2)`` sampled along a trajectory; L1-normalised."""
    s = np.asarray(samples, dtype=np.float64)
    squeeze = s.ndim == 2
    if squeeze:
        s = s[None]
    n, L, q = s.shape
    if q != 4:
        raise InputError(f"kinematic samples must have 4 quantities, got {q}")
    b = kinematic_bins(s) + KIN_BINS * np.arange(4)
    out = np.zeros((n, 4 * KIN_BINS))
    rows = np.repeat(np.arange(n), L * 4)
    np.add.at(out, (rows, b.ravel()), 1.0)
    out /= 4.0 * L if L else 1.0
    return out[0] if squeeze else out


def sample_kinematics(points, grads) -> np.ndarray:
    """``(L, 4)`` kinematic quantities at the rounded trajectory positions."""
    pts = rounded_positions(points)
    out = np.empty((len(grads), 4))
    for j, g in enumerate(grads):
        x, y = pts[j]
        out[j] = [q[y, x] for q in kinematic_quantities(g)]
    return out


# -- window-level globals -----------------------------------------------------

N_STATISTICAL = 13


N_SUMMARY = 10


def trajectory_summaries(points, frame_dims) -> np.ndarray:
    """Additive per-trajectory sums from which window statistics are formed.

    ``points`` is an ``(n, L+1, 2)`` stack in full-resolution pixels. Columns:
    sum x, sum x^2, sum y, sum y^2 (normalised coordinates), point count,
    arc length, ``|dx_net|``, ``|dy_net|``, quadrant index, ``|net|``.
    """
    P = np.asarray(points, dtype=np.float64)
    w, h = frame_dims
    xs = P[..., 0] / w
    ys = P[..., 1] / h
    d = np.diff(P, axis=1)
    net = P[:, -1] - P[:, 0]
    dx, dy = net[:, 0], net[:, 1]
    # closed quadrants, lowest index wins on the axes
    quad = np.select([(dx >= 0) & (dy >= 0), (dx <= 0) & (dy >= 0), (dx <= 0) & (dy <= 0)], [0, 1, 2], 3)
    return np.column_stack([
        xs.sum(axis=1), (xs * xs).sum(axis=1), ys.sum(axis=1), (ys * ys).sum(axis=1),
        np.full(len(P), P.shape[1], dtype=np.float64),
        np.hypot(d[..., 0], d[..., 1]).sum(axis=1), np.abs(dx), np.abs(dy), quad, np.hypot(dx, dy),
    ])


def statistical_from_summaries(S) -> np.ndarray:
    """Layout: ``log1p(count)``, mean/std of normalised x, mean/std of
    normalised y, ``log1p`` mean arc length, ``log1p`` mean ``|dx_net|`` and
    ``|dy_net|``, four quadrant fractions of the net displacement and its
    mean magnitude."""
    S = np.asarray(S, dtype=np.float64).reshape(-1, N_SUMMARY)
    out = np.zeros(N_STATISTICAL)
    n = len(S)
    if n == 0:
        return out
    npts = S[:, 4].sum()
    mx = S[:, 0].sum() / npts
    my = S[:, 2].sum() / npts
    out[0] = math.log1p(n)
    out[1] = mx
    out[2] = math.sqrt(max(S[:, 1].sum() / npts - mx * mx, 0.0))
    out[3] = my
    out[4] = math.sqrt(max(S[:, 3].sum() / npts - my * my, 0.0))
    out[5] = math.log1p(S[:, 5].mean())
    out[6] = math.log1p(S[:, 6].mean())
    out[7] = math.log1p(S[:, 7].mean())
    out[8:12] = np.bincount(S[:, 8].astype(np.intp), minlength=4)[:4] / n
    out[12] = S[:, 9].mean()
    return out


def statistical_from_points(points, frame_dims) -> np.ndarray:
    """Window statistics of an ``(n, L+1, 2)`` stack of full-resolution tracks."""
    P = np.asarray(points, dtype=np.float64)
    if P.size == 0:
        return np.zeros(N_STATISTICAL)
    return statistical_from_summaries(trajectory_summaries(P, frame_dims))


def statistical_features(ts, frame_dims, scale_factor: float = 1.0 / math.sqrt(2.0)) -> np.ndarray:
    """13-vector over a trajectory set; points are mapped to full resolution."""
    trajs = list(ts)
    if not trajs:
        return np.zeros(N_STATISTICAL)
    P = np.stack([t.points * scale_factor ** (-t.scale_level) for t in trajs])
    return statistical_from_points(P, frame_dims)


def camera_dim(window: int = 30) -> int:
    return 2 * (window - 1) + 10


def camera_activity(translations, grad_means=None, window: int = 30) -> np.ndarray:
    """Camera-activity vector of a window of ``window + 1`` frames.

    Parameters
    ----------
    translations : (k, 2) array or list of CameraTranslation
        Frame-to-frame global translations; ``k`` is ``window - 1`` or
        ``window`` and only the first ``window - 1`` are used.
    grad_means : (p, 3) array, optional
        Per-frame-pair global means of divergence, curl and shear.
    """
    c = np.array([[t.dx, t.dy] if hasattr(t, "dx") else t for t in translations], dtype=np.float64)
    c = c.reshape(-1, 2)
    if len(c) not in (window - 1, window) or window < 2:
        raise InputError(f"camera activity needs {window - 1} or {window} translations, got {len(c)}")
    c = c[: window - 1]
    steps = np.hypot(c[:, 0], c[:, 1])
    total = steps.sum()
    normed = np.zeros_like(c) if total < 1e-6 else c / total
    net = float(np.hypot(*c.sum(axis=0)))
    scalars = [math.log1p(net), math.log1p(total), steps.mean(), steps.std()]
    if grad_means is None or len(grad_means) == 0:
        div = curl = shear = 0.0
    else:
        div, curl, shear = np.asarray(grad_means, dtype=np.float64).reshape(-1, 3).mean(axis=0)
    pairs = [div, curl, div, shear, curl, shear]
    return np.concatenate([normed.ravel(), scalars, pairs])


def global_gradient_means(grads: FlowGradients) -> np.ndarray:
    """Frame-wide mean ``(div, curl, shear)`` with shear taken as hyp1."""
    return np.array([grads.divergence.mean(), grads.curl.mean(), grads.hyperbolic1.mean()])


# -- batch computation over a video --------------------------------------------

def _stack_maps(keys, make):
    index = {k: i for i, k in enumerate(keys)}
    bins, weights = zip(*(make(k) for k in keys))
    return index, np.stack(bins), np.stack(weights)


def describe_trajectories(ctx, trajectories, affine_of=None, cfg: DescriptorConfig | None = None,
                          channels=CHANNELS) -> dict:
    """Descriptors of many trajectories sharing one ``VideoContext``.

    ``affine_of(a, b)`` returns the full-resolution ``AffineTransform`` for the
    context frame pair ``(a, b)``; when given, the shape descriptor is computed
    on head-motion compensated displacements. Returns ``{channel: (n, dim)}``.
    """
    cfg = cfg or DescriptorConfig()
    L = cfg.traj_length
    n = len(trajectories)
    out = {c: np.zeros((n, cfg.dim(c))) for c in channels}
    if n == 0:
        return out
    levels = np.array([t.scale_level for t in trajectories])
    for level in np.unique(levels):
        sel = np.nonzero(levels == level)[0]
        group = [trajectories[i] for i in sel]
        frames = np.array([t.frames[: L + 1] for t in group], dtype=np.intp)
        if frames.shape[1] != L + 1:
            raise InputError("trajectories must carry their L+1 context frame indices")
        pts = np.stack([t.points for t in group])
        rp = rounded_positions(pts[:, :L])
        cx, cy = rp[..., 0], rp[..., 1]
        pairs = list(zip(frames[:, :L].ravel().tolist(), frames[:, 1:].ravel().tolist()))
        pair_keys = sorted(set(pairs))
        lvl = int(level)

        if "hog" in channels:
            keys = sorted(set(frames[:, :L].ravel().tolist()))
            index, B, W = _stack_maps(keys, lambda k: gradient_maps(ctx.image(k, lvl), cfg.hog_bins))
            midx = np.vectorize(index.get, otypes=[np.intp])(frames[:, :L])
            out["hog"][sel] = _l2(cell_histograms(B, W, midx, cx, cy, cfg.hog_bins,
                                                  cfg.patch_size, cfg.n_sigma, cfg.n_tau))
            del B, W
        pidx = None
        if any(c in channels for c in ("hof", "mbhx", "mbhy", "kinematic")):
            index = {k: i for i, k in enumerate(pair_keys)}
            pidx = np.array([index[p] for p in pairs], dtype=np.intp).reshape(len(group), L)
        if "hof" in channels:
            _, B, W = _stack_maps(pair_keys, lambda k: flow_maps(ctx.flow(k[0], k[1], lvl),
                                                                 cfg.zero_flow_thresh, cfg.hof_bins - 1))
            out["hof"][sel] = _l2(cell_histograms(B, W, pidx, cx, cy, cfg.hof_bins,
                                                  cfg.patch_size, cfg.n_sigma, cfg.n_tau))
            del B, W
        for comp, name in ((0, "mbhx"), (1, "mbhy")):
            if name not in channels:
                continue
            _, B, W = _stack_maps(pair_keys, lambda k: mbh_maps(ctx.gradients(k[0], k[1], lvl),
                                                                cfg.mbh_bins)[comp])
            out[name][sel] = _l2(cell_histograms(B, W, pidx, cx, cy, cfg.mbh_bins,
                                                 cfg.patch_size, cfg.n_sigma, cfg.n_tau))
            del B, W
        if "kinematic" in channels:
            Q = np.stack([np.stack(kinematic_quantities(ctx.gradients(a, b, lvl))) for a, b in pair_keys])
            samples = Q[pidx[..., None], np.arange(4), cy[..., None], cx[..., None]]
            out["kinematic"][sel] = kinematic_descriptor(samples)
        if "shape" in channels:
            disp = np.diff(pts, axis=1)
            if affine_of is not None:
                s = ctx.scale_of(lvl)
                mats = {p: affine_of(*p).as_matrix() for p in pair_keys}
                A = np.stack([mats[p] for p in pairs]).reshape(len(group), L, 2, 3)
                P = pts[:, :L] * s
                gx = (A[..., 0, 0] - 1.0) * P[..., 0] + A[..., 0, 1] * P[..., 1] + A[..., 0, 2]
                gy = A[..., 1, 0] * P[..., 0] + (A[..., 1, 1] - 1.0) * P[..., 1] + A[..., 1, 2]
                disp = disp - np.stack([gx, gy], axis=-1) / s
            out["shape"][sel] = traj_shape(disp, L)
    return out


def bundle_at(descs: dict, i: int) -> DescriptorBundle:
    return DescriptorBundle(**{c: descs[c][i] for c in CHANNELS})


# -- DSC1 dump ----------------------------------------------------------------

_DSC_MAGIC = b"DSC1"


def write_descriptors(path, channel: str, rows) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise InputError("descriptor dump needs a 2-D array")
    with open(path, "wb") as fh:
        fh.write(_DSC_MAGIC)
        fh.write(struct.pack("<BIQ", CHANNELS.index(channel), rows.shape[1], rows.shape[0]))
        fh.write(rows.tobytes())


def read_descriptors(path):
    """Returns ``(channel, rows)`` with rows as float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _DSC_MAGIC:
        raise InputError(f"{path}: not a DSC1 file")
    cid, dim, count = struct.unpack("<BIQ", raw[4:17])
    if cid >= len(CHANNELS):
        raise InputError(f"{path}: unknown channel id {cid}")
    if len(raw) != 17 + 4 * dim * count:
        raise InputError(f"{path}: truncated DSC1 payload")
    rows = np.frombuffer(raw, dtype="<f4", offset=17).reshape(count, dim).astype(np.float64)
    return CHANNELS[cid], rows
