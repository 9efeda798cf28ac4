"""Dense optical flow (Farnebäck polynomial expansion), median filtering and
flow derivatives.

Flow is a displacement field: a point at ``(x, y)`` in ``prev`` moves to
``(x + u, y + v)`` in ``next``.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InputError
from .video_io import resize_bilinear


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise InputError(f"flow components differ in shape: {self.u.shape} vs {self.v.shape}")

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def shape(self):
        return self.u.shape

    def magnitude(self):
        return np.hypot(self.u, self.v)

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width)), np.zeros((height, width)))


@dataclass(frozen=True)
class FlowGradients:
    du_dx: np.ndarray
    du_dy: np.ndarray
    dv_dx: np.ndarray
    dv_dy: np.ndarray

    @property
    def divergence(self):
        return self.du_dx + self.dv_dy

    @property
    def curl(self):
        return self.dv_dx - self.du_dy

    @property
    def hyperbolic1(self):
        return self.du_dx - self.dv_dy

    @property
    def hyperbolic2(self):
        return self.du_dy + self.dv_dx


@dataclass(frozen=True)
class FlowConfig:
    levels: int = 4
    pyr_scale: float = 0.5
    winsize: int = 15
    iterations: int = 5
    poly_sigma: float = 1.1
    reg: float = 1e-9
    min_level_side: int = 8
    gaussian_window: bool = True


# -- polynomial expansion -----------------------------------------------------

@functools.lru_cache(maxsize=8)
def _poly_basis(sigma: float):
    n = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-x * x / (2.0 * sigma * sigma))
    g /= g.sum()
    # basis order: 1, x, y, x^2, y^2, xy
    powers = [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)]
    G = np.empty((6, 6))
    for i, (ax, ay) in enumerate(powers):
        for j, (bx, by) in enumerate(powers):
            G[i, j] = np.sum(g * x ** (ax + bx)) * np.sum(g * x ** (ay + by))
    return g, x, powers, np.linalg.inv(G)


def poly_expansion(img: np.ndarray, sigma: float = 1.1) -> np.ndarray:
    """Per-pixel weighted least-squares quadratic fit.

    Returns an array of shape ``(6, H, W)`` holding the coefficients of
    ``c + bx*dx + by*dy + axx*dx^2 + ayy*dy^2 + axy*dx*dy``.
    """
    g, x, powers, Ginv = _poly_basis(sigma)
    kernels = [g, g * x, g * x * x]
    rows = {}
    for p in range(3):
        rows[p] = ndimage.correlate1d(img, kernels[p], axis=1, mode="reflect")
    rhs = np.empty((6,) + img.shape)
    for i, (ax, ay) in enumerate(powers):
        rhs[i] = ndimage.correlate1d(rows[ax], kernels[ay], axis=0, mode="reflect")
    return np.tensordot(Ginv, rhs, axes=1)


def _downsample(img: np.ndarray, scale: float) -> np.ndarray:
    sigma = (1.0 / scale - 1.0) * 0.5
    smoothed = ndimage.gaussian_filter(img, sigma, mode="reflect")
    h = max(1, int(round(img.shape[0] * scale)))
    w = max(1, int(round(img.shape[1] * scale)))
    return resize_bilinear(smoothed, h, w)


def _sample(coeffs: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinearly sample each coefficient image at (xs, ys), clamped to the frame."""
    h, w = coeffs.shape[1:]
    return _sample_flat(_pixel_major(coeffs), h, w, xs, ys)


def _pixel_major(coeffs: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(coeffs.reshape(coeffs.shape[0], -1).T)


def _sample_flat(table: np.ndarray, h: int, w: int, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    # table is (h*w, C); gathering whole rows keeps memory access contiguous
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2) if w > 1 else np.zeros_like(xs, dtype=np.intp)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2) if h > 1 else np.zeros_like(ys, dtype=np.intp)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    dx = 1 if w > 1 else 0
    dy = w if h > 1 else 0
    i00 = y0 * w + x0
    c00 = table[i00]
    c01 = table[i00 + dx]
    c10 = table[i00 + dy]
    c11 = table[i00 + dy + dx]
    out = (c00 * (1 - fx) + c01 * fx) * (1 - fy) + (c10 * (1 - fx) + c11 * fx) * fy
    return np.moveaxis(out, -1, 0)


def _aggregate(stack, cfg: FlowConfig):
    """Windowed sums of the normal-equation terms (Gaussian or box window)."""
    if cfg.gaussian_window:
        m = cfg.winsize // 2
        sigma = max(0.3 * m, 0.5)
        return ndimage.gaussian_filter(stack, sigma=(0, sigma, sigma), truncate=m / sigma, mode="reflect")
    return ndimage.uniform_filter(stack, size=(1, cfg.winsize, cfg.winsize), mode="reflect")


_BORDER_WEIGHTS = (0.14, 0.14, 0.4472, 0.4472, 0.4472)


def _border_scale(h: int, w: int) -> np.ndarray:
    """Down-weights the last few rows/columns, whose expansions see padding."""
    def ramp(n):
        r = np.ones(n)
        k = min(len(_BORDER_WEIGHTS), n // 2)
        r[:k] = _BORDER_WEIGHTS[:k]
        r[n - k:] = np.minimum(r[n - k:], _BORDER_WEIGHTS[:k][::-1])
        return r
    return ramp(h)[:, None] * ramp(w)[None, :]


def _refine(c1: np.ndarray, c2: np.ndarray, u: np.ndarray, v: np.ndarray, cfg: FlowConfig):
    h, w = u.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    b1x, b1y = c1[1], c1[2]
    a1xx, a1yy, a1xy = c1[3], c1[4], 0.5 * c1[5]
    table = _pixel_major(c2[1:])
    border = _border_scale(h, w)
    for _ in range(cfg.iterations):
        s = _sample_flat(table, h, w, xx + u, yy + v)
        axx = 0.5 * (a1xx + s[2])
        ayy = 0.5 * (a1yy + s[3])
        axy = 0.5 * (a1xy + 0.5 * s[4])
        dbx = -0.5 * (s[0] - b1x) + axx * u + axy * v
        dby = -0.5 * (s[1] - b1y) + axy * u + ayy * v
        # rows and columns next to the border see padded expansions
        axx, ayy, axy = axx * border, ayy * border, axy * border
        dbx, dby = dbx * border, dby * border
        stack = np.stack([
            axx * axx + axy * axy,
            axy * (axx + ayy),
            axy * axy + ayy * ayy,
            axx * dbx + axy * dby,
            axy * dbx + ayy * dby,
        ])
        stack = _aggregate(stack, cfg)
        g11, g12, g22, h1, h2 = stack
        g11 = g11 + cfg.reg
        g22 = g22 + cfg.reg
        det = g11 * g22 - g12 * g12
        u = (g22 * h1 - g12 * h2) / det
        v = (g11 * h2 - g12 * h1) / det
    return u, v


def dense_flow(prev, next_, cfg: FlowConfig | None = None) -> FlowField:
    """Coarse-to-fine Farnebäck flow from ``prev`` to ``next_``."""
    cfg = cfg or FlowConfig()
    prev = np.asarray(prev, dtype=np.float64)
    next_ = np.asarray(next_, dtype=np.float64)
    if prev.shape != next_.shape:
        raise InputError(f"flow: dimension mismatch {prev.shape} vs {next_.shape}")
    if prev.ndim != 2 or min(prev.shape) < 16:
        raise InputError(f"flow: frames must be 2-D and at least 16x16, got {prev.shape}")
    if np.ptp(prev) == 0.0 and np.ptp(next_) == 0.0:
        return FlowField.zeros(*prev.shape)

    pyr1, pyr2 = [prev], [next_]
    for _ in range(cfg.levels - 1):
        if min(pyr1[-1].shape) * cfg.pyr_scale < cfg.min_level_side:
            break
        pyr1.append(_downsample(pyr1[-1], cfg.pyr_scale))
        pyr2.append(_downsample(pyr2[-1], cfg.pyr_scale))

    u = v = None
    for lvl in range(len(pyr1) - 1, -1, -1):
        h, w = pyr1[lvl].shape
        if u is None:
            u = np.zeros((h, w))
            v = np.zeros((h, w))
        else:
            sy = h / u.shape[0]
            sx = w / u.shape[1]
            u = resize_bilinear(u, h, w) * sx
            v = resize_bilinear(v, h, w) * sy
        c1 = poly_expansion(pyr1[lvl], cfg.poly_sigma)
        c2 = poly_expansion(pyr2[lvl], cfg.poly_sigma)
        u, v = _refine(c1, c2, u, v, cfg)
    return FlowField(u, v)


def median_filter_flow(flow: FlowField, k: int = 3) -> FlowField:
    """Component-wise ``k x k`` median with replicated borders."""
    if k < 3 or k % 2 == 0:
        raise InputError(f"median kernel must be odd and >= 3, got {k}")
    return FlowField(ndimage.median_filter(flow.u, size=k, mode="nearest"),
                     ndimage.median_filter(flow.v, size=k, mode="nearest"))


def flow_gradients(flow: FlowField) -> FlowGradients:
    """Central differences inside the field, one-sided at the borders."""
    if flow.height < 3 or flow.width < 3:
        raise InputError(f"flow field too small for gradients: {flow.width}x{flow.height}")
    du_dy, du_dx = np.gradient(flow.u)
    dv_dy, dv_dx = np.gradient(flow.v)
    return FlowGradients(du_dx, du_dy, dv_dx, dv_dy)


# -- FLO1 dump ----------------------------------------------------------------

_FLO_MAGIC = b"FLO1"


def write_flo(path, flow: FlowField) -> None:
    data = np.empty((flow.height, flow.width, 2), dtype="<f4")
    data[..., 0] = flow.u
    data[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(_FLO_MAGIC)
        fh.write(struct.pack("<II", flow.width, flow.height))
        fh.write(data.tobytes())


def read_flo(path) -> FlowField:
    raw = Path(path).read_bytes()
    if raw[:4] != _FLO_MAGIC:
        raise InputError(f"{path}: not a FLO1 file")
    w, h = struct.unpack("<II", raw[4:12])
    expected = 12 + w * h * 8
    if len(raw) != expected:
        raise InputError(f"{path}: truncated FLO1 payload ({len(raw)} bytes, expected {expected})")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float64)
    return FlowField(data[..., 0].copy(), data[..., 1].copy())
