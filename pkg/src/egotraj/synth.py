"""Synthetic egocentric-style videos with known motion and camera jitter.

A textured foreground patch follows a per-class motion program over a
value-noise background; the whole scene is then viewed through a slowly
jittering affine camera. Everything is deterministic under the seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InputError
from .video_io import ActionAnnotation, save_frame_sequence, write_annotations

MOTION_PROGRAMS = ("translate-right", "stir", "pour")


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple = MOTION_PROGRAMS
    frames_per_action: int = 60
    width: int = 96
    height: int = 72
    patch_size: int = 20
    jitter: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) < 1:
            raise InputError("synthetic spec needs at least one action class")
        for c in self.classes:
            if c not in MOTION_PROGRAMS:
                raise InputError(f"unknown motion program {c!r}; choose from {MOTION_PROGRAMS}")
        if self.frames_per_action < 2:
            raise InputError("frames_per_action must be >= 2")
        if self.width < 48 or self.height < 48:
            raise InputError("synthetic frames must be at least 48x48")


@dataclass
class SyntheticVideo:
    frames: list
    annotation: ActionAnnotation
    camera: list  # per frame pair (t, t+1): 2x3 matrix [A | t] mapping frame t to t+1
    patch_centers: np.ndarray  # (T, 2) patch centre in scene coordinates
    patch_in_frame: np.ndarray  # (T, 2) the same centre seen through the camera
    labels: list = field(default_factory=list)


def value_noise(height, width, rng, cells=(9, 4), weights=(1.0, 0.5)) -> np.ndarray:
    """Sum of cubic-interpolated random lattices, rescaled to [0.1, 0.9]."""
    out = np.zeros((height, width))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for cell, wgt in zip(cells, weights):
        lat = rng.random((height // cell + 4, width // cell + 4))
        out += wgt * ndimage.map_coordinates(lat, [yy / cell + 1, xx / cell + 1], order=3, mode="nearest")
    out -= out.min()
    out /= max(out.max(), 1e-12)
    return 0.1 + 0.8 * out


def _program(name, n, rng, width, height, patch):
    """Patch centre in scene coordinates for ``n`` frames."""
    t = np.arange(n, dtype=np.float64)
    half = patch / 2.0
    if name == "translate-right":
        speed = rng.uniform(0.8, 1.2)
        travel = speed * (n - 1)
        lo = half + 2
        hi = max(lo, width - half - 2 - travel)
        x0 = rng.uniform(lo, hi)
        y0 = rng.uniform(height * 0.35, height * 0.65)
        return np.column_stack([x0 + speed * t, np.full(n, y0)])
    if name == "stir":
        r = rng.uniform(9.0, 13.0)
        period = rng.uniform(18.0, 24.0)
        phase = rng.uniform(0, 2 * np.pi)
        cx = width / 2 + rng.uniform(-4, 4)
        cy = height / 2 + rng.uniform(-3, 3)
        ang = 2 * np.pi * t / period + phase
        return np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)])
    if name == "pour":
        amp = rng.uniform(8.0, 12.0)
        period = rng.uniform(20.0, 30.0)
        phase = rng.uniform(0, 2 * np.pi)
        cx = width / 2 + rng.uniform(-12, 12)
        cy = height / 2 + rng.uniform(-3, 3)
        return np.column_stack([np.full(n, cx), cy + amp * np.sin(2 * np.pi * t / period + phase)])
    raise InputError(f"unknown motion program {name!r}")


def _camera_path(n, rng, jitter, width, height):
    """Per-frame scene->frame affines as 2x3 matrices (rotation about the centre)."""
    if jitter <= 0:
        return [np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]) for _ in range(n)]
    t = np.arange(n, dtype=np.float64)
    comps = []
    for _ in range(3):
        f1, f2 = rng.uniform(0.02, 0.08, size=2)
        p1, p2 = rng.uniform(0, 2 * np.pi, size=2)
        comps.append(np.sin(2 * np.pi * f1 * t + p1) + 0.5 * np.sin(2 * np.pi * f2 * t + p2))
    tx = jitter * comps[0]
    ty = jitter * comps[1]
    rot = np.deg2rad(0.4 * jitter / 1.5) * comps[2] / 1.5
    c = np.array([width / 2.0, height / 2.0])
    mats = []
    for k in range(n):
        R = np.array([[math.cos(rot[k]), -math.sin(rot[k])], [math.sin(rot[k]), math.cos(rot[k])]])
        off = c - R @ c + np.array([tx[k], ty[k]])
        mats.append(np.column_stack([R, off]))
    return mats


def _compose(m2, m1):
    """Affine ``m2 o m1`` for 2x3 matrices."""
    A = m2[:, :2] @ m1[:, :2]
    b = m2[:, :2] @ m1[:, 2] + m2[:, 2]
    return np.column_stack([A, b])


def _invert(m):
    Ai = np.linalg.inv(m[:, :2])
    return np.column_stack([Ai, -Ai @ m[:, 2]])


def render_frame(bg, patch, center, cam, height, width) -> np.ndarray:
    """Sample the scene (background + patch at ``center``) through camera ``cam``."""
    inv = _invert(cam)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    sx = inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]
    sy = inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]
    pad = (bg.shape[0] - height) // 2
    img = ndimage.map_coordinates(bg, [sy + pad, sx + pad], order=1, mode="nearest")
    ph, pw = patch.shape
    px = sx - (center[0] - pw / 2.0) - 0.5
    py = sy - (center[1] - ph / 2.0) - 0.5
    inside = (px >= 0) & (px <= pw - 1) & (py >= 0) & (py <= ph - 1)
    if inside.any():
        img[inside] = ndimage.map_coordinates(patch, [py[inside], px[inside]], order=1, mode="nearest")
    return np.clip(np.rint(img * 255.0), 0, 255) / 255.0


def generate_video(spec: SyntheticSpec, seed: int | None = None) -> SyntheticVideo:
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    W, H = spec.width, spec.height
    pad = 16
    bg = value_noise(H + 2 * pad, W + 2 * pad, rng)
    patch_tex = value_noise(spec.patch_size, spec.patch_size, rng, cells=(4, 2), weights=(1.0, 0.6))
    # high-contrast patch so it stands out from the background
    patch_tex = np.clip(0.5 + 1.3 * (patch_tex - 0.5), 0.0, 1.0)

    centers, labels, segments = [], [], []
    start = 1
    for name in spec.classes:
        n = spec.frames_per_action
        centers.append(_program(name, n, rng, W, H, spec.patch_size))
        labels += [name] * n
        segments.append((start, start + n - 1, name))
        start += n
    centers = np.concatenate(centers)
    total = len(centers)
    cams = _camera_path(total, rng, spec.jitter, W, H)

    frames = [render_frame(bg, patch_tex, centers[k], cams[k], H, W) for k in range(total)]
    rel = [_compose(cams[k + 1], _invert(cams[k])) for k in range(total - 1)]
    in_frame = np.array([cams[k][:, :2] @ centers[k] + cams[k][:, 2] for k in range(total)])
    return SyntheticVideo(frames, ActionAnnotation(tuple(segments)), rel, centers, in_frame, labels)


def write_video(video: SyntheticVideo, out_dir, ext: str = "pgm") -> Path:
    """Frames plus ``annotations.csv``, ``camera.csv`` and ``patch.csv``."""
    out = Path(out_dir)
    save_frame_sequence(out, video.frames, start_id=1, ext=ext)
    write_annotations(out / "annotations.csv", video.annotation)
    with open(out / "camera.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "a11", "a12", "a21", "a22", "tx", "ty"])
        for k, m in enumerate(video.camera):
            w.writerow([k + 1, *(repr(float(v)) for v in (m[0, 0], m[0, 1], m[1, 0], m[1, 1], m[0, 2], m[1, 2]))])
    with open(out / "patch.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "x", "y", "frame_x", "frame_y", "label"])
        for k, label in enumerate(video.labels):
            c, f = video.patch_centers[k], video.patch_in_frame[k]
            w.writerow([k + 1, *(repr(float(v)) for v in (c[0], c[1], f[0], f[1])), label])
    return out
