"""Frame loading, scale pyramids and reflection-padded sliding windows.

Frames are plain 2-D ``float64`` numpy arrays with intensities in [0, 1]
(row-major, shape ``(height, width)``).
"""

from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError

FRAME_PATTERN = "frame_%06d"
MIN_PYRAMID_SIDE = 48


def as_gray(img, name="image") -> np.ndarray:
    """Validate and convert ``img`` to a finite float64 array in [0, 1]."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InputError(f"{name}: expected a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite intensities")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError(f"{name}: intensities outside [0, 1]")
    return arr


@dataclass(frozen=True)
class FrameSequence:
    frames: list
    frame_ids: tuple

    def __post_init__(self):
        if len(self.frames) != len(self.frame_ids):
            raise InputError("frames and frame_ids differ in length")
        if any(b <= a for a, b in zip(self.frame_ids, self.frame_ids[1:])):
            raise InputError("frame ids must be strictly increasing")
        shapes = {f.shape for f in self.frames}
        if len(shapes) > 1:
            raise InputError(f"mixed dimensions: {sorted(shapes)}")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.frames[0].shape

    def index_of(self, frame_id: int) -> int:
        try:
            return self.frame_ids.index(frame_id)
        except ValueError:
            raise InputError(f"frame {frame_id} outside sequence "
                             f"[{self.frame_ids[0]}, {self.frame_ids[-1]}]") from None


@dataclass(frozen=True)
class ScalePyramid:
    levels: list
    scale_factor: float
    num_levels: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_levels", len(self.levels))


@dataclass(frozen=True)
class FrameWindow:
    center_frame: int
    frame_ids: tuple
    indices: tuple
    frames: list

    @property
    def window_radius(self):
        return (len(self.frames) - 1) // 2

    def __len__(self):
        return len(self.frames)


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "RGBA", "P"):
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
            elif im.mode in ("L", "LA"):
                gray = np.asarray(im.convert("L"), dtype=np.float64)
            elif im.mode in ("I;16", "I;16B", "I"):
                data = np.asarray(im, dtype=np.float64)
                return np.clip(data / 65535.0, 0.0, 1.0)
            else:
                raise InputError(f"{path.name}: unsupported image mode {im.mode}")
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"{path.name}: cannot decode image ({exc})") from None
    return gray / 255.0


def _template_regex(pattern: str) -> re.Pattern:
    m = re.search(r"%0?(\d*)d", pattern)
    if m is None:
        raise InputError(f"filename template {pattern!r} has no %d field")
    head = re.escape(pattern[: m.start()])
    tail = re.escape(pattern[m.end():])
    return re.compile(rf"^{head}(\d+){tail}\.(pgm|png)$", re.IGNORECASE)


def load_frame_sequence(directory, pattern: str = FRAME_PATTERN) -> FrameSequence:
    """Load ``frame_%06d.pgm|png`` files sorted by their numeric index."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"frame directory not found: {directory}")
    rx = _template_regex(pattern)
    found = []
    for name in os.listdir(directory):
        m = rx.match(name)
        if m:
            found.append((int(m.group(1)), name))
    found.sort()
    if len(found) < 2:
        raise InputError(f"{directory}: need at least 2 frames matching {pattern!r}, found {len(found)}")
    ids = [i for i, _ in found]
    if len(set(ids)) != len(ids):
        raise InputError(f"{directory}: duplicate frame indices (pgm and png of the same frame?)")
    frames = []
    shape = None
    for _, name in found:
        img = _read_image(directory / name)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise InputError(f"mixed dimensions: {name} is {img.shape[1]}x{img.shape[0]}, "
                             f"expected {shape[1]}x{shape[0]}")
        frames.append(img)
    return FrameSequence(frames, tuple(ids))


def save_frame(path, img) -> None:
    """Write an 8-bit grayscale frame; format follows the file suffix."""
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def save_frame_sequence(directory, frames: Sequence, start_id: int = 1, ext: str = "pgm") -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(frames):
        p = directory / (FRAME_PATTERN % (start_id + i) + "." + ext)
        save_frame(p, img)
        paths.append(p)
    return paths


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment and clamped borders."""
    h0, w0 = img.shape
    if (h0, w0) == (height, width):
        return img.copy()
    ys = (np.arange(height) + 0.5) * (h0 / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w0 / width) - 0.5
    ys = np.clip(ys, 0.0, h0 - 1.0)
    xs = np.clip(xs, 0.0, w0 - 1.0)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h0 - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w0 - 1)
    y1 = np.minimum(y0 + 1, h0 - 1)
    x1 = np.minimum(x0 + 1, w0 - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[y0][:, x0] * (1.0 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1.0 - wx) + img[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


def pyramid_shapes(height: int, width: int, num_levels: int, factor: float,
                   min_side: int = MIN_PYRAMID_SIDE) -> list:
    shapes = []
    for i in range(num_levels):
        h = round_half_up(height * factor ** i)
        w = round_half_up(width * factor ** i)
        if i > 0 and (h < min_side or w < min_side):
            break
        shapes.append((h, w))
    return shapes


def build_pyramid(img, num_levels: int = 8, factor: float = 1.0 / math.sqrt(2.0)) -> ScalePyramid:
    """Multi-scale pyramid; levels smaller than 48x48 are dropped.

    Level 0 is always kept, even when the input itself is below the minimum.
    """
    img = as_gray(img)
    if not 0.0 < factor < 1.0:
        raise InputError(f"pyramid factor must lie in (0, 1), got {factor}")
    if num_levels < 1:
        raise InputError("num_levels must be >= 1")
    shapes = pyramid_shapes(*img.shape, num_levels, factor)
    levels = [img]
    for h, w in shapes[1:]:
        levels.append(resize_bilinear(levels[-1], h, w))
    return ScalePyramid(levels, factor)


def reflect_index(i: int, n: int) -> int:
    """Map ``i`` into ``[0, n)`` by mirroring about the first/last frame."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    return i if i < n else period - i


def sliding_window(seq: FrameSequence, m: int, M: int = 30) -> FrameWindow:
    """Frames ``m - M/2 .. m + M/2`` with reflection at the sequence borders."""
    if M % 2:
        raise InputError(f"window size M must be even, got {M}")
    center = seq.index_of(m)
    half = M // 2
    n = len(seq)
    idx = tuple(reflect_index(center + k, n) for k in range(-half, half + 1))
    return FrameWindow(m, tuple(seq.frame_ids[i] for i in idx), idx, [seq.frames[i] for i in idx])


# -- annotations -------------------------------------------------------------

BACKGROUND = "background"


@dataclass(frozen=True)
class ActionAnnotation:
    """Inclusive, non-overlapping, 1-based labelled frame ranges."""

    segments: tuple

    def __post_init__(self):
        prev_end = None
        for s, e, label in self.segments:
            if e < s:
                raise InputError(f"annotation segment {s}-{e} ({label}) has end < start")
            if prev_end is not None and s <= prev_end:
                raise InputError(f"annotation segment {s}-{e} ({label}) overlaps the previous one")
            prev_end = e

    @property
    def labels(self) -> list:
        seen = []
        for _, _, label in self.segments:
            if label not in seen:
                seen.append(label)
        return seen

    def frame_labels(self, frame_ids: Sequence[int]) -> list:
        """Per-frame label; frames outside every segment are background."""
        out = []
        segs = self.segments
        j = 0
        for f in frame_ids:
            while j < len(segs) and segs[j][1] < f:
                j += 1
            if j < len(segs) and segs[j][0] <= f <= segs[j][1]:
                out.append(segs[j][2])
            else:
                out.append(BACKGROUND)
        return out


def read_annotations(path) -> ActionAnnotation:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"annotation file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != [
                "start_frame", "end_frame", "label"]:
            raise InputError(f"{path.name}: header must be start_frame,end_frame,label")
        segs = []
        for lineno, row in enumerate(reader, start=2):
            try:
                segs.append((int(row["start_frame"]), int(row["end_frame"]), row["label"].strip()))
            except (TypeError, ValueError):
                raise InputError(f"{path.name}:{lineno}: malformed row {row}") from None
    segs.sort()
    return ActionAnnotation(tuple(segs))


def write_annotations(path, ann: ActionAnnotation) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_frame", "end_frame", "label"])
        for s, e, label in ann.segments:
            w.writerow([s, e, label])
