"""Lazy per-video cache of pyramids, flows and derived per-pixel maps.

Every expensive quantity (flow per frame pair and scale, its median-filtered
version, its gradients, the sampling-quality map of a frame) is computed at
most once, so that overlapping sliding windows and both playback directions
share work.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from scipy import ndimage

from .flow import FlowConfig, FlowField, dense_flow, flow_gradients, median_filter_flow
from .video_io import build_pyramid


def min_eigen_map(img: np.ndarray) -> np.ndarray:
    """Smaller eigenvalue of the 3x3-summed structure tensor at every pixel."""
    gx = ndimage.sobel(img, axis=1, mode="reflect") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="reflect") / 8.0
    a = ndimage.uniform_filter(gx * gx, 3, mode="reflect")
    b = ndimage.uniform_filter(gx * gy, 3, mode="reflect")
    c = ndimage.uniform_filter(gy * gy, 3, mode="reflect")
    half_tr = 0.5 * (a + c)
    disc = np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return np.maximum(half_tr - disc, 0.0)


class VideoContext:
    """Frames plus memoised per-scale computations.

    Parameters
    ----------
    frames : list of 2-D arrays
        Grayscale frames. Pairs are addressed by indices into this list.
    frame_ids : sequence of int, optional
    num_scales, scale_factor : pyramid parameters
    flow_cfg : FlowConfig
    median_k : median kernel used for tracking flows
    max_cached : int, optional
        Per-cache entry bound (least recently used entries are dropped);
        unbounded by default.
    """

    def __init__(self, frames, frame_ids=None, num_scales=8, scale_factor=1.0 / math.sqrt(2.0),
                 flow_cfg=None, median_k=3, max_cached=None):
        self.frames = list(frames)
        self.frame_ids = tuple(frame_ids) if frame_ids is not None else tuple(range(len(self.frames)))
        self.scale_factor = scale_factor
        self.flow_cfg = flow_cfg or FlowConfig()
        self.median_k = median_k
        self.max_cached = max_cached
        first = build_pyramid(self.frames[0], num_scales, scale_factor)
        self.num_scales = first.num_levels
        self.shapes = [lvl.shape for lvl in first.levels]
        self._pyr = OrderedDict({0: first})
        self._eig = OrderedDict()
        self._flow = OrderedDict()
        self._median = OrderedDict()
        self._grad = OrderedDict()
        self.flow_count = 0

    def __len__(self):
        return len(self.frames)

    def _cached(self, cache, key, make):
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
        value = make()
        cache[key] = value
        if self.max_cached is not None:
            while len(cache) > self.max_cached:
                cache.popitem(last=False)
        return value

    def _make_flow(self, a, b, scale):
        self.flow_count += 1
        return dense_flow(self.image(a, scale), self.image(b, scale), self.flow_cfg)

    def image(self, i: int, scale: int) -> np.ndarray:
        pyr = self._cached(self._pyr, i, lambda: build_pyramid(self.frames[i], self.num_scales,
                                                                self.scale_factor))
        return pyr.levels[scale]

    def eig(self, i: int, scale: int) -> np.ndarray:
        return self._cached(self._eig, (i, scale), lambda: min_eigen_map(self.image(i, scale)))

    def flow(self, a: int, b: int, scale: int) -> FlowField:
        return self._cached(self._flow, (a, b, scale), lambda: self._make_flow(a, b, scale))

    def median_flow(self, a: int, b: int, scale: int) -> FlowField:
        return self._cached(self._median, (a, b, scale),
                            lambda: median_filter_flow(self.flow(a, b, scale), self.median_k))

    def gradients(self, a: int, b: int, scale: int):
        return self._cached(self._grad, (a, b, scale), lambda: flow_gradients(self.flow(a, b, scale)))

    def scale_of(self, level: int) -> float:
        """Multiplier taking level coordinates to level-0 coordinates."""
        return self.scale_factor ** (-level)
