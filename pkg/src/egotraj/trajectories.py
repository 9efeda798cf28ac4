"""Dense grid sampling, median-flow point tracking and trajectory pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .context import VideoContext
from .errors import InputError
from .flow import FlowField

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class TrackerConfig:
    grid_step: int = 5
    traj_length: int = 15
    num_scales: int = 8
    scale_factor: float = 1.0 / math.sqrt(2.0)
    min_eig_frac: float = 0.001
    static_std_px: float = 1.0
    max_step_px: float = 20.0
    max_step_frac: float = 0.7

    def __post_init__(self):
        if self.grid_step < 1:
            raise InputError("grid_step must be >= 1")
        if self.traj_length < 2:
            raise InputError("traj_length must be >= 2")
        for name in ("min_eig_frac", "static_std_px", "max_step_px", "max_step_frac"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be > 0")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A tracked point at one pyramid level.

    ``points`` has ``L + 1`` rows of ``(x, y)`` in level coordinates, in the
    order of the playback direction that produced it. ``frames`` holds the
    matching context frame indices. ``start_pos`` is the window (or padded
    sequence) position where the point was first sampled, counted in forward
    time; ``span`` is the ``(lo, hi)`` forward-time range it covers.
    """

    scale_level: int
    direction: str
    start_frame: int
    points: np.ndarray
    frames: tuple = ()
    start_pos: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise InputError(f"trajectory points must be (L+1, 2), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def length(self) -> int:
        return len(self.points) - 1

    @property
    def displacements(self) -> np.ndarray:
        return np.diff(self.points, axis=0)

    @property
    def span(self) -> tuple:
        if self.direction == FORWARD:
            return (self.start_pos, self.start_pos + self.length)
        return (self.start_pos - self.length, self.start_pos)


@dataclass(frozen=True)
class TrajectorySet:
    window: int
    trajectories: list = field(default_factory=list)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)


def _grid(shape, step):
    h, w = shape
    gy, gx = np.mgrid[0:h:step, 0:w:step]
    return gx.ravel(), gy.ravel()


def _occupied_cells(existing, shape, step):
    ny = (shape[0] - 1) // step + 1
    nx = (shape[1] - 1) // step + 1
    occ = np.zeros((ny, nx), dtype=bool)
    if existing is not None and len(existing):
        pts = np.asarray(existing, dtype=np.float64).reshape(-1, 2)
        cx = np.floor(pts[:, 0] / step + 0.5).astype(np.intp)
        cy = np.floor(pts[:, 1] / step + 0.5).astype(np.intp)
        ok = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
        occ[cy[ok], cx[ok]] = True
    return occ


def _sample_from_eig(eig, existing, cfg: TrackerConfig) -> np.ndarray:
    step = cfg.grid_step
    gx, gy = _grid(eig.shape, step)
    peak = eig.max()
    if peak <= 0.0:
        return np.empty((0, 2))
    quality = eig[gy, gx] > cfg.min_eig_frac * peak
    occ = _occupied_cells(existing, eig.shape, step)
    free = ~occ[gy // step, gx // step]
    keep = quality & free
    return np.column_stack([gx[keep], gy[keep]]).astype(np.float64)


def sample_points(img, existing=None, cfg: TrackerConfig | None = None) -> list:
    """Grid points (multiples of ``grid_step``) with enough texture.

    A grid point is rejected when an existing point lies in its grid cell
    (within ``grid_step / 2`` in both coordinates) or when the smaller
    structure-tensor eigenvalue there does not exceed ``min_eig_frac`` times
    the frame maximum.
    """
    from .context import min_eigen_map

    cfg = cfg or TrackerConfig()
    pts = _sample_from_eig(min_eigen_map(np.asarray(img, dtype=np.float64)), existing, cfg)
    return [(float(x), float(y)) for x, y in pts]


def in_bounds(x, y, shape) -> bool:
    return 0.0 <= x <= shape[1] - 1 and 0.0 <= y <= shape[0] - 1


def track_point(p, flow: FlowField):
    """Advance ``p`` by the (already median-filtered) flow at its rounded position.

    Returns the new ``(x, y)``, or ``None`` when it leaves the frame.
    """
    x, y = float(p[0]), float(p[1])
    if not in_bounds(x, y, flow.shape):
        raise InputError(f"point {p} outside {flow.width}x{flow.height} frame")
    rx = int(math.floor(x + 0.5))
    ry = int(math.floor(y + 0.5))
    nx = x + float(flow.u[ry, rx])
    ny = y + float(flow.v[ry, rx])
    if not in_bounds(nx, ny, flow.shape):
        return None
    return (nx, ny)


def prune_trajectory(t: Trajectory, cfg: TrackerConfig | None = None) -> str:
    """Return ``"keep"``, ``"static"`` or ``"erratic"``."""
    cfg = cfg or TrackerConfig()
    pts = t.points
    if pts[:, 0].std() < cfg.static_std_px and pts[:, 1].std() < cfg.static_std_px:
        return "static"
    steps = np.hypot(*t.displacements.T)
    total = steps.sum()
    if np.any(steps > cfg.max_step_px) or np.any(steps > cfg.max_step_frac * total):
        return "erratic"
    return "keep"


def _keep_mask(tracks: np.ndarray, cfg: TrackerConfig) -> np.ndarray:
    """Vectorised ``prune_trajectory`` over an ``(n, L+1, 2)`` stack."""
    if len(tracks) == 0:
        return np.zeros(0, dtype=bool)
    std = tracks.std(axis=1)
    static = (std[:, 0] < cfg.static_std_px) & (std[:, 1] < cfg.static_std_px)
    d = np.diff(tracks, axis=1)
    steps = np.hypot(d[..., 0], d[..., 1])
    total = steps.sum(axis=1, keepdims=True)
    erratic = np.any(steps > cfg.max_step_px, axis=1) | np.any(steps > cfg.max_step_frac * total, axis=1)
    return ~static & ~erratic


def iter_tracks(ctx: VideoContext, order, scale: int, cfg: TrackerConfig):
    """Sample and track points over ``order`` (context frame indices) at one scale.

    Consecutive entries of ``order`` are treated as a playback frame pair;
    the flow between them is taken from ``ctx``. Points are re-seeded on
    every frame at unoccupied grid cells as long as a full-length track can
    still complete. After each tracking step ``t`` yields
    ``(t, starts, tracks)`` for the tracks completed at that step: the step
    index where each began and an ``(n, L+1, 2)`` array of its points.
    """
    L = cfg.traj_length
    T = len(order)
    shape = ctx.shapes[scale]
    active = np.empty((0, L + 1, 2))
    age = np.empty(0, dtype=np.intp)
    born = np.empty(0, dtype=np.intp)
    empty = (np.empty(0, dtype=np.intp), np.empty((0, L + 1, 2)))
    for t in range(T - 1):
        if t + L <= T - 1:
            cur = active[np.arange(len(active)), age] if len(active) else np.empty((0, 2))
            new = _sample_from_eig(ctx.eig(order[t], scale), cur, cfg)
            if len(new):
                block = np.zeros((len(new), L + 1, 2))
                block[:, 0] = new
                active = np.concatenate([active, block])
                age = np.concatenate([age, np.zeros(len(new), dtype=np.intp)])
                born = np.concatenate([born, np.full(len(new), t, dtype=np.intp)])
        if len(active) == 0:
            yield (t,) + empty
            continue
        flow = ctx.median_flow(order[t], order[t + 1], scale)
        idx = np.arange(len(active))
        pos = active[idx, age]
        rx = np.floor(pos[:, 0] + 0.5).astype(np.intp)
        ry = np.floor(pos[:, 1] + 0.5).astype(np.intp)
        nxt = pos + np.column_stack([flow.u[ry, rx], flow.v[ry, rx]])
        ok = ((nxt[:, 0] >= 0) & (nxt[:, 0] <= shape[1] - 1)
              & (nxt[:, 1] >= 0) & (nxt[:, 1] <= shape[0] - 1))
        age = age + 1
        active[idx, age] = nxt
        finished = ok & (age == L)
        yield t, born[finished], active[finished]
        alive = ok & (age < L)
        active, age, born = active[alive], age[alive], born[alive]


def track_sequence(ctx: VideoContext, order, scale: int, cfg: TrackerConfig):
    """All tracks of ``iter_tracks`` concatenated: ``(starts, tracks)``."""
    L = cfg.traj_length
    starts, tracks = [np.empty(0, dtype=np.intp)], [np.empty((0, L + 1, 2))]
    for _, s, tr in iter_tracks(ctx, order, scale, cfg):
        starts.append(s)
        tracks.append(tr)
    return np.concatenate(starts), np.concatenate(tracks)


def track_direction(ctx: VideoContext, order, cfg: TrackerConfig, direction: str,
                    position_of=None, prune: bool = True) -> list:
    """Track over every scale for one playback direction.

    ``position_of(step)`` maps a step index in ``order`` to the forward-time
    position recorded as ``start_pos``; it defaults to the identity for the
    forward direction and to ``len(order) - 1 - step`` for backward.
    """
    order = list(order)
    T = len(order)
    if position_of is None:
        position_of = (lambda s: s) if direction == FORWARD else (lambda s: T - 1 - s)
    out = []
    L = cfg.traj_length
    for scale in range(ctx.num_scales):
        starts, tracks = track_sequence(ctx, order, scale, cfg)
        out += make_trajectories(ctx, order, scale, direction, starts, tracks, cfg, position_of, prune)
    return out


def make_trajectories(ctx, order, scale, direction, starts, tracks, cfg, position_of, prune=True):
    """Wrap raw tracks as ``Trajectory`` objects, dropping pruned ones."""
    L = cfg.traj_length
    if prune:
        keep = _keep_mask(tracks, cfg)
        starts, tracks = starts[keep], tracks[keep]
    return [Trajectory(scale, direction, ctx.frame_ids[order[s]], pts, tuple(order[s:s + L + 1]),
                       position_of(s))
            for s, pts in zip(starts.tolist(), tracks)]


def extract_bidirectional(window, cfg: TrackerConfig | None = None, ctx: VideoContext | None = None,
                          flow_cfg=None) -> TrajectorySet:
    """Trajectories from forward and reversed playback of one window, pooled.

    ``window`` is a ``FrameWindow``. Flow for the reversed pass is computed on
    the reversed frame pairs, not by negating forward flow.
    """
    cfg = cfg or TrackerConfig()
    n = len(window.frames)
    if n < cfg.traj_length + 1:
        raise InputError(f"window has {n} frames, need at least {cfg.traj_length + 1}")
    if ctx is None:
        ctx = VideoContext(window.frames, window.frame_ids, cfg.num_scales, cfg.scale_factor, flow_cfg)
    order = list(range(n))
    trajs = track_direction(ctx, order, cfg, FORWARD)
    trajs += track_direction(ctx, order[::-1], cfg, BACKWARD)
    return TrajectorySet(window.center_frame, trajs)


def format_trajectory(t: Trajectory) -> str:
    """One-line text dump: ``scale dir start_frame x0 y0 ... xL yL``."""
    coords = " ".join(f"{x:.4f} {y:.4f}" for x, y in t.points)
    return f"{t.scale_level} {t.direction} {t.start_frame} {coords}"


def write_trajectories(path, trajectories) -> None:
    with open(path, "w") as fh:
        for t in trajectories:
            fh.write(format_trajectory(t) + "\n")


def read_trajectories(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                scale, direction, start = int(parts[0]), parts[1], int(parts[2])
                pts = np.array([float(v) for v in parts[3:]]).reshape(-1, 2)
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed trajectory line") from None
            out.append(Trajectory(scale, direction, start, pts))
    return out
