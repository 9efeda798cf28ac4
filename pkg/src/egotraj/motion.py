"""Global (head-induced) affine motion: estimation, cancellation and camera translation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .flow import FlowField
from .trajectories import Trajectory

GRID_STEP = 8
RANSAC_ITERS = 200
RANSAC_THRESH = 1.0
MIN_INLIER_RATIO = 0.2
MIN_SAMPLES = 50


@dataclass(frozen=True)
class AffineTransform:
    """Maps ``(x, y) -> (a11 x + a12 y + tx, a21 x + a22 y + ty)``."""

    a11: float = 1.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_matrix())):
            raise InputError("affine transform has non-finite entries")

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]),
                   float(m[0, 2]), float(m[1, 2]))

    @classmethod
    def from_displacement(cls, d):
        """Build from a 2x3 displacement model ``d(x) = D[:, :2] x + D[:, 2]``."""
        d = np.asarray(d, dtype=np.float64)
        return cls(1.0 + d[0, 0], d[0, 1], d[1, 0], 1.0 + d[1, 1], d[0, 2], d[1, 2])

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12, self.tx], [self.a21, self.a22, self.ty]])

    def apply(self, x, y):
        return (self.a11 * x + self.a12 * y + self.tx, self.a21 * x + self.a22 * y + self.ty)

    def displacement(self, x, y):
        """``T(p) - p`` evaluated at ``(x, y)`` (scalars or arrays)."""
        return ((self.a11 - 1.0) * x + self.a12 * y + self.tx,
                self.a21 * x + (self.a22 - 1.0) * y + self.ty)

    def scaled(self, s: float) -> "AffineTransform":
        """Same motion expressed in coordinates multiplied by ``s``."""
        return AffineTransform(self.a11, self.a12, self.a21, self.a22, self.tx * s, self.ty * s)


@dataclass(frozen=True)
class CameraTranslation:
    frame_pair: tuple
    dx: float
    dy: float


def _fit_lsq(xy, d):
    X = np.column_stack([xy, np.ones(len(xy))])
    sol, *_ = np.linalg.lstsq(X, d, rcond=None)
    return sol.T  # 2x3 displacement model


def estimate_affine(flow: FlowField, mask=None, seed: int = 0, grid_step: int = GRID_STEP,
                    iterations: int = RANSAC_ITERS, thresh: float = RANSAC_THRESH) -> AffineTransform:
    """Robust affine fit to the flow displacement field.

    Samples on a coarse grid, runs RANSAC over minimal 3-point fits and
    refits by least squares on the best consensus set. Falls back to the
    identity when fewer than 20% of samples agree.
    """
    if flow.u.size == 0:
        raise InputError("estimate_affine: empty flow")
    h, w = flow.shape
    gy, gx = np.mgrid[0:h:grid_step, 0:w:grid_step]
    gx, gy = gx.ravel(), gy.ravel()
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)[gy, gx]
        gx, gy = gx[keep], gy[keep]
    n = len(gx)
    if n < MIN_SAMPLES:
        raise InputError(f"estimate_affine: only {n} sample positions, need {MIN_SAMPLES}")
    xy = np.column_stack([gx, gy]).astype(np.float64)
    d = np.column_stack([flow.u[gy, gx], flow.v[gy, gx]])
    X = np.column_stack([xy, np.ones(n)])

    rng = np.random.default_rng(seed)
    picks = np.array([rng.choice(n, 3, replace=False) for _ in range(iterations)])
    Xs = X[picks]  # (iters, 3, 3)
    dets = np.linalg.det(Xs)
    good = np.abs(dets) > 1e-6
    best_inl = None
    best_count = -1
    if good.any():
        models = np.linalg.solve(Xs[good], d[picks[good]])  # (g, 3, 2)
        pred = np.einsum("nk,gkc->gnc", X, models)
        err = np.hypot(pred[..., 0] - d[:, 0], pred[..., 1] - d[:, 1])
        inl = err < thresh
        counts = inl.sum(axis=1)
        b = int(np.argmax(counts))
        best_count = int(counts[b])
        best_inl = inl[b]
    if best_inl is None or best_count < MIN_INLIER_RATIO * n or best_count < 3:
        return AffineTransform.identity()
    model = _fit_lsq(xy[best_inl], d[best_inl])
    # one consensus refresh with the refined model
    pred = X @ model.T
    inl = np.hypot(*(pred - d).T) < thresh
    if inl.sum() >= max(3, MIN_INLIER_RATIO * n):
        model = _fit_lsq(xy[inl], d[inl])
    return AffineTransform.from_displacement(model)


def affine_field(A: AffineTransform, shape) -> FlowField:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    du, dv = A.displacement(xx, yy)
    return FlowField(du, dv)


def compensate_flow(flow: FlowField, A: AffineTransform) -> FlowField:
    """Residual flow after removing the affine displacement field."""
    g = affine_field(A, flow.shape)
    return FlowField(flow.u - g.u, flow.v - g.v)


def cancel_head_motion(t: Trajectory, affines, level_scale: float = 1.0) -> Trajectory:
    """Subtract per-step global motion from a trajectory's displacements.

    ``affines[i]`` is the full-resolution transform for the frame pair of
    step ``i``; ``level_scale`` multiplies trajectory coordinates up to full
    resolution (``factor ** -level``). Points are re-integrated from the
    first point.
    """
    pts = t.points
    disp = compensated_displacements(t, affines, level_scale)
    new_pts = np.empty_like(pts)
    new_pts[0] = pts[0]
    new_pts[1:] = pts[0] + np.cumsum(disp, axis=0)
    return Trajectory(t.scale_level, t.direction, t.start_frame, new_pts, t.frames, t.start_pos)


def compensated_displacements(t: Trajectory, affines, level_scale: float = 1.0) -> np.ndarray:
    """Compensated ``(L, 2)`` displacement array (no re-integration round-off)."""
    if len(affines) != t.length:
        raise InputError(f"cancel_head_motion: {len(affines)} affines for a trajectory of length {t.length}")
    pts = t.points
    disp = t.displacements.copy()
    for i, A in enumerate(affines):
        gx, gy = A.displacement(pts[i, 0] * level_scale, pts[i, 1] * level_scale)
        disp[i, 0] -= gx / level_scale
        disp[i, 1] -= gy / level_scale
    return disp


def camera_translation(A: AffineTransform, frame_dims, frame_pair=(0, 1)) -> CameraTranslation:
    """Global translation: the affine displacement at the frame centre."""
    w, h = frame_dims
    dx, dy = A.displacement(w / 2.0, h / 2.0)
    return CameraTranslation(tuple(frame_pair), float(dx), float(dy))
