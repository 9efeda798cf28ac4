"""One-vs-rest SVMs with an exponential chi-square kernel.

The dual problem of each binary machine is solved by SMO on a precomputed
Gram matrix; C is picked by stratified k-fold cross-validation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .kernels import chi2_distance_matrix, smo_solve

CHI2_EPS = 1e-10
GAMMA_PAIRS = 1000


@dataclass(frozen=True)
class TrainConfig:
    c_grid: tuple = (0.1, 1.0, 10.0, 100.0)
    gamma: float | None = None  # None -> automatic
    folds: int = 4
    seed: int = 42
    tol: float = 1e-3
    max_iter: int = 1_000_000

    def __post_init__(self):
        if not self.c_grid or any(c <= 0 for c in self.c_grid):
            raise InputError("C grid must be non-empty and positive")
        if self.folds < 2:
            raise InputError("need at least 2 folds")
        if self.gamma is not None and self.gamma <= 0:
            raise InputError("gamma must be positive")


@dataclass
class BinaryMachine:
    sv: np.ndarray  # indices into SvmModel.support
    coef: np.ndarray  # alpha_i * y_i
    rho: float

    @property
    def bias(self) -> float:
        return -self.rho


@dataclass
class SvmModel:
    classes: list
    gamma: float
    C: float
    support: np.ndarray  # stored (scaled) training rows referenced by the machines
    machines: list
    global_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    col_min: np.ndarray = field(default_factory=lambda: np.zeros(0))
    col_max: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cv_scores: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def scale(self, X) -> np.ndarray:
        return apply_scaling(X, self.global_cols, self.col_min, self.col_max)


# -- kernel -------------------------------------------------------------------

def chi2_distance(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise InputError(f"chi2: dimension mismatch {x.shape} vs {y.shape}")
    if (x < 0).any() or (y < 0).any():
        raise InputError("chi2: negative entries")
    return float(np.sum((x - y) ** 2 / (x + y + CHI2_EPS)))


def chi2_kernel(x, y, gamma: float) -> float:
    """``exp(-gamma * sum (x - y)^2 / (x + y + eps))``."""
    return float(np.exp(-gamma * chi2_distance(x, y)))


def chi2_gram(X, Y, gamma: float) -> np.ndarray:
    return np.exp(-gamma * chi2_distance_matrix(X, Y))


def auto_gamma(D, seed: int = 42, pairs: int = GAMMA_PAIRS) -> float:
    """``1 / mean chi2 distance`` over random distinct training pairs."""
    n = len(D)
    rng = np.random.default_rng(seed)
    i = rng.integers(n, size=pairs)
    j = (i + rng.integers(1, n, size=pairs)) % n
    mean = D[i, j].mean()
    return 1.0 / mean if mean > 0 else 1.0


# -- scaling ------------------------------------------------------------------

def fit_scaling(X, cols):
    if len(cols) == 0:
        return np.zeros(0), np.zeros(0)
    return X[:, cols].min(axis=0), X[:, cols].max(axis=0)


def apply_scaling(X, cols, lo, hi) -> np.ndarray:
    X = np.array(X, dtype=np.float64)
    if len(cols):
        span = np.where(hi > lo, hi - lo, 1.0)
        X[:, cols] = np.clip((X[:, cols] - lo) / span, 0.0, 1.0)
    return X


# -- binary machines -----------------------------------------------------------

def dual_objective(alpha, y, K) -> float:
    """``sum(alpha) - 0.5 * sum_ij alpha_i alpha_j y_i y_j K_ij``."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def kkt_gap(alpha, y, K, C) -> float:
    """Maximal violating-pair gap; the solution is optimal to ``tol`` when below it."""
    G = (K * np.outer(y, y)) @ alpha - 1.0
    v = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if not up.any() or not low.any():
        return 0.0
    return float(max(0.0, v[up].max() - v[low].min()))


def train_binary(K, y, C: float, tol: float = 1e-3, max_iter: int = 1_000_000) -> BinaryMachine:
    y = np.asarray(y, dtype=np.float64)
    alpha, rho, it = smo_solve(K, y, C, tol, max_iter)
    if it >= max_iter:
        raise NumericalError(f"SMO did not converge in {max_iter} iterations (C={C})")
    sv = np.flatnonzero(alpha > 0)
    return BinaryMachine(sv, alpha[sv] * y[sv], rho)


def _train_machines(K, yidx, n_classes, C, cfg):
    machines = []
    for c in range(n_classes):
        if n_classes == 2 and c == 1:
            # the second problem is the exact mirror of the first
            m = machines[0]
            machines.append(BinaryMachine(m.sv, -m.coef, -m.rho))
            break
        y = np.where(yidx == c, 1.0, -1.0)
        machines.append(train_binary(K, y, C, cfg.tol, cfg.max_iter))
    return machines


def _scores(machines, Kx):
    """Decision values ``(n_probe, n_classes)`` from probe-vs-train kernel rows."""
    return np.stack([Kx[:, m.sv] @ m.coef - m.rho for m in machines], axis=1)


def stratified_folds(yidx, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    fold = np.empty(len(yidx), dtype=np.intp)
    for c in np.unique(yidx):
        idx = np.flatnonzero(yidx == c)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % folds
    return fold


def train_ovr(features, labels, cfg: TrainConfig | None = None, global_cols=()) -> SvmModel:
    """One-vs-rest chi-square SVM with C chosen by stratified cross-validation.

    ``global_cols`` lists non-histogram columns; they are min-max scaled to
    [0, 1] with training statistics stored in the model.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if X.ndim != 2 or len(X) != len(labels):
        raise InputError(f"features {X.shape} and {len(labels)} labels do not align")
    if not np.all(np.isfinite(X)):
        raise InputError("features contain non-finite values")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise InputError(f"need at least 2 classes, got {classes}")
    yidx = np.array([classes.index(l) for l in labels], dtype=np.intp)
    counts = np.bincount(yidx, minlength=len(classes))
    for c, n in zip(classes, counts):
        if n < 2:
            raise InputError(f"class {c!r} has {n} sample(s); need at least 2")

    cols = np.asarray(global_cols, dtype=np.intp)
    lo, hi = fit_scaling(X, cols)
    X = apply_scaling(X, cols, lo, hi)
    if (X < 0).any():
        raise InputError("histogram features must be non-negative")

    D = chi2_distance_matrix(X, X)
    gamma = cfg.gamma if cfg.gamma is not None else auto_gamma(D, cfg.seed)
    K = np.exp(-gamma * D)
    del D

    fold = stratified_folds(yidx, cfg.folds, cfg.seed)
    cv = {}
    for C in sorted(cfg.c_grid):
        correct = 0
        for f in range(cfg.folds):
            tr = np.flatnonzero(fold != f)
            va = np.flatnonzero(fold == f)
            if len(va) == 0:
                continue
            ms = _train_machines(K[np.ix_(tr, tr)], yidx[tr], len(classes), C, cfg)
            pred = np.argmax(_scores(ms, K[np.ix_(va, tr)]), axis=1)
            correct += int((pred == yidx[va]).sum())
        cv[C] = correct / len(X)
    best_C = max(sorted(cv), key=lambda c: (cv[c], -c))

    machines = _train_machines(K, yidx, len(classes), best_C, cfg)
    used = np.unique(np.concatenate([m.sv for m in machines]))
    remap = np.full(len(X), -1, dtype=np.intp)
    remap[used] = np.arange(len(used))
    for m in machines:
        m.sv = remap[m.sv]
    return SvmModel(classes, float(gamma), float(best_C), X[used], machines, cols, lo, hi, cv)


def decision_values(model: SvmModel, X) -> np.ndarray:
    """Per-class scores ``(n, n_classes)`` for raw (unscaled) features."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    if X.shape[1] != model.dim:
        raise InputError(f"feature dim {X.shape[1]} does not match model dim {model.dim}")
    Xs = model.scale(X)
    Kx = chi2_gram(Xs, model.support, model.gamma)
    return _scores(model.machines, Kx)


def predict(model: SvmModel, x):
    """``(label, scores)`` for one feature vector; ties go to the first class."""
    s = decision_values(model, x)[0]
    return model.classes[int(np.argmax(s))], s


def predict_many(model: SvmModel, X):
    s = decision_values(model, X)
    return [model.classes[i] for i in np.argmax(s, axis=1)], s


# -- SVM1 container ------------------------------------------------------------

_SVM_MAGIC = b"SVM1"
_SVM_VERSION = 1


def save_model(path, model: SvmModel) -> None:
    header = {
        "classes": list(model.classes),
        "gamma": model.gamma,
        "C": model.C,
        "n_support": int(len(model.support)),
        "dim": int(model.dim),
        "n_global": int(len(model.global_cols)),
        "machines": [{"n_sv": int(len(m.sv)), "rho": m.rho} for m in model.machines],
        "cv": [[c, a] for c, a in sorted(model.cv_scores.items())],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_SVM_MAGIC)
        fh.write(struct.pack("<II", _SVM_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.support, dtype="<f8").tobytes())
        fh.write(np.asarray(model.global_cols, dtype="<i8").tobytes())
        fh.write(np.asarray(model.col_min, dtype="<f8").tobytes())
        fh.write(np.asarray(model.col_max, dtype="<f8").tobytes())
        for m in model.machines:
            fh.write(np.asarray(m.sv, dtype="<i8").tobytes())
            fh.write(np.asarray(m.coef, dtype="<f8").tobytes())


def load_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _SVM_MAGIC:
        raise InputError(f"{path}: not an SVM1 model")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != _SVM_VERSION:
        raise InputError(f"{path}: unsupported model version {version}")
    try:
        h = json.loads(raw[12:12 + hlen])
    except ValueError:
        raise InputError(f"{path}: corrupt model header") from None
    off = 12 + hlen

    def take(dtype, count):
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        if off + size > len(raw):
            raise InputError(f"{path}: truncated model payload")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += size
        return arr

    ns, dim, ng = h["n_support"], h["dim"], h["n_global"]
    support = take("<f8", ns * dim).reshape(ns, dim).copy()
    cols = take("<i8", ng).astype(np.intp)
    lo = take("<f8", ng).copy()
    hi = take("<f8", ng).copy()
    machines = []
    for m in h["machines"]:
        sv = take("<i8", m["n_sv"]).astype(np.intp)
        coef = take("<f8", m["n_sv"]).copy()
        machines.append(BinaryMachine(sv, coef, float(m["rho"])))
    cv = {float(c): float(a) for c, a in h["cv"]}
    return SvmModel(h["classes"], float(h["gamma"]), float(h["C"]), support, machines, cols, lo, hi, cv)
