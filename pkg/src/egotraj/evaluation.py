"""Frame- and segment-level accuracy with a confusion matrix over frames."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .video_io import ActionAnnotation


@dataclass(frozen=True)
class EvalReport:
    frame_accuracy: float
    segment_accuracy: float
    post_mrf_accuracy: float | None
    labels: tuple
    confusion: np.ndarray  # rows: ground truth, columns: prediction

    def as_dict(self) -> dict:
        return {
            "frame_accuracy": self.frame_accuracy,
            "segment_accuracy": self.segment_accuracy,
            "post_mrf_accuracy": self.post_mrf_accuracy,
            "labels": list(self.labels),
            "confusion": self.confusion.tolist(),
        }


def majority_label(labels) -> str:
    """Most frequent label; ties go to the alphabetically first one."""
    counts = Counter(labels)
    top = max(counts.values())
    return min(l for l, c in counts.items() if c == top)


def evaluate(frame_ids, predicted, annotation: ActionAnnotation, smoothed=None) -> EvalReport:
    frame_ids = list(frame_ids)
    predicted = list(predicted)
    if len(predicted) != len(frame_ids):
        raise InputError("predictions and frame ids differ in length")
    if smoothed is not None and len(smoothed) != len(frame_ids):
        raise InputError("smoothed labels and frame ids differ in length")
    if not frame_ids:
        raise InputError("no frames to evaluate")
    lo, hi = frame_ids[0], frame_ids[-1]
    for s, e, label in annotation.segments:
        if s < lo or e > hi:
            raise InputError(f"annotated segment {s}-{e} ({label}) lies outside predicted frames {lo}-{hi}")
    truth = annotation.frame_labels(frame_ids)
    correct = np.array([p == t for p, t in zip(predicted, truth)])
    labels = tuple(sorted(set(truth) | set(predicted) | set(smoothed or [])))
    index = {l: i for i, l in enumerate(labels)}
    conf = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        conf[index[t], index[p]] += 1

    pos = {f: i for i, f in enumerate(frame_ids)}
    seg_ok = []
    for s, e, label in annotation.segments:
        idx = [pos[f] for f in range(s, e + 1) if f in pos]
        if idx:
            seg_ok.append(majority_label(predicted[i] for i in idx) == label)
    post = None
    if smoothed is not None:
        post = float(np.mean([p == t for p, t in zip(smoothed, truth)]))
    return EvalReport(float(correct.mean()), float(np.mean(seg_ok)) if seg_ok else 0.0, post, labels, conf)


# -- prediction / labelling CSVs ----------------------------------------------

def write_predictions(path, frame_ids, labels, scores, classes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "label"] + [f"score_{c}" for c in classes])
        for f, l, s in zip(frame_ids, labels, np.asarray(scores)):
            w.writerow([int(f), l] + [repr(float(v)) for v in s])


def read_predictions(path):
    """Returns ``(frame_ids, labels, scores or None, classes)``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if not header or header[:2] != ["frame", "label"]:
            raise InputError(f"{path}: prediction CSV must start with frame,label")
        classes = [h[len("score_"):] for h in header[2:] if h.startswith("score_")]
        frames, labels, scores = [], [], []
        for lineno, row in enumerate(r, start=2):
            try:
                frames.append(int(row[0]))
                labels.append(row[1])
                scores.append([float(v) for v in row[2:2 + len(classes)]])
            except (ValueError, IndexError):
                raise InputError(f"{path}:{lineno}: malformed prediction row") from None
    S = np.array(scores) if classes else None
    return frames, labels, S, classes


def write_labeling(path, frame_ids, predicted, smoothed) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "predicted_label", "smoothed_label"])
        for row in zip(frame_ids, predicted, smoothed):
            w.writerow(row)


def read_labels(path):
    """Read either a prediction CSV or a labelling CSV.

    Returns ``(frame_ids, predicted, smoothed or None)``.
    """
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header and header[:3] == ["frame", "predicted_label", "smoothed_label"]:
        frames, pred, smooth = [], [], []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for lineno, row in enumerate(r, start=2):
                try:
                    frames.append(int(row[0]))
                    pred.append(row[1])
                    smooth.append(row[2])
                except (ValueError, IndexError):
                    raise InputError(f"{path}:{lineno}: malformed labelling row") from None
        return frames, pred, smooth
    frames, labels, _, _ = read_predictions(path)
    return frames, labels, None
