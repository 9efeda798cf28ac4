"""Command-line entry point: ``egotraj <subcommand> ...``.

Every configuration key can be set from a ``--config`` file and
overridden with ``--<key> value`` (dashes or underscores).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path


from . import __version__
from .config import Config, FIELD_TYPES, from_mapping, read_config
from .encoding import write_feature_csv
from .errors import EgoTrajError, InputError
from .evaluation import evaluate, read_labels, read_predictions, write_labeling, write_predictions
from .pipeline import (encode_video, extract_video, load_extraction, load_trained, predict_video,
                       save_extraction, save_trained, train_model)
from .segmentation import smooth_scores
from .synth import MOTION_PROGRAMS, SyntheticSpec, generate_video, write_video
from .video_io import load_frame_sequence, read_annotations

log = logging.getLogger("egotraj")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file with key = value lines")
    g = p.add_argument_group("configuration overrides")
    for f in fields(Config):
        flag = "--" + f.name.replace("_", "-")
        g.add_argument(flag, f"--{f.name}", dest=f"cfg_{f.name}", metavar=FIELD_TYPES[f.name].upper(),
                       default=None, help=f"(default {f.default!r})")


def _config_from(args, base: Config | None = None) -> Config:
    cfg = base or Config()
    if getattr(args, "config", None) is not None:
        cfg = read_config(args.config, cfg)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return from_mapping(overrides, cfg) if overrides else cfg


def _load_ext(path: Path, cfg: Config):
    """An EXT1 file, or a frame directory extracted on the fly."""
    if path.is_dir():
        return extract_video(load_frame_sequence(path), cfg)
    if not path.is_file():
        raise InputError(f"{path}: no such file or frame directory")
    return load_extraction(path)


# -- subcommands ----------------------------------------------------------------

def cmd_extract(args) -> int:
    cfg = _config_from(args)
    model = None
    if args.model is not None:
        model = load_trained(args.model)
        cfg = _config_from(args, model.config)
    seq = load_frame_sequence(args.frames)
    ext = extract_video(seq, cfg)
    save_extraction(args.output, ext)
    print(f"{args.frames}: {ext.num_frames} frames, {ext.num_trajectories} trajectories -> {args.output}")
    if args.features is not None:
        if model is None:
            raise InputError("--features needs --model (codebooks)")
        X = encode_video(ext, model.codebooks, model.config)
        write_feature_csv(args.features, X, [""] * len(X))
        print(f"{X.shape[0]} window features of dim {X.shape[1]} -> {args.features}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    exts, anns = [], []
    for src, ann in args.pair:
        exts.append(_load_ext(Path(src), cfg))
        anns.append(read_annotations(ann))
    model = train_model(exts, anns, cfg)
    out = save_trained(args.output, model)
    print(f"model with classes {list(model.svm.classes)} (C={model.svm.C:g}, gamma={model.svm.gamma:.6g}) -> {out}")
    return 0


def cmd_predict(args) -> int:
    model = load_trained(args.model)
    ext = _load_ext(args.input, model.config)
    labels, scores = predict_video(model, ext)
    write_predictions(args.output, ext.frame_ids, labels, scores, model.svm.classes)
    print(f"{len(labels)} frame predictions -> {args.output}")
    return 0


def cmd_segment(args) -> int:
    cfg = _config_from(args)
    frames, labels, scores, classes = read_predictions(args.predictions)
    if scores is None or scores.shape[1] == 0:
        raise InputError(f"{args.predictions}: predictions carry no score columns")
    ext = load_extraction(args.extraction)
    if list(ext.frame_ids) != list(frames):
        raise InputError("prediction frames do not match the extraction frames")
    init, smoothed, e0, e1 = smooth_scores(scores, ext.hofs, cfg.mrf_lambda, cfg.mrf_radius)
    write_labeling(args.output, frames, labels, [classes[i] for i in smoothed])
    print(f"energy before {e0:.6f} after {e1:.6f}")
    return 0


def cmd_eval(args) -> int:
    frames, pred, smooth = read_labels(args.predictions)
    report = evaluate(frames, pred, read_annotations(args.annotations), smooth)
    text = json.dumps(report.as_dict(), indent=2)
    if args.output is not None:
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(classes=tuple(args.classes), frames_per_action=args.frames, width=args.width,
                         height=args.height, jitter=args.jitter, seed=args.seed)
    out = write_video(generate_video(spec), args.output, ext=args.ext)
    print(f"{len(spec.classes) * spec.frames_per_action} frames -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="egotraj", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="trajectories and descriptors of one frame directory")
    p.add_argument("frames", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="EXT1 output file")
    p.add_argument("--model", type=Path, help="model directory (enables --features)")
    p.add_argument("--features", type=Path, help="write per-window feature CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="codebooks and SVM from annotated videos")
    p.add_argument("--pair", nargs=2, action="append", required=True, metavar=("EXT_OR_DIR", "ANNOTATIONS"))
    p.add_argument("-o", "--output", type=Path, required=True, help="model directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-frame labels and scores")
    p.add_argument("input", type=Path, help="EXT1 file or frame directory")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("segment", help="MRF smoothing of per-frame scores")
    p.add_argument("predictions", type=Path)
    p.add_argument("--extraction", type=Path, required=True, help="EXT1 file holding the frame flow histograms")
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="frame/segment accuracy and confusion matrix")
    p.add_argument("predictions", type=Path, help="prediction or segmentation CSV")
    p.add_argument("annotations", type=Path)
    p.add_argument("-o", "--output", type=Path, help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic video with annotations")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--classes", nargs="+", default=list(MOTION_PROGRAMS), choices=MOTION_PROGRAMS)
    p.add_argument("--frames", type=int, default=60, help="frames per action")
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=72)
    p.add_argument("--jitter", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ext", choices=("pgm", "png"), default="pgm")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EgoTrajError as e:
        print(f"egotraj {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"egotraj {args.command}: error: {e}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
