"""Command line entry point: gen, render, train, predict, eval, experiment.

Exit codes: 0 success, 2 empty or missing input class, 3 insufficient
data, 4 format error, 1 anything else. ``SYNIDS_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .capture import FEATURE_DIM, read_packets
from .classifier import DEFAULT_ROUNDS, atomic_write, load_model, save_model
from .config import get_floats, load_config
from .descriptors import DEFAULT_PARAMS, write_descriptor_dump
from .errors import EmptyClass, EmptyInput, FileError, SynidsError
from .evaluation import confusion
from .experiment import ExperimentConfig, run_experiment
from .imaging import (
    DDOS,
    DEFAULT_SIZE,
    DEFAULT_WINDOW_S,
    LEGITIMATE,
    CanvasCalibration,
    load_frame_pixels,
    read_manifest,
    write_frames,
)
from .pipeline import (
    extract_all,
    predict_descriptors,
    render_packets,
    sift_params_from,
    train_from_descriptors,
)
from .projection import ProjectionBasis, default_basis, make_basis
from .traffic_synth import ScenarioSpec, generate, write_capture
from .vocabulary import DEFAULT_CLUSTERS

log = logging.getLogger("synids")

MANIFEST = "frames.jsonl"
RENDER_INFO = "render.json"


def _write_json(path: str, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise FileError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FileError(f"{path}: not valid JSON ({exc})") from exc


def _basis_from_config(cfg: dict) -> ProjectionBasis:
    a, b = get_floats(cfg, "basis.a"), get_floats(cfg, "basis.b")
    if a is None and b is None:
        return default_basis(FEATURE_DIM)
    if a is None or b is None:
        raise SynidsError("basis.a and basis.b must be given together")
    return make_basis(a, b)


def _read_truth(path: Optional[str]) -> Optional[List[Tuple[int, int]]]:
    if not path:
        return None
    doc = _read_json(path)
    return [(int(s), int(e)) for s, e in doc["attacks"]]


# --------------------------------------------------------------------------
# frame directories


def _frame_entries(frame_dir: str, manifest: Optional[str] = None) -> List[dict]:
    """Manifest rows if a manifest exists, else every PNG in name order."""
    if not os.path.isdir(frame_dir):
        raise FileError(f"{frame_dir} is not a directory")
    path = manifest or os.path.join(frame_dir, MANIFEST)
    if os.path.exists(path):
        rows = read_manifest(path)
    else:
        rows = [{"file": name} for name in sorted(os.listdir(frame_dir)) if name.endswith(".png")]
    for row in rows:
        row["path"] = os.path.join(frame_dir, row["file"])
    return rows


def _load_pixels(rows: Sequence[dict]) -> List[np.ndarray]:
    out = []
    for row in rows:
        try:
            out.append(load_frame_pixels(row["path"]))
        except OSError as exc:
            raise FileError(f"cannot read frame {row['path']}: {exc}") from exc
    return out


def _render_info(frame_dir: str) -> Optional[dict]:
    path = os.path.join(frame_dir, RENDER_INFO)
    return _read_json(path) if os.path.exists(path) else None


def _geometry(info: Optional[dict], cfg: dict, size: int) -> Tuple[ProjectionBasis, CanvasCalibration]:
    if info:
        basis = make_basis(info["basis"]["a"], info["basis"]["b"])
        return basis, CanvasCalibration(**info["calibration"])
    basis = _basis_from_config(cfg)
    return basis, CanvasCalibration.from_basis(basis, size)


def _calibration_dict(cal: CanvasCalibration) -> dict:
    return {"u_min": cal.u_min, "u_max": cal.u_max, "v_min": cal.v_min,
            "v_max": cal.v_max, "width": cal.width, "height": cal.height}


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cfg = load_config(args.spec or args.config)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    spec = ScenarioSpec.from_config(cfg)
    packets, truth = generate(spec)
    write_capture(packets, args.out, args.format)
    if args.truth:
        _write_json(args.truth, {"attacks": [list(t) for t in truth], "seed": spec.seed,
                                 "packets": len(packets), "duration_s": spec.duration_s})
    log.info("wrote %d packets to %s", len(packets), args.out)
    return 0


def cmd_render(args) -> int:
    cfg = load_config(args.config)
    basis = _basis_from_config(cfg)
    cal = CanvasCalibration.from_basis(basis, args.size)
    packets = read_packets(args.input)
    if not packets:
        raise EmptyInput(f"{args.input} holds no packets")
    truth = _read_truth(args.truth)
    frames = render_packets(packets, basis, cal, args.window, truth, diff=args.diff)
    rows = write_frames(frames, args.out)
    _write_json(os.path.join(args.out, RENDER_INFO), {
        "basis": {"a": list(basis.a_raw), "b": list(basis.b_raw)},
        "calibration": _calibration_dict(cal),
        "window_s": args.window,
        "diff": bool(args.diff),
    })
    log.info("rendered %d frames into %s", len(rows), args.out)
    return 0


def _training_frames(args, cfg):
    """(pixels, labels, basis, calibration) for whichever input form was given."""
    if args.capture:
        if not args.truth:
            raise SynidsError("--capture needs --truth")
        basis = _basis_from_config(cfg)
        cal = CanvasCalibration.from_basis(basis, args.size)
        frames = list(render_packets(read_packets(args.capture), basis, cal, args.window,
                                     _read_truth(args.truth)))
        return [f.pixels for f in frames], [f.label for f in frames], basis, cal
    if args.legit and args.ddos:
        legit, ddos = _frame_entries(args.legit), _frame_entries(args.ddos)
        rows = legit + ddos
        labels = [LEGITIMATE] * len(legit) + [DDOS] * len(ddos)
        info = _render_info(args.legit)
    elif args.frames:
        rows = [r for r in _frame_entries(args.frames) if r.get("label") in (LEGITIMATE, DDOS)]
        labels = [r["label"] for r in rows]
        info = _render_info(args.frames)
    else:
        raise SynidsError("give --legit and --ddos, --frames, or --capture with --truth")
    basis, cal = _geometry(info, cfg, args.size)
    return _load_pixels(rows), labels, basis, cal


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    pixels, labels, basis, cal = _training_frames(args, cfg)
    for name, label in (("legitimate", LEGITIMATE), ("attack", DDOS)):
        if label not in labels:
            raise EmptyClass(f"no {name} training frames")
    meta = {"window_s": args.window, "size": cal.width,
            "max_descriptors": DEFAULT_PARAMS.max_descriptors}
    descs = extract_all(pixels, sift_params_from(meta), args.jobs)
    if args.dump_descriptors:
        os.makedirs(args.dump_descriptors, exist_ok=True)
        for i, d in enumerate(descs):
            with open(os.path.join(args.dump_descriptors, f"descriptors_{i:06d}.bin"), "wb") as fh:
                write_descriptor_dump(d, fh)
    model, train_log = train_from_descriptors(descs, labels, basis, cal, args.clusters,
                                              args.rounds, args.seed or 0, meta)
    save_model(model, args.model)
    _write_json(args.log or f"{args.model}.log.json", train_log.to_dict())
    log.info("model written to %s (%d rounds)", args.model, model.ensemble.rounds)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    rows = _frame_entries(args.frames)
    if not rows:
        raise EmptyClass(f"no frames in {args.frames}")
    pixels = _load_pixels(rows)
    descs = extract_all(pixels, sift_params_from(model.metadata), args.jobs)
    preds = predict_descriptors(model, descs, args.jobs, args.threshold)
    lines = [json.dumps({"frame": row["file"], "label": p.label, "score": p.score,
                         "confidence": p.confidence}, sort_keys=True)
             for row, p in zip(rows, preds)]
    text = "".join(line + "\n" for line in lines)
    if args.out and args.out != "-":
        atomic_write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    rows = [r for r in _frame_entries(args.frames, args.manifest)
            if r.get("label") in (LEGITIMATE, DDOS)]
    truth = [r["label"] for r in rows]
    for name, label in (("legitimate", LEGITIMATE), ("attack", DDOS)):
        if label not in truth:
            raise EmptyClass(f"no {name} frames in the evaluation set")
    descs = extract_all(_load_pixels(rows), sift_params_from(model.metadata), args.jobs)
    preds = predict_descriptors(model, descs, args.jobs, args.threshold)
    report = confusion(truth, [p.label for p in preds],
                       dataset={"frames": os.path.abspath(args.frames), "count": len(rows)},
                       model=dict(model.metadata))
    if args.out:
        _write_json(args.out, report.to_dict())
    print(report.summary())
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    exp = ExperimentConfig.from_config(
        cfg, scale=args.scale, seed=args.seed, window_s=args.window, size=args.size,
        clusters=args.clusters, rounds=args.rounds, jobs=args.jobs,
    )
    result = run_experiment(exp)
    text = result.summary()
    if args.out:
        _write_json(args.out, result.to_dict())
        atomic_write(os.path.splitext(args.out)[0] + ".txt", (text + "\n").encode())
    print(text)
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--config", help="key = value config file")

    parser = argparse.ArgumentParser(prog="synids", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic capture")
    p.add_argument("--spec", help="scenario config (same format as --config)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("capture", "jsonl"), default="capture")
    p.add_argument("--truth", help="write attack intervals as JSON")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", parents=[common], help="render a capture into frames")
    p.add_argument("--input", required=True, help="capture, .jsonl metadata, or - for stdin")
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW_S)
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.add_argument("--diff", action="store_true", help="emit differences of consecutive frames")
    p.add_argument("--truth", help="attack intervals used to label frames")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--legit", help="directory of legitimate frames")
    p.add_argument("--ddos", help="directory of attack frames")
    p.add_argument("--frames", help="directory whose manifest carries labels")
    p.add_argument("--capture", help="capture to render and train on (needs --truth)")
    p.add_argument("--truth")
    p.add_argument("--model", required=True)
    p.add_argument("--log", help="training log path (default <model>.log.json)")
    p.add_argument("--window", type=float, default=DEFAULT_WINDOW_S)
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.add_argument("--clusters", type=int, default=DEFAULT_CLUSTERS)
    p.add_argument("--rounds", type=int, default=DEFAULT_ROUNDS)
    p.add_argument("--dump-descriptors", metavar="DIR", help="write per-frame descriptor dumps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="classify frames")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--out", help="JSONL output (default stdout)")
    p.add_argument("--threshold", type=float, default=0.0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="score a model on labelled frames")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--manifest", help=f"labels (default <frames>/{MANIFEST})")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--threshold", type=float, default=0.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[common],
                       help="train on two set sizes and score both on a held-out set")
    p.add_argument("--scale", type=float, default=None, help="fraction of the full set sizes")
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out", help="JSON report path; a .txt summary is written beside it")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("SYNIDS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # usage errors exit 1; 2 is reserved for a missing class of frames
        return 1 if exc.code else 0
    try:
        return args.func(args)
    except SynidsError as exc:
        print(f"synids {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, ValueError) as exc:
        print(f"synids {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
