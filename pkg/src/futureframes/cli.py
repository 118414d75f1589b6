"""Command-line interface: generate, predict, eval, viz.

Exit codes: 0 success, 2 usage error, 3 bad input data, 4 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import synth
from .flow_energy import EnergyWeights
from .imagecore import FloFormatError, read_flo, read_frame, write_flo, write_frame, write_mask
from .metrics import evaluate
from .objects import TrajectoryObjective
from .pipeline import THREADS_ENV, PipelineError, RunConfig, predict
from .scene import SceneDataError, frame_name, load_scene
from .viz import flow_to_color, provenance_to_color

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

log = logging.getLogger("futureframes")

DATA_ERRORS = (SceneDataError, synth.SceneSpecError, FloFormatError, FileNotFoundError, json.JSONDecodeError, ValueError, OSError)


class DataError(Exception):
    pass


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: JSON parse error: {exc}") from exc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# config


def build_config(args) -> RunConfig:
    """RunConfig from an optional JSON file, then command-line overrides."""
    base: dict = {}
    if getattr(args, "config", None):
        base = _read_json(args.config)
        if not isinstance(base, dict):
            raise DataError("config must be a JSON object")
    try:
        weights = EnergyWeights(**base.pop("weights", {}))
        objective = TrajectoryObjective(**base.pop("objective", {}))
        allowed = {f.name for f in fields(RunConfig)} - {"weights", "objective"}
        unknown = set(base) - allowed
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        cfg = RunConfig(weights=weights, objective=objective, **base)
        overrides = {
            "input_dir": args.scene,
            "output_dir": args.out,
            "t": args.t,
            "horizon": args.horizon,
            "model_order": args.model_order,
            "tau_move": args.tau_move,
            "threads": args.threads,
            "seed": args.seed,
            "pass_length": args.pass_length,
            "dump_intermediates": True if args.dump_intermediates else None,
        }
        return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    except TypeError as exc:
        raise DataError(f"bad config: {exc}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    spec_dict = _read_json(args.spec)
    if args.seed is not None:
        if not isinstance(spec_dict, dict):
            raise DataError("scene spec must be a JSON object")
        spec_dict = dict(spec_dict, seed=args.seed)
    spec = synth.SceneSpec.from_dict(spec_dict)
    scene, truth = synth.generate(spec)
    root = synth.save_scene(scene, truth, args.out, spec)
    log.info("wrote %d frames to %s", len(scene.frames), root)
    return EXIT_OK


def _dump_intermediates(result, pred: Path, t: int) -> list:
    inter = pred / "intermediates"
    inter.mkdir(exist_ok=True)
    written = []
    index = t
    for p_i, p in enumerate(result.passes):
        name = f"static_background_pass{p_i}.png"
        write_frame(inter / name, p.static_background)
        written.append(name)
        for k in range(len(p.frames)):
            stem = frame_name(index + k, "")
            items = {
                f"flow_{stem}.flo": lambda path: write_flo(path, p.flows[k]),
                f"background_{stem}.png": lambda path: write_frame(path, p.backgrounds[k][0]),
                f"background_valid_{stem}.png": lambda path: write_mask(path, p.backgrounds[k][1]),
                f"provenance_{stem}.npy": lambda path: np.save(path, p.composites[k].provenance),
                f"provenance_{stem}.png": lambda path: write_frame(path, provenance_to_color(p.composites[k].provenance)),
            }
            for fname, writer in items.items():
                writer(inter / fname)
                written.append(fname)
        index += len(p.frames)
    return [f"intermediates/{n}" for n in written]


def cmd_predict(args) -> int:
    cfg = build_config(args)
    scene = load_scene(cfg.input_dir)
    out = Path(cfg.output_dir or cfg.input_dir)
    pred = out / "pred"
    pred.mkdir(parents=True, exist_ok=True)
    result = predict(scene, cfg)
    first = scene.t
    names = []
    for k, frame in enumerate(result.frames):
        name = frame_name(first + k)
        write_frame(pred / name, frame)
        names.append(name)
    manifest = result.manifest()
    manifest["frame_files"] = names
    manifest["first_index"] = first
    manifest["config"] = {
        "t": cfg.t,
        "horizon": cfg.horizon,
        "model_order": cfg.model_order,
        "tau_move": cfg.tau_move,
        "seed": cfg.seed,
        "pass_length": cfg.pass_length,
        "weights": {f.name: getattr(cfg.weights, f.name) for f in fields(cfg.weights)},
        "objective": {f.name: getattr(cfg.objective, f.name) for f in fields(cfg.objective)},
    }
    if cfg.dump_intermediates:
        manifest["intermediates"] = _dump_intermediates(result, pred, first)
    _write_json(pred / "manifest.json", manifest)
    log.info("wrote %d predicted frames to %s", len(names), pred)
    return EXIT_OK


def _png_names(directory: Path) -> list:
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p.name for p in directory.iterdir() if p.suffix == ".png")


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    pred_names = _png_names(pred_dir)
    truth_names = _png_names(truth_dir)
    if not pred_names:
        raise DataError(f"no predicted frames in {pred_dir}")
    if pred_names != truth_names:
        missing = sorted(set(pred_names) ^ set(truth_names))
        raise DataError(
            f"{len(pred_names)} predicted vs {len(truth_names)} ground-truth frames; unmatched: {', '.join(missing)}"
        )
    report = evaluate([read_frame(pred_dir / n) for n in pred_names], [read_frame(truth_dir / n) for n in truth_names])
    out = Path(args.out) if args.out else pred_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(report.dumps() + "\n")
    table = report.table(args.label)
    (out / "eval.txt").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def _viz_file(src: Path, dst: Path) -> Path:
    if src.suffix == ".flo":
        img = flow_to_color(read_flo(src))
    elif src.suffix == ".npy":
        img = provenance_to_color(np.load(src))
    else:
        raise DataError(f"cannot visualise {src}: expected .flo, .npy or manifest.json")
    write_frame(dst, img)
    return dst


def cmd_viz(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise DataError(f"cannot read {src}")
    if src.suffix == ".json":
        manifest = _read_json(src)
        items = [n for n in manifest.get("intermediates", []) if n.endswith((".flo", ".npy"))]
        if not items:
            raise DataError(f"{src} lists no flows or provenance maps (predict with --dump-intermediates)")
        out = Path(args.out) if args.out else src.parent / "viz"
        out.mkdir(parents=True, exist_ok=True)
        for rel in items:
            p = src.parent / rel
            suffix = "_flow.png" if p.suffix == ".flo" else "_prov.png"
            _viz_file(p, out / (p.stem + suffix))
        log.info("wrote %d images to %s", len(items), out)
        return EXIT_OK
    dst = Path(args.out) if args.out else src.with_suffix(".png")
    _viz_file(src, dst)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="futureframes", description="Future frame prediction by separating background and objects.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic scene from a JSON spec")
    g.add_argument("spec", help="scene spec JSON file")
    g.add_argument("out", help="output scene directory")
    g.add_argument("--seed", type=int, help="override the scene spec's seed")
    g.set_defaults(func=cmd_generate)

    pr = sub.add_parser("predict", help="predict future frames for a scene directory")
    pr.add_argument("scene", help="scene directory (scene.json, frames/, flow/)")
    pr.add_argument("-o", "--out", help="output root; frames go to OUT/pred (default: scene directory)")
    pr.add_argument("-c", "--config", help="RunConfig JSON; flags override it")
    pr.add_argument("--t", type=int, help="input length (default 4)")
    pr.add_argument("--horizon", type=int, help="frames to predict (default 5)")
    pr.add_argument("--pass-length", type=int, help="frames per recurrent pass (default 5)")
    pr.add_argument("--model-order", choices=("constant", "linear"))
    pr.add_argument("--tau-move", type=float, help="moving-pixel residual threshold in px")
    pr.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    pr.add_argument("--seed", type=int)
    pr.add_argument("--dump-intermediates", action="store_true", help="also write flows, backgrounds and provenance")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score predicted frames against ground truth")
    e.add_argument("pred", help="directory of predicted PNGs")
    e.add_argument("truth", help="directory of ground-truth PNGs (same file names)")
    e.add_argument("-o", "--out", help="where eval.json / eval.txt go (default: pred)")
    e.add_argument("--label", default="Ours", help="row label in the text table")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="render a .flo, provenance .npy or prediction manifest")
    v.add_argument("input")
    v.add_argument("-o", "--out", help="output PNG (or directory for a manifest)")
    v.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PipelineError as exc:
        print(f"error in stage {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, DATA_ERRORS) else EXIT_INTERNAL
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
