"""Command-line interface: ``pmtext <subcommand> ...``.

Exit status is 0 on success, 2 on invalid input (bad flags, files or values)
and 1 on any other failure. ``--json`` prints one machine-readable JSON
document on stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config, contours, evaluation, fileio, filtering, pipeline, probmap, reconstruct, synth
from .errors import PMapError, ValidationError
from .geometry import Grid

def _grid_arg(text: str) -> Grid:
    try:
        w, h = text.lower().split("x")
        return Grid(int(w), int(h))
    except (ValueError, ValidationError) as exc:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from exc


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML or JSON settings file")
    p.add_argument("--preset", choices=config.PRESETS, help="dataset thresholds")
    p.add_argument("--json", action="store_true", help="print a JSON document on stdout")
    p.add_argument("--workers", type=int, help="worker threads (capped by PMAP_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")


def _algo(p: argparse.ArgumentParser, grow=True, filt=True, bound=True) -> None:
    p.add_argument("--k", type=int, help="alpha step")
    p.add_argument("--n", type=int, help="number of maps")
    p.add_argument("--weights", type=_float_list, help="voting weights w1,w2,...")
    p.add_argument("--th-b", dest="th_b", type=float, help="binarization threshold")
    if grow:
        p.add_argument("--grow", choices=reconstruct.ALGORITHMS)
    if filt:
        p.add_argument("--filter", choices=("none",) + filtering.MODES)
        p.add_argument("--th-e", dest="th_e", type=float, help="mean-probability threshold")
        p.add_argument("--min-area", dest="min_area", type=int, help="minimum instance area in px")
    if bound:
        p.add_argument("--boundary", choices=contours.MODES)
        p.add_argument("--epsilon", type=float, help="polygon simplification tolerance in px")


def _synth_args(p: argparse.ArgumentParser, count_flag: str) -> None:
    p.add_argument(count_flag, dest="scenes", type=int, default=None, metavar="N", help="number of scenes")
    p.add_argument("--grid", type=_grid_arg, default=Grid(256, 256), help="WxH (default 256x256)")
    p.add_argument("--shapes", choices=synth.FAMILIES, default="mixed")
    p.add_argument("--count", type=int, default=3, help="instances per scene")
    p.add_argument("--separation", type=float, default=4.0, help="min boundary distance in px")
    p.add_argument("--instance-area", type=int, default=400, help="min instance area in px")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=synth.Noise.parse, default=synth.Noise(), help="sigma=..,blur=..,dropout=..")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmtext", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-labels", help="probability-map labels from an annotation")
    _common(p)
    _algo(p, grow=False, filt=False, bound=False)
    p.add_argument("--ann", required=True, help="annotation JSON")
    p.add_argument("--out", required=True, help="output tensor file")
    p.add_argument("--heatmap", help="also write a PNG of the stack")
    p.add_argument("--colormap", default="gray")

    p = sub.add_parser("synth", help="synthetic scenes and oracle predictions")
    _common(p)
    _algo(p, grow=False, filt=False, bound=False)
    _synth_args(p, "--scenes")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("reconstruct", help="region growth on a predicted stack")
    _common(p)
    _algo(p)
    p.add_argument("--stack", required=True, help="tensor file")
    p.add_argument("--image", help="annotation JSON whose image object is copied to the output")
    p.add_argument("--labels-out", help="write the label map (.npy)")
    p.add_argument("--out", help="detections JSON (default: stdout)")

    p = sub.add_parser("filter", help="filter candidate instances of a label map")
    _common(p)
    _algo(p, grow=False, bound=False)
    p.add_argument("--stack", required=True)
    p.add_argument("--labels", required=True, help="label map (.npy)")
    p.add_argument("--out", required=True, help="filtered label map (.npy)")

    p = sub.add_parser("contours", help="boundaries of a label map")
    _common(p)
    _algo(p, grow=False, filt=False)
    p.add_argument("--stack", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--image", help="annotation JSON whose image object is copied to the output")
    p.add_argument("--out", help="detections JSON (default: stdout)")

    p = sub.add_parser("eval", help="precision / recall / F-measure")
    _common(p)
    p.add_argument("--gt", required=True, help="annotation JSON or directory")
    p.add_argument("--dets", required=True, help="detections JSON or directory")
    p.add_argument("--iou", type=float)

    p = sub.add_parser("bench", help="per-stage timing of post-processing")
    _common(p)
    p.add_argument("--sizes", type=_int_list, default=(1024,))
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--grow", choices=reconstruct.ALGORITHMS, default="pse")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--th-b", dest="th_b", type=float, default=0.3)
    p.add_argument("--out", help="also write the report here")

    p = sub.add_parser("pipeline", help="labels or predictions -> detections -> scores")
    _common(p)
    _algo(p)
    _synth_args(p, "--synth")
    p.add_argument("--ann", help="annotation JSON or directory (instead of --synth)")
    p.add_argument("--stacks", help="tensor file or directory of predictions matching --ann")
    p.add_argument("--iou", type=float)
    p.add_argument("--out-dir", help="write per-image detections here")
    return parser


def resolve_settings(args) -> config.Settings:
    file_values = config.read_config_file(args.config) if getattr(args, "config", None) else {}
    preset = getattr(args, "preset", None) or file_values.pop("preset", None)
    file_values.pop("preset", None)
    flag_names = ("k", "n", "weights", "th_b", "th_e", "min_area", "filter", "grow", "boundary", "epsilon", "iou")
    flags = {k: getattr(args, k) for k in flag_names if getattr(args, k, None) is not None}
    settings = config.Settings()
    mode = flags.get("filter") or file_values.get("filter") or settings.filter
    if preset:
        settings.update(config.preset_values(preset, mode))
    settings.update(file_values)
    settings.update(flags)
    if args.command == "reconstruct" and "filter" not in flags and not ({"filter", "filter_mode", "mode"} & set(file_values)):
        # growth alone unless filtering is asked for
        settings.filter = "none"
    # surface invalid combinations before any work starts
    settings.schedule()
    settings.filter_config()
    return settings


def _emit(args, payload: dict, text: str | None = None) -> None:
    if args.json:
        print(json.dumps(payload))
    elif text is not None:
        print(text)


def _read_stack(path, settings) -> probmap.ProbabilityStack:
    stack = fileio.read_stack(path)
    if stack.n != settings.n:
        raise ValidationError(f"{path}: stack has {stack.n} maps but the schedule has {settings.n}; pass --n {stack.n}")
    return probmap.ProbabilityStack(settings.schedule().alphas, stack.values)


def _image_object(path, grid: Grid) -> dict:
    if path:
        return fileio.load_annotation(path)[0]
    return {"width": grid.width, "height": grid.height}


def _load_labels(path, grid: Grid) -> np.ndarray:
    try:
        labels = np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise ValidationError(f"{path}: not a label map: {exc}") from exc
    if labels.shape != grid.shape or labels.dtype.kind not in "iu":
        raise ValidationError(f"{path}: expected an integer {grid.shape} label map, got {labels.dtype} {labels.shape}")
    return labels


def _write_detections(path, image: dict, boundaries) -> dict:
    doc = fileio.detections_doc(image, boundaries)
    if path:
        Path(path).write_text(json.dumps(doc))
    return doc


def cmd_gen_labels(args, settings):
    image, grid, polys = fileio.load_annotation(args.ann)
    stack = probmap.generate_label_stack(polys, grid, settings.schedule(), workers=config.thread_cap(args.workers))
    fileio.write_stack(stack, args.out)
    if args.heatmap:
        fileio.export_heatmap(stack, args.heatmap, args.colormap)
    payload = {"out": args.out, "width": grid.width, "height": grid.height,
               "alphas": list(stack.alphas), "instances": len(polys)}
    _emit(args, payload, f"wrote {stack.n} maps ({grid.width}x{grid.height}, {len(polys)} instances) to {args.out}")


def cmd_synth(args, settings):
    if args.scenes is None or args.scenes < 0:
        raise ValidationError("--scenes N (N >= 0) is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = settings.schedule()
    spec = pipeline.SceneSpec(args.grid, args.count, args.shapes, args.separation, args.instance_area, args.noise)
    files = []
    for i in range(args.scenes):
        polys, stack = pipeline.synthetic_case(spec, args.seed + i, schedule)
        name = f"scene_{i:04d}"
        image = {"width": args.grid.width, "height": args.grid.height, "name": name}
        fileio.save_annotation(out / f"{name}.json", image, polys)
        fileio.write_stack(stack, out / f"{name}.pmap")
        files.append(name)
    _emit(args, {"out": str(out), "scenes": files}, f"wrote {len(files)} scenes to {out}")


def cmd_reconstruct(args, settings):
    stack = _read_stack(args.stack, settings)
    labels = reconstruct.grow_labels(stack, settings.th_b, settings.grow)
    masks = reconstruct.masks_from_labels(labels)
    if settings.filter != "none":
        masks = filtering.apply_filter(masks, stack, settings.schedule(), settings.filter_config())
        labels = _relabel(masks, stack.grid)
    if args.labels_out:
        np.save(args.labels_out, labels)
    boundaries = contours.extract_boundaries(masks, stack.values[-1], settings.boundary, settings.epsilon)
    doc = _write_detections(args.out, _image_object(args.image, stack.grid), boundaries)
    if args.out:
        _emit(args, {"out": args.out, "detections": len(boundaries)}, f"{len(boundaries)} detections -> {args.out}")
    else:
        print(json.dumps(doc))


def _relabel(masks, grid: Grid) -> np.ndarray:
    labels = np.zeros(grid.size, dtype=np.int32)
    for m in masks:
        labels[m.pixels] = m.label
    return labels.reshape(grid.shape)


def cmd_filter(args, settings):
    stack = _read_stack(args.stack, settings)
    labels = _load_labels(args.labels, stack.grid)
    masks = reconstruct.masks_from_labels(labels)
    kept = filtering.apply_filter(masks, stack, settings.schedule(), settings.filter_config())
    np.save(args.out, _relabel(kept, stack.grid))
    payload = {"out": args.out, "candidates": len(masks), "kept": [m.label for m in kept], "mode": settings.filter}
    _emit(args, payload, f"kept {len(kept)} of {len(masks)} candidates ({settings.filter}) -> {args.out}")


def cmd_contours(args, settings):
    stack = _read_stack(args.stack, settings)
    masks = reconstruct.masks_from_labels(_load_labels(args.labels, stack.grid))
    boundaries = contours.extract_boundaries(masks, stack.values[-1], settings.boundary, settings.epsilon)
    doc = _write_detections(args.out, _image_object(args.image, stack.grid), boundaries)
    if args.out:
        _emit(args, {"out": args.out, "detections": len(boundaries)}, f"{len(boundaries)} detections -> {args.out}")
    else:
        print(json.dumps(doc))


def cmd_eval(args, settings):
    gts, dets = fileio.load_collections(args.gt, args.dets)
    report = evaluation.match_and_score(dets, gts, settings.iou)
    _emit(args, report.to_json(), report.table())


def cmd_bench(args, settings):
    report = reconstruct.bench_region_growth(args.sizes, args.n, args.grow, args.runs, args.seed, args.th_b)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    lines = [f"{args.grow}, n={args.n}, {args.runs} runs (mean / p95 ms)"]
    for entry in report["results"]:
        stages = "  ".join(f"{k}={v['mean_ms']:.2f}/{v['p95_ms']:.2f}" for k, v in entry["stages"].items())
        lines.append(f"{entry['width']}x{entry['height']}: {stages}")
    _emit(args, report, "\n".join(lines))


def _pipeline_inputs(args, settings):
    """Yield ``(key, image, polys, stack)`` for annotation-driven runs."""
    ann = Path(args.ann)
    ann_files = sorted(ann.glob("*.json")) if ann.is_dir() else [ann]
    schedule = settings.schedule()
    for path in ann_files:
        image, grid, polys = fileio.load_annotation(path)
        if args.stacks:
            stacks = Path(args.stacks)
            stack_path = stacks / f"{path.stem}.pmap" if stacks.is_dir() else stacks
            stack = _read_stack(stack_path, settings)
            if stack.grid != grid:
                raise ValidationError(f"{stack_path}: grid {stack.grid} does not match {path} ({grid})")
        else:
            stack = synth.oracle_stack(polys, grid, schedule)
        yield path.stem, image, polys, stack


def cmd_pipeline(args, settings):
    workers = config.thread_cap(args.workers)
    if (args.scenes is None) == (args.ann is None):
        raise ValidationError("give exactly one of --synth N or --ann PATH")
    if args.scenes is not None:
        spec = pipeline.SceneSpec(args.grid, args.count, args.shapes, args.separation, args.instance_area, args.noise)
        seeds = [args.seed + i for i in range(args.scenes)]
        report, dets, _ = pipeline.run_synthetic(spec, seeds, settings, workers)
        images = {str(s): {"width": args.grid.width, "height": args.grid.height, "name": f"scene_{i:04d}"}
                  for i, s in enumerate(seeds)}
    else:
        gts, dets, images = {}, {}, {}
        schedule = settings.schedule()
        for key, image, polys, stack in _pipeline_inputs(args, settings):
            gts[key] = polys
            dets[key] = pipeline.detect(stack, settings, schedule)
            images[key] = image
        report = evaluation.match_and_score(dets, gts, settings.iou)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for key, boundaries in dets.items():
            name = images[key].get("name", key)
            fileio.save_detections(out / f"{name}.json", images[key], boundaries)
    payload = report.to_json()
    payload["settings"] = {"grow": settings.grow, "filter": settings.filter, "th_b": settings.th_b,
                           "th_e": settings.th_e, "min_area": settings.min_area, "alphas": list(settings.schedule().alphas)}
    _emit(args, payload, report.table())


COMMANDS = {
    "gen-labels": cmd_gen_labels, "synth": cmd_synth, "reconstruct": cmd_reconstruct,
    "filter": cmd_filter, "contours": cmd_contours, "eval": cmd_eval,
    "bench": cmd_bench, "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        COMMANDS[args.command](args, settings)
    except ValidationError as exc:
        print(f"pmtext {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        where = f"{exc.filename}: " if getattr(exc, "filename", None) else ""
        print(f"pmtext {args.command}: error: {where}{exc.strerror or exc}", file=sys.stderr)
        return 2
    except PMapError as exc:
        print(f"pmtext {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
