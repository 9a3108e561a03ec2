"""Command-line entry point: results as JSON on stdout, logs on stderr."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .dataset import MANIFEST_NAME, ToyDataset, manifest_record, synth_dataset, write_bundle, write_manifest
from .diffusion import train_toy
from .errors import InvalidArgumentError, MufenError
from .geometry import CameraPose, ViewId, load_obj, save_obj, save_stl, synth_hand
from .metrics import FeatureSet, eval_stats, paired_ttest
from .render import normalize_depth, render_view, write_pgm16, write_png, write_ppm
from .report import loss_curve_figure, mesh_figure, view_scores_figure, write_html
from .viewselect import SELECTION_MODES, VIEW_SETS, emit_pair_renders, render_view_set, score_pairs, select_pair

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _camera(path):
    return CameraPose.from_json(path) if path else CameraPose()


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_render(fb, out, stem, png=False):
    files = {"rgb": f"{stem}.ppm", "depth": f"{stem}_depth.pgm"}
    write_ppm(out / files["rgb"], fb.rgb)
    write_pgm16(out / files["depth"], normalize_depth(fb.depth))
    if png:
        files["png"] = f"{stem}.png"
        write_png(out / files["png"], fb.rgb)
    return files


def cmd_render(args):
    mesh = load_obj(args.mesh)
    camera = _camera(args.camera)
    view = ViewId.parse(args.view)
    out = _out_dir(args.out)
    fb = render_view(mesh, camera, view, args.resolution, workers=args.workers)
    files = _write_render(fb, out, view.value, png=args.png)
    files["metadata"] = f"{view.value}.json"
    metadata = {
        "view": view.value,
        "resolution": [fb.width, fb.height],
        "camera": camera.to_dict(),
        "coverage": fb.coverage,
        "files": {k: v for k, v in files.items() if k != "metadata"},
    }
    (out / files["metadata"]).write_text(json.dumps(metadata, indent=2) + "\n")
    return {"view": view.value, "coverage": fb.coverage, "files": files}


def cmd_select_views(args):
    mesh = load_obj(args.mesh)
    camera = _camera(args.camera)
    out = _out_dir(args.out)
    pairs = score_pairs(mesh, camera, args.resolution, workers=args.workers)
    selected = select_pair(pairs, args.selection)
    write_manifest(out / "scores.jsonl", [p.to_dict() for p in pairs])

    result = {"pair": selected.pair_id.value, "scores": [p.score for p in pairs]}
    if args.view_set:
        renders = render_view_set(mesh, camera, args.view_set, args.resolution, workers=args.workers)
        result["view_set"] = {
            view.value: _write_render(fb, out, view.value, png=args.png) for view, fb in renders.items()
        }
    else:
        bundle = emit_pair_renders(mesh, camera, selected, args.resolution, workers=args.workers)
        files = write_bundle(bundle, out, "prior", png=args.png)
        record = manifest_record(0, pairs, selected, bundle.bbox, files, handedness=mesh.handedness)
        write_manifest(out / MANIFEST_NAME, [record])
        result["bbox"] = record["bbox"]
        result["files"] = files
    if args.plot:
        write_html(view_scores_figure(pairs, selected), out / "view_scores.html")
    return result


def cmd_synth_dataset(args):
    records = synth_dataset(
        args.n, args.seed, args.out,
        camera=_camera(args.camera),
        resolution=args.resolution,
        selection_resolution=args.selection_resolution,
        mode=args.selection,
        left_fraction=args.left_fraction,
        png=args.png,
        stl=args.stl,
    )
    return {"n": len(records), "manifest": str(Path(args.out) / MANIFEST_NAME)}


def cmd_synth_hand(args):
    mesh = synth_hand(args.seed, args.curls, args.handedness)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_obj(mesh, out)
    result = {"mesh": str(out), "vertices": len(mesh.vertices), "faces": len(mesh.faces)}
    if args.stl:
        result["stl"] = str(out.with_suffix(".stl"))
        save_stl(mesh, result["stl"])
    if args.plot:
        result["plot"] = str(write_html(mesh_figure(mesh), out.with_suffix(".html")))
    return result


def cmd_train_toy(args):
    config = PipelineConfig.from_json(args.config)
    if args.steps is not None:
        config.train.steps = args.steps
        config.ensure_valid()
    if config.dataset.manifest:
        manifest = Path(config.dataset.manifest)
        if not manifest.is_absolute():
            manifest = Path(args.config).parent / manifest
        dataset = ToyDataset.from_manifest(manifest)
    else:
        dataset = ToyDataset.synthesize(
            config.dataset.n, config.seed, config.dataset.resolution,
            camera=config.camera, selection_resolution=config.selection_resolution,
            left_fraction=config.dataset.left_fraction, mode=config.selection, view_set=config.model.view_set,
        )
    out = _out_dir(args.out or config.output_dir)
    result = train_toy(config.train, dataset, config.mufen_config(), out_dir=out)
    summary = result.summary()
    summary["losses"] = str(out / "losses.csv")
    if config.formats.plot:
        summary["plot"] = str(write_html(loss_curve_figure(result.losses), out / "losses.html"))
    return summary


def cmd_eval_stats(args):
    a, b = FeatureSet.load(args.a), FeatureSet.load(args.b)
    return eval_stats(a, b, subsets=args.subsets, subset_size=args.subset_size, seed=args.seed)


def cmd_ttest(args):
    try:
        data = json.loads(Path(args.scores).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{args.scores}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise InvalidArgumentError("scores must be a JSON object")
    if "metrics" in data:
        metrics = data["metrics"]
        if not isinstance(metrics, dict) or not metrics:
            raise InvalidArgumentError('"metrics" must be a non-empty object')
        return {"metrics": {name: _ttest_entry(entry, f"metrics.{name}") for name, entry in metrics.items()}}
    return _ttest_entry(data, "scores")


def _ttest_entry(entry, where):
    if not isinstance(entry, dict) or "a" not in entry or "b" not in entry:
        raise InvalidArgumentError(f'{where} needs "a" and "b" arrays')
    if not all(isinstance(entry[k], list) for k in ("a", "b")):
        raise InvalidArgumentError(f'{where}: "a" and "b" must be arrays')
    return paired_ttest(entry["a"], entry["b"]).to_dict()


def _add_render_flags(parser):
    parser.add_argument("--mesh", required=True, help="hand mesh (OBJ)")
    parser.add_argument("--camera", help="camera JSON; default translation (0, 0, 2), weak perspective")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--resolution", type=int, default=512)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--png", action="store_true", help="also write PNG copies of the renders")


def build_parser():
    parser = argparse.ArgumentParser(prog="mufen", description="Multi-view hand priors and fusion networks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render one view of a mesh")
    _add_render_flags(p)
    p.add_argument("--view", required=True, choices=[v.value for v in ViewId])
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("select-views", help="score the view pairs and emit the prior bundle")
    _add_render_flags(p)
    p.add_argument("--selection", choices=SELECTION_MODES, default="pair_sum")
    p.add_argument("--view-set", choices=sorted(VIEW_SETS), help="render a fixed view set instead of the pair")
    p.add_argument("--plot", action="store_true", help="write an HTML score report")
    p.set_defaults(func=cmd_select_views)

    p = sub.add_parser("synth-dataset", help="synthesize hands with prior bundles and a manifest")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--camera")
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--selection-resolution", type=int)
    p.add_argument("--selection", choices=SELECTION_MODES, default="pair_sum")
    p.add_argument("--left-fraction", type=float, default=0.5)
    p.add_argument("--png", action="store_true")
    p.add_argument("--stl", action="store_true")
    p.set_defaults(func=cmd_synth_dataset)

    p = sub.add_parser("synth-hand", help="write one synthetic hand mesh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curls", type=float, nargs=5, default=[0.0] * 5, metavar="CURL",
                   help="thumb, index, middle, ring, pinky curl in [0, 1]")
    p.add_argument("--handedness", choices=("right", "left"), default="right")
    p.add_argument("--out", required=True, help="OBJ path")
    p.add_argument("--stl", action="store_true")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_synth_hand)

    p = sub.add_parser("train-toy", help="desk-scale training from a config JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="overrides output_dir")
    p.add_argument("--steps", type=int, help="overrides train.steps")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval-stats", help="Frechet and kernel distances between two MUFT feature sets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--subsets", type=int, default=100)
    p.add_argument("--subset-size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_stats)

    p = sub.add_parser("ttest", help="paired t-test over per-gesture scores")
    p.add_argument("--scores", required=True)
    p.set_defaults(func=cmd_ttest)
    return parser


def configure_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        result = args.func(args)
    except MufenError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(json.dumps({"error": exc.code, "message": str(exc)}))
        return exc.exit_code
    except OSError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(json.dumps({"error": "io", "message": str(exc)}))
        return MufenError.exit_code
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
