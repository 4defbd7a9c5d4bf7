"""Command-line pipeline driver.

Subcommands cover the full workflow: render a scene, post-process images,
generate and split datasets, train and evaluate the classifier, stitch
side-scan swaths, and benchmark throughput.  Machine-readable run reports go
to standard output as JSON; log lines go to standard error.  Exit codes:
0 success, 1 operation error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import atr, postproc
from .dataset import (DatasetError, SweepConfig, generate_dataset, load_sweep_config,
                      read_manifest, scene_for_record, split_manifest, write_manifest,
                      _plan_records)
from .imagebuf import ImageBuffer, load_image, save_image
from .postproc import (ChainStep, Histogram, NoiseSpec, apply_chain_array,
                       load_reference_histogram, parse_noise_spec, stitch_sidescan)
from .render import render, resolve_threads
from .scene import load_scene

log = logging.getLogger("sonarforge")


@dataclass
class RunReport:
    """Timing and throughput summary printed as JSON on success."""

    stage: str
    wall_seconds: float
    images_produced: int = 0
    images_consumed: int = 0
    mean_render_seconds: float | None = None
    std_render_seconds: float | None = None
    mean_postproc_seconds: float | None = None
    std_postproc_seconds: float | None = None
    extra: dict | None = None

    def to_json(self) -> str:
        d = {"stage": self.stage, "wall_seconds": round(self.wall_seconds, 6),
             "images_produced": self.images_produced,
             "images_consumed": self.images_consumed}
        for key in ("mean_render_seconds", "std_render_seconds",
                    "mean_postproc_seconds", "std_postproc_seconds"):
            val = getattr(self, key)
            if val is not None:
                d[key] = round(val, 6)
        if self.extra:
            d.update(self.extra)
        return json.dumps(d, sort_keys=True)


def _emit(report: RunReport) -> None:
    print(report.to_json())


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    if args.width or args.height:
        from dataclasses import replace
        cam = scene.camera
        cam = replace(cam, width=args.width or cam.width, height=args.height or cam.height)
        scene = replace(scene, camera=cam)
    t0 = time.perf_counter()
    img = render(scene, threads=args.threads)
    dt = time.perf_counter() - t0
    save_image(img, args.out)
    log.info("rendered %s (%dx%d) in %.3f s", args.out, img.width, img.height, dt)
    _emit(RunReport(stage="render", wall_seconds=dt, images_produced=1,
                    mean_render_seconds=dt))
    return 0


def _chain_from_flags(args) -> list:
    steps = []
    if args.grayscale:
        steps.append(ChainStep(op="grayscale"))
    if args.match:
        steps.append(ChainStep(op="match", ref=load_reference_histogram(args.match)))
    for spec_text in args.noise or []:
        steps.append(ChainStep(op="noise", noise=parse_noise_spec(spec_text)))
    if args.colormap:
        if args.colormap != "copper":
            raise postproc.PostprocError(
                f"unknown colormap {args.colormap!r}; only 'copper' is available")
        steps.append(ChainStep(op="colormap"))
    return steps


def cmd_postproc(args) -> int:
    img = load_image(args.infile)
    steps = _chain_from_flags(args)
    t0 = time.perf_counter()
    out = postproc.apply_chain(img, steps)
    dt = time.perf_counter() - t0
    save_image(out, args.out)
    log.info("post-processed %s -> %s (%d steps) in %.3f s",
             args.infile, args.out, len(steps), dt)
    _emit(RunReport(stage="postproc", wall_seconds=dt, images_produced=1,
                    images_consumed=1, mean_postproc_seconds=dt))
    return 0


def cmd_dataset_generate(args) -> int:
    import os
    cfg = load_sweep_config(args.config)
    if args.out_dir:
        cfg = SweepConfig.from_dict({**cfg.to_dict(), "output_dir": args.out_dir})
    t0 = time.perf_counter()
    manifest = generate_dataset(cfg, workers=args.workers,
                                config_dir=os.path.dirname(os.path.abspath(args.config)))
    dt = time.perf_counter() - t0
    n = len(manifest.records)
    log.info("generated %d images into %s in %.1f s", n, cfg.output_dir, dt)
    _emit(RunReport(stage="dataset-generate", wall_seconds=dt, images_produced=n,
                    mean_render_seconds=dt / n if n else None))
    return 0


def parse_train_counts(text: str) -> dict:
    """Parse "cylinder=21,cube=27,sphere=32" into a count mapping."""
    counts = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, val = part.partition("=")
        if not sep:
            raise DatasetError(f"bad train count {part!r}; expected shape=N")
        counts[key.strip()] = int(val)
    if not counts:
        raise DatasetError("empty train count specification")
    return counts


def cmd_split(args) -> int:
    manifest = read_manifest(args.manifest)
    counts = parse_train_counts(args.train)
    t0 = time.perf_counter()
    out = split_manifest(manifest, counts, seed=args.seed)
    out_path = args.out or args.manifest
    write_manifest(out, out_path)
    dt = time.perf_counter() - t0
    n_train = len(out.by_split("train"))
    log.info("split %s: %d train / %d test", out_path, n_train,
             len(out.records) - n_train)
    _emit(RunReport(stage="split", wall_seconds=dt, images_consumed=len(out.records),
                    extra={"train_records": n_train,
                           "test_records": len(out.records) - n_train}))
    return 0


def _load_split_features(manifest_path, split):
    import os
    manifest = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    records = manifest.by_split(split)
    if not records:
        raise DatasetError(f"manifest has no {split!r} records; run split first")
    feats = []
    labels = []
    for rec in records:
        img = load_image(os.path.join(base, rec.image_path))
        feats.append(atr.extract_features(img))
        labels.append(rec.shape)
    return np.stack(feats), labels


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    X, y = _load_split_features(args.manifest, "train")
    cfg = atr.TrainConfig(seed=args.seed, epochs=args.epochs,
                          learning_rate=args.lr, lam=args.lam)
    model = atr.train_classifier(X, y, cfg)
    model.save(args.out)
    dt = time.perf_counter() - t0
    log.info("trained on %d samples (%s) -> %s", len(y),
             ",".join(model.classes), args.out)
    _emit(RunReport(stage="train", wall_seconds=dt, images_consumed=len(y)))
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    X, y = _load_split_features(args.manifest, args.split)
    model = atr.ClassifierModel.load(args.model)
    preds = atr.predict(model, X)
    cm = atr.confusion_matrix(preds, y, model.classes)
    with open(args.report, "w") as f:
        json.dump(cm.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    dt = time.perf_counter() - t0
    log.info("evaluated %d samples: accuracy %.4f -> %s", len(y), cm.accuracy, args.report)
    _emit(RunReport(stage="eval", wall_seconds=dt, images_consumed=len(y),
                    extra={"accuracy": cm.accuracy}))
    return 0


def cmd_stitch(args) -> int:
    port = load_image(args.port)
    starboard = load_image(args.starboard)
    t0 = time.perf_counter()
    out = stitch_sidescan(port, starboard, deadzone_px=args.deadzone)
    dt = time.perf_counter() - t0
    save_image(out, args.out)
    log.info("stitched %dx%d swath -> %s", out.width, out.height, args.out)
    _emit(RunReport(stage="stitch", wall_seconds=dt, images_produced=1,
                    images_consumed=2))
    return 0


def bench_reference_histogram() -> Histogram:
    """Fixed synthetic reference used when benchmarking histogram matching."""
    levels = np.arange(256, dtype=np.float64)
    weights = (levels + 1.0) * np.exp(-levels / 64.0)
    counts = np.round(weights / weights.sum() * 1_000_000).astype(np.int64)
    return Histogram(counts)


def run_bench(cfg: SweepConfig | None, n: int, size: int,
              threads: int | None = None) -> RunReport:
    """Render and post-process n images, reporting per-stage mean/std times.

    The post-processing chain is the standard sonar styling: grayscale,
    histogram match to a fixed reference, speckle noise (variance 0.1).
    """
    if n < 1:
        raise DatasetError(f"bench needs n >= 1, got {n}")
    if cfg is None:
        cfg = SweepConfig(counts={"cylinder": max(n, 1)}, image_width=size,
                          image_height=size, fov_deg=120.0, grid_nodes=401,
                          master_seed=77)
    plan = _plan_records(cfg)
    chain = (ChainStep(op="grayscale"),
             ChainStep(op="match", ref=bench_reference_histogram()),
             ChainStep(op="noise", noise=NoiseSpec(kind="speckle", variance=0.1, seed=1)))
    # warm up compiled kernels and allocator before timing
    warm = scene_for_record(cfg, plan[0])
    img = render(warm, threads=threads)
    apply_chain_array(img.data, chain, noise_seed_override=0)
    size_label = f"{warm.camera.width}x{warm.camera.height}"

    render_times = []
    post_times = []
    t_all = time.perf_counter()
    for k in range(n):
        rec = plan[k % len(plan)]
        scene = scene_for_record(cfg, rec)
        t0 = time.perf_counter()
        img = render(scene, threads=threads)
        render_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        apply_chain_array(img.data, chain, noise_seed_override=k)
        post_times.append(time.perf_counter() - t0)
    wall = time.perf_counter() - t_all
    return RunReport(
        stage="bench", wall_seconds=wall, images_produced=n,
        mean_render_seconds=statistics.fmean(render_times),
        std_render_seconds=statistics.stdev(render_times) if n > 1 else 0.0,
        mean_postproc_seconds=statistics.fmean(post_times),
        std_postproc_seconds=statistics.stdev(post_times) if n > 1 else 0.0,
        extra={"image_size": size_label, "threads": resolve_threads(threads)})


def cmd_bench(args) -> int:
    cfg = load_sweep_config(args.config) if args.config else None
    report = run_bench(cfg, n=args.n, size=args.size, threads=args.threads)
    log.info("bench: render %.3f s/img, postproc %.3f s/img",
             report.mean_render_seconds, report.mean_postproc_seconds)
    _emit(report)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sonarforge",
        description="Synthetic side-scan sonar image simulator and ATR harness.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("render", help="render a scene description to an image")
    sp.add_argument("--scene", required=True, help="scene JSON file")
    sp.add_argument("--out", required=True, help="output image (.png/.pgm/.raw)")
    sp.add_argument("--width", type=int, default=None, help="override image width")
    sp.add_argument("--height", type=int, default=None, help="override image height")
    sp.add_argument("--threads", type=int, default=None,
                    help="render threads (default: SONARFORGE_THREADS or all cores)")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("postproc", help="apply a post-processing chain to an image")
    sp.add_argument("--in", dest="infile", required=True, help="input image")
    sp.add_argument("--out", required=True, help="output image")
    sp.add_argument("--grayscale", action="store_true", help="convert RGB to grayscale")
    sp.add_argument("--match", default=None, metavar="REF",
                    help="histogram-match to a reference image or 256-line count file")
    sp.add_argument("--noise", action="append", metavar="SPEC",
                    help="noise step, e.g. speckle:0.1:seed=7 (repeatable)")
    sp.add_argument("--colormap", default=None, help="colormap name (copper)")
    sp.set_defaults(func=cmd_postproc)

    sp = sub.add_parser("dataset", help="bulk dataset operations")
    dsub = sp.add_subparsers(dest="dataset_command", required=True)
    sg = dsub.add_parser("generate", help="generate a dataset from a sweep config")
    sg.add_argument("--config", required=True, help="sweep config JSON")
    sg.add_argument("--out-dir", default=None, help="override the config's output_dir")
    sg.add_argument("--workers", type=int, default=None, help="worker threads")
    sg.set_defaults(func=cmd_dataset_generate)
    ss = dsub.add_parser("split", help="assign train/test splits in a manifest")
    _add_split_args(ss)

    sp = sub.add_parser("split", help="assign train/test splits in a manifest")
    _add_split_args(sp)

    sp = sub.add_parser("train", help="train the classifier on a manifest's train split")
    sp.add_argument("--manifest", required=True, help="dataset manifest (JSON Lines)")
    sp.add_argument("--out", required=True, help="output model JSON")
    sp.add_argument("--seed", type=int, required=True, help="training RNG seed")
    sp.add_argument("--epochs", type=int, default=atr.TrainConfig.epochs)
    sp.add_argument("--lr", type=float, default=atr.TrainConfig.learning_rate,
                    help="learning-rate multiplier")
    sp.add_argument("--lam", type=float, default=atr.TrainConfig.lam,
                    help="L2 regularization strength")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a model on a manifest split")
    sp.add_argument("--manifest", required=True, help="dataset manifest (JSON Lines)")
    sp.add_argument("--model", required=True, help="model JSON from train")
    sp.add_argument("--report", required=True, help="output report JSON")
    sp.add_argument("--split", default="test", choices=["train", "test"])
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("stitch", help="stitch port/starboard swaths with a dead-zone")
    sp.add_argument("--port", required=True, help="port-side image")
    sp.add_argument("--starboard", required=True, help="starboard-side image")
    sp.add_argument("--out", required=True, help="output image")
    sp.add_argument("--deadzone", type=int, default=postproc.DEFAULT_DEADZONE_PX,
                    help="nadir gap width in pixels")
    sp.set_defaults(func=cmd_stitch)

    sp = sub.add_parser("bench", help="measure render and postproc throughput")
    sp.add_argument("-n", type=int, default=20, help="number of images")
    sp.add_argument("--size", type=int, default=2048, help="square image size")
    sp.add_argument("--config", default=None, help="optional sweep config for the scene")
    sp.add_argument("--threads", type=int, default=None,
                    help="render threads (default: SONARFORGE_THREADS or all cores)")
    sp.set_defaults(func=cmd_bench)

    return p


def _add_split_args(sp) -> None:
    sp.add_argument("--manifest", required=True, help="dataset manifest (JSON Lines)")
    sp.add_argument("--train", required=True,
                    help="per-shape train counts, e.g. cylinder=21,cube=27,sphere=32")
    sp.add_argument("--seed", type=int, required=True, help="sampling seed")
    sp.add_argument("--out", default=None,
                    help="output manifest path (default: rewrite --manifest)")
    sp.set_defaults(func=cmd_split)


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
