"""Batch command-line pipeline.

Subcommands wire the library into the full workflow: plan tiles, run a
detector tiled over a corpus, evaluate detections against ground truth,
sample training patches, augment images, fit colour statistics, run the
training-set-size ablation, and export plot-ready CSV.

Every command that takes --seed is bit-reproducible: identical inputs and
seed produce byte-identical output files. The OT_SEED environment
variable overrides the built-in default seed; an explicit --seed beats
both. Exit codes: 0 success, 1 data/validation/runtime error, 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import canonical
from .augment import (
    AugmentationSpec,
    ColorStats,
    apply_flip,
    apply_pca_jitter,
    compute_color_stats,
    rescale_shorter_side,
    sample_augmentation,
)
from .dataset import (
    Manifest,
    PatchSpec,
    discard_empty,
    load_manifest,
    sample_subimages,
    save_manifest,
)
from .detector import (
    DetectorSpec,
    ExternalConfig,
    ExternalDetector,
    OracleNoise,
    gt_boxes_by_image,
    load_detections,
    make_detector,
    parse_command,
    save_detections,
)
from .evaluation import (
    MatchConfig,
    Metrics,
    ablate,
    average_precision,
    f1_score,
    match_detections,
    oracle_schedule_factory,
    pr_curve,
    relax_clusters,
    select_operating_threshold,
)
from .geometry import Size, clip_box
from .proposals import ProposalConfig
from .seeding import DEFAULT_SEED, derive_seed
from .tiling import TilingConfig, fuse, plan_tiles, run_tiled

SEED_ENV_VAR = "OT_SEED"


# ---------------------------------------------------------------------------
# Flag parsing helpers


def _parse_size(text: str) -> Size:
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            side = int(parts[0])
            return Size(side, side)
        if len(parts) == 2:
            return Size(int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad size {text!r}: {exc}") from None
    raise argparse.ArgumentTypeError(f"bad size {text!r}, expected WxH or N")


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"bad integer list {text!r}, expected e.g. 5,10,25"
        ) from None


def _parse_float_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"bad range {text!r}, expected lo,hi")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}, expected lo,hi") from None


def _resolve_seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    return DEFAULT_SEED


def _read_manifest(path: str) -> Manifest:
    with open(path, "rb") as fh:
        return load_manifest(fh.read())


def _write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _select_records(manifest: Manifest, split: str):
    if split == "all":
        return manifest.images
    return manifest.split(split)


def _load_image_rgb(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _save_image_rgb(path: Path, pixels: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(pixels).save(path, format="PNG")


# ---------------------------------------------------------------------------
# plan


def _add_tiling_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--tile", type=_parse_size, default=Size(500, 500),
                     help="tile size as WxH or a single side (default 500x500)")
    sub.add_argument("--overlap", type=int, default=50,
                     help="tile overlap in pixels (default 50)")


def _tiling_config(args: argparse.Namespace) -> TilingConfig:
    proposal = ProposalConfig(
        top_n=getattr(args, "top_n", 300),
        nms_iou=getattr(args, "nms_iou", 0.3),
        score_threshold=getattr(args, "score_threshold", 0.0),
    )
    return TilingConfig(tile_size=args.tile, overlap=args.overlap, proposal=proposal)


def _plan_obj(size: Size, cfg: TilingConfig) -> dict:
    plan = plan_tiles(size, cfg)
    obj = plan.to_json_obj()
    obj["tile_size"] = [cfg.tile_size.width, cfg.tile_size.height]
    obj["overlap"] = cfg.overlap
    return obj


def _cmd_plan(args: argparse.Namespace) -> int:
    cfg = TilingConfig(tile_size=args.tile, overlap=args.overlap)
    if args.image is not None:
        doc = _plan_obj(args.image, cfg)
    else:
        manifest = _read_manifest(args.manifest)
        doc = {"plans": {r.id: _plan_obj(r.size, cfg) for r in manifest.images}}
    data = canonical.dumps(doc, places=4, sort_keys=True)
    if args.out:
        _write_bytes(args.out, data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    return 0


# ---------------------------------------------------------------------------
# detect


def _detector_spec(args: argparse.Namespace, seed: int) -> DetectorSpec:
    if args.detector == "oracle":
        noise = OracleNoise(
            drop_rate=args.drop_rate,
            spurious_rate=args.spurious_rate,
            jitter_sigma=args.jitter_sigma,
            tp_score_range=args.tp_range,
            fp_score_range=args.fp_range,
            seed=seed,
        )
        return DetectorSpec(kind="oracle", oracle=noise)
    if args.detector == "file":
        if not args.detections_in:
            raise ValueError("--detections-in is required with --detector file")
        return DetectorSpec(kind="file", file=args.detections_in)
    if not args.command:
        raise ValueError("--command is required with --detector external")
    return DetectorSpec(
        kind="external",
        external=ExternalConfig(
            command=parse_command(args.command),
            handshake_timeout=args.handshake_timeout,
            pool_size=args.pool,
        ),
    )


def _cmd_detect(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    manifest = _read_manifest(args.manifest)
    records = _select_records(manifest, args.split)
    spec = _detector_spec(args, seed)
    paths = {r.id: r.path for r in manifest.images}
    detector = make_detector(
        spec, ground_truth=manifest, resolve_path=lambda image_id: paths[image_id]
    )
    cfg = _tiling_config(args)
    try:
        table = {}
        for record in records:
            plan = plan_tiles(record.size, cfg)
            pooled = run_tiled(record, plan, detector, parallelism=args.parallel)
            table[record.id] = fuse(pooled, cfg)
    finally:
        if isinstance(detector, ExternalDetector):
            detector.close()
    _write_bytes(args.out, save_detections(table))
    total = sum(len(v) for v in table.values())
    print(f"wrote {total} detections over {len(table)} image(s) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _metrics_at_threshold(per_image, cfg, threshold, ap, relax):
    tp = fp = fn = 0
    for dets, gts in per_image:
        kept = [d for d in dets if d.score >= threshold]
        result = match_detections(kept, gts, cfg)
        if relax:
            result = relax_clusters(result, cfg)
        tp += len(result.tp)
        fp += len(result.fp)
        fn += len(result.fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Metrics(
        ap=ap,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        operating_threshold=threshold,
    )


def _cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = _read_manifest(args.manifest)
    records = manifest.split(args.split)
    with open(args.detections, "rb") as fh:
        table = load_detections(fh.read())
    known = {r.id for r in records}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ValueError(
            f"detections reference ids outside the {args.split!r} split: "
            + ", ".join(unknown)
        )
    per_image = []
    for record in records:
        gts = [
            b
            for b in (clip_box(a.box, record.size) for a in record.annotations)
            if b is not None
        ]
        per_image.append((table.get(record.id, []), gts))

    cfg = MatchConfig(iou_threshold=args.iou)
    curve = pr_curve(per_image, cfg)
    if args.threshold is not None:
        threshold = args.threshold
    elif args.split == "val":
        threshold, _ = select_operating_threshold(curve)
    else:
        print(
            "error: --threshold is required on the test split "
            "(select it on val first)",
            file=sys.stderr,
        )
        return 2
    metrics = _metrics_at_threshold(
        per_image, cfg, threshold, average_precision(curve), args.relax_clusters
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_bytes(out_dir / "metrics.json",
                 canonical.dumps(metrics.to_json_obj(), places=6, sort_keys=True))
    _write_bytes(out_dir / "pr_curve.csv", curve.to_csv())
    print(
        f"split={args.split} threshold={metrics.operating_threshold:.6f} "
        f"ap={metrics.ap:.6f} precision={metrics.precision:.6f} "
        f"recall={metrics.recall:.6f} f1={metrics.f1:.6f}"
    )
    return 0


# ---------------------------------------------------------------------------
# sample


def _cmd_sample(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    manifest = _read_manifest(args.manifest)
    patches = []
    for record in manifest.images:
        spec = PatchSpec(
            patch_size=args.patch,
            count=args.count,
            min_visible_fraction=args.min_visible,
            seed=seed,
        )
        sampled = sample_subimages(record, spec)
        if record.split == "train" and not args.keep_empty:
            sampled = discard_empty(sampled)
        patches.extend(sampled)
    metadata = dict(manifest.metadata)
    metadata["sampling"] = {
        "patch_size": [args.patch.width, args.patch.height],
        "patches_per_image": args.count,
        "min_visible_fraction": args.min_visible,
        "seed": seed,
    }
    out = Manifest(fruit=manifest.fruit, images=tuple(patches), metadata=metadata)
    _write_bytes(args.out, save_manifest(out))
    print(f"wrote {len(patches)} patches to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# augment


def _augment_record(record, pixels, spec, stats, seed):
    annotations = list(record.annotations)
    applied = sample_augmentation(spec, derive_seed(seed, "augment", record.id))
    if applied.flipped:
        pixels, annotations = apply_flip(pixels, annotations)
    pixels, annotations, _ = rescale_shorter_side(
        pixels, annotations, applied.chosen_shorter_side
    )
    if spec.pca_enabled:
        floats = pixels.astype(np.float64) / 255.0
        jittered = apply_pca_jitter(floats, stats, applied.alphas)
        pixels = np.round(jittered * 255.0).astype(np.uint8)
    return pixels, annotations


def _cmd_augment(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    manifest = _read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    stats = None
    if args.stats:
        with open(args.stats, "r", encoding="utf-8") as fh:
            stats = ColorStats.from_json_obj(json.load(fh))

    spec = AugmentationSpec(
        flip_probability=args.flip_probability,
        scale_choices=tuple(args.scales),
        pca_alpha_halfwidth=args.alpha_halfwidth,
        pca_enabled=not args.no_pca,
    )
    out_records = []
    for record in manifest.images:
        pixels = _load_image_rgb(record.path)
        if args.fixed_side is not None:
            # Deterministic eval-time preparation: rescale only.
            pixels, annotations, _ = rescale_shorter_side(
                pixels, list(record.annotations), args.fixed_side
            )
        else:
            image_stats = stats
            if spec.pca_enabled and image_stats is None:
                image_stats = compute_color_stats(
                    pixels.reshape(-1, 3).astype(np.float64) / 255.0
                )
            pixels, annotations = _augment_record(
                record, pixels, spec, image_stats, seed
            )
        name = record.id.replace(os.sep, "_") + ".png"
        _save_image_rgb(out_dir / name, pixels)
        out_records.append(
            type(record)(
                id=record.id,
                path=str(out_dir / name),
                size=Size(int(pixels.shape[1]), int(pixels.shape[0])),
                split=record.split,
                annotations=tuple(annotations),
                source_id=record.source_id,
                source_offset=record.source_offset,
            )
        )
    out = Manifest(
        fruit=manifest.fruit,
        images=tuple(out_records),
        metadata=dict(manifest.metadata),
    )
    _write_bytes(out_dir / "manifest.json", save_manifest(out))
    print(f"augmented {len(out_records)} image(s) into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# pca-stats


def _cmd_pca_stats(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    manifest = _read_manifest(args.manifest)
    samples = []
    for record in manifest.images:
        pixels = _load_image_rgb(record.path).reshape(-1, 3).astype(np.float64) / 255.0
        if len(pixels) > args.pixels_per_image:
            rng = np.random.default_rng(derive_seed(seed, "pca", record.id))
            idx = rng.choice(len(pixels), size=args.pixels_per_image, replace=False)
            pixels = pixels[np.sort(idx)]
        samples.append(pixels)
    if not samples:
        raise ValueError("manifest has no images to sample pixels from")
    stats = compute_color_stats(np.concatenate(samples, axis=0))
    _write_bytes(args.out, canonical.dumps(stats.to_json_obj(), places=6, sort_keys=True))
    print(f"wrote colour statistics for {len(samples)} image(s) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _cmd_ablate(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    manifest = _read_manifest(args.manifest)
    ground_truth = gt_boxes_by_image(manifest)
    base = OracleNoise(
        spurious_rate=args.spurious_rate,
        jitter_sigma=args.jitter_sigma,
        seed=seed,
    )

    def drop_schedule(n: int) -> float:
        # Miss rate decays as training data grows, saturating at 0.
        return min(1.0, args.drop_base * args.drop_half_n / (args.drop_half_n + n))

    factory = oracle_schedule_factory(ground_truth, base, drop_schedule)
    report = ablate(
        manifest,
        args.sizes,
        args.repeats,
        factory,
        seed,
        match_config=MatchConfig(iou_threshold=args.iou),
    )
    _write_bytes(args.out, canonical.dumps(report.to_json_obj(), places=6, sort_keys=True))
    print(f"wrote ablation over sizes {args.sizes} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# report


def _cmd_report(args: argparse.Namespace) -> int:
    if (args.ablation is None) == (args.metrics is None):
        print("error: pass exactly one of --ablation or --metrics", file=sys.stderr)
        return 2
    if args.ablation:
        with open(args.ablation, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        lines = ["n_train,repeats,ap_mean,ap_std"]
        for row in doc["rows"]:
            lines.append(
                f"{row['n_train']},{row['repeats']},"
                f"{row['ap_mean']:.6f},{row['ap_std']:.6f}"
            )
    else:
        with open(args.metrics, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        lines = [
            "ap,precision,recall,f1,operating_threshold",
            f"{doc['ap']:.6f},{doc['precision']:.6f},{doc['recall']:.6f},"
            f"{doc['f1']:.6f},{doc['operating_threshold']:.6f}",
        ]
    _write_bytes(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orchardtk",
        description="Tiled fruit detection toolkit: plan, detect, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="emit the tile plan for an image or corpus")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image", type=_parse_size, help="image size as WxH")
    group.add_argument("--manifest", help="plan every image of a manifest")
    _add_tiling_flags(p)
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("detect", help="run a detector tiled over a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["all", "train", "val", "test"], default="all")
    p.add_argument("--detector", choices=["oracle", "file", "external"],
                   default="oracle")
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--spurious-rate", type=float, default=0.0)
    p.add_argument("--jitter-sigma", type=float, default=0.0)
    p.add_argument("--tp-range", type=_parse_float_pair, default=(0.5, 1.0),
                   help="true-positive score range as lo,hi")
    p.add_argument("--fp-range", type=_parse_float_pair, default=(0.05, 0.6),
                   help="spurious-detection score range as lo,hi")
    p.add_argument("--detections-in", help="stored detections (detector=file)")
    p.add_argument("--command", help="child process command (detector=external)")
    p.add_argument("--handshake-timeout", type=float, default=10.0)
    p.add_argument("--pool", type=int, default=1,
                   help="external worker processes")
    _add_tiling_flags(p)
    p.add_argument("--score-threshold", type=float, default=0.0)
    p.add_argument("--nms-iou", type=float, default=0.3)
    p.add_argument("--parallel", type=int, default=1, help="tile dispatch threads")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--split", choices=["val", "test"], required=True)
    p.add_argument("--iou", type=float, default=0.2)
    p.add_argument("--threshold", type=float,
                   help="operating threshold (required on test)")
    p.add_argument("--relax-clusters", action="store_true",
                   help="let one detection stand in for a fruit cluster")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sample", help="sample sub-image patches from raw images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--patch", type=_parse_size, required=True)
    p.add_argument("--count", type=int, required=True, help="patches per image")
    p.add_argument("--min-visible", type=float, default=0.25)
    p.add_argument("--keep-empty", action="store_true",
                   help="keep fruitless training patches")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("augment", help="apply flip/scale/PCA-jitter to a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stats", help="colour statistics JSON (from pca-stats)")
    p.add_argument("--flip-probability", type=float, default=0.5)
    p.add_argument("--scales", type=_parse_int_list, default=[300, 500, 700])
    p.add_argument("--alpha-halfwidth", type=float,
                   default=AugmentationSpec().pca_alpha_halfwidth)
    p.add_argument("--no-pca", action="store_true")
    p.add_argument("--fixed-side", type=int,
                   help="skip random draws; rescale every image to this shorter side")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("pca-stats", help="fit colour PCA statistics over a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pixels-per-image", type=int, default=4096)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pca_stats)

    p = sub.add_parser("ablate", help="detection quality vs training-set size")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sizes", type=_parse_int_list, required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--iou", type=float, default=0.2)
    p.add_argument("--drop-base", type=float, default=0.9,
                   help="oracle miss rate scale at n=0")
    p.add_argument("--drop-half-n", type=float, default=20.0,
                   help="training size at which the miss rate halves")
    p.add_argument("--spurious-rate", type=float, default=0.0)
    p.add_argument("--jitter-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("report", help="convert result JSON to plot-ready CSV")
    p.add_argument("--ablation", help="ablation report JSON")
    p.add_argument("--metrics", help="metrics JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
