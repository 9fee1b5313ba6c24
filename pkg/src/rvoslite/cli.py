"""Command-line harness: gen-data, overfit, infer, eval, ablate.

Exit codes: 0 success, 2 validation problem (config, manifest, coverage),
3 runtime failure (numerics, refiner abort).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, build_config
from .data import (DatasetManifest, ManifestError, load_manifest)
from .instance_query import ProviderError, make_provider
from .metrics import CoverageError, MetricsError, evaluate_dataset
from .model import RvosModel
from .refine import RefinementError, make_refiner, refine_masks
from .rle import RleError, decode_mask, encode_mask
from .sampling import SamplingPlan, derive_seed, sample_frames
from .synthetic import GenerationError, GeneratorConfig, generate_synthetic_dataset
from .training import NumericsError, run_training

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

ABLATION_GRID = [
    ("local", False, False),
    ("local", False, True),
    ("global", False, False),
    ("global", False, True),
    ("global", True, False),
    ("global", True, True),
]


def _build_model(cfg: RunConfig) -> RvosModel:
    torch.manual_seed(cfg.seed)
    return RvosModel(cfg.model_dims())

def _provider_for(cfg: RunConfig, manifest: DatasetManifest):
    if not cfg.instance_enabled:
        return None
    return make_provider(cfg.instance_provider, manifest=manifest,
                         masks_dir=cfg.instance_masks_dir or None,
                         seed=derive_seed(cfg.seed, "provider"))


def _predict_expression(model, manifest, sample, cfg: RunConfig, provider, refiner):
    entry = manifest.videos[sample.video_id]
    plan = SamplingPlan(cfg.sampling_method, cfg.sampling_num_frames,
                        derive_seed(cfg.sampling_seed, sample.video_id))
    indices = sample_frames(entry.source_length, plan)
    clip = manifest.load_frames(sample.video_id, indices)
    out = model.forward_pipeline(clip, sample.expression, provider,
                                 cfg.instance_enabled, **cfg.query_kwargs())
    if refiner is not None:
        out = refine_masks(clip.frames, out, refiner,
                           seed=derive_seed(cfg.seed, "refine", sample.expression_id),
                           on_error=cfg.refiner_on_error)
    return {
        "expression_id": sample.expression_id,
        "video_id": sample.video_id,
        "frame_indices": [int(i) for i in indices],
        "height": clip.height,
        "width": clip.width,
        "masks": [encode_mask(m) for m in out.binary_masks],
    }


def _write_predictions(records: list[dict], out_dir: Path) -> Path:
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        with open(pred_dir / f"{rec['expression_id']}.json", "w") as f:
            json.dump(rec, f, indent=2, sort_keys=True)
            f.write("\n")
    return pred_dir


def read_predictions(pred_dir: str | Path) -> dict[str, dict]:
    pred_dir = Path(pred_dir)
    if not pred_dir.exists():
        raise MetricsError(f"predictions directory missing: {pred_dir}")
    predictions = {}
    for path in sorted(pred_dir.glob("*.json")):
        with open(path) as f:
            rec = json.load(f)
        shape = (rec["height"], rec["width"])
        masks = np.stack([decode_mask(r, shape) for r in rec["masks"]])
        predictions[rec["expression_id"]] = {
            "frame_indices": rec["frame_indices"],
            "masks": masks,
        }
    return predictions


def _infer_all(model, manifest, cfg: RunConfig, refiner) -> list[dict]:
    provider = _provider_for(cfg, manifest)
    samples = sorted(manifest.expressions, key=lambda e: e.expression_id)
    return [_predict_expression(model, manifest, s, cfg, provider, refiner)
            for s in samples]


def _evaluate_records(records: list[dict], manifest, tolerance):
    predictions = {}
    for rec in records:
        shape = (rec["height"], rec["width"])
        predictions[rec["expression_id"]] = {
            "frame_indices": rec["frame_indices"],
            "masks": np.stack([decode_mask(r, shape) for r in rec["masks"]]),
        }
    return evaluate_dataset(predictions, manifest, tolerance)


def _write_report(report, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    (out_dir / "report.md").write_text(report.to_markdown())


def cmd_gen_data(args) -> int:
    size = args.size if args.size is not None else 32
    gen_cfg = GeneratorConfig(
        n_videos=args.videos,
        frames_per_video=args.frames,
        height=args.height or size,
        width=args.width or size,
        min_objects=args.min_objects,
        max_objects=args.max_objects,
        shapes=tuple(args.shapes.split(",")) if args.shapes else
               GeneratorConfig.shapes,
        motions=tuple(args.motions.split(",")) if args.motions else
                GeneratorConfig.motions,
        speed=args.speed,
        masks_as=args.masks_as,
        split=args.split,
    )
    seed = 0 if args.seed is None else args.seed
    manifest_path = generate_synthetic_dataset(gen_cfg, seed, args.out)
    print(f"wrote {manifest_path}")
    return EXIT_OK


def _train_and_eval_combo(manifest_path: str, combo_dir: str, cfg_dict: dict,
                          sampling: str, instance_on: bool, steps: int) -> dict:
    """Train one (sampling, instance) combo, then evaluate with and without
    the stub refiner. Runs in a worker process under --jobs > 1."""
    cfg = RunConfig(**cfg_dict)
    cfg.sampling_method = sampling
    manifest = load_manifest(manifest_path)
    model = _build_model(cfg)
    provider = _provider_for(cfg, manifest) if instance_on else None
    run_training(
        model, manifest, steps=steps, lr=cfg.train_lr,
        weight_decay=cfg.train_weight_decay, accum_steps=cfg.train_accum,
        sampling_method=sampling, num_frames=cfg.sampling_num_frames,
        seed=cfg.seed, provider=provider, instance_init=instance_on,
        **cfg.query_kwargs())
    combo_dir = Path(combo_dir)
    combo_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, combo_dir / "checkpoint.npz")

    infer_cfg = dataclasses.replace(cfg, instance_enabled=instance_on)
    results = {}
    for refined in (False, True):
        refiner = make_refiner("stub", threshold=cfg.refiner_threshold_or_none()) if refined \
            else None
        records = _infer_all(model, manifest, infer_cfg, refiner)
        sub = combo_dir / ("refined" if refined else "plain")
        sub.mkdir(parents=True, exist_ok=True)
        _write_predictions(records, sub)
        report = _evaluate_records(records, manifest, cfg.tolerance_or_none())
        _write_report(report, sub)
        results[refined] = report.aggregate
    return {"sampling": sampling, "instance": instance_on, "metrics": results}


def cmd_ablate(args) -> int:
    cfg = build_config(args.config, {
        "seed": args.seed, "ablate_steps": args.steps, "jobs": args.jobs,
    })
    manifest_path = str(Path(args.manifest))
    load_manifest(manifest_path)  # validate before spawning work
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    combos = [("local", False), ("global", False), ("global", True)]
    cfg_dict = dataclasses.asdict(cfg)
    jobs = []
    for sampling, instance_on in combos:
        combo_dir = out_dir / f"{sampling}_{'inst' if instance_on else 'base'}"
        jobs.append((manifest_path, str(combo_dir), cfg_dict, sampling,
                     instance_on, cfg.ablate_steps))

    results: dict[tuple[str, bool], dict | None] = {}
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = {pool.submit(_train_and_eval_combo, *job): job for job in jobs}
            for fut, job in futures.items():
                key = (job[3], job[4])
                try:
                    results[key] = fut.result()
                except Exception as exc:  # row marked failed below
                    print(f"ablation combo {key} failed: {exc}", file=sys.stderr)
                    results[key] = None
    else:
        for job in jobs:
            key = (job[3], job[4])
            try:
                results[key] = _train_and_eval_combo(*job)
            except Exception as exc:
                print(f"ablation combo {key} failed: {exc}", file=sys.stderr)
                results[key] = None

    rows = []
    for sampling, instance_on, refined in ABLATION_GRID:
        combo = results.get((sampling, instance_on))
        row = {"sampling": sampling, "instance_masks": instance_on,
               "refined": refined}
        if combo is None:
            row["status"] = "failed"
        else:
            row["status"] = "ok"
            row.update({k: combo["metrics"][refined][k] for k in ("JF", "J", "F")})
        rows.append(row)

    header = (f"Trained from scratch at desk scale on synthetic data "
              f"({cfg.ablate_steps} steps per row-pair, seed {cfg.seed}, stub "
              f"refiner); rows are not comparable to any full-scale benchmark.")
    lines = ["# Ablation grid", "", header, "",
             "| Sampling | Instance Masks | Refined | J&F | J | F |",
             "|---|---|---|---|---|---|"]
    for row in rows:
        mark = lambda b: "on" if b else "off"
        if row["status"] == "ok":
            lines.append(f"| {row['sampling']} | {mark(row['instance_masks'])} | "
                         f"{mark(row['refined'])} | {row['JF']:.4f} | "
                         f"{row['J']:.4f} | {row['F']:.4f} |")
        else:
            lines.append(f"| {row['sampling']} | {mark(row['instance_masks'])} | "
                         f"{mark(row['refined'])} | failed | failed | failed |")
    (out_dir / "ablation.md").write_text("\n".join(lines) + "\n")
    with open(out_dir / "ablation.json", "w") as f:
        json.dump({"rows": rows,
                   "settings": {"steps": cfg.ablate_steps, "seed": cfg.seed}},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    print("\n".join(lines))
    if any(r["status"] != "ok" for r in rows):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_overfit(args) -> int:
    cfg = build_config(args.config, {
        "seed": args.seed, "train_steps": args.steps, "train_lr": args.lr,
        "sampling_method": args.sampling, "instance_provider": args.provider,
        "instance_enabled": args.instance_init,
    })
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    expression_ids = args.expressions.split(",") if args.expressions else None
    model = _build_model(cfg)
    provider = _provider_for(cfg, manifest)
    logs = run_training(
        model, manifest, steps=cfg.train_steps, lr=cfg.train_lr,
        weight_decay=cfg.train_weight_decay, accum_steps=cfg.train_accum,
        sampling_method=cfg.sampling_method, num_frames=cfg.sampling_num_frames,
        seed=cfg.seed, provider=provider, instance_init=cfg.instance_enabled,
        expression_ids=expression_ids, **cfg.query_kwargs())

    save_checkpoint(model, out_dir / "checkpoint.npz")
    with open(out_dir / "train_log.jsonl", "w") as f:
        for rec in logs:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out_dir / "run_meta.json", "w") as f:
        json.dump({"config": dataclasses.asdict(cfg),
                   "expressions": expression_ids,
                   "finished_at": datetime.now(timezone.utc).isoformat()},
                  f, indent=2, sort_keys=True)
        f.write("\n")

    eval_manifest = manifest if expression_ids is None else dataclasses.replace(
        manifest, expressions=[e for e in manifest.expressions
                               if e.expression_id in expression_ids])
    records = _infer_all(model, eval_manifest, cfg, refiner=None)
    report = _evaluate_records(records, eval_manifest, cfg.tolerance_or_none())
    with open(out_dir / "train_metrics.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"final train J&F: {report.aggregate['JF']:.4f} "
          f"(J {report.aggregate['J']:.4f}, F {report.aggregate['F']:.4f})")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = build_config(args.config, {
        "seed": args.seed, "refiner": args.refiner, "refiner_dir": args.refiner_dir,
        "instance_provider": args.provider,
    })
    model = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    refiner = make_refiner(cfg.refiner, threshold=cfg.refiner_threshold_or_none(),
                           exchange_dir=cfg.refiner_dir or None)
    records = _infer_all(model, manifest, cfg, refiner)
    pred_dir = _write_predictions(records, out_dir)
    print(f"wrote {len(records)} predictions to {pred_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = build_config(args.config, {"eval_tolerance": args.tolerance})
    manifest = load_manifest(args.manifest)
    predictions = read_predictions(args.predictions)
    report = evaluate_dataset(predictions, manifest, cfg.tolerance_or_none())
    out_dir = Path(args.out)
    _write_report(report, out_dir)
    print(f"aggregate J&F {report.aggregate['JF']:.4f} "
          f"(J {report.aggregate['J']:.4f}, F {report.aggregate['F']:.4f}) "
          f"over {report.n_expressions} expressions")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvoslite",
        description="Desk-scale referring video object segmentation harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file (key = value lines)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--videos", type=int, default=2)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--size", type=int, default=None, help="square canvas size")
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=2)
    p.add_argument("--shapes", default=None, help="comma-separated shape vocabulary")
    p.add_argument("--motions", default=None, help="comma-separated motion vocabulary")
    p.add_argument("--speed", type=int, default=4)
    p.add_argument("--masks-as", choices=("rle", "png"), default="rle")
    p.add_argument("--split", choices=("train", "valid", "test"), default="train")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("overfit", help="train on a small fixed subset")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--sampling", choices=("local", "global"), default=None)
    p.add_argument("--provider", choices=("oracle", "perturbed", "file", "empty"),
                   default=None)
    p.add_argument("--instance-init", dest="instance_init", default=None,
                   action=argparse.BooleanOptionalAction)
    p.add_argument("--expressions", default=None,
                   help="comma-separated expression ids (default: all)")
    p.set_defaults(func=cmd_overfit)

    p = sub.add_parser("infer", help="predict masks for every expression")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--refiner", choices=("none", "identity", "stub", "external"),
                   default=None)
    p.add_argument("--refiner-dir", default=None,
                   help="exchange directory for the external refiner")
    p.add_argument("--provider", choices=("oracle", "perturbed", "file", "empty"),
                   default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the 6-row ablation grid")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=None, help="training steps per row-pair")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, GenerationError, CoverageError,
            ProviderError, CheckpointError, RleError, MetricsError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericsError, RefinementError, TimeoutError, FloatingPointError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
