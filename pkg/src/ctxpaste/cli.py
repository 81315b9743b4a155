"""Command-line entry points for every pipeline stage.

All subcommands write raster dumps (PNG) and JSON reports; a one-line
JSON summary goes to stdout. Failures print a machine-readable JSON
error line to stderr: pipeline errors exit 1, usage and config errors
exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import List, Optional

from . import formats
from .augmentor import make_batch
from .config import load_config
from .core import RngStream, Sample
from .errors import ConfigError, PipelineError
from .experiment import (ExperimentConfig, augmented_epochs, evaluate,
                         run_experiment, run_sweep, sweep_table)
from .harvester import harvest
from .synthgen import SHAPE_KINDS, gen_corpus
from .toycam import cam, cam_to_mask, predict_mask, train


def _category_names(count: int) -> List[str]:
    names = ["background"]
    for c in range(1, count + 1):
        kind = SHAPE_KINDS[(c - 1) % len(SHAPE_KINDS)]
        names.append(kind if count <= len(SHAPE_KINDS) else f"{kind}_{c}")
    return names


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--config", default=None,
                        help="YAML config file (defaults apply otherwise)")
    parser.add_argument("--out", required=True,
                        help="output directory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker threads; results do not depend on it")


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    samples = gen_corpus(cfg.synth, args.n, cfg.seed, jobs=args.jobs)
    names = _category_names(cfg.synth.shape_categories)
    manifest = formats.save_corpus(args.out, samples, names)
    _emit({"command": "synth", "count": len(samples), "seed": cfg.seed,
           "manifest": os.path.relpath(manifest, args.out)})
    return 0


def _predicted_masks(args, cfg, samples, ids, names):
    if args.model:
        model = formats.load_model(args.model)
        return [predict_mask(model, s.image, s.labels, cfg.model.cam_tau)
                for s in samples]
    if args.masks:
        return formats.load_masks(args.masks, ids)
    raise ConfigError("harvest needs --model or --masks")


def _cmd_harvest(args) -> int:
    cfg = _load_cfg(args)
    samples, ids, names = formats.load_corpus(args.data)
    masks = _predicted_masks(args, cfg, samples, ids, names)
    bank = harvest(list(zip(samples, masks)), cfg.harvest, ids=ids,
                   corpus_id=os.path.basename(os.path.dirname(
                       os.path.abspath(args.data))))
    formats.save_bank(args.out, bank)
    _emit({"command": "harvest", "accepted": len(bank),
           "rejections": dict(bank.provenance["rejections"]),
           "categories": list(bank.categories)})
    return 0


def _cmd_augment(args) -> int:
    cfg = _load_cfg(args)
    samples, ids, names = formats.load_corpus(args.data)
    bank = formats.load_bank(args.bank)
    batch = make_batch(samples, bank, args.n, cfg.augment,
                       RngStream(cfg.seed).child("augment-cli"))
    out_samples = []
    out_ids = []
    rows = []
    for i, (sample, records) in enumerate(batch.entries):
        if cfg.augment.pairwise:
            role = "orig" if i % 2 == 0 else "aug"
            sid = f"entry_{i // 2:05d}_{role}"
        else:
            sid = f"entry_{i:05d}_aug"
        out_samples.append(sample)
        out_ids.append(sid)
        rows.append({"id": sid, "labels": sorted(sample.labels),
                     "placements": [dataclasses.asdict(r) for r in records]})
    formats.save_corpus(args.out, out_samples, names, ids=out_ids)
    formats.dump_json(os.path.join(args.out, "placements.json"),
                      {"pairwise": batch.pairwise, "skips": batch.skips,
                       "entries": rows})
    _emit({"command": "augment", "entries": len(batch), "skips": batch.skips,
           "pairwise": batch.pairwise})
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    samples, ids, names = formats.load_corpus(args.data)
    categories = len(names) - 1
    rng = RngStream(cfg.seed).child("train-cli")
    if args.bank:
        bank = formats.load_bank(args.bank)
        stream = augmented_epochs(samples, bank, cfg.augment, cfg.model,
                                  rng.child("stream"))
        model, report = train(stream, categories, cfg.model,
                              rng.child("fit"))
    else:
        model, report = train(samples, categories, cfg.model, rng)
    os.makedirs(args.out, exist_ok=True)
    formats.save_model(os.path.join(args.out, "model.json"), model,
                       extra={"seed": cfg.seed, "augmented": bool(args.bank)})
    formats.dump_json(os.path.join(args.out, "train_report.json"),
                      {"epoch_losses": report.epoch_losses,
                       "skips": report.skips})
    _emit({"command": "train", "epochs": len(report.epoch_losses),
           "final_loss": report.final_loss, "skips": report.skips})
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    samples, ids, names = formats.load_corpus(args.data)
    if any(s.gt_mask is None for s in samples):
        raise ConfigError("eval needs gt masks in the corpus")
    model = formats.load_model(args.model)
    arm = evaluate(model, samples, cfg.model.cam_tau, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    formats.dump_json(os.path.join(args.out, "eval_report.json"),
                      {"tau": cfg.model.cam_tau, "metrics": arm.to_dict()})
    if args.dump_masks:
        masks = [predict_mask(model, s.image, s.labels, cfg.model.cam_tau)
                 for s in samples]
        formats.save_masks(os.path.join(args.out, "masks"), ids, masks)
    _emit({"command": "eval", "mean_iou": arm.mean_iou,
           "bg_activation": arm.bg_activation})
    return 0


def _dump_scene(out_dir: str, sid: str, sample: Sample, model,
                tau: float) -> None:
    formats.write_color_png(os.path.join(out_dir, f"{sid}_image.png"),
                            sample.image)
    if sample.gt_mask is not None:
        formats.write_category_png(os.path.join(out_dir, f"{sid}_gt.png"),
                                   sample.gt_mask)
    for c in sorted(sample.labels):
        heat = cam(model, sample.image, c)
        formats.write_gray_png(
            os.path.join(out_dir, f"{sid}_cam_{c}.png"), heat)
        formats.write_category_png(
            os.path.join(out_dir, f"{sid}_cammask_{c}.png"),
            cam_to_mask(heat, tau, c))
    formats.write_category_png(
        os.path.join(out_dir, f"{sid}_pred.png"),
        predict_mask(model, sample.image, sample.labels, tau))


def _cmd_dump_cam(args) -> int:
    cfg = _load_cfg(args)
    samples, ids, names = formats.load_corpus(args.data)
    model = formats.load_model(args.model)
    wanted = set(args.ids.split(",")) if args.ids else None
    os.makedirs(args.out, exist_ok=True)
    count = 0
    for sid, sample in zip(ids, samples):
        if wanted is not None and sid not in wanted:
            continue
        _dump_scene(args.out, sid, sample, model, cfg.model.cam_tau)
        count += 1
    if wanted is not None and count < len(wanted):
        raise ConfigError("some requested ids are not in the corpus")
    _emit({"command": "dump-cam", "scenes": count})
    return 0


def _cmd_experiment(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    if cfg.sweep:
        results = run_sweep(cfg, cfg.sweep, jobs=args.jobs)
        for name, report in results:
            safe = name.replace("/", "_").replace(" ", "_")
            formats.dump_json(os.path.join(args.out, f"report_{safe}.json"),
                              report.to_dict())
        with open(os.path.join(args.out, "sweep.csv"), "w",
                  encoding="utf-8") as fh:
            fh.write(sweep_table(results))
        base = results[0][1]
        _emit({"command": "experiment", "sweep_points": len(results),
               "base_miou_gain": base.miou_gain})
        return 0

    report, artifacts = run_experiment(cfg, jobs=args.jobs)
    formats.dump_json(os.path.join(args.out, "report.json"),
                      report.to_dict())
    for art in artifacts:
        formats.save_model(
            os.path.join(args.out, f"model_round{art.round_index}.json"),
            art.model, extra={"round": art.round_index, "seed": cfg.seed})
        if art.bank is not None:
            formats.save_bank(
                os.path.join(args.out, f"bank_round{art.round_index}"),
                art.bank)
    if args.dump_count > 0:
        eval_corpus = gen_corpus(cfg.synth, cfg.eval_size,
                                 _eval_seed(cfg.seed), jobs=args.jobs)
        dump_dir = os.path.join(args.out, "dumps")
        os.makedirs(dump_dir, exist_ok=True)
        model = artifacts[-1].model
        for i in range(min(args.dump_count, len(eval_corpus))):
            _dump_scene(dump_dir, f"eval_{i:05d}", eval_corpus[i], model,
                        cfg.model.cam_tau)
    _emit({"command": "experiment",
           "baseline_miou": report.baseline.mean_iou,
           "final_miou": report.final.mean_iou,
           "miou_gain": report.miou_gain,
           "baseline_bg_activation": report.baseline.bg_activation,
           "final_bg_activation": report.final.bg_activation})
    return 0


def _eval_seed(seed: int) -> int:
    from .core import derive_seed
    return derive_seed(seed, "eval")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxpaste",
        description="Copy-paste augmentation pipeline on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _common_flags(p)
    p.add_argument("--n", type=int, default=100, help="number of scenes")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("harvest", help="mine instances from predicted masks")
    _common_flags(p)
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--model", default=None,
                   help="model file; masks are predicted on the fly")
    p.add_argument("--masks", default=None,
                   help="directory of <id>.png predicted masks")
    p.set_defaults(func=_cmd_harvest)

    p = sub.add_parser("augment", help="write one augmented batch")
    _common_flags(p)
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--bank", required=True, help="instance bank directory")
    p.add_argument("--n", type=int, default=8,
                   help="samples to select for the batch")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("train", help="train the classifier")
    _common_flags(p)
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--bank", default=None,
                   help="augment training with this instance bank")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate CAM masks against gt")
    _common_flags(p)
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--dump-masks", action="store_true",
                   help="also write predicted masks")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("experiment",
                       help="full run: corpora, rounds, evaluation")
    _common_flags(p)
    p.add_argument("--dump-count", type=int, default=0,
                   help="also dump CAMs for this many eval scenes")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("dump-cam", help="write heatmaps and masks")
    _common_flags(p)
    p.add_argument("--data", required=True, help="corpus manifest.json")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--ids", default=None,
                   help="comma-separated scene ids (default: all)")
    p.set_defaults(func=_cmd_dump_cam)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)},
                         sort_keys=True), file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)},
                         sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
