"""End-to-end runs: corpus, baseline arm, augmented arm, evaluation.

The experiment answers one question on a confounded synthetic corpus:
does copy-paste augmentation with category-disjoint instances improve
CAM-derived segmentation over training on the raw corpus? Both arms
share corpora and evaluation; only the training stream differs.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augmentor import AugmentConfig, RoundArtifact, make_batch, run_rounds
from .core import Raster, RngStream, Sample, derive_seed
from .errors import ConfigError, PipelineError
from .harvester import HarvestCriteria, InstanceBank
from .synthgen import SynthConfig, gen_corpus
from .toycam import (ModelConfig, ToyModel, TrainReport, cam, iou_accumulate,
                     miou_from_counts, predict_mask, train)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; one seed determines all randomness."""

    seed: int = 7
    rounds: int = 1
    train_size: int = 2000
    eval_size: int = 500
    synth: SynthConfig = field(default_factory=SynthConfig)
    harvest: HarvestCriteria = field(default_factory=HarvestCriteria)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    # Named override sets, each a {dotted.path: value} mapping.
    sweep: tuple = ()

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.train_size < 1 or self.eval_size < 1:
            raise ValueError("corpus sizes must be positive")


def apply_overrides(cfg: ExperimentConfig,
                    overrides: Dict[str, object]) -> ExperimentConfig:
    """Rebuild the config with dotted-path fields replaced.

    Example: {"augment.objects_per_image": 2, "rounds": 0}. Paths may
    start with "blend." as shorthand for "augment.blend.".
    """
    for path, value in overrides.items():
        parts = path.split(".")
        if parts[0] == "blend":
            parts = ["augment"] + parts
        cfg = _replace_path(cfg, parts, value, path)
    return cfg


def _replace_path(node, parts, value, full_path):
    name = parts[0]
    if not dataclasses.is_dataclass(node) or \
            name not in {f.name for f in dataclasses.fields(node)}:
        raise ConfigError(f"unknown config field {full_path!r}")
    if len(parts) == 1:
        current = getattr(node, name)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        try:
            return dataclasses.replace(node, **{name: value})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {full_path!r}: {exc}") from exc
    child = _replace_path(getattr(node, name), parts[1:], value, full_path)
    return dataclasses.replace(node, **{name: child})


@dataclass
class ArmMetrics:
    """Segmentation quality of one trained model on the eval corpus."""

    mean_iou: float
    per_class_iou: Dict[int, float]
    # Mean fraction of CAM mass on ground-truth background, over all
    # (scene, label) pairs. Lower means activations sit on objects.
    bg_activation: float

    def to_dict(self) -> dict:
        return {"mean_iou": self.mean_iou,
                "per_class_iou": {str(k): v
                                  for k, v in sorted(self.per_class_iou.items())},
                "bg_activation": self.bg_activation}


def evaluate(model: ToyModel, corpus: Sequence[Sample], tau: float,
             jobs: int = 1) -> ArmMetrics:
    """Dataset mIoU of CAM masks plus mean background activation.

    Intersections and unions accumulate over the whole corpus before the
    division, so scene order (and parallel chunking) cannot change the
    result. Scenes must carry gt masks.
    """
    def one(sample: Sample):
        pred = predict_mask(model, sample.image, sample.labels, tau)
        bg = sample.gt_mask.channel(0) == 0
        fractions = []
        for c in sorted(sample.labels):
            heat = cam(model, sample.image, c).channel(0)
            total = float(heat.sum())
            if total > 0.0:
                fractions.append(float(heat[bg].sum()) / total)
        return pred, sample.gt_mask, fractions

    if jobs <= 1 or len(corpus) <= 1:
        results = [one(s) for s in corpus]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, corpus))

    inter: Dict[int, int] = {}
    union: Dict[int, int] = {}
    bg_fractions: List[float] = []
    categories = set()
    for sample in corpus:
        categories |= set(sample.labels)
    for pred, gt, fractions in results:
        iou_accumulate(pred, gt, categories, inter, union)
        bg_fractions.extend(fractions)
    result = miou_from_counts(inter, union)
    bg_activation = float(np.mean(bg_fractions)) if bg_fractions else 0.0
    return ArmMetrics(result.mean_iou, result.per_class, bg_activation)


def augmented_epochs(corpus: Sequence[Sample], bank: InstanceBank,
                     acfg: AugmentConfig, mcfg: ModelConfig,
                     rng: RngStream):
    """Augmented training stream: every epoch covers the corpus in
    randomized batches, each built by make_batch from its own substream."""
    n = len(corpus)
    select = min(mcfg.batch_size, n)
    per_epoch = math.ceil(n / select)

    def one_epoch(epoch: int):
        return (make_batch(corpus, bank, select, acfg,
                           rng.child("batch", epoch, b))
                for b in range(per_epoch))

    for epoch in range(mcfg.epochs):
        yield one_epoch(epoch)


@dataclass
class ExperimentReport:
    """Serializable summary of one experiment run."""

    seed: int
    rounds: List[dict]
    baseline: ArmMetrics
    final: ArmMetrics
    config_echo: dict

    @property
    def miou_gain(self) -> float:
        return self.final.mean_iou - self.baseline.mean_iou

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "baseline": self.baseline.to_dict(),
            "final": self.final.to_dict(),
            "miou_gain": self.miou_gain,
            "rounds": self.rounds,
            "config": self.config_echo,
        }


def run_experiment(cfg: ExperimentConfig, jobs: int = 1
                   ) -> Tuple[ExperimentReport, List[RoundArtifact]]:
    """Train round 0 plain and ``cfg.rounds`` augmented self-training
    rounds, evaluating every round's model on a held-out corpus.

    The baseline arm is round 0; the final arm is the last round. With
    rounds = 0 they coincide. Identical configs give byte-identical
    reports regardless of ``jobs``.
    """
    train_corpus = gen_corpus(cfg.synth, cfg.train_size,
                              derive_seed(cfg.seed, "train"), jobs)
    eval_corpus = gen_corpus(cfg.synth, cfg.eval_size,
                             derive_seed(cfg.seed, "eval"), jobs)
    categories = cfg.synth.shape_categories
    root = RngStream(cfg.seed)

    def train_fn(bank: Optional[InstanceBank], acfg: AugmentConfig,
                 rng: RngStream) -> Tuple[ToyModel, TrainReport]:
        if bank is None:
            return train(list(train_corpus), categories, cfg.model,
                         rng.child("plain"), eval_corpus=eval_corpus)
        stream = augmented_epochs(train_corpus, bank, acfg, cfg.model,
                                  rng.child("stream"))
        return train(stream, categories, cfg.model, rng.child("fit"),
                     eval_corpus=eval_corpus)

    def mask_source(model: ToyModel, corpus: Sequence[Sample]) -> List[Raster]:
        def one(sample: Sample) -> Raster:
            return predict_mask(model, sample.image, sample.labels,
                                cfg.model.cam_tau)
        if jobs <= 1:
            return [one(s) for s in corpus]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, corpus))

    try:
        artifacts = run_rounds(train_corpus, mask_source, cfg.rounds,
                               train_fn, cfg.harvest, cfg.augment,
                               root.child("rounds"))
    except PipelineError as exc:
        raise type(exc)(f"training rounds: {exc}") from exc

    round_rows = []
    metrics: List[ArmMetrics] = []
    for art in artifacts:
        try:
            arm = evaluate(art.model, eval_corpus, cfg.model.cam_tau, jobs)
        except PipelineError as exc:
            raise type(exc)(
                f"evaluating round {art.round_index}: {exc}") from exc
        metrics.append(arm)
        row = {
            "round": art.round_index,
            "metrics": arm.to_dict(),
            "bank_size": len(art.bank) if art.bank is not None else 0,
            "bank_rejections": (dict(art.bank.provenance.get("rejections", {}))
                                if art.bank is not None else {}),
            "train_skips": art.report.skips,
            "final_epoch_loss": art.report.final_loss,
            "final_ap": ({str(k): v
                          for k, v in sorted(art.report.final_ap.items())}
                         if art.report.final_ap else {}),
        }
        round_rows.append(row)

    report = ExperimentReport(
        seed=cfg.seed,
        rounds=round_rows,
        baseline=metrics[0],
        final=metrics[-1],
        config_echo=config_to_dict(cfg),
    )
    return report, artifacts


def run_sweep(cfg: ExperimentConfig, overrides: Sequence[Tuple[str, Dict]],
              jobs: int = 1) -> List[Tuple[str, ExperimentReport]]:
    """Run one experiment per named override set, all from the same seed.

    ``overrides`` is a sequence of (name, {dotted.path: value}) pairs;
    it must be non-empty. Overrides touching only augmentation knobs
    leave the baseline arm untouched, so reports stay comparable.
    """
    overrides = list(overrides)
    if not overrides:
        raise ValueError("run_sweep needs at least one override set")
    results = []
    for name, mapping in overrides:
        varied = apply_overrides(cfg, dict(mapping))
        results.append((str(name), run_experiment(varied, jobs)[0]))
    return results


def sweep_table(results: Sequence[Tuple[str, ExperimentReport]]) -> str:
    """Delimited comparison table (CSV) across sweep points."""
    lines = ["name,baseline_miou,final_miou,miou_gain,"
             "baseline_bg_activation,final_bg_activation"]
    for name, report in results:
        lines.append(
            f"{name},{report.baseline.mean_iou:.6f},"
            f"{report.final.mean_iou:.6f},{report.miou_gain:.6f},"
            f"{report.baseline.bg_activation:.6f},"
            f"{report.final.bg_activation:.6f}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-JSON echo of the config (tuples become lists)."""
    def convert(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: convert(getattr(value, f.name))
                    for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        if isinstance(value, dict):
            return {str(k): convert(v) for k, v in value.items()}
        return value
    return convert(cfg)
