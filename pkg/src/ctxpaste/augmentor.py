"""Online augmentation: disjoint instance draws and pairwise batches.

Every batch pairs each selected sample with an augmented twin built by
pasting bank instances whose categories the sample does not already
contain. Ground-truth masks are kept consistent: pasted pixels take the
pasted category, and a placement that would erase the last pixels of an
existing category is retried with fresh randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .blender import BlendConfig, PlacementRecord, _blend_once
from .core import LabelSet, ObjectInstance, Raster, RngStream, Sample
from .errors import (EmptyBankError, ExhaustionError,
                     NoDisjointCategoryError, ResampleExhaustedError)
from .harvester import InstanceBank, harvest


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for building augmented twins."""

    objects_per_image: int = 1
    allow_same_category: bool = False
    pairwise: bool = True
    max_resample_attempts: int = 100
    blend: BlendConfig = field(default_factory=BlendConfig)

    def __post_init__(self):
        if self.objects_per_image < 1:
            raise ValueError("objects_per_image must be positive")
        if self.max_resample_attempts < 1:
            raise ValueError("max_resample_attempts must be positive")


def sample_disjoint_instance(bank: InstanceBank, labels: LabelSet,
                             cfg: AugmentConfig,
                             rng: RngStream) -> ObjectInstance:
    """Draw one instance uniformly; resample while its category is taken.

    With ``allow_same_category`` the first draw is returned untouched.
    Raises NoDisjointCategoryError immediately when every bank category
    already appears in ``labels`` (no draw can ever succeed), and
    ResampleExhaustedError when the attempt budget runs out.
    """
    if len(bank) == 0:
        raise ValueError("bank must be non-empty")
    g = rng.generator()
    n = len(bank.instances)
    if cfg.allow_same_category:
        return bank.instances[int(g.integers(n))]
    if all(c in labels for c in bank.by_category):
        raise NoDisjointCategoryError(
            f"all bank categories {list(bank.categories)} already appear "
            f"in labels {sorted(labels)}")
    for _ in range(cfg.max_resample_attempts):
        inst = bank.instances[int(g.integers(n))]
        if inst.category not in labels:
            return inst
    raise ResampleExhaustedError(
        f"no disjoint category after {cfg.max_resample_attempts} draws")


def _support_at(support: np.ndarray, record: PlacementRecord,
                height: int, width: int) -> np.ndarray:
    full = np.zeros((height, width), dtype=bool)
    full[record.paste_y:record.paste_y + record.paste_h,
         record.paste_x:record.paste_x + record.paste_w] = support
    return full


def augment_sample(sample: Sample, bank: InstanceBank, cfg: AugmentConfig,
                   rng: RngStream) -> Tuple[Sample, List[PlacementRecord]]:
    """Paste ``objects_per_image`` disjoint instances onto a copy.

    Labels become the union of the original and pasted categories. When
    the sample carries a gt mask, pasted support pixels are overwritten
    with the pasted category, and any placement that would fully occlude
    an existing category is redrawn (instance and placement together)
    until the attempt budget runs out.
    """
    current = sample
    records: List[PlacementRecord] = []
    for slot in range(cfg.objects_per_image):
        placed = False
        for attempt in range(cfg.max_resample_attempts):
            pick_rng = rng.child("pick", slot, attempt)
            blend_rng = rng.child("blend", slot, attempt)
            inst = sample_disjoint_instance(bank, current.labels, cfg,
                                            pick_rng)
            image, record, support = _blend_once(current, inst,
                                                 cfg.blend, blend_rng)
            if current.gt_mask is None:
                current = Sample(image,
                                 LabelSet(current.labels | {inst.category}))
                records.append(record)
                placed = True
                break
            gt = current.gt_mask.channel(0).copy()
            gt[_support_at(support, record, gt.shape[0], gt.shape[1])] = \
                inst.category
            survived = all((gt == c).any() for c in current.labels)
            if survived:
                current = Sample(image,
                                 LabelSet(current.labels | {inst.category}),
                                 Raster(gt))
                records.append(record)
                placed = True
                break
        if not placed:
            raise ResampleExhaustedError(
                f"paste {slot}: every placement in "
                f"{cfg.max_resample_attempts} attempts fully occluded an "
                f"existing category")
    return current, records


@dataclass(frozen=True)
class PairwiseBatch:
    """Ordered batch entries; each is (sample, placement records).

    In pairwise mode entries come in adjacent (original, augmented)
    pairs, so the batch holds 2N samples for N selections. ``skips``
    counts selections whose augmentation was abandoned (the original is
    then paired with itself).
    """

    entries: Tuple[Tuple[Sample, Tuple[PlacementRecord, ...]], ...]
    pairwise: bool = True
    skips: int = 0

    def __post_init__(self):
        if self.pairwise:
            if len(self.entries) % 2 != 0:
                raise ValueError("pairwise batches must have even length")
            for i in range(0, len(self.entries), 2):
                orig, aug = self.entries[i][0], self.entries[i + 1][0]
                if not set(aug.labels) >= set(orig.labels):
                    raise ValueError(
                        f"pair {i // 2}: augmented labels must contain "
                        f"the original labels")

    @property
    def samples(self) -> List[Sample]:
        return [s for s, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def make_batch(corpus: Sequence[Sample], bank: InstanceBank, n: int,
               cfg: AugmentConfig, rng: RngStream) -> PairwiseBatch:
    """Select ``n`` distinct samples and emit their (original, augmented)
    pairs in selection order; non-pairwise mode emits augmented twins only.

    A selection whose augmentation exhausts its retry budget is kept as
    an identity pair (or passthrough) and counted in ``skips``.
    """
    if n < 1:
        raise ValueError("batch selection count must be positive")
    if n > len(corpus):
        raise ValueError(f"cannot select {n} from a corpus of {len(corpus)}")
    g = rng.child("select").generator()
    chosen = g.choice(len(corpus), size=n, replace=False)
    entries = []
    skips = 0
    for slot, idx in enumerate(chosen):
        original = corpus[int(idx)]
        try:
            augmented, records = augment_sample(original, bank, cfg,
                                                rng.child("aug", slot))
        except ExhaustionError:
            augmented, records = original, []
            skips += 1
        if cfg.pairwise:
            entries.append((original, ()))
            entries.append((augmented, tuple(records)))
        else:
            entries.append((augmented, tuple(records)))
    return PairwiseBatch(tuple(entries), pairwise=cfg.pairwise, skips=skips)


@dataclass(frozen=True, eq=False)
class RoundArtifact:
    """Output of one self-training round."""

    round_index: int
    model: object
    bank: object
    report: object


def run_rounds(corpus: Sequence[Sample], mask_source, rounds: int,
               train_fn, crit, cfg: AugmentConfig,
               rng: RngStream) -> List[RoundArtifact]:
    """Iterate train -> predict masks -> harvest -> train with augmentation.

    Round 0 trains plain (no bank, no augmentation). Each later round
    harvests a fresh bank from the previous round's model via
    ``mask_source(model, corpus)`` and trains with augmentation from it.

    ``train_fn(bank_or_none, cfg, rng)`` must return (model, report).
    Artifacts are returned for rounds 0..rounds; a longer run reproduces
    a shorter run's artifacts exactly, since round r only consumes the
    substream keyed by r.
    """
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    model, report = train_fn(None, cfg, rng.child("train", 0))
    artifacts = [RoundArtifact(0, model, None, report)]
    for r in range(1, rounds + 1):
        preds = mask_source(artifacts[-1].model, corpus)
        try:
            bank = harvest(list(zip(corpus, preds)), crit,
                           corpus_id=f"round{r}")
        except EmptyBankError as exc:
            raise EmptyBankError(f"round {r}: {exc}") from exc
        model, report = train_fn(bank, cfg, rng.child("train", r))
        artifacts.append(RoundArtifact(r, model, bank, report))
    return artifacts
