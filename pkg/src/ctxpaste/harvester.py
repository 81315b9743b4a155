"""Instance harvesting: mine reliable object cutouts from predicted masks.

A (sample, predicted mask) pair yields an instance only when the image
is simple enough to trust the mask: a single image-level label, and a
predicted object area that is neither a sliver nor most of the frame.
Everything else is rejected with a reason so harvest runs can report
why the bank looks the way it does.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import LabelSet, ObjectInstance, Raster, crop, tight_bbox
from .errors import EmptyBankError, EmptyObjectError, ShapeError

REJECT_MULTI_CLASS = "multi_class"
REJECT_RATIO_TOO_SMALL = "ratio_too_small"
REJECT_RATIO_TOO_LARGE = "ratio_too_large"
REJECT_LABEL_ABSENT = "label_absent_in_mask"

REJECT_REASONS = (
    REJECT_MULTI_CLASS,
    REJECT_RATIO_TOO_SMALL,
    REJECT_RATIO_TOO_LARGE,
    REJECT_LABEL_ABSENT,
)


@dataclass(frozen=True)
class HarvestCriteria:
    """Acceptance window for predicted object area.

    An instance qualifies when eps1 < (object pixels / total pixels) < eps2,
    both bounds strict.
    """

    eps1: float = 0.1
    eps2: float = 0.7
    require_single_class: bool = True

    def __post_init__(self):
        if not 0.0 <= self.eps1 < self.eps2 <= 1.0:
            raise ValueError("criteria must satisfy 0 <= eps1 < eps2 <= 1")


@dataclass(frozen=True)
class HarvestDecision:
    """Outcome of qualifies(): an accepted category or a rejection reason."""

    category: Optional[int] = None
    reason: Optional[str] = None

    def __post_init__(self):
        if (self.category is None) == (self.reason is None):
            raise ValueError("decision needs exactly one of category/reason")

    @property
    def accepted(self) -> bool:
        return self.category is not None

    @classmethod
    def accept(cls, category: int) -> "HarvestDecision":
        return cls(category=int(category))

    @classmethod
    def reject(cls, reason: str) -> "HarvestDecision":
        if reason not in REJECT_REASONS:
            raise ValueError(f"unknown rejection reason {reason!r}")
        return cls(reason=reason)


def _area_decision(arr: np.ndarray, category: int,
                   crit: HarvestCriteria) -> HarvestDecision:
    m = int((arr == category).sum())
    if m == 0:
        if (arr != 0).any():
            return HarvestDecision.reject(REJECT_LABEL_ABSENT)
        return HarvestDecision.reject(REJECT_RATIO_TOO_SMALL)
    ratio = m / arr.size
    if ratio <= crit.eps1:
        return HarvestDecision.reject(REJECT_RATIO_TOO_SMALL)
    if ratio >= crit.eps2:
        return HarvestDecision.reject(REJECT_RATIO_TOO_LARGE)
    return HarvestDecision.accept(category)


def qualifies(labels: LabelSet, pred_mask: Raster,
              crit: HarvestCriteria) -> HarvestDecision:
    """Decide whether (labels, predicted mask) yields a usable instance.

    With ``require_single_class`` the label set must be a singleton.
    Otherwise labels are tried in ascending order and the first one whose
    predicted area falls in the window wins; if none does, the reported
    reason is the smallest label's.
    """
    if not pred_mask.is_category:
        raise ShapeError("pred_mask must be a category raster")
    if len(labels) == 0:
        return HarvestDecision.reject(REJECT_LABEL_ABSENT)
    if crit.require_single_class and len(labels) != 1:
        return HarvestDecision.reject(REJECT_MULTI_CLASS)
    arr = pred_mask.channel(0)
    first_reason = None
    for cat in sorted(labels):
        decision = _area_decision(arr, cat, crit)
        if decision.accepted:
            return decision
        if first_reason is None:
            first_reason = decision.reason
    return HarvestDecision.reject(first_reason)


def extract_instance(image: Raster, pred_mask: Raster, category: int,
                     source_id: str = "") -> ObjectInstance:
    """Cut the tight bounding box of ``category`` pixels out of the image.

    The alpha matte is the binarized predicted mask restricted to that box.
    """
    if (image.width, image.height) != (pred_mask.width, pred_mask.height):
        raise ShapeError("image and pred_mask dimensions must match")
    box = tight_bbox(pred_mask, lambda a: a == category)
    if box is None:
        raise EmptyObjectError(
            f"category {category} has no pixels in the predicted mask")
    x0, y0, w, h = box
    cutout = crop(image, x0, y0, w, h)
    alpha = (crop(pred_mask, x0, y0, w, h).channel(0) == category)
    return ObjectInstance(cutout, Raster(alpha.astype(np.float64)),
                          int(category), source_id)


@dataclass(frozen=True)
class InstanceBank:
    """Immutable collection of harvested instances, indexed by category."""

    instances: Tuple[ObjectInstance, ...]
    by_category: Mapping[int, Tuple[int, ...]]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        grouped = _group_by_category(self.instances)
        if dict(self.by_category) != grouped:
            raise ValueError("by_category does not match the instance list")

    @classmethod
    def build(cls, instances: Sequence[ObjectInstance],
              provenance: Optional[Mapping[str, object]] = None
              ) -> "InstanceBank":
        instances = tuple(instances)
        return cls(instances, _group_by_category(instances),
                   dict(provenance or {}))

    @property
    def categories(self) -> Tuple[int, ...]:
        return tuple(sorted(self.by_category))

    def __len__(self) -> int:
        return len(self.instances)


def _group_by_category(instances: Sequence[ObjectInstance]
                       ) -> Dict[int, Tuple[int, ...]]:
    grouped: Dict[int, list] = {}
    for i, inst in enumerate(instances):
        grouped.setdefault(inst.category, []).append(i)
    return {c: tuple(ix) for c, ix in sorted(grouped.items())}


def harvest(pairs: Iterable[Tuple], crit: HarvestCriteria,
            ids: Optional[Sequence[str]] = None,
            corpus_id: str = "") -> InstanceBank:
    """Filter (sample, predicted mask) pairs into an InstanceBank.

    ``ids`` optionally names each pair for provenance; the default is the
    pair's position. Raises EmptyBankError when nothing qualifies, with
    the per-reason rejection counts in the message.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("harvest needs a non-empty corpus")
    if ids is not None and len(ids) != len(pairs):
        raise ValueError("ids must align one-to-one with the corpus")
    rejections: Counter = Counter()
    instances = []
    for i, (sample, pred_mask) in enumerate(pairs):
        decision = qualifies(sample.labels, pred_mask, crit)
        if decision.accepted:
            source_id = ids[i] if ids is not None else str(i)
            instances.append(extract_instance(
                sample.image, pred_mask, decision.category, source_id))
        else:
            rejections[decision.reason] += 1
    provenance = {
        "corpus_id": corpus_id,
        "corpus_size": len(pairs),
        "criteria": {"eps1": crit.eps1, "eps2": crit.eps2,
                     "require_single_class": crit.require_single_class},
        "accepted": len(instances),
        "rejections": {k: rejections[k] for k in sorted(rejections)},
    }
    if not instances:
        raise EmptyBankError(
            f"no instances qualified out of {len(pairs)} pairs; "
            f"rejections: {dict(sorted(rejections.items()))}")
    return InstanceBank.build(instances, provenance)
