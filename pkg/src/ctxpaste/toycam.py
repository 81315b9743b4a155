"""Tiny multi-label classifier with class activation maps.

The model scores every pixel with a linear map over handcrafted
features; the image logit for a class is the spatial mean of its score
map (global average pooling). Because pooling commutes with the linear
map, training reduces to logistic regression on per-image mean feature
vectors, which keeps full-corpus training fast while the per-pixel score
maps remain available as activation maps.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .augmentor import PairwiseBatch
from .core import LabelSet, Raster, RngStream, Sample
from .errors import ShapeError, TrainingDivergedError

FEATURE_NAMES = ("red", "green", "blue", "gray", "grad_x", "grad_y",
                 "local_mean", "local_var")
FEATURE_DIM = len(FEATURE_NAMES)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-pixel feature stack, shape (height, width, FEATURE_DIM)."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != FEATURE_DIM:
            raise ShapeError(
                f"feature map must be (h, w, {FEATURE_DIM})")
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def mean_vector(self) -> np.ndarray:
        return self.data.mean(axis=(0, 1))


def _box3(arr: np.ndarray) -> np.ndarray:
    """3x3 box filter with edge clamping."""
    p = np.pad(arr, 1, mode="edge")
    acc = np.zeros_like(arr)
    for dy in range(3):
        for dx in range(3):
            acc += p[dy:dy + arr.shape[0], dx:dx + arr.shape[1]]
    return acc / 9.0


def extract_features(image: Raster) -> FeatureMap:
    """Handcrafted per-pixel features: color, gray, |gradients|,
    3x3 local mean and variance. Gradients are central differences with
    edge clamping, so constant images give exactly zero."""
    if image.is_category or image.channels != 3:
        raise ShapeError("features are extracted from 3-channel color rasters")
    rgb = image.data
    gray = rgb.mean(axis=2)
    p = np.pad(gray, 1, mode="edge")
    grad_x = np.abs(p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    grad_y = np.abs(p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    mean3 = _box3(gray)
    var3 = np.maximum(_box3(gray * gray) - mean3 * mean3, 0.0)
    stack = np.dstack([rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2],
                       gray, grad_x, grad_y, mean3, var3])
    return FeatureMap(stack)


@dataclass(frozen=True, eq=False)
class ToyModel:
    """Linear per-pixel scorer: weights (C, K), bias (C,)."""

    weights: np.ndarray
    bias: np.ndarray
    step_size: float = 0.1
    epochs: int = 30

    def __post_init__(self):
        # Copy unconditionally: freezing a caller-owned array in place
        # would be a surprising side effect.
        w = np.array(self.weights, dtype=np.float64, order="C")
        b = np.array(self.bias, dtype=np.float64, order="C")
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ShapeError("weights must be (C, K) and bias (C,)")
        if self.step_size < 0.0 or self.epochs < 0:
            raise ValueError("step_size and epochs must be non-negative")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def init(cls, category_count: int, step_size: float = 0.1,
             epochs: int = 30) -> "ToyModel":
        """Zero-initialized model; training is then fully deterministic."""
        if category_count < 1:
            raise ValueError("category_count must be positive")
        return cls(np.zeros((category_count, FEATURE_DIM)),
                   np.zeros(category_count), step_size, epochs)

    @property
    def category_count(self) -> int:
        return self.weights.shape[0]


def forward(model: ToyModel, features: FeatureMap
            ) -> Tuple[np.ndarray, np.ndarray]:
    """Score maps (h, w, C) and pooled logits (C,).

    Each logit is the arithmetic mean of its score map; score values are
    unbounded reals, so the maps are returned as a plain array rather
    than clamped rasters.
    """
    if features.data.shape[2] != model.weights.shape[1]:
        raise ShapeError("feature dimension does not match the model")
    maps = features.data @ model.weights.T + model.bias
    logits = maps.mean(axis=(0, 1))
    return maps, logits


def _membership(labels: LabelSet, category_count: int) -> np.ndarray:
    y = np.zeros(category_count)
    for c in labels:
        if not 1 <= c <= category_count:
            raise ValueError(f"label {c} outside 1..{category_count}")
        y[c - 1] = 1.0
    return y


def _bce_from_logits(logits: np.ndarray, y: np.ndarray) -> float:
    # Stable binary cross-entropy summed over classes.
    return float(np.sum(np.maximum(logits, 0.0) - logits * y
                        + np.log1p(np.exp(-np.abs(logits)))))


def loss_and_grad(model: ToyModel, features: FeatureMap, labels: LabelSet
                  ) -> Tuple[float, Tuple[np.ndarray, np.ndarray]]:
    """Multi-label BCE of the pooled logits, with analytic gradients.

    Pooling commutes with the linear scorer, so logit_c = w_c . fbar + b_c
    where fbar is the image's mean feature vector; gradients follow the
    usual logistic form (sigmoid(logit) - y) outer fbar.
    """
    fbar = features.mean_vector()
    logits = model.weights @ fbar + model.bias
    y = _membership(labels, model.category_count)
    loss = _bce_from_logits(logits, y)
    delta = _sigmoid(logits) - y
    return loss, (np.outer(delta, fbar), delta.copy())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class ModelConfig:
    """Training hyperparameters and the CAM threshold.

    The default step size is larger than ToyModel's field default: the
    stock experiment needs training to converge within its fixed epoch
    budget for the context-confound contrast to be visible.
    """

    step_size: float = 0.5
    epochs: int = 30
    batch_size: int = 16
    cam_tau: float = 0.5

    def __post_init__(self):
        if self.step_size < 0.0:
            raise ValueError("step_size must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 <= self.cam_tau <= 1.0:
            raise ValueError("cam_tau must lie in [0, 1]")


@dataclass
class TrainReport:
    """Per-epoch mean losses plus evaluation extras."""

    epoch_losses: List[float]
    final_ap: Optional[Dict[int, float]] = None
    skips: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


# Mean feature vectors are cached per Sample identity: augmentation
# streams create fresh Sample objects each epoch, but the plain corpus
# (and the originals inside pairwise batches) repeat across epochs.
_MEAN_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _mean_features(sample: Sample) -> np.ndarray:
    cached = _MEAN_CACHE.get(sample)
    if cached is None:
        cached = extract_features(sample.image).mean_vector()
        _MEAN_CACHE[sample] = cached
    return cached


def _batch_samples(batch) -> Tuple[List[Sample], int]:
    if isinstance(batch, PairwiseBatch):
        return batch.samples, batch.skips
    return list(batch), 0


def _plain_epochs(corpus: Sequence[Sample], epochs: int, batch_size: int,
                  rng: RngStream):
    """Shuffled fixed-size batches over the corpus, one permutation per
    epoch, all randomness from (rng, epoch index)."""
    for epoch in range(epochs):
        order = rng.child("epoch", epoch).generator().permutation(len(corpus))
        yield ([corpus[int(i)] for i in order[start:start + batch_size]]
               for start in range(0, len(order), batch_size))


def train(data, category_count: int, cfg, rng: RngStream,
          eval_corpus: Optional[Sequence[Sample]] = None
          ) -> Tuple[ToyModel, TrainReport]:
    """Gradient descent on equally weighted batch-mean BCE.

    ``data`` is either a corpus (sequence of Samples, shuffled and
    batched internally with ``rng``) or an iterable of epochs, each an
    iterable of batches (PairwiseBatch or sample sequence) built by the
    caller, which then owns the randomness. ``cfg`` provides step_size,
    epochs, and batch_size. Reports per-epoch mean loss and, when
    ``eval_corpus`` is given, per-class average precision on it.
    """
    if isinstance(data, (list, tuple)):
        if not data:
            raise ValueError("training corpus is empty")
        epochs_iter = _plain_epochs(data, cfg.epochs, cfg.batch_size, rng)
    else:
        epochs_iter = data

    w = np.zeros((category_count, FEATURE_DIM))
    b = np.zeros(category_count)
    epoch_losses: List[float] = []
    skips = 0
    for epoch_batches in epochs_iter:
        losses = []
        for batch in epoch_batches:
            samples, batch_skips = _batch_samples(batch)
            skips += batch_skips
            if not samples:
                continue
            feats = np.stack([_mean_features(s) for s in samples])
            ys = np.stack([_membership(s.labels, category_count)
                           for s in samples])
            logits = feats @ w.T + b
            loss = float(np.mean(np.sum(
                np.maximum(logits, 0.0) - logits * ys
                + np.log1p(np.exp(-np.abs(logits))), axis=1)))
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} at epoch {len(epoch_losses)}")
            delta = (_sigmoid(logits) - ys) / len(samples)
            w = w - cfg.step_size * (delta.T @ feats)
            b = b - cfg.step_size * delta.sum(axis=0)
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))

    model = ToyModel(w, b, cfg.step_size, cfg.epochs)
    final_ap = None
    if eval_corpus is not None:
        final_ap = average_precision(model, eval_corpus)
    return model, TrainReport(epoch_losses, final_ap, skips)


def average_precision(model: ToyModel,
                      corpus: Sequence[Sample]) -> Dict[int, float]:
    """Per-class AP of the pooled logits over the corpus."""
    scores = np.stack([model.weights @ _mean_features(s) + model.bias
                       for s in corpus])
    ys = np.stack([_membership(s.labels, model.category_count)
                   for s in corpus])
    out: Dict[int, float] = {}
    for c in range(model.category_count):
        y = ys[:, c]
        positives = int(y.sum())
        if positives == 0:
            continue
        order = np.argsort(-scores[:, c], kind="stable")
        hits = y[order]
        ranks = np.arange(1, len(hits) + 1)
        precision = np.cumsum(hits) / ranks
        out[c + 1] = float((precision * hits).sum() / positives)
    return out


def cam(model: ToyModel, image: Raster, category: int) -> Raster:
    """Min-max normalized activation map for one category, in [0, 1].

    A constant score map normalizes to all zeros.
    """
    if not 1 <= category <= model.category_count:
        raise ValueError(f"category {category} outside model range")
    maps, _ = forward(model, extract_features(image))
    s = maps[:, :, category - 1]
    lo = float(s.min())
    hi = float(s.max())
    if hi == lo:
        return Raster(np.zeros(s.shape))
    return Raster((s - lo) / (hi - lo))


def cam_to_mask(heatmap: Raster, tau: float, category: int) -> Raster:
    """Threshold a heatmap: pixels with value >= tau take the category."""
    if heatmap.is_category or heatmap.channels != 1:
        raise ShapeError("heatmap must be a 1-channel float raster")
    if category < 1:
        raise ValueError("category must be positive")
    sel = heatmap.channel(0) >= tau
    return Raster(np.where(sel, np.int32(category), np.int32(0)))


def predict_mask(model: ToyModel, image: Raster, labels: Iterable[int],
                 tau: float) -> Raster:
    """Combine per-label CAMs into one mask.

    Each pixel takes the label whose normalized heat is highest, if that
    heat reaches ``tau``; otherwise background. Ties go to the smaller
    category index.
    """
    cats = sorted({int(c) for c in labels})
    if not cats:
        return Raster(np.zeros((image.height, image.width), dtype=np.int32))
    heats = np.stack([cam(model, image, c).channel(0) for c in cats])
    best = heats.argmax(axis=0)
    best_heat = np.take_along_axis(heats, best[None], axis=0)[0]
    cats_arr = np.asarray(cats, dtype=np.int32)
    mask = np.where(best_heat >= tau, cats_arr[best], np.int32(0))
    return Raster(mask)


@dataclass(frozen=True)
class MiouResult:
    """Mean IoU and the per-class breakdown behind it."""

    mean_iou: float
    per_class: Mapping = None

    def __post_init__(self):
        object.__setattr__(self, "per_class", dict(self.per_class or {}))


def miou(pred: Raster, gt: Raster, categories: Iterable[int]) -> MiouResult:
    """IoU averaged over background plus ``categories``.

    Classes absent from both rasters are excluded from the mean; a class
    present in exactly one contributes 0.
    """
    if not (pred.is_category and gt.is_category):
        raise ShapeError("miou expects category rasters")
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ShapeError("pred and gt dimensions must match")
    inter, union = iou_accumulate(pred, gt, categories)
    return miou_from_counts(inter, union)


def iou_accumulate(pred: Raster, gt: Raster, categories: Iterable[int],
                   inter: Optional[Dict[int, int]] = None,
                   union: Optional[Dict[int, int]] = None):
    """Add one raster pair's intersection/union pixel counts per class."""
    inter = {} if inter is None else inter
    union = {} if union is None else union
    p = pred.channel(0)
    g = gt.channel(0)
    for c in sorted({0} | {int(c) for c in categories}):
        pc = p == c
        gc = g == c
        inter[c] = inter.get(c, 0) + int((pc & gc).sum())
        union[c] = union.get(c, 0) + int((pc | gc).sum())
    return inter, union


def miou_from_counts(inter: Dict[int, int],
                     union: Dict[int, int]) -> MiouResult:
    per_class = {c: inter[c] / union[c] for c in sorted(union)
                 if union[c] > 0}
    if not per_class:
        raise ValueError("no class present in either raster")
    mean = sum(per_class.values()) / len(per_class)
    return MiouResult(mean, per_class)
