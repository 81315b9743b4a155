"""Core pixel containers, label sets, and the seeded RNG contract.

All randomness in the package flows through RngStream, a counter-based
stream descriptor: (seed, stream_id) fully determines the draw sequence,
and child streams are derived by hashing stable keys, never by drawing
from the parent. This makes every pipeline stage replayable and makes
parallel execution order-independent.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import BoundsError, ShapeError

_MASK64 = (1 << 64) - 1


def _encode_key(key: int | str) -> bytes:
    # Type-tagged so child(1) and child("1") land on different streams.
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        return b"i" + str(int(key)).encode("ascii") + b";"
    if isinstance(key, str):
        return b"s" + key.encode("utf-8") + b";"
    raise TypeError(f"stream keys must be int or str, got {type(key).__name__}")


def derive_seed(seed: int, *keys: int | str) -> int:
    """Map (seed, keys...) to a stable 64-bit integer via blake2b."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed) & _MASK64).encode("ascii"))
    for key in keys:
        h.update(_encode_key(key))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Descriptor for one independent random stream.

    ``generator()`` always returns a fresh generator positioned at the
    start of the stream, so repeated calls replay identical draws.
    """

    seed: int
    stream_id: int = 0

    def child(self, *keys: int | str) -> "RngStream":
        """Derive a named substream; same keys always give the same child."""
        if not keys:
            raise ValueError("child() requires at least one key")
        h = hashlib.blake2b(digest_size=8)
        h.update(str(self.stream_id & _MASK64).encode("ascii"))
        for key in keys:
            h.update(_encode_key(key))
        return RngStream(self.seed, int.from_bytes(h.digest(), "little"))

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


class Raster:
    """Immutable 2-D pixel grid stored as (height, width, channels).

    Two flavours exist and are distinguished by dtype:

    * float rasters (color images, alpha mattes, heatmaps) hold float64
      values in [0, 1], with 1 or 3 channels;
    * category rasters (segmentation masks) hold non-negative int32
      indices in a single channel, 0 meaning background.

    The backing array is copied on construction and marked read-only.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ShapeError(f"raster needs 2 or 3 dims, got {arr.ndim}")
        if arr.shape[2] not in (1, 3):
            raise ShapeError(f"raster needs 1 or 3 channels, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"raster needs positive extent, got {arr.shape[:2]}")
        if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
            arr = arr.astype(np.int32)
            if arr.shape[2] != 1:
                raise ShapeError("category rasters are single-channel")
            if (arr < 0).any():
                raise ValueError("category indices must be non-negative")
        elif np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
            if not np.isfinite(arr).all():
                raise ValueError("raster values must be finite")
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError("float raster values must lie in [0, 1]")
        else:
            raise TypeError(f"unsupported raster dtype {arr.dtype}")
        arr.flags.writeable = False
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def is_category(self) -> bool:
        return self.data.dtype == np.int32

    def channel(self, i: int) -> np.ndarray:
        """Read-only 2-D view of channel ``i``."""
        return self.data[:, :, i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Raster):
            return NotImplemented
        return (self.data.dtype == other.data.dtype
                and self.data.shape == other.data.shape
                and bool(np.array_equal(self.data, other.data)))

    def __hash__(self):
        return hash((self.data.shape, self.data.dtype.str,
                     self.data.tobytes()))

    def __repr__(self) -> str:
        kind = "category" if self.is_category else "float"
        return (f"Raster({kind}, {self.width}x{self.height}"
                f"x{self.channels})")


class LabelSet(frozenset):
    """Image-level category labels. Background (0) is never a label."""

    def __new__(cls, categories: Iterable[int] = ()):
        cats = frozenset(int(c) for c in categories)
        if any(c < 1 for c in cats):
            raise ValueError("labels must be positive category indices")
        return super().__new__(cls, cats)

    def __repr__(self) -> str:
        return f"LabelSet({sorted(self)})"


@dataclass(frozen=True, eq=False)
class Sample:
    """One image with its image-level labels and optional dense gt.

    Invariant: when ``gt_mask`` is present, the set of non-background
    categories in the mask equals ``labels`` exactly.
    """

    image: Raster
    labels: LabelSet
    gt_mask: Optional[Raster] = None

    def __post_init__(self):
        if self.image.is_category or self.image.channels != 3:
            raise ShapeError("sample image must be a 3-channel float raster")
        if not isinstance(self.labels, LabelSet):
            object.__setattr__(self, "labels", LabelSet(self.labels))
        if self.gt_mask is not None:
            gt = self.gt_mask
            if not gt.is_category:
                raise ShapeError("gt_mask must be a category raster")
            if (gt.width, gt.height) != (self.image.width, self.image.height):
                raise ShapeError("gt_mask dimensions must match the image")
            present = {int(c) for c in np.unique(gt.channel(0))} - {0}
            if present != set(self.labels):
                raise ValueError(
                    f"gt categories {sorted(present)} do not match "
                    f"labels {sorted(self.labels)}")


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    """A cutout object: color patch plus alpha matte, tight-cropped.

    Invariants: cutout and alpha share dimensions, the support
    (alpha > 0.5) is non-empty, and the support's bounding box spans the
    whole raster (no dead border rows or columns).
    """

    cutout: Raster
    alpha: Raster
    category: int
    source_id: str = ""

    def __post_init__(self):
        if self.cutout.is_category or self.cutout.channels != 3:
            raise ShapeError("cutout must be a 3-channel float raster")
        if self.alpha.is_category or self.alpha.channels != 1:
            raise ShapeError("alpha must be a 1-channel float raster")
        if (self.cutout.width, self.cutout.height) != (self.alpha.width,
                                                       self.alpha.height):
            raise ShapeError("cutout and alpha dimensions must match")
        if int(self.category) < 1:
            raise ValueError("instance category must be positive")
        box = tight_bbox(self.alpha, lambda a: a > 0.5)
        if box is None:
            raise ValueError("instance support (alpha > 0.5) is empty")
        if box != (0, 0, self.alpha.width, self.alpha.height):
            raise ValueError("instance is not tight-cropped to its support")

    @property
    def width(self) -> int:
        return self.alpha.width

    @property
    def height(self) -> int:
        return self.alpha.height

    @property
    def support(self) -> np.ndarray:
        """Boolean (height, width) array of pixels with alpha > 0.5."""
        return self.alpha.channel(0) > 0.5

    @property
    def support_area(self) -> int:
        return int(self.support.sum())


def crop(raster: Raster, x0: int, y0: int, w: int, h: int) -> Raster:
    """Copy the axis-aligned rectangle [x0, x0+w) x [y0, y0+h)."""
    if w < 1 or h < 1:
        raise BoundsError(f"crop extent must be positive, got {w}x{h}")
    if x0 < 0 or y0 < 0 or x0 + w > raster.width or y0 + h > raster.height:
        raise BoundsError(
            f"crop [{x0}:{x0 + w}, {y0}:{y0 + h}] exceeds "
            f"{raster.width}x{raster.height} raster")
    return Raster(raster.data[y0:y0 + h, x0:x0 + w])


def tight_bbox(mask: Raster,
               predicate: Callable[[np.ndarray], np.ndarray]):
    """Smallest (x0, y0, w, h) covering pixels where predicate holds.

    ``predicate`` receives the first channel as a 2-D array and must
    return a boolean array of the same shape. Returns None when no pixel
    satisfies it.
    """
    sel = np.asarray(predicate(mask.channel(0)), dtype=bool)
    if sel.shape != (mask.height, mask.width):
        raise ShapeError("predicate must preserve the mask shape")
    ys, xs = np.nonzero(sel)
    if ys.size == 0:
        return None
    x0 = int(xs.min())
    y0 = int(ys.min())
    return (x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)
