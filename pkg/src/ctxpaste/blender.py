"""Geometric jitter and alpha compositing for copy-paste augmentation.

Transforms keep the ObjectInstance contract intact: after any rescale,
rotation, or alpha smoothing the result is re-binarized where needed and
tight-cropped to its support. Compositing is plain alpha blending, which
for a binary matte copies source pixels bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import ObjectInstance, Raster, RngStream, Sample, tight_bbox
from .errors import BoundsError, InstanceTooSmallError, PlacementError


@dataclass(frozen=True)
class BlendConfig:
    """Knobs for one randomized paste."""

    # Pasted support area as a fraction of the target image area.
    scale_area_range: tuple = (0.05, 0.30)
    rotation_enabled: bool = True
    rotation_range_deg: tuple = (-45.0, 45.0)
    # 0 disables boundary smoothing.
    gaussian_sigma: float = 0.0
    placement: str = "uniform_inside"

    def __post_init__(self):
        lo, hi = self.scale_area_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("scale_area_range must satisfy 0 < min <= max <= 1")
        rlo, rhi = self.rotation_range_deg
        if rlo > rhi:
            raise ValueError("rotation_range_deg must be ordered")
        if self.gaussian_sigma < 0.0:
            raise ValueError("gaussian_sigma must be non-negative")
        if self.placement != "uniform_inside":
            raise ValueError(f"unknown placement policy {self.placement!r}")


@dataclass(frozen=True)
class PlacementRecord:
    """Where and how one instance was pasted."""

    instance_source_id: str
    category: int
    scale_factor: float
    rotation_deg: float
    paste_x: int
    paste_y: int
    paste_w: int
    paste_h: int
    occluded_fraction: float


def _bilinear(arr: np.ndarray, xs: np.ndarray, ys: np.ndarray,
              fill: float = None) -> np.ndarray:
    """Sample ``arr`` (h, w[, c]) at float coords; bilinear weights.

    With ``fill`` None, coordinates are clamped to the array edges;
    otherwise out-of-range neighbors contribute ``fill``.
    """
    h, w = arr.shape[:2]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    def gather(yi, xi):
        if fill is None:
            yc = np.clip(yi, 0, h - 1)
            xc = np.clip(xi, 0, w - 1)
            return arr[yc, xc]
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        vals = arr[yc, xc]
        mask = inside if arr.ndim == 2 else inside[..., None]
        return np.where(mask, vals, fill)

    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = gather(y0, x0) * (1 - fx) + gather(y0, x0 + 1) * fx
    bot = gather(y0 + 1, x0) * (1 - fx) + gather(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


def _resize(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = arr.shape[:2]
    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (h / new_h) - 0.5
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (w / new_w) - 0.5
    return _bilinear(arr, xs[None, :].repeat(new_h, axis=0),
                     ys[:, None].repeat(new_w, axis=1))


def _tight_instance(cutout: np.ndarray, alpha: np.ndarray, category: int,
                    source_id: str) -> ObjectInstance:
    """Crop to the support bbox and build the instance."""
    a = Raster(alpha)
    box = tight_bbox(a, lambda v: v > 0.5)
    if box is None:
        raise InstanceTooSmallError("transform erased the instance support")
    x0, y0, w, h = box
    return ObjectInstance(
        Raster(cutout[y0:y0 + h, x0:x0 + w]),
        Raster(alpha[y0:y0 + h, x0:x0 + w]),
        category, source_id)


def rescale_instance(inst: ObjectInstance, factor: float) -> ObjectInstance:
    """Resize by ``factor`` with bilinear color and re-binarized alpha.

    Raises InstanceTooSmallError when the result would have no support.
    """
    if not math.isfinite(factor) or factor <= 0.0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    if factor == 1.0:
        return inst
    new_h = int(round(inst.height * factor))
    new_w = int(round(inst.width * factor))
    if new_h < 1 or new_w < 1:
        raise InstanceTooSmallError(
            f"factor {factor} collapses a {inst.width}x{inst.height} instance")
    cutout = np.clip(_resize(inst.cutout.data, new_h, new_w), 0.0, 1.0)
    alpha = _resize(inst.alpha.channel(0), new_h, new_w)
    alpha = (alpha >= 0.5).astype(np.float64)
    return _tight_instance(cutout, alpha, inst.category, inst.source_id)


def rotate_instance(inst: ObjectInstance, degrees: float) -> ObjectInstance:
    """Rotate by ``degrees`` onto an enlarged canvas; nothing is clipped.

    Color is sampled with edge clamping, alpha with zero fill and then
    re-binarized. In the degenerate case where resampling a few-pixel
    support leaves nothing above 0.5, the instance is returned unrotated.
    """
    if not math.isfinite(degrees):
        raise ValueError("rotation angle must be finite")
    if degrees % 360.0 == 0.0:
        return inst
    rad = math.radians(degrees)
    cos_t, sin_t = math.cos(rad), math.sin(rad)
    # Snap residuals so right-angle turns map pixels exactly instead of
    # sampling at half-pixel offsets (which would dilate the support).
    for exact in (-1.0, 0.0, 1.0):
        if abs(cos_t - exact) < 1e-12:
            cos_t = exact
        if abs(sin_t - exact) < 1e-12:
            sin_t = exact
    w, h = inst.width, inst.height
    new_w = int(math.ceil(abs(w * cos_t) + abs(h * sin_t)))
    new_h = int(math.ceil(abs(w * sin_t) + abs(h * cos_t)))
    cx_src, cy_src = (w - 1) / 2.0, (h - 1) / 2.0
    cx_dst, cy_dst = (new_w - 1) / 2.0, (new_h - 1) / 2.0

    yy, xx = np.mgrid[0:new_h, 0:new_w].astype(np.float64)
    dx = xx - cx_dst
    dy = yy - cy_dst
    # Inverse map: destination pixel -> source coordinates.
    xs = cos_t * dx + sin_t * dy + cx_src
    ys = -sin_t * dx + cos_t * dy + cy_src

    cutout = np.clip(_bilinear(inst.cutout.data, xs, ys), 0.0, 1.0)
    alpha = _bilinear(inst.alpha.channel(0), xs, ys, fill=0.0)
    alpha = (alpha >= 0.5).astype(np.float64)
    try:
        return _tight_instance(cutout, alpha, inst.category, inst.source_id)
    except InstanceTooSmallError:
        return inst


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    return taps / taps.sum()


def smooth_alpha(inst: ObjectInstance, sigma: float) -> ObjectInstance:
    """Soften the matte with a separable zero-padded Gaussian.

    Color pixels are never smoothed; only the alpha channel changes, and
    the result is re-cropped so the support stays tight. A sigma so large
    that nothing stays above 0.5 would violate the instance contract, so
    the input is returned as-is in that case. sigma = 0 is a no-op.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0.0:
        return inst
    taps = _gaussian_kernel(sigma)
    radius = len(taps) // 2
    a = inst.alpha.channel(0)
    padded = np.pad(a, ((0, 0), (radius, radius)))
    blurred = np.stack([np.convolve(row, taps, mode="valid")
                        for row in padded])
    padded = np.pad(blurred, ((radius, radius), (0, 0)))
    blurred = np.stack([np.convolve(col, taps, mode="valid")
                        for col in padded.T]).T
    blurred = np.clip(blurred, 0.0, 1.0)
    try:
        return _tight_instance(inst.cutout.data, blurred, inst.category,
                               inst.source_id)
    except InstanceTooSmallError:
        return inst


def paste(target: Raster, inst: ObjectInstance, x: int, y: int) -> Raster:
    """Alpha-composite the instance with its top-left corner at (x, y).

    out = alpha * cutout + (1 - alpha) * target, so binary-alpha pastes
    copy source pixels exactly. The instance must fit inside the target.
    """
    if target.is_category or target.channels != 3:
        raise BoundsError("paste target must be a 3-channel float raster")
    h, w = inst.height, inst.width
    if x < 0 or y < 0 or x + w > target.width or y + h > target.height:
        raise BoundsError(
            f"paste of {w}x{h} at ({x}, {y}) exceeds "
            f"{target.width}x{target.height} target")
    out = target.data.copy()
    a = inst.alpha.channel(0)[:, :, None]
    region = out[y:y + h, x:x + w]
    out[y:y + h, x:x + w] = a * inst.cutout.data + (1.0 - a) * region
    return Raster(out)


def _blend_once(target: Sample, inst: ObjectInstance, cfg: BlendConfig,
                rng: RngStream) -> Tuple[Raster, PlacementRecord, np.ndarray]:
    """One randomized paste; also returns the transformed support stencil."""
    g = rng.generator()
    img = target.image
    area = img.width * img.height

    frac = float(g.uniform(*cfg.scale_area_range))
    factor = math.sqrt(frac * area / inst.support_area)
    # Pre-clamp so the rescaled instance fits before rotation.
    factor = min(factor, img.width / inst.width, img.height / inst.height)
    try:
        work = rescale_instance(inst, factor)
    except InstanceTooSmallError as exc:
        raise PlacementError(f"instance vanished at factor {factor}") from exc
    total_factor = factor

    degrees = 0.0
    if cfg.rotation_enabled:
        degrees = float(g.uniform(*cfg.rotation_range_deg))
        work = rotate_instance(work, degrees)
    if cfg.gaussian_sigma > 0.0:
        work = smooth_alpha(work, cfg.gaussian_sigma)

    if work.width > img.width or work.height > img.height:
        fit = min(img.width / work.width, img.height / work.height)
        try:
            work = rescale_instance(work, fit)
        except InstanceTooSmallError as exc:
            raise PlacementError("instance cannot fit the target") from exc
        total_factor *= fit

    x = int(g.integers(0, img.width - work.width + 1))
    y = int(g.integers(0, img.height - work.height + 1))
    out = paste(img, work, x, y)

    support = work.support
    occluded = 0.0
    if target.gt_mask is not None:
        fg = target.gt_mask.channel(0) != 0
        fg_total = int(fg.sum())
        if fg_total:
            hidden = int((fg[y:y + work.height, x:x + work.width]
                          & support).sum())
            occluded = hidden / fg_total
    record = PlacementRecord(
        instance_source_id=inst.source_id,
        category=inst.category,
        scale_factor=total_factor,
        rotation_deg=degrees if cfg.rotation_enabled else 0.0,
        paste_x=x, paste_y=y,
        paste_w=work.width, paste_h=work.height,
        occluded_fraction=float(occluded),
    )
    return out, record, support


def random_blend(target: Sample, inst: ObjectInstance, cfg: BlendConfig,
                 rng: RngStream) -> Tuple[Raster, PlacementRecord]:
    """Randomly scale, rotate, smooth, and paste ``inst`` onto the target.

    The support area after rescaling approximates a uniform draw from
    ``scale_area_range`` (times the image area); placement is uniform
    over positions that keep the pasted box fully inside.
    """
    out, record, _ = _blend_once(target, inst, cfg, rng)
    return out, record
