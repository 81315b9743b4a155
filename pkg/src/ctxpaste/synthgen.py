"""Synthetic scenes with a deliberate object/background confound.

Each scene drops 1..k flat-colored shapes onto a textured background.
Background styles are paired one-to-one with shape categories, and with
probability ``confound_prob`` a scene uses the style paired with its
first shape. A classifier trained on such a corpus can score well by
looking at the background alone, which is exactly the failure mode the
augmentation pipeline is meant to break.
"""

from __future__ import annotations

import colorsys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List

import numpy as np

from .core import LabelSet, Raster, RngStream, Sample

# Saturated foreground colors and pale background base colors for the
# first four categories/styles; further indices are derived from hue
# rotation so any category count works.
_SHAPE_COLORS = (
    (0.85, 0.10, 0.10),
    (0.10, 0.70, 0.15),
    (0.15, 0.25, 0.90),
    (0.80, 0.10, 0.78),
)
_BG_COLORS = (
    (0.78, 0.70, 0.62),
    (0.62, 0.78, 0.70),
    (0.70, 0.62, 0.78),
    (0.62, 0.70, 0.78),
)
# Texture direction (cycles across x, cycles across y) per style.
_BG_WAVES = ((3.0, 0.0), (0.0, 3.0), (2.0, 2.0), (3.0, -2.0))
_BG_WAVE_AMP = 0.04

SHAPE_KINDS = ("square", "disk", "triangle", "cross")


def shape_color(category: int) -> tuple:
    if 1 <= category <= len(_SHAPE_COLORS):
        return _SHAPE_COLORS[category - 1]
    hue = (0.618033988749895 * category) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.85, 0.85)


def background_color(style: int) -> tuple:
    if 0 <= style < len(_BG_COLORS):
        return _BG_COLORS[style]
    hue = (0.618033988749895 * (style + 7)) % 1.0
    return colorsys.hsv_to_rgb(hue, 0.18, 0.72)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the scene generator."""

    image_size: int = 64
    shape_categories: int = 4
    # 0 means "one style per shape category".
    background_styles: int = 0
    confound_prob: float = 0.95
    objects_per_scene: tuple = (1, 2)
    shape_scale_range: tuple = (0.25, 0.5)
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if self.shape_categories < 1:
            raise ValueError("shape_categories must be positive")
        if self.background_styles < 0:
            raise ValueError("background_styles must be non-negative")
        if not 0.0 <= self.confound_prob <= 1.0:
            raise ValueError("confound_prob must lie in [0, 1]")
        lo, hi = self.objects_per_scene
        if not 1 <= lo <= hi:
            raise ValueError("objects_per_scene must satisfy 1 <= min <= max")
        slo, shi = self.shape_scale_range
        if not 0.0 < slo <= shi <= 0.5:
            raise ValueError("shape_scale_range must satisfy 0 < min <= max <= 0.5")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def style_count(self) -> int:
        return self.background_styles or self.shape_categories


def _shape_support(category: int, side: int) -> np.ndarray:
    """Boolean (side, side) stencil for the category's shape."""
    kind = SHAPE_KINDS[(category - 1) % len(SHAPE_KINDS)]
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    c = (side - 1) / 2.0
    if kind == "square":
        return np.ones((side, side), dtype=bool)
    if kind == "disk":
        r = side / 2.0
        return (xx - c) ** 2 + (yy - c) ** 2 <= r * r
    if kind == "triangle":
        # Upward triangle: row y spans columns within y/2 of the center.
        half = (yy + 1) / 2.0
        return np.abs(xx - c) <= half
    # Cross: union of a horizontal and a vertical bar through the center.
    bar = max(1.0, side / 3.0)
    return (np.abs(xx - c) <= bar / 2.0) | (np.abs(yy - c) <= bar / 2.0)


def _render_background(style: int, size: int, phase: float) -> np.ndarray:
    base = np.array(background_color(style), dtype=np.float64)
    fx, fy = _BG_WAVES[style % len(_BG_WAVES)]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    wave = np.sin(2.0 * np.pi * (fx * xx + fy * yy) / size + phase)
    img = base[None, None, :] + _BG_WAVE_AMP * wave[:, :, None]
    return np.clip(img, 0.0, 1.0)


def gen_scene(cfg: SynthConfig, rng: RngStream) -> Sample:
    """Render one scene: textured background, shapes, pixel noise, gt mask.

    Draw order is fixed (object count, categories, style, phase, then per
    object scale and placement attempts, then noise) so a given stream
    always yields the same scene. Objects that cannot be placed without
    overlapping after 20 attempts are dropped.
    """
    g = rng.generator()
    size = cfg.image_size
    lo, hi = cfg.objects_per_scene
    n_objects = int(g.integers(lo, hi + 1))
    cats = [int(g.integers(1, cfg.shape_categories + 1))
            for _ in range(n_objects)]

    styles = cfg.style_count
    paired = (cats[0] - 1) % styles
    if styles == 1 or g.random() < cfg.confound_prob:
        style = paired
    else:
        others = [s for s in range(styles) if s != paired]
        style = others[int(g.integers(len(others)))]

    image = _render_background(style, size, phase=float(g.uniform(0, 2 * np.pi)))
    mask = np.zeros((size, size), dtype=np.int32)
    placed: List[int] = []
    for cat in cats:
        scale = float(g.uniform(*cfg.shape_scale_range))
        side = max(1, int(round(scale * size)))
        support = _shape_support(cat, side)
        for _ in range(20):
            x = int(g.integers(0, size - side + 1))
            y = int(g.integers(0, size - side + 1))
            region = mask[y:y + side, x:x + side]
            if not region[support].any():
                image[y:y + side, x:x + side][support] = shape_color(cat)
                region[support] = cat
                placed.append(cat)
                break

    noise = g.normal(0.0, cfg.noise_sigma, size=image.shape)
    image = np.clip(image + noise, 0.0, 1.0)
    return Sample(Raster(image), LabelSet(placed), Raster(mask))


def gen_corpus(cfg: SynthConfig, n: int, seed: int,
               jobs: int = 1) -> List[Sample]:
    """Generate ``n`` scenes; scene i depends only on (seed, i).

    Parallel generation therefore returns the same corpus as sequential.
    """
    if n < 0:
        raise ValueError("corpus size must be non-negative")
    root = RngStream(seed)

    def make(i: int) -> Sample:
        return gen_scene(cfg, root.child("scene", i))

    if jobs <= 1 or n <= 1:
        return [make(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(make, range(n)))
