"""Synthetic shapes-with-captions dataset.

Desk-scale stand-in for the bird/object photo corpora: scenes of one to
three non-overlapping flat-colored shapes on textured backgrounds, with
pixel-exact segmentation maps and templated captions. Shape colors live on
the 8-bit grid so a PNG round trip reproduces them exactly, and backgrounds
stay desaturated so the analytic segmenter can never confuse the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import ImageBuffer, SegMap

__all__ = [
    "SHAPE_NAMES",
    "COLOR_NAMES",
    "SHAPE_COLORS",
    "SHAPE_COLOR_VALUES",
    "ShapeSpec",
    "SynthSample",
    "render_scene",
    "make_synthetic_dataset",
    "caption_vocabulary",
]

SHAPE_NAMES = ("circle", "square", "triangle")

# uint8 triples so float -> PNG -> float is lossless
SHAPE_COLORS = {
    "red": (220, 20, 20),
    "green": (20, 200, 30),
    "blue": (30, 60, 230),
    "yellow": (240, 220, 30),
    "purple": (150, 40, 200),
    "orange": (250, 140, 20),
    "cyan": (20, 210, 220),
    "pink": (250, 130, 180),
}
COLOR_NAMES = tuple(SHAPE_COLORS)
SHAPE_COLOR_VALUES = tuple(
    tuple(c / 255.0 for c in rgb) for rgb in SHAPE_COLORS.values()
)

_SHAPE_CLASS = {"circle": 1, "square": 2, "triangle": 3}
_PALETTE = {1: "circle", 2: "square", 3: "triangle"}


@dataclass(frozen=True)
class ShapeSpec:
    """Geometry of one rendered shape (integer pixel coordinates)."""

    kind: str  # circle | square | triangle
    color: str
    cy: int
    cx: int
    half: int  # half-extent: radius / half-side / half-base

    def raster(self, height: int, width: int) -> np.ndarray:
        yy, xx = np.mgrid[0:height, 0:width]
        if self.kind == "circle":
            # +0.5 keeps small discs well above the triangle fill ratio
            return (yy - self.cy) ** 2 + (xx - self.cx) ** 2 <= (self.half + 0.5) ** 2
        if self.kind == "square":
            return (np.abs(yy - self.cy) <= self.half) & (np.abs(xx - self.cx) <= self.half)
        if self.kind == "triangle":
            # up-pointing isoceles: apex at cy-half, base at cy+half
            t = yy - (self.cy - self.half)
            span = 2 * self.half
            inside_rows = (t >= 0) & (t <= span)
            halfwidth = (t / max(span, 1)) * self.half
            return inside_rows & (np.abs(xx - self.cx) <= halfwidth)
        raise ValueError(f"unknown shape kind {self.kind!r}")

    def bbox_with_gap(self, gap: int) -> tuple[int, int, int, int]:
        return (
            self.cy - self.half - gap,
            self.cx - self.half - gap,
            self.cy + self.half + gap,
            self.cx + self.half + gap,
        )


@dataclass(frozen=True)
class SynthSample:
    image: ImageBuffer
    seg: SegMap
    caption: str
    target_label: str
    target_color: str
    shapes: tuple[ShapeSpec, ...]
    background_id: int


def _background(bg_id: int, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Textured backgrounds with all channels confined to [0.25, 0.75]."""
    yy, xx = np.mgrid[0:height, 0:width]
    bg_id = bg_id % 4
    if bg_id == 0:  # diagonal gradient
        g = (yy + xx) / max(height + width - 2, 1)
        base = np.stack([0.30 + 0.3 * g, 0.35 + 0.25 * g, 0.45 + 0.2 * g], axis=2)
    elif bg_id == 1:  # checkerboard
        check = ((yy // 8 + xx // 8) % 2).astype(np.float64)
        base = np.stack(
            [0.35 + 0.15 * check, 0.40 + 0.12 * check, 0.38 + 0.10 * check], axis=2
        )
    elif bg_id == 2:  # vertical stripes
        stripe = ((xx // 6) % 2).astype(np.float64)
        base = np.stack(
            [0.45 + 0.12 * stripe, 0.42 + 0.10 * stripe, 0.36 + 0.14 * stripe], axis=2
        )
    else:  # smooth blobs from low-frequency noise
        coarse = rng.uniform(0.3, 0.7, size=(4, 4, 3))
        reps = (int(np.ceil(height / 4)), int(np.ceil(width / 4)))
        base = np.kron(coarse, np.ones((reps[0], reps[1], 1)))[:height, :width]
    return np.clip(base, 0.25, 0.75).astype(np.float32)


def render_scene(
    shapes: tuple[ShapeSpec, ...],
    background_id: int,
    size: int,
    rng: np.random.Generator | None = None,
) -> tuple[ImageBuffer, SegMap]:
    """Rasterize shapes over a textured background with an exact SegMap."""
    rng = rng or np.random.default_rng(background_id)
    img = _background(background_id, size, size, rng)
    seg = np.zeros((size, size), dtype=np.int32)
    for spec in shapes:
        mask = spec.raster(size, size)
        img[mask] = np.asarray(SHAPE_COLORS[spec.color], dtype=np.float32) / 255.0
        seg[mask] = _SHAPE_CLASS[spec.kind]
    return ImageBuffer(img), SegMap(seg, _PALETTE)


def _place_shapes(rng: np.random.Generator, size: int) -> tuple[ShapeSpec, ...]:
    count = int(rng.integers(1, 4))
    kinds = [str(k) for k in rng.permutation(SHAPE_NAMES)][:count]  # distinct per scene
    placed: list[ShapeSpec] = []
    for kind in kinds:
        for _attempt in range(64):
            half = int(rng.integers(max(4, size // 12), max(6, size // 5)))
            cy = int(rng.integers(half + 1, size - half - 1))
            cx = int(rng.integers(half + 1, size - half - 1))
            cand = ShapeSpec(kind, "red", cy, cx, half)
            if not _overlaps(cand, placed):
                placed.append(cand)
                break
        # a crowded scene silently keeps fewer shapes
    colors = rng.choice(len(COLOR_NAMES), size=len(placed), replace=False)
    return tuple(
        ShapeSpec(s.kind, COLOR_NAMES[int(c)], s.cy, s.cx, s.half)
        for s, c in zip(placed, colors)
    )


def _overlaps(cand: ShapeSpec, placed: list[ShapeSpec]) -> bool:
    cy0, cx0, cy1, cx1 = cand.bbox_with_gap(2)
    for other in placed:
        oy0, ox0, oy1, ox1 = other.bbox_with_gap(2)
        if cy0 <= oy1 and oy0 <= cy1 and cx0 <= ox1 and ox0 <= cx1:
            return True
    return False


def make_synthetic_dataset(n: int, seed: int, size: int = 64) -> list[SynthSample]:
    """Render ``n`` captioned scenes, deterministic per (seed, index)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    samples: list[SynthSample] = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        shapes = _place_shapes(rng, size)
        background_id = int(rng.integers(0, 4))
        image, seg = render_scene(shapes, background_id, size, rng)
        target = shapes[int(rng.integers(0, len(shapes)))]
        caption = f"the {target.kind} is {target.color}"
        samples.append(
            SynthSample(
                image=image,
                seg=seg,
                caption=caption,
                target_label=target.kind,
                target_color=target.color,
                shapes=shapes,
                background_id=background_id,
            )
        )
    return samples


def caption_vocabulary() -> tuple[str, ...]:
    """Every word the caption template can emit."""
    return tuple(sorted({"the", "is", *SHAPE_NAMES, *COLOR_NAMES}))
