"""Recomposition: fill holes, optionally swap backgrounds, absorb seams.

The combination stage is procedural: it composites the edited object over a
base layer chosen by the action, inpainting whatever the edit vacated. The
reference inpainter is a classical diffusion fill so the whole path runs
without any learned model; learned inpainters plug in through the
``InpaintBackend`` contract and are held to it by a wrapper assertion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .backends import SegmentationBackend
from .errors import BackendError, ParameterError, ShapeError
from .imagecore import (
    ImageBuffer,
    MaskMap,
    RegionSplit,
    SegMap,
    composite,
    extract_outline,
)
from .instructions import Action, ActionKind

__all__ = [
    "InpaintBackend",
    "DiffusionInpaintBackend",
    "BackgroundAsset",
    "inpaint_reference",
    "checked_inpaint",
    "prepare_background",
    "combine_final",
    "absorb_color_seam",
    "SEAM_BAND_WIDTH",
]

SEAM_BAND_WIDTH = 2  # px inpainted along the composited outline


@runtime_checkable
class InpaintBackend(Protocol):
    def inpaint(self, image: ImageBuffer, hole: MaskMap) -> ImageBuffer: ...


_NEIGHBOR_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def _neighbor_sums(values: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum of 8-neighbor values and weights, zero-padded at the frame."""
    h, w = weights.shape
    pv = np.pad(values, ((1, 1), (1, 1), (0, 0)))
    pw = np.pad(weights, 1)
    vsum = np.zeros_like(values, dtype=np.float64)
    wsum = np.zeros((h, w), dtype=np.float64)
    for dy, dx in _NEIGHBOR_OFFSETS:
        vsum += pv[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        wsum += pw[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return vsum, wsum


def inpaint_reference(image: ImageBuffer, hole: MaskMap, iterations: int = 8) -> ImageBuffer:
    """Diffusion fill: onion-peel the hole from its rim, then smooth.

    Each peel assigns unfilled hole pixels the mean of their already-valued
    8-neighbors; after the fill, ``iterations`` Jacobi passes relax hole
    pixels toward their neighborhood mean. Non-hole pixels never change.
    """
    if (image.height, image.width) != (hole.height, hole.width):
        raise ShapeError("image and hole mask dimensions differ")
    if iterations < 0:
        raise ParameterError("iterations must be >= 0")
    if hole.is_empty():
        return image
    hole_b = hole.data.astype(bool)
    values = image.data.astype(np.float64).copy()
    filled = ~hole_b
    if not filled.any():
        # degenerate: the whole frame is hole, seed with the global mean
        values[:] = image.data.reshape(-1, image.channels).mean(axis=0)
        filled = np.ones_like(hole_b)
    while not filled.all():
        weights = filled.astype(np.float64)
        vsum, wsum = _neighbor_sums(values * weights[..., None], weights)
        frontier = ~filled & (wsum > 0)
        if not frontier.any():
            break
        values[frontier] = vsum[frontier] / wsum[frontier][:, None]
        filled |= frontier
    ones = np.ones((image.height, image.width), dtype=np.float64)
    for _ in range(iterations):
        vsum, wsum = _neighbor_sums(values, ones)
        values[hole_b] = vsum[hole_b] / wsum[hole_b][:, None]
    out = image.data.copy()
    out[hole_b] = np.clip(values[hole_b], 0.0, 1.0).astype(np.float32)
    return ImageBuffer(out)


class DiffusionInpaintBackend:
    """Reference InpaintBackend backed by :func:`inpaint_reference`."""

    def __init__(self, iterations: int = 8):
        self.iterations = iterations

    def inpaint(self, image: ImageBuffer, hole: MaskMap) -> ImageBuffer:
        return inpaint_reference(image, hole, self.iterations)


def checked_inpaint(backend: InpaintBackend, image: ImageBuffer, hole: MaskMap) -> ImageBuffer:
    """Run a backend and assert it only touched hole pixels."""
    result = backend.inpaint(image, hole)
    if (result.height, result.width, result.channels) != (
        image.height,
        image.width,
        image.channels,
    ):
        raise BackendError("inpaint backend changed image dimensions")
    outside = hole.data[..., None] == 0
    if not np.array_equal(result.data * outside, image.data * outside):
        raise BackendError("inpaint backend modified pixels outside the hole")
    return result


@dataclass(frozen=True)
class BackgroundAsset:
    """Reference background prepared for a swap: original, its segmentation,
    the object-zeroed copy and the object-inpainted copy."""

    original: ImageBuffer
    seg: SegMap
    pure: ImageBuffer
    inpainted: ImageBuffer

    def __post_init__(self):
        dims = (self.original.height, self.original.width)
        for part in (self.pure, self.inpainted):
            if (part.height, part.width) != dims:
                raise ShapeError("background asset parts must share dimensions")


def prepare_background(
    asset_in: ImageBuffer,
    seg_backend: SegmentationBackend,
    inpaint: InpaintBackend,
) -> BackgroundAsset:
    """Segment a reference background and erase whatever objects it holds."""
    seg = seg_backend.segment(asset_in)
    objects = MaskMap((seg.data != 0).astype(np.uint8))
    pure = ImageBuffer(asset_in.data * (objects.data[..., None] == 0))
    if objects.is_empty():
        inpainted = asset_in
    else:
        inpainted = checked_inpaint(inpaint, asset_in, objects)
    return BackgroundAsset(original=asset_in, seg=seg, pure=pure, inpainted=inpainted)


def combine_final(
    edited: ImageBuffer,
    split: RegionSplit,
    seg_out: SegMap,
    action: Action,
    inpaint: InpaintBackend,
    target_class: int,
    background: BackgroundAsset | None = None,
) -> ImageBuffer:
    """Composite the edited object over the action's base layer.

    Base layer: the untouched irrelevant content for attribute edits, the
    hole-inpainted irrelevant content for resize/remove (the object may have
    vacated pixels), or the inpainted reference background for a swap.
    Remove returns the base alone.
    """
    if (edited.height, edited.width) != (split.relevant.height, split.relevant.width):
        raise ShapeError("edited image does not match the split dimensions")
    kind = action.kind
    if kind is ActionKind.BACKGROUND_SWAP:
        if background is None:
            raise ParameterError("background swap requires a reference background")
        if (background.original.height, background.original.width) != (
            edited.height,
            edited.width,
        ):
            raise ShapeError("reference background dimensions differ from the input")
        base = background.inpainted
    elif kind in (ActionKind.RESIZE, ActionKind.REMOVE):
        base = checked_inpaint(inpaint, split.irrelevant, split.mask)
    else:
        base = split.irrelevant
    if kind is ActionKind.REMOVE:
        return base
    out_mask = seg_out.class_mask(target_class)
    return composite(edited, base, out_mask)


def absorb_color_seam(
    combined: ImageBuffer,
    seg_out: SegMap,
    inpaint: InpaintBackend,
    target_class: int,
    band_width: int = SEAM_BAND_WIDTH,
) -> ImageBuffer:
    """Inpaint a thin band along the composited object's outline.

    Compositing separately-processed regions leaves color discontinuities at
    the junction; re-filling the outline band diffuses them away. Pixels
    outside the band are untouched; an empty target region is a no-op.
    """
    if band_width < 1:
        raise ParameterError("band_width must be >= 1")
    target_mask = seg_out.class_mask(target_class)
    if target_mask.is_empty():
        return combined
    band = extract_outline(target_mask, band_width)
    return checked_inpaint(inpaint, combined, band)
