"""Image, mask and segmentation-map value types plus the mask algebra.

Everything downstream (preprocessing, generator, combiner, sessions) is built
on these types. All values are immutable after construction and every
operation is pure, so they are safe to share across threads.

Conventions:
  * images are (H, W, C) float32 arrays with values in [0, 1]
  * masks are (H, W) uint8 arrays with values in {0, 1}
  * segmentation maps are (H, W) int32 class ids, 0 = background
  * resampling maps destination index d to source position d * src/dst
    (origin-aligned), so integer up/down scaling round-trips exactly
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import (
    EmptyRegionError,
    PaletteError,
    ParameterError,
    ShapeError,
)

__all__ = [
    "ImageBuffer",
    "MaskMap",
    "SegMap",
    "RegionSplit",
    "BoundingBox",
    "split_by_mask",
    "composite",
    "crop_to_mask_bbox",
    "paste_patch",
    "scale_mask_about_centroid",
    "extract_outline",
    "resize_image",
    "mask_from_segmap",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "load_segmap",
    "save_segmap",
    "palette_path_for",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x C image with float values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeError(f"image must be (H, W, C), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ShapeError(f"image dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ParameterError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @staticmethod
    def zeros(height: int, width: int, channels: int = 3) -> "ImageBuffer":
        return ImageBuffer(np.zeros((height, width, channels), dtype=np.float32))

    @staticmethod
    def full(height: int, width: int, color: Iterable[float]) -> "ImageBuffer":
        col = np.asarray(tuple(color), dtype=np.float32)
        return ImageBuffer(np.broadcast_to(col, (height, width, col.size)).copy())


@dataclass(frozen=True)
class MaskMap:
    """H x W binary mask; 1 marks the text-relevant region."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ParameterError("mask values must be 0 or 1")
        object.__setattr__(self, "data", _freeze(arr.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def area(self) -> int:
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return not bool(self.data.any())

    @staticmethod
    def zeros(height: int, width: int) -> "MaskMap":
        return MaskMap(np.zeros((height, width), dtype=np.uint8))


@dataclass(frozen=True)
class SegMap:
    """H x W integer class-id map; 0 is background, ids name object classes."""

    data: np.ndarray
    palette: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"segmap must be (H, W), got shape {arr.shape}")
        if arr.size and arr.min() < 0:
            raise ParameterError("segmap class ids must be >= 0")
        pal = {int(k): str(v) for k, v in self.palette.items()}
        present = set(int(c) for c in np.unique(arr)) - {0}
        missing = present - set(pal)
        if missing:
            raise PaletteError(f"class ids {sorted(missing)} missing from palette")
        object.__setattr__(self, "data", _freeze(arr.astype(np.int32)))
        object.__setattr__(self, "palette", pal)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def class_mask(self, class_id: int) -> MaskMap:
        return MaskMap((self.data == int(class_id)).astype(np.uint8))

    def present_ids(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.data) if c != 0)

    def with_data(self, data: np.ndarray) -> "SegMap":
        return SegMap(data, self.palette)

    @staticmethod
    def zeros(height: int, width: int, palette: dict[int, str] | None = None) -> "SegMap":
        return SegMap(np.zeros((height, width), dtype=np.int32), palette or {})


@dataclass(frozen=True)
class RegionSplit:
    """Lossless split of an image into text-relevant / text-irrelevant parts.

    ``relevant`` is zero outside the mask, ``irrelevant`` is zero inside it,
    and their elementwise sum reconstructs the source exactly.
    """

    relevant: ImageBuffer
    irrelevant: ImageBuffer
    mask: MaskMap

    def __post_init__(self):
        if (
            self.relevant.data.shape != self.irrelevant.data.shape
            or self.relevant.data.shape[:2] != self.mask.data.shape
        ):
            raise ShapeError("RegionSplit parts must share dimensions")

    def reconstruct(self) -> ImageBuffer:
        return ImageBuffer(self.relevant.data + self.irrelevant.data)


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box: rows [y0, y1), cols [x0, x1)."""

    y0: int
    x0: int
    y1: int
    x1: int

    def __post_init__(self):
        if not (self.y0 < self.y1 and self.x0 < self.x1):
            raise ShapeError(f"degenerate box {self}")
        if self.y0 < 0 or self.x0 < 0:
            raise ShapeError(f"box {self} extends past the origin")

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    def within(self, height: int, width: int) -> bool:
        return self.y1 <= height and self.x1 <= width


def _check_image_mask(image: ImageBuffer, mask: MaskMap) -> None:
    if (image.height, image.width) != (mask.height, mask.width):
        raise ShapeError(
            f"image {image.height}x{image.width} does not match "
            f"mask {mask.height}x{mask.width}"
        )


def split_by_mask(image: ImageBuffer, mask: MaskMap) -> RegionSplit:
    """Split an image into its masked and unmasked parts, losslessly."""
    _check_image_mask(image, mask)
    m = mask.data[..., None].astype(np.float32)
    relevant = ImageBuffer(image.data * m)
    irrelevant = ImageBuffer(image.data * (1.0 - m))
    return RegionSplit(relevant=relevant, irrelevant=irrelevant, mask=mask)


def composite(relevant: ImageBuffer, irrelevant: ImageBuffer, mask: MaskMap) -> ImageBuffer:
    """Pick ``relevant`` where mask=1, ``irrelevant`` elsewhere."""
    if relevant.data.shape != irrelevant.data.shape:
        raise ShapeError("composite inputs must share shape")
    _check_image_mask(relevant, mask)
    m = mask.data[..., None].astype(bool)
    return ImageBuffer(np.where(m, relevant.data, irrelevant.data))


def crop_to_mask_bbox(
    image: ImageBuffer, mask: MaskMap, margin: int = 0
) -> tuple[ImageBuffer, BoundingBox]:
    """Crop the tightest margin-expanded box around the mask's support."""
    _check_image_mask(image, mask)
    if margin < 0:
        raise ParameterError("margin must be >= 0")
    ys, xs = np.nonzero(mask.data)
    if ys.size == 0:
        raise EmptyRegionError("cannot crop around an empty mask")
    y0 = max(int(ys.min()) - margin, 0)
    x0 = max(int(xs.min()) - margin, 0)
    y1 = min(int(ys.max()) + 1 + margin, image.height)
    x1 = min(int(xs.max()) + 1 + margin, image.width)
    box = BoundingBox(y0, x0, y1, x1)
    patch = ImageBuffer(image.data[y0:y1, x0:x1].copy())
    return patch, box


def paste_patch(target: ImageBuffer, patch: ImageBuffer, box: BoundingBox) -> ImageBuffer:
    """Return a copy of ``target`` with ``patch`` written into ``box``."""
    if not box.within(target.height, target.width):
        raise ShapeError(f"box {box} exceeds target {target.height}x{target.width}")
    if (patch.height, patch.width) != (box.height, box.width):
        raise ShapeError("patch dimensions must equal box dimensions")
    if patch.channels != target.channels:
        raise ShapeError("patch channels must match target channels")
    out = target.data.copy()
    out[box.y0 : box.y1, box.x0 : box.x1] = patch.data
    return ImageBuffer(out)


def _mask_centroid(mask: MaskMap) -> tuple[float, float]:
    ys, xs = np.nonzero(mask.data)
    return float(ys.mean()) + 0.5, float(xs.mean()) + 0.5


# resolves exact cell-boundary ties toward the centroid, which keeps scaled
# regions centroid-symmetric (otherwise parity flips shift them half a pixel)
_TIE_EPS = 1e-9


def scale_mask_about_centroid(mask: MaskMap, factor: float) -> MaskMap:
    """Zoom the mask region about its centroid by ``factor``.

    Rasterized by inverse nearest mapping: an output pixel is foreground iff
    its center, pulled back toward the centroid by 1/factor, lands inside a
    foreground source pixel. This fills scaled regions without holes and
    clips anything pushed outside the frame.
    """
    if factor <= 0:
        raise ParameterError(f"scale factor must be > 0, got {factor}")
    if mask.is_empty():
        raise EmptyRegionError("cannot scale an empty mask")
    if factor == 1.0:
        return mask
    cy, cx = _mask_centroid(mask)
    h, w = mask.height, mask.width
    qy = np.arange(h, dtype=np.float64) + 0.5
    qx = np.arange(w, dtype=np.float64) + 0.5
    src_y = np.floor(cy + (qy - cy) * (1.0 - _TIE_EPS) / factor).astype(np.int64)
    src_x = np.floor(cx + (qx - cx) * (1.0 - _TIE_EPS) / factor).astype(np.int64)
    valid_y = (src_y >= 0) & (src_y < h)
    valid_x = (src_x >= 0) & (src_x < w)
    out = np.zeros((h, w), dtype=np.uint8)
    yy = src_y.clip(0, h - 1)[:, None]
    xx = src_x.clip(0, w - 1)[None, :]
    hit = mask.data[yy, xx].astype(bool) & valid_y[:, None] & valid_x[None, :]
    out[hit] = 1
    return MaskMap(out)


def scale_image_about_centroid(image: ImageBuffer, mask: MaskMap, factor: float) -> ImageBuffer:
    """Zoom image content about the mask centroid with the same inverse
    mapping as :func:`scale_mask_about_centroid`, so scaled content lands
    exactly under the scaled mask. Pixels pulled from outside the frame
    come back black."""
    if factor <= 0:
        raise ParameterError(f"scale factor must be > 0, got {factor}")
    if mask.is_empty():
        raise EmptyRegionError("cannot scale about an empty mask")
    _check_image_mask(image, mask)
    if factor == 1.0:
        return image
    cy, cx = _mask_centroid(mask)
    h, w = image.height, image.width
    qy = np.arange(h, dtype=np.float64) + 0.5
    qx = np.arange(w, dtype=np.float64) + 0.5
    src_y = np.floor(cy + (qy - cy) * (1.0 - _TIE_EPS) / factor).astype(np.int64)
    src_x = np.floor(cx + (qx - cx) * (1.0 - _TIE_EPS) / factor).astype(np.int64)
    valid = ((src_y >= 0) & (src_y < h))[:, None] & ((src_x >= 0) & (src_x < w))[None, :]
    out = image.data[src_y.clip(0, h - 1)][:, src_x.clip(0, w - 1)].copy()
    out[~valid] = 0.0
    return ImageBuffer(out)


def _boundary(mask: np.ndarray) -> np.ndarray:
    """Boundary pixels of a binary mask under 4-connectivity.

    A mask pixel is boundary if any 4-neighbor is background or off-frame
    (the frame truncates the foreground); a background pixel is boundary if
    any 4-neighbor is foreground.
    """
    m = mask.astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    up = padded[:-2, 1:-1]
    down = padded[2:, 1:-1]
    left = padded[1:-1, :-2]
    right = padded[1:-1, 2:]
    any_fg_neighbor = up | down | left | right
    all_fg_neighbor = up & down & left & right  # off-frame counts as background
    inner = m & ~all_fg_neighbor
    outer = ~m & any_fg_neighbor
    return inner | outer


def extract_outline(mask: MaskMap, band_width: int = 1) -> MaskMap:
    """Band of pixels within ``band_width`` of the mask's boundary.

    ``band_width`` counts pixels on each side of the geometric edge:
    band 1 returns exactly the inner+outer boundary rings.
    """
    if band_width < 1:
        raise ParameterError("band_width must be >= 1")
    if mask.is_empty():
        return MaskMap.zeros(mask.height, mask.width)
    band = _boundary(mask.data)
    for _ in range(band_width - 1):  # Chebyshev dilation, one ring per pass
        padded = np.pad(band, 1, constant_values=False)
        acc = band.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                acc |= padded[1 + dy : 1 + dy + mask.height, 1 + dx : 1 + dx + mask.width]
        band = acc
    return MaskMap(band.astype(np.uint8))


def _resample_axis_positions(src_size: int, dst_size: int) -> np.ndarray:
    return np.arange(dst_size, dtype=np.float64) * (src_size / dst_size)


def resize_image(
    image: ImageBuffer, new_h: int, new_w: int, method: str = "bilinear"
) -> ImageBuffer:
    """Resample to (new_h, new_w) with nearest or bilinear interpolation."""
    if new_h < 1 or new_w < 1:
        raise ParameterError("target size must be >= 1")
    if method not in ("nearest", "bilinear"):
        raise ParameterError(f"unknown resize method {method!r}")
    if (new_h, new_w) == (image.height, image.width):
        return image
    data = image.data
    sy = _resample_axis_positions(image.height, new_h)
    sx = _resample_axis_positions(image.width, new_w)
    if method == "nearest":
        iy = np.floor(sy).astype(np.int64).clip(0, image.height - 1)
        ix = np.floor(sx).astype(np.int64).clip(0, image.width - 1)
        out = data[iy][:, ix]
        return ImageBuffer(out)
    y0 = np.floor(sy).astype(np.int64).clip(0, image.height - 1)
    y1 = np.minimum(y0 + 1, image.height - 1)
    fy = (sy - y0).clip(0.0, 1.0).astype(np.float32)[:, None, None]
    x0 = np.floor(sx).astype(np.int64).clip(0, image.width - 1)
    x1 = np.minimum(x0 + 1, image.width - 1)
    fx = (sx - x0).clip(0.0, 1.0).astype(np.float32)[None, :, None]
    rows0 = data[y0]
    rows1 = data[y1]
    blended_rows = rows0 * (1.0 - fy) + rows1 * fy
    out = blended_rows[:, x0] * (1.0 - fx) + blended_rows[:, x1] * fx
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def resize_mask_nearest(mask: MaskMap, new_h: int, new_w: int) -> MaskMap:
    """Nearest-neighbor mask resize matching resize_image's index mapping."""
    if new_h < 1 or new_w < 1:
        raise ParameterError("target size must be >= 1")
    sy = np.floor(_resample_axis_positions(mask.height, new_h)).astype(np.int64)
    sx = np.floor(_resample_axis_positions(mask.width, new_w)).astype(np.int64)
    sy = sy.clip(0, mask.height - 1)
    sx = sx.clip(0, mask.width - 1)
    return MaskMap(mask.data[sy][:, sx])


def mask_from_segmap(seg: SegMap, class_id: int) -> MaskMap:
    return seg.class_mask(class_id)


# ---------------------------------------------------------------------------
# PNG I/O. Images are 8-bit RGB; segmentation maps are single-channel 8-bit
# class ids with a sidecar JSON palette.
# ---------------------------------------------------------------------------


def load_image(path: str | Path) -> ImageBuffer:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return ImageBuffer(arr)


def save_image(image: ImageBuffer, path: str | Path) -> None:
    arr = np.round(image.data * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_mask(path: str | Path) -> MaskMap:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return MaskMap((arr > 0).astype(np.uint8))


def save_mask(mask: MaskMap, path: str | Path) -> None:
    Image.fromarray(mask.data * np.uint8(255), mode="L").save(path, format="PNG")


def palette_path_for(png_path: str | Path) -> Path:
    return Path(png_path).with_suffix(".palette.json")


def load_segmap(path: str | Path, palette_path: str | Path | None = None) -> SegMap:
    path = Path(path)
    pal_path = Path(palette_path) if palette_path else palette_path_for(path)
    if not pal_path.exists():
        raise PaletteError(f"missing palette sidecar {pal_path}")
    palette = {int(k): str(v) for k, v in json.loads(pal_path.read_text()).items()}
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.int32)
    return SegMap(arr, palette)


def save_segmap(seg: SegMap, path: str | Path, palette_path: str | Path | None = None) -> None:
    path = Path(path)
    if seg.data.max(initial=0) > 255:
        raise PaletteError("class ids above 255 cannot be stored in 8-bit PNG")
    Image.fromarray(seg.data.astype(np.uint8), mode="L").save(path, format="PNG")
    pal_path = Path(palette_path) if palette_path else palette_path_for(path)
    pal_path.write_text(json.dumps({str(k): v for k, v in sorted(seg.palette.items())}))
