"""Pre-processing: locate the text-relevant region and build the work canvas.

Pipeline order: segment the image, detect candidate objects, match the
instruction's nouns to a class, mask that class inside its detection boxes,
split the image, then crop and upscale the object onto a square working
canvas where the generator operates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import (
    DetectedObject,
    DetectionBackend,
    SegmentationBackend,
    SRBackend,
)
from .errors import (
    BackendError,
    EmptyRegionError,
    NoTargetError,
    SegEditError,
    with_stage,
)
from .imagecore import (
    BoundingBox,
    ImageBuffer,
    MaskMap,
    RegionSplit,
    SegMap,
    crop_to_mask_bbox,
    paste_patch,
    resize_image,
    resize_mask_nearest,
    split_by_mask,
)
from .instructions import EmbeddingTable, ParsedInstruction, TargetSelection, select_target_class

__all__ = [
    "CanvasPatch",
    "PreprocResult",
    "build_text_relevant_mask",
    "prepare_canvas",
    "restore_canvas_to_frame",
    "run_preprocessing",
    "SR_SCALES",
    "CANVAS_MARGIN",
]

SR_SCALES = (8, 4, 2, 1)  # typical SR-network factors, largest fit wins
CANVAS_MARGIN = 8  # px context kept around the object crop


@dataclass(frozen=True)
class CanvasPatch:
    """The object crop fitted onto the square working canvas.

    ``canvas_scale`` is the zoom applied to the source crop (fractional when
    the crop had to be shrunk to fit); ``content_box`` is where the scaled
    crop sits inside the canvas, which makes the mapping exactly invertible.
    """

    image: ImageBuffer
    source_box: BoundingBox
    canvas_scale: float
    mask: MaskMap
    content_box: BoundingBox

    def __post_init__(self):
        if (self.image.height, self.image.width) != (self.mask.height, self.mask.width):
            raise BackendError("canvas image and mask dimensions differ")


def build_text_relevant_mask(
    seg: SegMap,
    detections: list[DetectedObject],
    target_label: str,
) -> MaskMap:
    """Union of the target class's segmentation inside its detection boxes."""
    matching = [d for d in detections if d.label == target_label]
    if not matching:
        raise NoTargetError(f"no detection labelled {target_label!r}")
    acc = np.zeros((seg.height, seg.width), dtype=bool)
    for det in matching:
        region = np.zeros_like(acc)
        b = det.box
        region[b.y0 : b.y1, b.x0 : b.x1] = True
        acc |= (seg.data == det.class_id) & region
    if not acc.any():
        raise EmptyRegionError(
            f"segmentation has no {target_label!r} pixels inside its detection boxes"
        )
    return MaskMap(acc.astype(np.uint8))


def _fit_scale(longer: int, working_size: int) -> float:
    if longer > working_size:
        return working_size / longer
    for s in SR_SCALES:
        if longer * s <= working_size:
            return float(s)
    return 1.0


def prepare_canvas(
    image: ImageBuffer,
    mask: MaskMap,
    sr: SRBackend,
    working_size: int = 128,
    margin: int = CANVAS_MARGIN,
) -> CanvasPatch:
    """Crop the masked object and fit it large onto a working-size canvas.

    The crop is upscaled by the largest factor in ``SR_SCALES`` that still
    fits; crops already larger than the canvas are shrunk instead (the scale
    then becomes fractional). The mask travels along with nearest sampling.
    """
    if mask.is_empty():
        raise EmptyRegionError("cannot prepare a canvas for an empty mask")
    crop, box = crop_to_mask_bbox(image, mask, margin)
    mask_crop = MaskMap(mask.data[box.y0 : box.y1, box.x0 : box.x1])
    longer = max(crop.height, crop.width)
    scale = _fit_scale(longer, working_size)
    if scale >= 1.0:
        s = int(scale)
        scaled = sr.upscale(crop, s) if s > 1 else crop
        if (scaled.height, scaled.width) != (crop.height * s, crop.width * s):
            raise BackendError("SR backend violated its output-dimension contract")
    else:
        scaled = resize_image(
            crop,
            max(1, round(crop.height * scale)),
            max(1, round(crop.width * scale)),
            "bilinear",
        )
    scaled_mask = resize_mask_nearest(mask_crop, scaled.height, scaled.width)
    y_off = (working_size - scaled.height) // 2
    x_off = (working_size - scaled.width) // 2
    canvas = np.zeros((working_size, working_size, image.channels), dtype=np.float32)
    canvas[y_off : y_off + scaled.height, x_off : x_off + scaled.width] = scaled.data
    canvas_mask = np.zeros((working_size, working_size), dtype=np.uint8)
    canvas_mask[y_off : y_off + scaled.height, x_off : x_off + scaled.width] = scaled_mask.data
    content_box = BoundingBox(y_off, x_off, y_off + scaled.height, x_off + scaled.width)
    return CanvasPatch(
        image=ImageBuffer(canvas),
        source_box=box,
        canvas_scale=scale,
        mask=MaskMap(canvas_mask),
        content_box=content_box,
    )


def restore_canvas_to_frame(
    canvas: CanvasPatch,
    edited: ImageBuffer,
    frame_height: int,
    frame_width: int,
) -> ImageBuffer:
    """Map an edited canvas back into a zero-backed full frame.

    Inverts prepare_canvas: strip the padding, resize the content back to
    the source crop size, paste at the source box.
    """
    if (edited.height, edited.width) != (canvas.image.height, canvas.image.width):
        raise BackendError("edited image does not match canvas dimensions")
    cb = canvas.content_box
    content = ImageBuffer(edited.data[cb.y0 : cb.y1, cb.x0 : cb.x1].copy())
    sb = canvas.source_box
    restored = resize_image(content, sb.height, sb.width, "bilinear")
    frame = ImageBuffer.zeros(frame_height, frame_width, edited.channels)
    return paste_patch(frame, restored, sb)


@dataclass(frozen=True)
class PreprocResult:
    split: RegionSplit
    canvas: CanvasPatch
    seg: SegMap
    target: TargetSelection
    detections: tuple[DetectedObject, ...]


def run_preprocessing(
    image: ImageBuffer,
    instruction: ParsedInstruction,
    seg_backend: SegmentationBackend,
    det_backend: DetectionBackend,
    sr_backend: SRBackend,
    table: EmbeddingTable,
    working_size: int = 128,
) -> PreprocResult:
    """Segment, detect, select target, mask, split and build the canvas.

    Errors carry the failing stage name so interactive callers can surface
    where the pipeline stopped.
    """
    try:
        seg = seg_backend.segment(image)
        if (seg.height, seg.width) != (image.height, image.width):
            raise BackendError("segmentation backend returned wrong dimensions")
    except SegEditError as err:
        raise with_stage(err, "segmentation")
    try:
        detections = det_backend.detect(image)
        if not detections:
            raise NoTargetError("no objects detected")
    except SegEditError as err:
        raise with_stage(err, "detection")
    try:
        candidates = list(dict.fromkeys(d.label for d in detections))
        target = select_target_class(candidates, instruction, table)
    except SegEditError as err:
        raise with_stage(err, "selection")
    try:
        mask = build_text_relevant_mask(seg, list(detections), target.label)
        split = split_by_mask(image, mask)
    except SegEditError as err:
        raise with_stage(err, "masking")
    try:
        canvas = prepare_canvas(split.relevant, mask, sr_backend, working_size)
    except SegEditError as err:
        raise with_stage(err, "canvas")
    return PreprocResult(
        split=split,
        canvas=canvas,
        seg=seg,
        target=target,
        detections=tuple(detections),
    )
