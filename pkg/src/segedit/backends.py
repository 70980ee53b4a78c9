"""Pluggable segmentation / detection / super-resolution / inpainting backends.

The production-scale networks these stand in for are external artifacts, so
the engine talks to them through the small contracts below. Toy reference
backends keep every test hermetic: the analytic segmenter recovers exact
masks on scenes rendered by :mod:`segedit.dataset`, the reference SR is a
bilinear resize, and the reference inpainter lives in :mod:`segedit.combiner`.

External backends run as subprocesses speaking a one-line JSON header
followed by raw PNG bytes on stdin/stdout (see ``ExternalProcessBackend``).
"""

from __future__ import annotations

import io
import json
import subprocess
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import BackendError, ParameterError
from .imagecore import (
    BoundingBox,
    ImageBuffer,
    MaskMap,
    SegMap,
    resize_image,
)

__all__ = [
    "DetectedObject",
    "SegmentationBackend",
    "DetectionBackend",
    "SRBackend",
    "ToySegmentationBackend",
    "ToyDetectionBackend",
    "BilinearSRBackend",
    "ExternalSegmentationBackend",
    "ExternalSRBackend",
    "create_backend",
    "SHAPE_CLASS_IDS",
    "SHAPE_PALETTE",
]


# Fixed class ids shared by the synthetic renderer and the toy backends.
SHAPE_CLASS_IDS = {"circle": 1, "square": 2, "triangle": 3}
SHAPE_PALETTE = {v: k for k, v in SHAPE_CLASS_IDS.items()}


@dataclass(frozen=True)
class DetectedObject:
    """One detected instance: label, confidence, box and seg-map class id."""

    label: str
    confidence: float
    box: BoundingBox
    class_id: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ParameterError("confidence must lie in [0, 1]")


@runtime_checkable
class SegmentationBackend(Protocol):
    def segment(self, image: ImageBuffer) -> SegMap: ...


@runtime_checkable
class DetectionBackend(Protocol):
    def detect(self, image: ImageBuffer) -> list[DetectedObject]: ...


@runtime_checkable
class SRBackend(Protocol):
    def upscale(self, image: ImageBuffer, scale: int) -> ImageBuffer: ...


_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _label_components(fg: np.ndarray) -> np.ndarray:
    """4-connected component labels for a boolean grid (0 = background)."""
    labels, _count = ndimage.label(fg, structure=_CONN4)
    return labels.astype(np.int32)


def _classify_component(component: np.ndarray) -> str:
    """Shape class from fill ratio of the component inside its bbox.

    Solid squares fill 100% of their bounding box, rasterized discs
    0.78-0.86, isoceles triangles ~0.5; thresholds sit between plateaus.
    """
    ys, xs = np.nonzero(component)
    bbox_area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
    fill = ys.size / bbox_area
    if fill >= 0.97:
        return "square"
    if fill >= 0.63:
        return "circle"
    return "triangle"


class ToySegmentationBackend:
    """Analytic segmenter for synthetic scenes.

    Foreground pixels are those matching one of the renderer's shape colors
    within ``tolerance``; connected components are classified by geometry.
    Backgrounds in the synthetic set avoid the shape palette, so on rendered
    scenes this recovers the ground-truth raster exactly.
    """

    def __init__(self, shape_colors: Sequence[tuple[float, float, float]] | None = None,
                 tolerance: float = 0.02):
        from .dataset import SHAPE_COLOR_VALUES  # local import, avoids cycle

        self.shape_colors = np.asarray(
            shape_colors if shape_colors is not None else SHAPE_COLOR_VALUES,
            dtype=np.float32,
        )
        self.tolerance = tolerance

    def _foreground(self, image: ImageBuffer) -> np.ndarray:
        diff = np.abs(image.data[:, :, None, :] - self.shape_colors[None, None, :, :])
        return (diff.max(axis=3) <= self.tolerance).any(axis=2)

    def segment(self, image: ImageBuffer) -> SegMap:
        fg = self._foreground(image)
        labels = _label_components(fg)
        seg = np.zeros(fg.shape, dtype=np.int32)
        for comp_id in range(1, labels.max() + 1):
            comp = labels == comp_id
            if comp.sum() < 4:  # speckles can't be classified
                continue
            seg[comp] = SHAPE_CLASS_IDS[_classify_component(comp)]
        return SegMap(seg, SHAPE_PALETTE)


class ToyDetectionBackend:
    """Analytic detector: one box per connected shape component."""

    def __init__(self, segmenter: ToySegmentationBackend | None = None):
        self.segmenter = segmenter or ToySegmentationBackend()

    def detect(self, image: ImageBuffer) -> list[DetectedObject]:
        fg = self.segmenter._foreground(image)
        labels = _label_components(fg)
        out: list[DetectedObject] = []
        for comp_id in range(1, labels.max() + 1):
            comp = labels == comp_id
            if comp.sum() < 4:
                continue
            label = _classify_component(comp)
            ys, xs = np.nonzero(comp)
            box = BoundingBox(int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1)
            out.append(DetectedObject(label, 1.0, box, SHAPE_CLASS_IDS[label]))
        return out


def detections_from_segmap(seg: SegMap) -> list[DetectedObject]:
    """Derive one detection per connected class region of a segmentation map.

    Used when the user supplies a hand-edited map and the detection network
    is bypassed.
    """
    out: list[DetectedObject] = []
    for class_id in seg.present_ids():
        comp_labels = _label_components(seg.data == class_id)
        for comp_id in range(1, comp_labels.max() + 1):
            ys, xs = np.nonzero(comp_labels == comp_id)
            box = BoundingBox(int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1)
            out.append(DetectedObject(seg.palette.get(class_id, str(class_id)), 1.0, box, class_id))
    return out


class BilinearSRBackend:
    """Reference super-resolution: plain bilinear upscale."""

    def upscale(self, image: ImageBuffer, scale: int) -> ImageBuffer:
        if scale < 1:
            raise ParameterError("SR scale must be >= 1")
        if scale == 1:
            return image
        return resize_image(image, image.height * scale, image.width * scale, "bilinear")


# ---------------------------------------------------------------------------
# Subprocess protocol: request = one JSON line + PNG bytes on stdin, response
# = one JSON line + optional PNG bytes on stdout. The header's "kind" names
# the task; "png_bytes" in the response header gives the payload length.
# ---------------------------------------------------------------------------


def _encode_png(image: ImageBuffer) -> bytes:
    arr = np.round(image.data * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _decode_png_rgb(raw: bytes) -> ImageBuffer:
    with Image.open(io.BytesIO(raw)) as im:
        return ImageBuffer(np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0)


def _decode_png_gray(raw: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("L"), dtype=np.int32)


class ExternalProcessBackend:
    """Shared request plumbing for subprocess backends."""

    def __init__(self, command: Sequence[str] | str, timeout: float = 60.0):
        if isinstance(command, str):
            import shlex

            command = shlex.split(command)
        if not command:
            raise ParameterError("external backend needs a command")
        self.command = list(command)
        self.timeout = timeout

    def _call(self, header: dict, png: bytes | None) -> tuple[dict, bytes]:
        payload = json.dumps(header).encode("utf-8") + b"\n" + (png or b"")
        try:
            proc = subprocess.run(
                self.command,
                input=payload,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise BackendError(f"external backend {self.command[0]!r} failed: {exc}")
        if proc.returncode != 0:
            msg = proc.stderr.decode("utf-8", "replace").strip()
            raise BackendError(
                f"external backend exited {proc.returncode}: {msg or 'no stderr'}"
            )
        out = proc.stdout
        newline = out.find(b"\n")
        if newline < 0:
            raise BackendError("external backend reply missing JSON header line")
        try:
            reply = json.loads(out[:newline].decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise BackendError(f"external backend header is not JSON: {exc}")
        body = out[newline + 1 :]
        expected = int(reply.get("png_bytes", len(body)))
        if len(body) < expected:
            raise BackendError("external backend reply body truncated")
        return reply, body[:expected]


class ExternalSegmentationBackend(ExternalProcessBackend):
    def segment(self, image: ImageBuffer) -> SegMap:
        header = {"kind": "segment", "height": image.height, "width": image.width}
        reply, body = self._call(header, _encode_png(image))
        palette = {int(k): str(v) for k, v in reply.get("palette", {}).items()}
        seg = _decode_png_gray(body)
        if seg.shape != (image.height, image.width):
            raise BackendError("external segmenter returned wrong dimensions")
        return SegMap(seg, palette)


class ExternalDetectionBackend(ExternalProcessBackend):
    def detect(self, image: ImageBuffer) -> list[DetectedObject]:
        header = {"kind": "detect", "height": image.height, "width": image.width}
        reply, _body = self._call(header, _encode_png(image))
        out = []
        for det in reply.get("detections", []):
            box = BoundingBox(*[int(v) for v in det["box"]])
            if not box.within(image.height, image.width):
                raise BackendError(f"external detector box {box} out of bounds")
            out.append(
                DetectedObject(
                    str(det["label"]), float(det.get("confidence", 1.0)), box,
                    int(det["class_id"]),
                )
            )
        return out


class ExternalSRBackend(ExternalProcessBackend):
    def upscale(self, image: ImageBuffer, scale: int) -> ImageBuffer:
        header = {"kind": "upscale", "scale": int(scale)}
        _reply, body = self._call(header, _encode_png(image))
        up = _decode_png_rgb(body)
        if (up.height, up.width) != (image.height * scale, image.width * scale):
            raise BackendError("external SR returned wrong dimensions")
        return up


class ExternalInpaintBackend(ExternalProcessBackend):
    """Sends image + hole mask stacked as two PNGs; expects one PNG back."""

    def inpaint(self, image: ImageBuffer, hole: MaskMap) -> ImageBuffer:
        mask_png = io.BytesIO()
        Image.fromarray(hole.data * np.uint8(255), mode="L").save(mask_png, format="PNG")
        img_png = _encode_png(image)
        header = {
            "kind": "inpaint",
            "image_bytes": len(img_png),
            "mask_bytes": len(mask_png.getvalue()),
        }
        reply, body = self._call(header, img_png + mask_png.getvalue())
        result = _decode_png_rgb(body)
        if (result.height, result.width) != (image.height, image.width):
            raise BackendError("external inpainter returned wrong dimensions")
        return result


_EXTERNAL_PREFIX = "external:"


def create_backend(role: str, spec: str):
    """Build a backend from a registry entry like ``"toy"`` or
    ``"external:<command>"``. Roles: segmentation, detection, sr, inpaint."""
    if spec.startswith(_EXTERNAL_PREFIX):
        command = spec[len(_EXTERNAL_PREFIX) :]
        cls = {
            "segmentation": ExternalSegmentationBackend,
            "detection": ExternalDetectionBackend,
            "sr": ExternalSRBackend,
            "inpaint": ExternalInpaintBackend,
        }.get(role)
        if cls is None:
            raise ParameterError(f"unknown backend role {role!r}")
        return cls(command)
    if spec not in ("toy", "reference"):
        raise ParameterError(f"unknown backend spec {spec!r} for role {role!r}")
    if role == "segmentation":
        return ToySegmentationBackend()
    if role == "detection":
        return ToyDetectionBackend()
    if role == "sr":
        return BilinearSRBackend()
    if role == "inpaint":
        from .combiner import DiffusionInpaintBackend

        return DiffusionInpaintBackend()
    raise ParameterError(f"unknown backend role {role!r}")
