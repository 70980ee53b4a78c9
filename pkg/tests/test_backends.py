"""Toy analytic backends and the external subprocess protocol."""

import sys

import numpy as np
import pytest

from segedit.backends import (
    BilinearSRBackend,
    DetectedObject,
    ExternalSegmentationBackend,
    ExternalSRBackend,
    ToyDetectionBackend,
    ToySegmentationBackend,
    create_backend,
    detections_from_segmap,
)
from segedit.dataset import ShapeSpec, make_synthetic_dataset, render_scene
from segedit.errors import BackendError, ParameterError
from segedit.imagecore import BoundingBox, ImageBuffer, SegMap


def test_toy_segmenter_recovers_ground_truth(toy_seg):
    for sample in make_synthetic_dataset(8, seed=42, size=64):
        seg = toy_seg.segment(sample.image)
        assert np.array_equal(seg.data, sample.seg.data)
        assert seg.palette == sample.seg.palette


def test_toy_detector_boxes(toy_det):
    spec = ShapeSpec("square", "blue", 20, 24, 6)
    image, _ = render_scene((spec,), 0, 48)
    dets = toy_det.detect(image)
    assert len(dets) == 1
    det = dets[0]
    assert det.label == "square"
    assert det.class_id == 2
    assert (det.box.y0, det.box.x0, det.box.y1, det.box.x1) == (14, 18, 27, 31)


def test_toy_detector_multi_shape(toy_det):
    sample = None
    for s in make_synthetic_dataset(30, seed=8, size=64):
        if len(s.shapes) == 3:
            sample = s
            break
    assert sample is not None
    labels = sorted(d.label for d in toy_det.detect(sample.image))
    assert labels == sorted(s.kind for s in sample.shapes)


def test_detections_from_segmap():
    data = np.zeros((20, 20), np.int32)
    data[2:6, 2:6] = 1
    data[10:14, 10:14] = 1
    data[2:6, 12:16] = 2
    seg = SegMap(data, {1: "circle", 2: "square"})
    dets = detections_from_segmap(seg)
    assert len(dets) == 3  # two circle instances, one square
    circle_boxes = sorted(
        (d.box.y0, d.box.x0) for d in dets if d.label == "circle"
    )
    assert circle_boxes == [(2, 2), (10, 10)]


def test_bilinear_sr_dims(rng):
    img = ImageBuffer(rng.random((5, 7, 3)).astype(np.float32))
    sr = BilinearSRBackend()
    up = sr.upscale(img, 4)
    assert (up.height, up.width) == (20, 28)
    assert np.array_equal(sr.upscale(img, 1).data, img.data)
    with pytest.raises(ParameterError):
        sr.upscale(img, 0)


def test_detected_object_validation():
    with pytest.raises(ParameterError):
        DetectedObject("x", 1.5, BoundingBox(0, 0, 1, 1), 1)


def test_create_backend_registry():
    assert isinstance(create_backend("segmentation", "toy"), ToySegmentationBackend)
    assert isinstance(create_backend("detection", "toy"), ToyDetectionBackend)
    assert isinstance(create_backend("sr", "toy"), BilinearSRBackend)
    with pytest.raises(ParameterError):
        create_backend("segmentation", "bogus")
    with pytest.raises(ParameterError):
        create_backend("bogus", "toy")


# ---------------------------------------------------------------------------
# external subprocess protocol
# ---------------------------------------------------------------------------

_CHILD_SEG = r"""
import io, json, sys
import numpy as np
from PIL import Image

raw = sys.stdin.buffer.read()
newline = raw.find(b"\n")
header = json.loads(raw[:newline])
with Image.open(io.BytesIO(raw[newline + 1:])) as im:
    arr = np.asarray(im.convert("RGB"))
seg = (arr[:, :, 0] > 128).astype(np.uint8)  # red-ish pixels are class 1
buf = io.BytesIO()
Image.fromarray(seg, mode="L").save(buf, format="PNG")
body = buf.getvalue()
reply = {"palette": {"1": "object"}, "png_bytes": len(body)}
sys.stdout.buffer.write(json.dumps(reply).encode() + b"\n" + body)
"""

_CHILD_SR = r"""
import io, json, sys
import numpy as np
from PIL import Image

raw = sys.stdin.buffer.read()
newline = raw.find(b"\n")
header = json.loads(raw[:newline])
scale = int(header["scale"])
with Image.open(io.BytesIO(raw[newline + 1:])) as im:
    im = im.convert("RGB")
    up = im.resize((im.width * scale, im.height * scale), Image.NEAREST)
buf = io.BytesIO()
up.save(buf, format="PNG")
body = buf.getvalue()
sys.stdout.buffer.write(json.dumps({"png_bytes": len(body)}).encode() + b"\n" + body)
"""


def _child_command(script: str, tmp_path) -> str:
    path = tmp_path / "child.py"
    path.write_text(script)
    return f"{sys.executable} {path}"


def test_external_segmentation_backend(tmp_path, rng):
    img_data = np.zeros((8, 8, 3), np.float32)
    img_data[2:5, 2:5, 0] = 1.0
    backend = ExternalSegmentationBackend(_child_command(_CHILD_SEG, tmp_path))
    seg = backend.segment(ImageBuffer(img_data))
    expected = np.zeros((8, 8), np.int32)
    expected[2:5, 2:5] = 1
    assert np.array_equal(seg.data, expected)
    assert seg.palette == {1: "object"}


def test_external_sr_backend(tmp_path, rng):
    img = ImageBuffer(np.round(rng.random((4, 4, 3)) * 255).astype(np.float32) / 255.0)
    backend = ExternalSRBackend(_child_command(_CHILD_SR, tmp_path))
    up = backend.upscale(img, 2)
    assert (up.height, up.width) == (8, 8)
    assert np.array_equal(up.data[::2, ::2], img.data)  # nearest replication


def test_external_backend_failure(tmp_path):
    path = tmp_path / "bad.py"
    path.write_text("import sys; sys.exit(3)")
    backend = ExternalSRBackend(f"{sys.executable} {path}")
    with pytest.raises(BackendError):
        backend.upscale(ImageBuffer.zeros(4, 4), 2)


def test_external_backend_garbage_header(tmp_path):
    path = tmp_path / "garbage.py"
    path.write_text("import sys; sys.stdin.buffer.read(); sys.stdout.write('not json\\n')")
    backend = ExternalSRBackend(f"{sys.executable} {path}")
    with pytest.raises(BackendError):
        backend.upscale(ImageBuffer.zeros(4, 4), 2)


def test_create_external_backend():
    backend = create_backend("sr", "external:echo hi")
    assert isinstance(backend, ExternalSRBackend)
    assert backend.command == ["echo", "hi"]
