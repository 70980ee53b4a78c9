"""The end-to-end editing engine: preprocess, manipulate, combine.

One Engine instance owns the backends, the generator weights and the
embedding table; it is immutable after construction and safe to share, so
the CLI and the session service both drive edits through it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .backends import create_backend, detections_from_segmap
from .combiner import (
    SEAM_BAND_WIDTH,
    BackgroundAsset,
    absorb_color_seam,
    combine_final,
    prepare_background,
)
from .editnet import (
    EditNetConfig,
    GeneratorWeights,
    apply_action_to_segmap,
    encode_text,
    main_module_forward,
    detail_forward,
)
from .errors import AmbiguityError, NoTargetError, ParameterError, SegEditError, with_stage
from .imagecore import (
    ImageBuffer,
    SegMap,
    resize_image,
    scale_image_about_centroid,
    split_by_mask,
)
from .instructions import (
    DEFAULT_NOUNS,
    Action,
    ActionKind,
    EmbeddingTable,
    ParsedInstruction,
    TargetSelection,
    parse_instruction,
    select_target_class,
)
from .preproc import build_text_relevant_mask, prepare_canvas, restore_canvas_to_frame

__all__ = ["EngineConfig", "Engine", "EditOutcome", "load_engine_config"]


DEFAULT_WORKING_SIZE = 128


@dataclass(frozen=True)
class EngineConfig:
    """Engine/service configuration; file values can be overridden through
    SEGEDIT_-prefixed environment variables.

    ``working_size`` None means: follow the loaded weights' trained canvas
    size (repaint quality does not survive large resolution shifts), falling
    back to 128 for untrained weights.
    """

    working_size: int | None = None
    seam_band: int = SEAM_BAND_WIDTH
    segmentation: str = "toy"
    detection: str = "toy"
    sr: str = "toy"
    inpaint: str = "toy"
    weights: str | None = None
    embeddings: str | None = None
    session_root: str = "sessions"
    listen: str = "127.0.0.1:8008"

    def __post_init__(self):
        if self.working_size is not None and self.working_size < 16:
            raise ParameterError("working_size must be >= 16")
        if self.seam_band < 1:
            raise ParameterError("seam_band must be >= 1")


_ENV_FIELDS = {
    "SEGEDIT_WORKING_SIZE": ("working_size", int),
    "SEGEDIT_SEAM_BAND": ("seam_band", int),
    "SEGEDIT_SEGMENTATION": ("segmentation", str),
    "SEGEDIT_DETECTION": ("detection", str),
    "SEGEDIT_SR": ("sr", str),
    "SEGEDIT_INPAINT": ("inpaint", str),
    "SEGEDIT_WEIGHTS": ("weights", str),
    "SEGEDIT_EMBEDDINGS": ("embeddings", str),
    "SEGEDIT_SESSION_ROOT": ("session_root", str),
    "SEGEDIT_LISTEN": ("listen", str),
}


def load_engine_config(
    path: str | Path | None = None, env: Mapping[str, str] | None = None
) -> EngineConfig:
    """Read TOML/JSON config and apply environment overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        raw = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(raw)
        else:
            import json

            data = json.loads(raw)
    env = env if env is not None else os.environ
    config = EngineConfig(**data)
    overrides = {}
    for var, (name, cast) in _ENV_FIELDS.items():
        if var in env:
            overrides[name] = cast(env[var])
    return replace(config, **overrides) if overrides else config


@dataclass(frozen=True)
class EditOutcome:
    """Everything one edit produces."""

    output: ImageBuffer
    seg_in: SegMap
    seg_out: SegMap
    target: TargetSelection
    target_class: int
    action: Action
    report: dict = field(default_factory=dict)


class Engine:
    def __init__(
        self,
        config: EngineConfig | None = None,
        weights: GeneratorWeights | None = None,
        table: EmbeddingTable | None = None,
    ):
        self.config = config or EngineConfig()
        self.seg_backend = create_backend("segmentation", self.config.segmentation)
        self.det_backend = create_backend("detection", self.config.detection)
        self.sr_backend = create_backend("sr", self.config.sr)
        self.inpaint_backend = create_backend("inpaint", self.config.inpaint)
        if weights is not None:
            self.weights = weights
        elif self.config.weights:
            self.weights = GeneratorWeights.load(self.config.weights)
        else:
            self.weights = GeneratorWeights(EditNetConfig(), seed=0)
        if table is not None:
            self.table = table
        elif self.config.embeddings:
            self.table = EmbeddingTable.load_text(self.config.embeddings)
        else:
            self.table = EmbeddingTable.reference()
        self.working_size = (
            self.config.working_size
            or getattr(self.weights, "trained_working_size", None)
            or DEFAULT_WORKING_SIZE
        )

    # -- pieces -------------------------------------------------------------

    def segment(self, image: ImageBuffer) -> SegMap:
        seg = self.seg_backend.segment(image)
        if (seg.height, seg.width) != (image.height, image.width):
            raise with_stage(
                SegEditError("segmentation backend returned wrong dimensions"),
                "segmentation",
            )
        return seg

    def parse_for_scene(self, text: str, detections) -> ParsedInstruction:
        """Parse with the noun lexicon extended by the detected class labels,
        so instructions can name classes only the backend knows about."""
        labels = {d.label.lower() for d in detections}
        return parse_instruction(text, lexicon=DEFAULT_NOUNS | labels)

    def _resolve_action(
        self, parsed: ParsedInstruction, background: ImageBuffer | None
    ) -> Action:
        if background is None:
            return parsed.action
        if parsed.action.kind is ActionKind.ATTRIBUTE:
            return Action.background_swap()
        if parsed.action.kind is ActionKind.BACKGROUND_SWAP:
            return parsed.action
        raise AmbiguityError(
            f"a reference background conflicts with the {parsed.action.kind.value} keyword"
        )

    def _select_target(
        self,
        parsed: ParsedInstruction,
        detections,
        default_target: str | None,
    ) -> TargetSelection:
        candidates = list(dict.fromkeys(d.label for d in detections))
        if not candidates:
            raise NoTargetError("no objects detected")
        if parsed.nouns:
            return select_target_class(candidates, parsed, self.table)
        if default_target and default_target in candidates:
            return TargetSelection(label=default_target, score=1.0)
        if len(candidates) == 1:
            # a bare keyword instruction is unambiguous in a one-class scene
            return TargetSelection(label=candidates[0], score=1.0)
        raise NoTargetError(
            f"instruction {parsed.raw!r} names no object and the scene has "
            f"{len(candidates)} candidate classes"
        )

    # -- the full pipeline ----------------------------------------------------

    def run_edit(
        self,
        image: ImageBuffer,
        instruction_text: str,
        background: ImageBuffer | None = None,
        seg_override: SegMap | None = None,
        default_target: str | None = None,
        seed: int = 0,
    ) -> EditOutcome:
        parsed = parse_instruction(instruction_text)
        action = self._resolve_action(parsed, background)

        if seg_override is not None:
            if (seg_override.height, seg_override.width) != (image.height, image.width):
                raise with_stage(
                    SegEditError("segmentation override has wrong dimensions"), "segmentation"
                )
            seg = seg_override
            detections = detections_from_segmap(seg)
        else:
            seg = self.segment(image)
            try:
                detections = self.det_backend.detect(image)
            except SegEditError as err:
                raise with_stage(err, "detection")
        if not detections:
            raise with_stage(NoTargetError("no objects detected"), "detection")
        # re-parse with the scene labels in the lexicon: same action and
        # descriptive text, but backend-specific labels count as nouns
        parsed = self.parse_for_scene(instruction_text, detections)
        try:
            target = self._select_target(parsed, detections, default_target)
        except SegEditError as err:
            raise with_stage(err, "selection")

        class_ids = [d.class_id for d in detections if d.label == target.label]
        if not class_ids:
            raise with_stage(NoTargetError(f"no detection for {target.label!r}"), "selection")
        target_class = class_ids[0]
        try:
            mask = build_text_relevant_mask(seg, list(detections), target.label)
        except SegEditError as err:
            raise with_stage(err, "masking")
        split = split_by_mask(image, mask)
        seg_out = apply_action_to_segmap(seg, target_class, action)

        background_asset: BackgroundAsset | None = None
        if action.kind is ActionKind.BACKGROUND_SWAP:
            if background is None:
                raise ParameterError("background swap requires a reference background image")
            if (background.height, background.width) != (image.height, image.width):
                background = resize_image(background, image.height, image.width, "bilinear")
            background_asset = prepare_background(
                background, self.seg_backend, self.inpaint_backend
            )

        if action.kind is ActionKind.REMOVE:
            edited_frame = split.irrelevant  # unused: remove keeps the base only
        else:
            edited_frame = self._manipulate(image, split, mask, parsed, seed)
            if action.kind is ActionKind.RESIZE:
                # scale about the same region apply_action_to_segmap scaled,
                # so content lands exactly under the transformed mask
                edited_frame = scale_image_about_centroid(
                    edited_frame, seg.class_mask(target_class), float(action.factor)
                )

        try:
            combined = combine_final(
                edited_frame,
                split,
                seg_out,
                action,
                self.inpaint_backend,
                target_class,
                background_asset,
            )
            output = absorb_color_seam(
                combined, seg_out, self.inpaint_backend, target_class, self.config.seam_band
            )
        except SegEditError as err:
            raise with_stage(err, "combination")

        report = {
            "action": action.kind.value,
            "factor": action.factor,
            "target": target.label,
            "target_class": target_class,
            "score": target.score,
            "low_confidence": target.low_confidence,
            "seed": seed,
        }
        return EditOutcome(
            output=output,
            seg_in=seg,
            seg_out=seg_out,
            target=target,
            target_class=target_class,
            action=action,
            report=report,
        )

    def _manipulate(
        self,
        image: ImageBuffer,
        split,
        mask,
        parsed: ParsedInstruction,
        seed: int,
    ) -> ImageBuffer:
        """Generator path on the canvas; descriptive-text-free instructions
        (bare resize) keep the canvas content untouched."""
        try:
            canvas = prepare_canvas(
                split.relevant, mask, self.sr_backend, self.working_size
            )
        except SegEditError as err:
            raise with_stage(err, "canvas")
        if parsed.descriptive_tokens():
            try:
                emb = encode_text(parsed, self.weights)
                rng = np.random.default_rng(seed)
                noise = rng.standard_normal(self.weights.config.z_dim)
                last_hidden, _stages = main_module_forward(canvas, emb, noise, self.weights)
                canvas_seg = SegMap(canvas.mask.data.astype(np.int32), {1: "target"})
                edited_canvas = detail_forward(
                    last_hidden, emb, canvas, canvas_seg, self.weights, target_class=1
                )
            except SegEditError as err:
                raise with_stage(err, "manipulation")
        else:
            edited_canvas = canvas.image
        return restore_canvas_to_frame(canvas, edited_canvas, image.height, image.width)
