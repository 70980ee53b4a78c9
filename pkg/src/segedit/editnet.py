"""The manipulation network: text encoding, affine fusion, attention, and
the detail-correction generator, plus keyword-driven segmentation transforms.

Architecture notes. Feature fusion follows the affine form
``hidden * W(visual) + B(visual)`` with 3x3 convolutions. The cascade has
three fully convolutional stages at 1/4, 1/2 and full working resolution,
each fused with canvas-encoder features of the super-resolved object crop,
so one set of weights serves any working size. The detail-correction stage
is anchored to the canvas: its head emits a bounded residual on top of the
canvas pixels and the result is composited back under the target mask, which
makes "only the text-relevant content changes" a hard architectural
guarantee rather than a learned tendency.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import EmptyRegionError, NoTargetError, ParameterError, ShapeError
from .imagecore import ImageBuffer, MaskMap, SegMap, scale_mask_about_centroid
from .instructions import Action, ActionKind, ParsedInstruction
from .preproc import CanvasPatch

__all__ = [
    "FeatureMap",
    "TextEmbedding",
    "EditNetConfig",
    "GeneratorWeights",
    "DiscriminatorWeights",
    "encode_text",
    "affine_fuse",
    "attend",
    "main_module_forward",
    "detail_forward",
    "apply_action_to_segmap",
    "AffineFusion",
    "AttentionModule",
    "token_ids",
]


@dataclass(frozen=True)
class FeatureMap:
    """H x W x D real-valued activation grid."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise ShapeError(f"feature map must be (H, W, D), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ParameterError("feature map contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[2]

    def to_tensor(self) -> torch.Tensor:
        return torch.from_numpy(np.transpose(self.data, (2, 0, 1)).copy()).unsqueeze(0)

    @staticmethod
    def from_tensor(t: torch.Tensor) -> "FeatureMap":
        arr = t.detach().squeeze(0).permute(1, 2, 0).numpy()
        return FeatureMap(arr)


@dataclass(frozen=True)
class TextEmbedding:
    """Per-token visual vectors (T x D) and the instruction summary vector."""

    word_visual: np.ndarray
    word_instruction: np.ndarray

    def __post_init__(self):
        wv = np.asarray(self.word_visual, dtype=np.float32)
        wi = np.asarray(self.word_instruction, dtype=np.float32)
        if wv.ndim != 2 or wv.shape[0] < 1:
            raise ShapeError("word_visual must be (T, D) with T >= 1")
        if wi.shape != (wv.shape[1],):
            raise ShapeError("word_instruction must match embedding dim")
        if not (np.isfinite(wv).all() and np.isfinite(wi).all()):
            raise ParameterError("text embedding contains non-finite values")
        wv.flags.writeable = False
        wi.flags.writeable = False
        object.__setattr__(self, "word_visual", wv)
        object.__setattr__(self, "word_instruction", wi)

    @property
    def token_count(self) -> int:
        return self.word_visual.shape[0]

    @property
    def dim(self) -> int:
        return self.word_visual.shape[1]


@dataclass(frozen=True)
class EditNetConfig:
    text_dim: int = 32
    stage_channels: int = 32
    canvas_channels: tuple[int, int, int, int] = (16, 24, 32, 48)
    z_dim: int = 16
    residual_blocks: int = 2
    vocab_size: int = 128

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas_channels"] = list(self.canvas_channels)
        return d

    @staticmethod
    def from_dict(d: dict) -> "EditNetConfig":
        d = dict(d)
        d["canvas_channels"] = tuple(d["canvas_channels"])
        return EditNetConfig(**d)


def token_ids(tokens: tuple[str, ...], vocab_size: int) -> list[int]:
    """Stable hash-bucket ids so the vocabulary never needs a fit pass."""
    out = []
    for tok in tokens:
        digest = hashlib.sha256(tok.encode("utf-8")).digest()
        out.append(int.from_bytes(digest[:4], "big") % vocab_size)
    return out


class TextEncoderNet(nn.Module):
    """Token embedding + GRU; hidden states are the word-visual rows and the
    final state is the instruction vector."""

    def __init__(self, cfg: EditNetConfig):
        super().__init__()
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.text_dim)
        self.rnn = nn.GRU(cfg.text_dim, cfg.text_dim, batch_first=True)

    def forward(self, ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        emb = self.embedding(ids)
        states, last = self.rnn(emb)
        return states, last.squeeze(0)


class CanvasEncoderNet(nn.Module):
    """Feature pyramid over the canvas (the pretrained-backbone stand-in).

    Levels: full, 1/2, 1/4 and 1/8 resolution.
    """

    def __init__(self, cfg: EditNetConfig):
        super().__init__()
        c0, c1, c2, c3 = cfg.canvas_channels
        self.stem = nn.Conv2d(3, c0, 3, padding=1)
        self.down1 = nn.Conv2d(c0, c1, 4, stride=2, padding=1)
        self.down2 = nn.Conv2d(c1, c2, 4, stride=2, padding=1)
        self.down3 = nn.Conv2d(c2, c3, 4, stride=2, padding=1)
        self.region_proj = nn.Conv2d(c3, cfg.text_dim, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        f0 = torch.tanh(self.stem(x))
        f1 = torch.tanh(self.down1(f0))
        f2 = torch.tanh(self.down2(f1))
        f3 = torch.tanh(self.down3(f2))
        return f0, f1, f2, f3

    def project_regions(self, deep: torch.Tensor) -> torch.Tensor:
        """Region features in the word-embedding space, flattened to (B, D, R)."""
        return self.region_proj(deep).flatten(2)


class AffineFusion(nn.Module):
    """Affine fusion: hidden * W(visual) + B(visual), 3x3 convolutions."""

    def __init__(self, hidden_ch: int, visual_ch: int):
        super().__init__()
        self.scale = nn.Conv2d(visual_ch, hidden_ch, 3, padding=1)
        self.shift = nn.Conv2d(visual_ch, hidden_ch, 3, padding=1)

    def set_identity(self) -> None:
        """Make the fusion a no-op: W(v) = 1, B(v) = 0 for every v."""
        with torch.no_grad():
            self.scale.weight.zero_()
            self.scale.bias.fill_(1.0)
            self.shift.weight.zero_()
            self.shift.bias.zero_()

    def forward(self, hidden: torch.Tensor, visual: torch.Tensor) -> torch.Tensor:
        if visual.shape[-2:] != hidden.shape[-2:]:
            visual = F.interpolate(
                visual, size=hidden.shape[-2:], mode="bilinear", align_corners=False
            )
        return hidden * self.scale(visual) + self.shift(visual)


class AttentionModule(nn.Module):
    """Spatial and channel-wise word attention.

    Spatial: each pixel attends over word-visual rows (softmax across words)
    and collects a context vector. Channel: each channel attends over words
    through a pooled descriptor. The two context maps are concatenated, so
    the output depth is twice the hidden depth.
    """

    def __init__(self, hidden_ch: int, text_dim: int):
        super().__init__()
        self.word_proj_spatial = nn.Linear(text_dim, hidden_ch)
        self.word_proj_channel = nn.Linear(text_dim, hidden_ch)
        self.norm = float(hidden_ch) ** 0.5

    def forward(self, hidden: torch.Tensor, words: torch.Tensor) -> torch.Tensor:
        b, c, h, w = hidden.shape
        keys = self.word_proj_spatial(words)  # (B, T, C)
        queries = hidden.flatten(2).transpose(1, 2)  # (B, HW, C)
        logits = queries @ keys.transpose(1, 2) / self.norm  # (B, HW, T)
        alpha = torch.softmax(logits, dim=2)
        ctx_spatial = (alpha @ keys).transpose(1, 2).reshape(b, c, h, w)
        keys_c = self.word_proj_channel(words)  # (B, T, C)
        pooled = hidden.mean(dim=(2, 3))  # (B, C)
        logits_c = pooled.unsqueeze(1) * keys_c / self.norm  # (B, T, C)
        beta = torch.softmax(logits_c, dim=1)
        ctx_channel = (beta * keys_c).sum(dim=1)  # (B, C)
        ctx_channel = ctx_channel[:, :, None, None].expand(b, c, h, w)
        return torch.cat([ctx_spatial, ctx_channel], dim=1)

    def spatial_weights(self, hidden: torch.Tensor, words: torch.Tensor) -> torch.Tensor:
        keys = self.word_proj_spatial(words)
        queries = hidden.flatten(2).transpose(1, 2)
        return torch.softmax(queries @ keys.transpose(1, 2) / self.norm, dim=2)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def set_zero(self) -> None:
        with torch.no_grad():
            for conv in (self.conv1, self.conv2):
                conv.weight.zero_()
                conv.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(torch.tanh(self.conv1(x)))


class StageBlock(nn.Module):
    """One cascade stage: fuse canvas features, refine, emit an RGB preview."""

    def __init__(self, in_ch: int, out_ch: int, visual_ch: int):
        super().__init__()
        self.pre = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.fusion = AffineFusion(out_ch, visual_ch)
        self.post = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.to_rgb = nn.Conv2d(out_ch, 3, 3, padding=1)

    def forward(self, x: torch.Tensor, visual: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = torch.tanh(self.pre(x))
        h = self.fusion(h, visual)
        h = torch.tanh(self.post(h))
        return h, torch.sigmoid(self.to_rgb(h))


class MainModuleNet(nn.Module):
    """Three-stage generator cascade over the canvas."""

    def __init__(self, cfg: EditNetConfig):
        super().__init__()
        c0, c1, c2, _c3 = cfg.canvas_channels
        ch = cfg.stage_channels
        self.z_dim = cfg.z_dim
        in1 = c2 + cfg.z_dim + cfg.text_dim
        self.stage1 = StageBlock(in1, ch, c2)
        self.stage2 = StageBlock(ch, ch, c1)
        self.stage3 = StageBlock(ch, ch, c0)

    def forward(
        self,
        pyramid: tuple[torch.Tensor, ...],
        instruction_vec: torch.Tensor,
        noise: torch.Tensor,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        f0, f1, f2, _f3 = pyramid
        b = f2.shape[0]
        h4, w4 = f2.shape[-2:]
        z_map = noise[:, :, None, None].expand(b, noise.shape[1], h4, w4)
        t_map = instruction_vec[:, :, None, None].expand(b, instruction_vec.shape[1], h4, w4)
        x = torch.cat([f2, z_map, t_map], dim=1)
        h1, img1 = self.stage1(x, f2)
        h1_up = F.interpolate(h1, scale_factor=2, mode="nearest")
        h2, img2 = self.stage2(h1_up, f1)
        h2_up = F.interpolate(h2, scale_factor=2, mode="nearest")
        h3, img3 = self.stage3(h2_up, f0)
        return h3, [img1, img2, img3]


class DetailCorrectionNet(nn.Module):
    """Detail-correction generator: word attention + canvas fusion + bounded
    residual repaint, composited back under the target mask."""

    def __init__(self, cfg: EditNetConfig):
        super().__init__()
        ch = cfg.stage_channels
        self.attention = AttentionModule(ch, cfg.text_dim)
        self.combine = nn.Conv2d(3 * ch, ch, 1)
        self.fusion = AffineFusion(ch, cfg.canvas_channels[3])
        self.residuals = nn.ModuleList(
            ResidualBlock(ch) for _ in range(cfg.residual_blocks)
        )
        self.merge_instruction = nn.Conv2d(ch + cfg.text_dim, ch, 3, padding=1)
        self.head = nn.Conv2d(ch, 3, 3, padding=1)

    def set_identity_head(self) -> None:
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()

    def repaint(
        self,
        last_hidden: torch.Tensor,
        words: torch.Tensor,
        instruction_vec: torch.Tensor,
        canvas_deep: torch.Tensor,
        canvas_img: torch.Tensor,
    ) -> torch.Tensor:
        attn = self.attention(last_hidden, words)
        a = torch.tanh(self.combine(torch.cat([last_hidden, attn], dim=1)))
        v = F.interpolate(canvas_deep, size=a.shape[-2:], mode="bilinear", align_corners=False)
        a_tilde = self.fusion(a, v)
        for block in self.residuals:
            a_tilde = block(a_tilde)
        b, _, h, w = a_tilde.shape
        t_map = instruction_vec[:, :, None, None].expand(b, instruction_vec.shape[1], h, w)
        feat = torch.tanh(self.merge_instruction(torch.cat([a_tilde, t_map], dim=1)))
        if feat.shape[-2:] != canvas_img.shape[-2:]:
            feat = F.interpolate(feat, size=canvas_img.shape[-2:], mode="bilinear", align_corners=False)
        delta = torch.tanh(self.head(feat))
        return torch.clamp(canvas_img + delta, 0.0, 1.0)

    def forward(
        self,
        last_hidden: torch.Tensor,
        words: torch.Tensor,
        instruction_vec: torch.Tensor,
        canvas_deep: torch.Tensor,
        canvas_img: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        raw = self.repaint(last_hidden, words, instruction_vec, canvas_deep, canvas_img)
        return raw * mask + canvas_img * (1.0 - mask)


class StageDiscriminatorNet(nn.Module):
    """Real/fake head plus a conditional text-image correlation head."""

    def __init__(self, cfg: EditNetConfig, levels: int):
        super().__init__()
        ch = cfg.stage_channels
        layers: list[nn.Module] = [nn.Conv2d(3, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        for _ in range(levels - 1):
            layers += [nn.Conv2d(ch, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.trunk = nn.Sequential(*layers)
        self.uncond = nn.Linear(ch, 1)
        self.cond = nn.Sequential(
            nn.Linear(ch + cfg.text_dim, ch),
            nn.LeakyReLU(0.2),
            nn.Linear(ch, 1),
        )

    def forward(self, image: torch.Tensor, instruction_vec: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feat = self.trunk(image).mean(dim=(2, 3))
        logit_rf = self.uncond(feat).squeeze(1)
        logit_cor = self.cond(torch.cat([feat, instruction_vec], dim=1)).squeeze(1)
        return logit_rf, logit_cor


class GeneratorWeights:
    """All generator-side parameter tensors plus the architecture config.

    ``trained_working_size`` records the canvas size the weights were
    optimized at; the engine follows it by default since the repaint quality
    does not transfer across large resolution shifts.
    """

    kind = "generator"

    def __init__(self, config: EditNetConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.trained_working_size: int | None = None
        torch.manual_seed(seed)
        self.text_encoder = TextEncoderNet(config)
        self.canvas_encoder = CanvasEncoderNet(config)
        self.main = MainModuleNet(config)
        self.detail = DetailCorrectionNet(config)
        self.eval()

    def modules(self) -> dict[str, nn.Module]:
        return {
            "text_encoder": self.text_encoder,
            "canvas_encoder": self.canvas_encoder,
            "main": self.main,
            "detail": self.detail,
        }

    def eval(self) -> "GeneratorWeights":
        for m in self.modules().values():
            m.eval()
        return self

    def save(self, path) -> None:
        from .checkpoint import save_weights

        save_weights(path, self)

    @staticmethod
    def load(path) -> "GeneratorWeights":
        from .checkpoint import load_weights

        weights = load_weights(path)
        if not isinstance(weights, GeneratorWeights):
            raise ParameterError(f"{path} does not hold generator weights")
        return weights


class DiscriminatorWeights:
    """Stage discriminators (one per cascade stage) plus the detail stage's."""

    kind = "discriminator"

    def __init__(self, config: EditNetConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        torch.manual_seed(seed + 1)
        self.stages = [StageDiscriminatorNet(config, levels) for levels in (2, 3, 4)]
        self.detail = StageDiscriminatorNet(config, 4)
        self.eval()

    def modules(self) -> dict[str, nn.Module]:
        out = {f"stage{i}": d for i, d in enumerate(self.stages)}
        out["detail"] = self.detail
        return out

    def eval(self) -> "DiscriminatorWeights":
        for m in self.modules().values():
            m.eval()
        return self

    def save(self, path) -> None:
        from .checkpoint import save_weights

        save_weights(path, self)

    @staticmethod
    def load(path) -> "DiscriminatorWeights":
        from .checkpoint import load_weights

        weights = load_weights(path)
        if not isinstance(weights, DiscriminatorWeights):
            raise ParameterError(f"{path} does not hold discriminator weights")
        return weights


# ---------------------------------------------------------------------------
# Operation wrappers over the domain types.
# ---------------------------------------------------------------------------


def encode_text(instruction: ParsedInstruction, weights: GeneratorWeights) -> TextEmbedding:
    """Encode the instruction's descriptive tokens (all tokens as fallback)."""
    tokens = instruction.descriptive_tokens() or instruction.tokens
    if not tokens:
        raise ParameterError("cannot encode an instruction with no tokens")
    ids = torch.tensor([token_ids(tokens, weights.config.vocab_size)], dtype=torch.long)
    with torch.no_grad():
        states, last = weights.text_encoder(ids)
    return TextEmbedding(
        word_visual=states.squeeze(0).numpy(),
        word_instruction=last.squeeze(0).numpy(),
    )


def affine_fuse(hidden: FeatureMap, visual: FeatureMap, params: AffineFusion) -> FeatureMap:
    """Affine fusion of a hidden feature map with visual features."""
    expected_ch = params.scale.in_channels
    if visual.depth != expected_ch:
        raise ShapeError(f"visual depth {visual.depth} != affine fusion input {expected_ch}")
    if params.scale.out_channels != hidden.depth:
        raise ShapeError(f"hidden depth {hidden.depth} != affine fusion output {params.scale.out_channels}")
    with torch.no_grad():
        out = params(hidden.to_tensor(), visual.to_tensor())
    return FeatureMap.from_tensor(out)


def attend(hidden: FeatureMap, text: TextEmbedding, params: AttentionModule) -> FeatureMap:
    """Spatial + channel word attention; output depth is 2x hidden depth."""
    if params.word_proj_spatial.in_features != text.dim:
        raise ShapeError("text dim does not match attention projection")
    if params.word_proj_spatial.out_features != hidden.depth:
        raise ShapeError("hidden depth does not match attention projection")
    words = torch.from_numpy(text.word_visual.copy()).unsqueeze(0)
    with torch.no_grad():
        out = params(hidden.to_tensor(), words)
    return FeatureMap.from_tensor(out)


def _canvas_tensors(canvas: CanvasPatch) -> tuple[torch.Tensor, torch.Tensor]:
    img = torch.from_numpy(np.transpose(canvas.image.data, (2, 0, 1)).copy()).unsqueeze(0)
    mask = torch.from_numpy(canvas.mask.data.astype(np.float32)).unsqueeze(0).unsqueeze(0)
    return img, mask


def main_module_forward(
    canvas: CanvasPatch,
    text: TextEmbedding,
    noise: np.ndarray,
    weights: GeneratorWeights,
) -> tuple[FeatureMap, tuple[ImageBuffer, ImageBuffer, ImageBuffer]]:
    """Run the three-stage cascade; returns last_hidden and the stage previews."""
    noise = np.asarray(noise, dtype=np.float32)
    if noise.shape != (weights.config.z_dim,):
        raise ShapeError(f"noise must have shape ({weights.config.z_dim},)")
    img, _mask = _canvas_tensors(canvas)
    t_i = torch.from_numpy(text.word_instruction.copy()).unsqueeze(0)
    z = torch.from_numpy(noise).unsqueeze(0)
    with torch.no_grad():
        pyramid = weights.canvas_encoder(img)
        last_hidden, stage_imgs = weights.main(pyramid, t_i, z)
    images = tuple(
        ImageBuffer(s.squeeze(0).permute(1, 2, 0).numpy().clip(0.0, 1.0))
        for s in stage_imgs
    )
    return FeatureMap.from_tensor(last_hidden), images  # type: ignore[return-value]


def detail_forward(
    last_hidden: FeatureMap,
    text: TextEmbedding,
    canvas: CanvasPatch,
    seg: SegMap,
    weights: GeneratorWeights,
    target_class: int,
) -> ImageBuffer:
    """Detail-correction repaint confined to the target class region.

    ``seg`` guides the generation: pixels outside its target-class region
    come back equal to the canvas, bit-exact.
    """
    if (seg.height, seg.width) != (canvas.image.height, canvas.image.width):
        raise ShapeError("segmentation map must match canvas dimensions")
    target_mask = seg.class_mask(target_class)
    if target_mask.is_empty():
        raise NoTargetError(f"segmentation has no pixels of class {target_class}")
    img, _ = _canvas_tensors(canvas)
    mask = torch.from_numpy(target_mask.data.astype(np.float32)).unsqueeze(0).unsqueeze(0)
    words = torch.from_numpy(text.word_visual.copy()).unsqueeze(0)
    t_i = torch.from_numpy(text.word_instruction.copy()).unsqueeze(0)
    with torch.no_grad():
        pyramid = weights.canvas_encoder(img)
        out = weights.detail(last_hidden.to_tensor(), words, t_i, pyramid[3], img, mask)
    return ImageBuffer(out.squeeze(0).permute(1, 2, 0).numpy())


def apply_action_to_segmap(seg: SegMap, target_class: int, action: Action) -> SegMap:
    """Transform the segmentation map per the keyword action.

    Resize replaces the target region with its centroid-scaled version;
    growth overwrites neighboring classes, shrink vacates to background.
    Remove clears the class. Attribute and background swap leave it alone.
    """
    kind = action.kind
    if kind in (ActionKind.ATTRIBUTE, ActionKind.BACKGROUND_SWAP):
        return seg
    region = seg.class_mask(target_class)
    if kind is ActionKind.REMOVE:
        if region.is_empty():
            return seg  # removing an absent class is a no-op
        data = seg.data.copy()
        data[data == target_class] = 0
        return seg.with_data(data)
    assert kind is ActionKind.RESIZE
    if region.is_empty():
        raise EmptyRegionError(f"class {target_class} has no pixels to resize")
    scaled = scale_mask_about_centroid(region, float(action.factor))
    data = seg.data.copy()
    data[data == target_class] = 0
    data[scaled.data == 1] = target_class
    return seg.with_data(data)
