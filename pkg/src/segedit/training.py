"""Training harness: loss formulas, two-phase protocol, desk-scale defaults.

The generator objective combines an adversarial term, a perceptual term, the
complement of the discriminator's text-image correlation score, a word-region
attention matching loss, and an anti-identity regularizer (one minus the mean
absolute difference to the input, so copying the input is penalized). The
discriminator objective adds the correlation score of a deliberately
mismatched caption, sampled by derangement so no batch element keeps its own.

Protocol: the text and canvas encoders are first pretrained with the
word-region matching loss on real pairs and then frozen (they stand in for
the pretrained RNN/backbone); the three-stage main module and the
detail-correction stage are then trained individually, in that order.
During GAN phases each sample is paired with a caption drawn from the whole
dataset, so the generator actually learns to repaint objects per the text
instead of copying its input.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .backends import BilinearSRBackend
from .dataset import SynthSample, make_synthetic_dataset
from .editnet import (
    DiscriminatorWeights,
    EditNetConfig,
    GeneratorWeights,
    token_ids,
)
from .errors import NumericError, ParameterError, ShapeError
from .imagecore import ImageBuffer, MaskMap, split_by_mask
from .preproc import prepare_canvas

__all__ = [
    "LossWeights",
    "TrainConfig",
    "TrainingLosses",
    "loss_reg",
    "loss_generator",
    "loss_discriminator",
    "derangement",
    "make_synthetic_dataset",
    "prepare_training_tensors",
    "train",
    "load_train_config",
    "write_history_csv",
    "HISTORY_FIELDS",
]

HISTORY_FIELDS = ("epoch", "l_adv", "l_per", "l_cor", "l_damsm", "l_reg", "l_g", "l_d")

# word-region attention sharpness / relevance / contrastive temperatures
_GAMMA1, _GAMMA2, _GAMMA3 = 5.0, 5.0, 10.0


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    per: float = 1.0
    cor: float = 1.0
    damsm: float = 1.0
    reg: float = 1.0

    def __post_init__(self):
        for name in ("adv", "per", "cor", "damsm", "reg"):
            if getattr(self, name) < 0:
                raise ParameterError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    learning_rate: float = 2e-4
    batch_size: int = 16
    epochs_main: int = 30
    epochs_detail: int = 10
    pretrain_epochs: int = 8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    working_size: int = 64

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ParameterError("learning rate and batch size must be positive")
        if self.epochs_main < 0 or self.epochs_detail < 0 or self.pretrain_epochs < 0:
            raise ParameterError("epoch counts must be >= 0")
        if self.working_size < 16:
            raise ParameterError("working size must be >= 16")


@dataclass(frozen=True)
class TrainingLosses:
    epoch: int
    l_adv: float
    l_per: float
    l_cor: float
    l_damsm: float
    l_reg: float
    l_g: float
    l_d: float

    def __post_init__(self):
        for name in HISTORY_FIELDS[1:]:
            if not np.isfinite(getattr(self, name)):
                raise NumericError(f"loss component {name} is not finite")

    def as_row(self) -> list:
        return [getattr(self, name) for name in HISTORY_FIELDS]


def loss_reg(edited: ImageBuffer, original: ImageBuffer) -> float:
    """1 - mean |edited - original|: high when the edit copies its input."""
    if edited.data.shape != original.data.shape:
        raise ShapeError("loss_reg needs images of identical shape")
    diff = np.abs(edited.data.astype(np.float64) - original.data.astype(np.float64))
    return float(1.0 - diff.mean())


def loss_generator(
    l_adv: float,
    l_per: float,
    l_cor: float,
    l_damsm: float,
    l_reg: float,
    weights: LossWeights = LossWeights(),
) -> float:
    """Weighted generator objective; the correlation term enters as (1 - cor)."""
    parts = {"l_adv": l_adv, "l_per": l_per, "l_cor": l_cor, "l_damsm": l_damsm, "l_reg": l_reg}
    for name, value in parts.items():
        if not np.isfinite(value):
            raise NumericError(f"generator loss component {name} is not finite")
    return float(
        weights.adv * l_adv
        + weights.per * l_per
        + weights.cor * (1.0 - l_cor)
        + weights.damsm * l_damsm
        + weights.reg * l_reg
    )


def loss_discriminator(l_adv: float, cor_matched: float, cor_mismatched: float) -> float:
    """Adversarial term plus correlation penalties for (mis)matched captions."""
    for name, value in (("l_adv", l_adv), ("cor_matched", cor_matched),
                        ("cor_mismatched", cor_mismatched)):
        if not np.isfinite(value):
            raise NumericError(f"discriminator loss component {name} is not finite")
    return float(l_adv + (1.0 - cor_matched) + cor_mismatched)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Permutation of range(n) with no fixed points (cyclic shift)."""
    if n < 2:
        raise ParameterError("derangement requires n >= 2")
    shift = int(rng.integers(1, n))
    return (np.arange(n) + shift) % n


# ---------------------------------------------------------------------------
# Tensor preparation
# ---------------------------------------------------------------------------


@dataclass
class TrainingTensors:
    images: torch.Tensor  # (N, 3, S, S) object canvases
    masks: torch.Tensor  # (N, 1, S, S)
    captions: torch.Tensor  # (N, T) token ids
    color_names: list[str]
    shape_names: list[str]


def _caption_ids(caption: str, vocab_size: int) -> list[int]:
    return token_ids(tuple(caption.lower().split()), vocab_size)


def prepare_training_tensors(
    dataset: Sequence[SynthSample],
    working_size: int,
    config: EditNetConfig,
) -> TrainingTensors:
    """Build object canvases and caption tensors for the whole dataset."""
    sr = BilinearSRBackend()
    images, masks, captions = [], [], []
    colors, shapes = [], []
    token_len = None
    for sample in dataset:
        class_id = {v: k for k, v in sample.seg.palette.items()}[sample.target_label]
        mask = sample.seg.class_mask(class_id)
        split = split_by_mask(sample.image, mask)
        canvas = prepare_canvas(split.relevant, mask, sr, working_size)
        images.append(np.transpose(canvas.image.data, (2, 0, 1)))
        masks.append(canvas.mask.data[None].astype(np.float32))
        ids = _caption_ids(sample.caption, config.vocab_size)
        if token_len is None:
            token_len = len(ids)
        if len(ids) != token_len:
            raise ParameterError("captions must share token length for batching")
        captions.append(ids)
        colors.append(sample.target_color)
        shapes.append(sample.target_label)
    return TrainingTensors(
        images=torch.from_numpy(np.stack(images).astype(np.float32)),
        masks=torch.from_numpy(np.stack(masks).astype(np.float32)),
        captions=torch.tensor(captions, dtype=torch.long),
        color_names=colors,
        shape_names=shapes,
    )


# ---------------------------------------------------------------------------
# Differentiable loss pieces
# ---------------------------------------------------------------------------


def _word_region_match(
    gen: GeneratorWeights,
    images: torch.Tensor,
    captions: torch.Tensor,
    detach_regions: bool = False,
) -> torch.Tensor:
    """Contrastive word-region attention matching loss over a batch.

    Words attend over region features; per-pair relevance is a smooth max of
    word-context similarities, and matching is scored against the batch in
    both directions.
    """
    states, _last = gen.text_encoder(captions)  # (B, T, D)
    pyramid = gen.canvas_encoder(images)
    regions = gen.canvas_encoder.project_regions(pyramid[3])  # (B, D, R)
    if detach_regions:
        regions = regions.detach()
    b = images.shape[0]
    words = F.normalize(states, dim=2)
    regs = F.normalize(regions, dim=1)
    # relevance of every (caption i, image j) pair
    columns = []
    for j in range(b):
        sim = torch.einsum("btd,dr->btr", words, regs[j])  # (B, T, R)
        attn = torch.softmax(_GAMMA1 * sim, dim=2)
        ctx = torch.einsum("btr,dr->btd", attn, regs[j])
        ctx = F.normalize(ctx, dim=2)
        word_scores = (ctx * words).sum(dim=2)  # (B, T)
        columns.append(torch.logsumexp(_GAMMA2 * word_scores, dim=1) / _GAMMA2)
    logits = _GAMMA3 * torch.stack(columns, dim=1)
    target = torch.arange(b)
    return 0.5 * (F.cross_entropy(logits, target) + F.cross_entropy(logits.t(), target))


def _perceptual(gen: GeneratorWeights, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    fa = gen.canvas_encoder(a)[2]
    fb = gen.canvas_encoder(b)[2]
    return F.mse_loss(fa, fb)


def _adv_g(logit_fake: torch.Tensor) -> torch.Tensor:
    return F.softplus(-logit_fake).mean()


def _adv_d(logit_real: torch.Tensor, logit_fake: torch.Tensor) -> torch.Tensor:
    return F.softplus(-logit_real).mean() + F.softplus(logit_fake).mean()


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------


def _epoch_mean(records: list[dict]) -> dict:
    return {k: float(np.mean([r[k] for r in records])) for k in records[0]}


def _set_requires_grad(module: torch.nn.Module, flag: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(flag)


def train(
    config: TrainConfig,
    dataset: Sequence[SynthSample],
    gen: GeneratorWeights,
    disc: DiscriminatorWeights,
    out_dir: str | Path | None = None,
) -> tuple[GeneratorWeights, DiscriminatorWeights, list[TrainingLosses]]:
    """Run the full protocol and return updated weights plus epoch history.

    Phase order: encoder pretraining (skipped when no GAN epochs are
    requested), then the main cascade, then the detail-correction stage with
    the main cascade frozen. Checkpoints are written every epoch when
    ``out_dir`` is given; a non-finite loss aborts and restores the weights
    of the last completed epoch.
    """
    history: list[TrainingLosses] = []
    total_epochs = config.epochs_main + config.epochs_detail
    if total_epochs == 0:
        return gen, disc, history
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    gen.trained_working_size = config.working_size
    tensors = prepare_training_tensors(dataset, config.working_size, gen.config)
    n = tensors.images.shape[0]
    if n < 2:
        raise ParameterError("training needs at least 2 samples")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    for module in gen.modules().values():
        module.train()
    for module in disc.modules().values():
        module.train()

    # -- phase 0: pretrain and freeze the text / canvas encoders ------------
    if config.pretrain_epochs > 0:
        enc_params = list(gen.text_encoder.parameters()) + list(
            gen.canvas_encoder.parameters()
        )
        enc_opt = torch.optim.Adam(enc_params, lr=10 * config.learning_rate)
        for _epoch in range(config.pretrain_epochs):
            for idx in _batches(n, config.batch_size, rng):
                enc_opt.zero_grad()
                loss = _word_region_match(
                    gen, tensors.images[idx], tensors.captions[idx]
                )
                loss.backward()
                enc_opt.step()
    _set_requires_grad(gen.text_encoder, False)
    _set_requires_grad(gen.canvas_encoder, False)
    gen.text_encoder.eval()
    gen.canvas_encoder.eval()

    snapshot = _snapshot(gen, disc)
    weights = config.loss_weights

    def run_phase(phase: str, epochs: int, start_epoch: int) -> bool:
        nonlocal snapshot
        if epochs == 0:
            return True
        if phase == "main":
            g_params = list(gen.main.parameters())
            d_modules = list(disc.stages)
        else:
            _set_requires_grad(gen.main, False)
            gen.main.eval()
            g_params = list(gen.detail.parameters())
            d_modules = [disc.detail]
        g_opt = torch.optim.Adam(g_params, lr=config.learning_rate, betas=(0.5, 0.999))
        d_opt = torch.optim.Adam(
            [p for m in d_modules for p in m.parameters()],
            lr=config.learning_rate,
            betas=(0.5, 0.999),
        )
        for epoch_ofs in range(epochs):
            epoch = start_epoch + epoch_ofs
            records: list[dict] = []
            for idx in _batches(n, config.batch_size, rng):
                record = _train_step(
                    phase, gen, disc, tensors, idx, rng, g_opt, d_opt, weights, config
                )
                if record is None:
                    _restore(gen, disc, snapshot)
                    return False
                records.append(record)
            mean = _epoch_mean(records)
            history.append(TrainingLosses(epoch=epoch, **mean))
            snapshot = _snapshot(gen, disc)
            if out_path is not None:
                gen.save(out_path / "generator.ckpt")
                disc.save(out_path / "discriminator.ckpt")
                write_history_csv(history, out_path / "history.csv")
        return True

    ok = run_phase("main", config.epochs_main, 0)
    if ok:
        run_phase("detail", config.epochs_detail, config.epochs_main)
    gen.eval()
    disc.eval()
    return gen, disc, history


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n - 1, batch_size):
        idx = order[start : start + batch_size]
        if idx.size >= 2:  # correlation mismatching needs pairs
            yield torch.from_numpy(idx.copy())


def _train_step(
    phase: str,
    gen: GeneratorWeights,
    disc: DiscriminatorWeights,
    tensors: TrainingTensors,
    idx: torch.Tensor,
    rng: np.random.Generator,
    g_opt: torch.optim.Optimizer,
    d_opt: torch.optim.Optimizer,
    weights: LossWeights,
    config: TrainConfig,
) -> dict | None:
    """One alternating G/D update; returns averaged scalar records."""
    imgs = tensors.images[idx]
    masks = tensors.masks[idx]
    b = imgs.shape[0]
    cap_idx = torch.from_numpy(rng.integers(0, tensors.images.shape[0], size=b))
    caps = tensors.captions[cap_idx]
    with torch.no_grad():
        states, t_i = gen.text_encoder(caps)
        pyramid = tuple(p.detach() for p in gen.canvas_encoder(imgs))
    noise = torch.from_numpy(
        rng.standard_normal((b, gen.config.z_dim)).astype(np.float32)
    )

    # --- generator step ---
    g_opt.zero_grad()
    stage_fakes: list[torch.Tensor] = []
    if phase == "main":
        last_hidden, stage_imgs = gen.main(pyramid, t_i, noise)
        fake_full = stage_imgs[-1]
        adv_terms, cor_terms = [], []
        for d_net, fake in zip(disc.stages, stage_imgs):
            logit_rf, logit_cor = d_net(fake, t_i)
            adv_terms.append(_adv_g(logit_rf))
            cor_terms.append(torch.sigmoid(logit_cor).mean())
        l_adv_t = torch.stack(adv_terms).mean()
        l_cor_t = torch.stack(cor_terms).mean()
        stage_fakes = [s.detach() for s in stage_imgs]
    else:
        with torch.no_grad():
            last_hidden, _ = gen.main(pyramid, t_i, noise)
        fake_full = gen.detail(last_hidden, states, t_i, pyramid[3], imgs, masks)
        logit_rf, logit_cor = disc.detail(fake_full, t_i)
        l_adv_t = _adv_g(logit_rf)
        l_cor_t = torch.sigmoid(logit_cor).mean()
    l_per_t = _perceptual(gen, fake_full, imgs)
    l_damsm_t = _word_region_match(gen, fake_full, caps, detach_regions=False)
    l_reg_t = 1.0 - (fake_full - imgs).abs().mean()
    l_g_t = (
        weights.adv * l_adv_t
        + weights.per * l_per_t
        + weights.cor * (1.0 - l_cor_t)
        + weights.damsm * l_damsm_t
        + weights.reg * l_reg_t
    )
    if not torch.isfinite(l_g_t):
        return None
    l_g_t.backward()
    g_opt.step()

    # --- discriminator step ---
    d_opt.zero_grad()
    mismatch = torch.from_numpy(derangement(b, rng))
    t_i_wrong = t_i.detach()[mismatch]
    fake_detached = fake_full.detach()
    if phase == "main":
        d_losses = []
        reals = _multiscale(imgs)
        for d_net, fake, real in zip(disc.stages, stage_fakes, reals):
            logit_real, _ = d_net(real, t_i.detach())
            logit_fake, logit_cor_m = d_net(fake, t_i.detach())
            _, logit_cor_w = d_net(fake, t_i_wrong)
            adv = _adv_d(logit_real, logit_fake)
            cor_m = torch.sigmoid(logit_cor_m).mean()
            cor_w = torch.sigmoid(logit_cor_w).mean()
            d_losses.append(adv + (1.0 - cor_m) + cor_w)
        l_d_t = torch.stack(d_losses).mean()
    else:
        logit_real, _ = disc.detail(imgs, t_i.detach())
        logit_fake, logit_cor_m = disc.detail(fake_detached, t_i.detach())
        _, logit_cor_w = disc.detail(fake_detached, t_i_wrong)
        adv = _adv_d(logit_real, logit_fake)
        cor_m = torch.sigmoid(logit_cor_m).mean()
        cor_w = torch.sigmoid(logit_cor_w).mean()
        l_d_t = adv + (1.0 - cor_m) + cor_w
    if not torch.isfinite(l_d_t):
        return None
    l_d_t.backward()
    d_opt.step()

    return {
        "l_adv": float(l_adv_t.detach()),
        "l_per": float(l_per_t.detach()),
        "l_cor": float(l_cor_t.detach()),
        "l_damsm": float(l_damsm_t.detach()),
        "l_reg": float(l_reg_t.detach()),
        "l_g": float(l_g_t.detach()),
        "l_d": float(l_d_t.detach()),
    }


def _multiscale(imgs: torch.Tensor) -> list[torch.Tensor]:
    """Real references at the three stage resolutions."""
    return [F.avg_pool2d(imgs, 4), F.avg_pool2d(imgs, 2), imgs]


def _snapshot(gen: GeneratorWeights, disc: DiscriminatorWeights) -> dict:
    return {
        "gen": {k: copy.deepcopy(m.state_dict()) for k, m in gen.modules().items()},
        "disc": {k: copy.deepcopy(m.state_dict()) for k, m in disc.modules().items()},
    }


def _restore(gen: GeneratorWeights, disc: DiscriminatorWeights, snapshot: dict) -> None:
    for k, m in gen.modules().items():
        m.load_state_dict(snapshot["gen"][k])
    for k, m in disc.modules().items():
        m.load_state_dict(snapshot["disc"][k])


def write_history_csv(history: Sequence[TrainingLosses], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for record in history:
            writer.writerow(record.as_row())


def load_train_config(path: str | Path) -> TrainConfig:
    """Read a TOML or JSON config mirroring TrainConfig."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        data = tomllib.loads(text.decode("utf-8"))
    else:
        data = json.loads(text.decode("utf-8"))
    if "loss_weights" in data:
        data["loss_weights"] = LossWeights(**data["loss_weights"])
    try:
        return TrainConfig(**data)
    except TypeError as exc:
        raise ParameterError(f"bad training config: {exc}")
