"""Generative-quality metrics over a pluggable feature backend.

Inception Score and Frechet distance with the classic formulas; the feature
extractor is a small classifier trained on the synthetic dataset, so
absolute values are NOT comparable to published numbers computed with
Inception-v3 features. They are stable, deterministic, and useful for
relative comparisons within this toy domain only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch
from torch import nn

from .dataset import COLOR_NAMES, SHAPE_NAMES, ShapeSpec, render_scene
from .errors import BackendError, ParameterError, ShapeError
from .imagecore import ImageBuffer, resize_image

__all__ = [
    "FeatureSet",
    "inception_score",
    "frechet_distance",
    "extract_features",
    "FeatureBackend",
    "ToyFeatureBackend",
    "train_toy_feature_backend",
]

_PROB_ATOL = 1e-6
_COV_EPS = 1e-6


@dataclass(frozen=True)
class FeatureSet:
    """n x d feature matrix, or n x k class probabilities (rows sum to 1)."""

    matrix: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.matrix, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"feature matrix must be (n, d), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ParameterError("feature matrix contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "matrix", arr)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


def inception_score(probs: FeatureSet) -> float:
    """exp of the mean KL divergence between row distributions and their mean.

    Rows must be valid probability vectors; the result lies in [1, k].
    """
    p = probs.matrix
    if (p < 0).any():
        raise ParameterError("probability rows must be nonnegative")
    sums = p.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=_PROB_ATOL):
        raise ParameterError("probability rows must sum to 1")
    marginal = p.mean(axis=0)
    # 0 * log 0 = 0: restrict to supported entries per row
    kl = np.zeros(p.shape[0])
    for i in range(p.shape[0]):
        support = p[i] > 0
        kl[i] = np.sum(p[i, support] * (np.log(p[i, support]) - np.log(marginal[support])))
    return float(np.exp(kl.mean()))


def _mean_and_cov(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=0)
    if x.shape[0] > 1:
        cov = np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1])
    else:
        cov = np.zeros((x.shape[1], x.shape[1]))
    return mu, cov + eps * np.eye(x.shape[1])


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FeatureSet, b: FeatureSet, eps: float = _COV_EPS) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), clamped at 0.

    The cross-covariance square root is evaluated through the symmetric
    product sqrt(Sa) Sb sqrt(Sa), which has the same trace and stays
    Hermitian, so a plain eigendecomposition with negative-eigenvalue
    clamping suffices.
    """
    if a.d != b.d:
        raise ShapeError(f"feature dims differ: {a.d} vs {b.d}")
    mu_a, cov_a = _mean_and_cov(a.matrix, eps)
    mu_b, cov_b = _mean_and_cov(b.matrix, eps)
    sqrt_a = _sym_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = mu_a - mu_b
    fid = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(fid, 0.0)


@runtime_checkable
class FeatureBackend(Protocol):
    feature_dim: int
    num_classes: int

    def features(self, images: Sequence[ImageBuffer]) -> np.ndarray: ...

    def probabilities(self, images: Sequence[ImageBuffer]) -> np.ndarray: ...


def extract_features(
    images: Sequence[ImageBuffer],
    backend: FeatureBackend,
    kind: str = "features",
) -> FeatureSet:
    """Map images to a FeatureSet of features or class probabilities."""
    if not images:
        raise ParameterError("need at least one image")
    dims = {(im.height, im.width, im.channels) for im in images}
    if len(dims) != 1:
        raise ShapeError("all images must share dimensions")
    if kind == "features":
        out = backend.features(images)
    elif kind == "probabilities":
        out = backend.probabilities(images)
    else:
        raise ParameterError(f"unknown feature kind {kind!r}")
    arr = np.asarray(out, dtype=np.float64)
    if arr.shape[0] != len(images):
        raise BackendError("feature backend returned wrong row count")
    return FeatureSet(arr)


class _ToyClassifierNet(nn.Module):
    """Tiny conv classifier over 32x32 RGB inputs."""

    def __init__(self, feature_dim: int, num_classes: int):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.Tanh(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.Tanh(),
            nn.Conv2d(32, 32, 3, stride=2, padding=1),
            nn.Tanh(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.embed = nn.Linear(32, feature_dim)
        self.head = nn.Linear(feature_dim, num_classes)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = torch.tanh(self.embed(self.trunk(x)))
        return z, self.head(z)


class ToyFeatureBackend:
    """Feature/probability extractor backed by a trained toy classifier.

    Classes are (shape, color) pairs from the synthetic vocabulary, so the
    probability head has ``len(SHAPE_NAMES) * len(COLOR_NAMES)`` outputs.
    """

    input_size = 32

    def __init__(self, net: _ToyClassifierNet, feature_dim: int, num_classes: int):
        self.net = net.eval()
        self.feature_dim = feature_dim
        self.num_classes = num_classes

    def _batch(self, images: Sequence[ImageBuffer]) -> torch.Tensor:
        arrs = []
        for im in images:
            if (im.height, im.width) != (self.input_size, self.input_size):
                im = resize_image(im, self.input_size, self.input_size, "bilinear")
            arrs.append(np.transpose(im.data, (2, 0, 1)))
        return torch.from_numpy(np.stack(arrs).astype(np.float32))

    @torch.no_grad()
    def features(self, images: Sequence[ImageBuffer]) -> np.ndarray:
        z, _logits = self.net(self._batch(images))
        return z.numpy().astype(np.float64)

    @torch.no_grad()
    def probabilities(self, images: Sequence[ImageBuffer]) -> np.ndarray:
        _z, logits = self.net(self._batch(images))
        return torch.softmax(logits.double(), dim=1).numpy()


def _classifier_corpus(seed: int, per_class: int, size: int) -> tuple[list[ImageBuffer], list[int]]:
    images: list[ImageBuffer] = []
    labels: list[int] = []
    class_index = 0
    for shape in SHAPE_NAMES:
        for color in COLOR_NAMES:
            for rep in range(per_class):
                rng = np.random.default_rng([seed, class_index, rep])
                half = int(rng.integers(max(4, size // 8), max(6, size // 3)))
                cy = int(rng.integers(half + 1, size - half - 1))
                cx = int(rng.integers(half + 1, size - half - 1))
                spec = ShapeSpec(shape, color, cy, cx, half)
                image, _seg = render_scene((spec,), int(rng.integers(0, 4)), size, rng)
                images.append(image)
                labels.append(class_index)
            class_index += 1
    return images, labels


def train_toy_feature_backend(
    seed: int = 0,
    per_class: int = 12,
    epochs: int = 30,
    feature_dim: int = 32,
) -> ToyFeatureBackend:
    """Train the reference classifier on rendered single-shape scenes."""
    num_classes = len(SHAPE_NAMES) * len(COLOR_NAMES)
    torch.manual_seed(seed)
    net = _ToyClassifierNet(feature_dim, num_classes)
    images, labels = _classifier_corpus(seed, per_class, ToyFeatureBackend.input_size)
    x = torch.from_numpy(
        np.stack([np.transpose(im.data, (2, 0, 1)) for im in images]).astype(np.float32)
    )
    y = torch.tensor(labels, dtype=torch.long)
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    loss_fn = nn.CrossEntropyLoss()
    order_rng = np.random.default_rng(seed)
    batch = 64
    for _epoch in range(epochs):
        perm = torch.from_numpy(order_rng.permutation(len(images)))
        for start in range(0, len(images), batch):
            idx = perm[start : start + batch]
            opt.zero_grad()
            _z, logits = net(x[idx])
            loss = loss_fn(logits, y[idx])
            loss.backward()
            opt.step()
    return ToyFeatureBackend(net, feature_dim, num_classes)
