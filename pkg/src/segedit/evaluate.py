"""Quantitative evaluation harness over the synthetic test split.

Generates n manipulated images with uniformly sampled caption colors, then
scores Inception Score on the outputs and Frechet distance against the real
renders, all through the toy feature backend. ``fid_self`` (real vs real)
rides along as a sanity anchor that should sit at zero.
"""

from __future__ import annotations

import numpy as np

from .dataset import COLOR_NAMES, make_synthetic_dataset
from .editnet import GeneratorWeights
from .engine import Engine, EngineConfig
from .errors import ParameterError
from .metrics import (
    extract_features,
    frechet_distance,
    inception_score,
    train_toy_feature_backend,
)

__all__ = ["run_eval", "EVAL_SPLIT_OFFSET"]

# keeps evaluation scene seeds disjoint from any plausible training seed
EVAL_SPLIT_OFFSET = 7_000_000


def run_eval(
    weights: GeneratorWeights,
    n: int,
    seed: int,
    working_size: int = 64,
    engine: Engine | None = None,
) -> dict:
    if n < 2:
        raise ParameterError("evaluation needs n >= 2")
    test_split = make_synthetic_dataset(n, seed=seed + EVAL_SPLIT_OFFSET, size=working_size)
    engine = engine or Engine(
        EngineConfig(working_size=working_size), weights=weights
    )
    rng = np.random.default_rng(seed)
    reals, fakes = [], []
    for sample in test_split:
        color = COLOR_NAMES[int(rng.integers(0, len(COLOR_NAMES)))]
        caption = f"the {sample.target_label} is {color}"
        outcome = engine.run_edit(sample.image, caption, seed=seed)
        reals.append(sample.image)
        fakes.append(outcome.output)
    backend = train_toy_feature_backend(seed=0)
    feats_real = extract_features(reals, backend)
    feats_fake = extract_features(fakes, backend)
    probs_fake = extract_features(fakes, backend, kind="probabilities")
    return {
        "is": inception_score(probs_fake),
        "fid": frechet_distance(feats_real, feats_fake),
        "fid_self": frechet_distance(feats_real, feats_real),
        "n": n,
        "seed": seed,
        "backend": "toy-classifier",
    }
