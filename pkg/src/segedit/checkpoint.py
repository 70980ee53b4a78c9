"""Weight checkpoint container: one zip file, named tensors, JSON manifest.

Layout (readable from any language with zip + npy support):

    manifest.json            {"format_version": 1, "kind": ..., "seed": ...,
                              "config": {...}, "tensors": {name: {shape, dtype}}}
    tensors/<name>.npy       one little-endian numpy array per tensor

Tensor names are ``<module>.<parameter path>`` exactly as produced by the
module state dicts, so a checkpoint can be rebuilt without pickles.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import ParameterError

FORMAT_VERSION = 1

__all__ = ["save_weights", "load_weights", "read_manifest", "FORMAT_VERSION"]


def _flat_tensors(weights) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for mod_name, module in weights.modules().items():
        for param_name, tensor in module.state_dict().items():
            out[f"{mod_name}.{param_name}"] = tensor.detach().cpu().numpy()
    return out


def save_weights(path: str | Path, weights) -> None:
    """Serialize generator or discriminator weights (atomic replace)."""
    path = Path(path)
    tensors = _flat_tensors(weights)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": weights.kind,
        "seed": weights.seed,
        "config": weights.config.to_dict(),
        "trained_working_size": getattr(weights, "trained_working_size", None),
        "tensors": {
            name: {"shape": list(arr.shape), "dtype": str(arr.dtype)}
            for name, arr in tensors.items()
        },
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for name, arr in tensors.items():
            buf = io.BytesIO()
            np.save(buf, arr)
            zf.writestr(f"tensors/{name}.npy", buf.getvalue())
    tmp.replace(path)


def read_manifest(path: str | Path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("manifest.json").decode("utf-8"))


def load_weights(path: str | Path):
    """Rebuild a weights object from a checkpoint file."""
    from .editnet import DiscriminatorWeights, EditNetConfig, GeneratorWeights

    path = Path(path)
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ParameterError(
                f"unsupported checkpoint version {manifest.get('format_version')}"
            )
        config = EditNetConfig.from_dict(manifest["config"])
        kind = manifest["kind"]
        if kind == "generator":
            weights = GeneratorWeights(config, seed=int(manifest.get("seed", 0)))
            tws = manifest.get("trained_working_size")
            weights.trained_working_size = int(tws) if tws else None
        elif kind == "discriminator":
            weights = DiscriminatorWeights(config, seed=int(manifest.get("seed", 0)))
        else:
            raise ParameterError(f"unknown checkpoint kind {kind!r}")
        for mod_name, module in weights.modules().items():
            state = {}
            prefix = f"{mod_name}."
            for tensor_name in manifest["tensors"]:
                if tensor_name.startswith(prefix):
                    raw = zf.read(f"tensors/{tensor_name}.npy")
                    arr = np.load(io.BytesIO(raw))
                    state[tensor_name[len(prefix) :]] = torch.from_numpy(arr.copy())
            module.load_state_dict(state)
    return weights.eval()
