"""Checkpoint serialization: JSON manifest + raw float64 sidecar.

The manifest lists model type, hyperparameters, seed, the fixed
permutation maps, and the named tensors in order; the sidecar holds the
tensor payloads as little-endian 64-bit floats in exactly that order.
Round trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cells import (
    AssocLstmCell,
    ModelConfig,
    PermutationRnnCell,
    RecurrentModel,
    _UnitaryBase,
    _perm_index,
    build_model,
)
from .errors import CheckpointError

__all__ = ["save_checkpoint", "load_checkpoint"]

FORMAT = "holocell-checkpoint-v1"


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".bin")


def _cell_perms(cell) -> list | None:
    if isinstance(cell, AssocLstmCell):
        return cell.perms.tolist()
    if isinstance(cell, (PermutationRnnCell, _UnitaryBase)):
        return cell.perm.tolist()
    return None


def save_checkpoint(model: RecurrentModel, path: str | Path) -> None:
    path = Path(path)
    params = model.parameters()
    manifest = {
        "format": FORMAT,
        "model": model.config.kind,
        "hyperparameters": asdict(model.config),
        "seed": model.config.seed,
        "permutations": [_cell_perms(c) for c in model.cells],
        "tensors": [
            {"name": name, "shape": list(p.value.shape)} for name, p in params
        ],
    }
    path.write_text(json.dumps(manifest, indent=1))
    with open(_sidecar(path), "wb") as f:
        for _, p in params:
            f.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> RecurrentModel:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read manifest {path}: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} manifest")

    config = ModelConfig(**manifest["hyperparameters"])
    model = build_model(**asdict(config))

    for cell, perms in zip(model.cells, manifest["permutations"]):
        if perms is None:
            continue
        arr = np.array(perms, dtype=np.intp)
        if isinstance(cell, AssocLstmCell):
            cell.perms = arr
            cell._perm_idx, cell._perm_inv = _perm_index(arr)
        elif isinstance(cell, PermutationRnnCell):
            cell.perm = arr
            cell._inv = np.empty_like(arr)
            cell._inv[arr] = np.arange(arr.size)
        elif isinstance(cell, _UnitaryBase):
            cell.perm = arr
            cell._perm_idx, cell._perm_inv = _perm_index(arr)

    params = model.parameters()
    names = [name for name, _ in params]
    listed = [t["name"] for t in manifest["tensors"]]
    if names != listed:
        raise CheckpointError(
            f"tensor list mismatch: model has {names}, manifest lists {listed}"
        )
    try:
        raw = _sidecar(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read payload {_sidecar(path)}: {e}") from e
    expected = sum(p.value.size for _, p in params) * 8
    if len(raw) != expected:
        raise CheckpointError(
            f"payload is {len(raw)} bytes, expected {expected}"
        )
    offset = 0
    for (name, p), meta in zip(params, manifest["tensors"]):
        if list(p.value.shape) != meta["shape"]:
            raise CheckpointError(
                f"tensor {name} shape {meta['shape']} != model {list(p.value.shape)}"
            )
        n = p.value.size * 8
        p.value = np.frombuffer(raw[offset:offset + n], dtype="<f8").reshape(
            p.value.shape
        ).copy()
        offset += n
    return model
