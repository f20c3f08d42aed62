"""Parameter and simulation-state persistence.

Checkpoint format (documented and stable): a NumPy ``.npz`` archive.  For
parameter files, each tensor is stored under ``<group>.<layer>.weight`` /
``<group>.<layer>.bias`` as row-major float arrays, plus a ``__meta__`` entry
holding a JSON string.  Full simulation snapshots store a JSON skeleton under
``__state__`` with array leaves swapped out to numbered entries, which
round-trips nested trainer state (parameters, optimizer buffers, generator
states, counters) exactly.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .nn import DenseLayer


def save_params(path: str, groups: dict[str, list[DenseLayer]], meta: dict | None = None) -> None:
    arrays = {}
    for name, layers in groups.items():
        for i, layer in enumerate(layers):
            arrays[f"{name}.{i}.weight"] = layer.weight
            arrays[f"{name}.{i}.bias"] = layer.bias
    arrays["__meta__"] = np.asarray(json.dumps(meta or {}))
    _atomic_savez(path, arrays)


def load_params(path: str) -> tuple[dict[str, list[DenseLayer]], dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        per_group: dict[str, dict[int, DenseLayer]] = {}
        for key in archive.files:
            if key == "__meta__":
                continue
            name, layer_idx, part = key.rsplit(".", 2)
            entry = per_group.setdefault(name, {}).setdefault(
                int(layer_idx), DenseLayer(None, None)
            )
            if part == "weight":
                entry.weight = archive[key]
            else:
                entry.bias = archive[key]
    groups = {
        name: [layers[i] for i in sorted(layers)] for name, layers in per_group.items()
    }
    return groups, meta


def _extract_arrays(obj, arrays: list):
    if isinstance(obj, np.ndarray):
        arrays.append(obj)
        return {"__array__": len(arrays) - 1}
    if isinstance(obj, dict):
        return {key: _extract_arrays(value, arrays) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_extract_arrays(value, arrays) for value in obj]
    if obj is None or isinstance(obj, (str, bool)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _restore_arrays(obj, arrays):
    if isinstance(obj, dict):
        if set(obj.keys()) == {"__array__"}:
            return arrays[obj["__array__"]]
        return {key: _restore_arrays(value, arrays) for key, value in obj.items()}
    if isinstance(obj, list):
        return [_restore_arrays(value, arrays) for value in obj]
    return obj


def save_state(path: str, state: dict) -> None:
    arrays: list[np.ndarray] = []
    skeleton = _extract_arrays(state, arrays)
    payload = {f"a{i}": arr for i, arr in enumerate(arrays)}
    payload["__state__"] = np.asarray(json.dumps(skeleton))
    _atomic_savez(path, payload)


def load_state(path: str) -> dict:
    with np.load(path, allow_pickle=False) as archive:
        skeleton = json.loads(str(archive["__state__"]))
        arrays = []
        i = 0
        while f"a{i}" in archive.files:
            arrays.append(archive[f"a{i}"])
            i += 1
    return _restore_arrays(skeleton, arrays)


def _atomic_savez(path: str, arrays: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as handle:
        np.savez(handle, **arrays)
    os.replace(tmp, path)
