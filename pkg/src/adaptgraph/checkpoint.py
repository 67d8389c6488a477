"""Single-file model checkpoints: length-prefixed JSON manifest + raw blobs.

Layout: 4-byte little-endian manifest length, the UTF-8 JSON manifest, then
every array's bytes back to back. The manifest's "blobs" list records name,
dtype tag, shape and byte count in payload order, so reads are sequential and
round-trips are bitwise exact. Payloads are little-endian regardless of host.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .nn import Module

_BLOB_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
FORMAT_VERSION = 1


def state_dict(model: Module) -> Dict[str, np.ndarray]:
    """Copy every parameter and buffer into a flat name -> array mapping."""
    state = {}
    for name, p in model.named_parameters():
        state[name] = np.array(p.value.data, copy=True)
    for name, b in model.named_buffers():
        state[name] = np.array(b, copy=True)
    return state


def load_state(model: Module, state: Dict[str, np.ndarray]) -> None:
    """Copy a state mapping into the model, auditing names/shapes/dtypes first.

    Nothing is mutated unless the audit passes in full.
    """
    targets = {}
    for name, p in model.named_parameters():
        targets[name] = p.value.data
    for name, b in model.named_buffers():
        targets[name] = b

    missing = sorted(set(targets) - set(state))
    unexpected = sorted(set(state) - set(targets))
    problems = []
    if missing:
        problems.append(f"missing entries: {', '.join(missing)}")
    if unexpected:
        problems.append(f"unexpected entries: {', '.join(unexpected)}")
    for name in sorted(set(targets) & set(state)):
        src, dst = state[name], targets[name]
        if src.shape != dst.shape:
            problems.append(f"{name}: shape {src.shape} != expected {dst.shape}")
        elif src.dtype != dst.dtype:
            problems.append(f"{name}: dtype {src.dtype} != expected {dst.dtype}")
    if problems:
        raise ConfigError("checkpoint does not fit this model; " + "; ".join(problems))

    for name, dst in targets.items():
        dst[...] = state[name]


def save_checkpoint(path, state: Dict[str, np.ndarray], manifest: dict) -> None:
    blobs = []
    payloads = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        if arr.dtype == np.float32:
            tag = "f32"
        elif arr.dtype == np.float64:
            tag = "f64"
        else:
            raise ConfigError(f"blob {name!r} has unsupported dtype {arr.dtype}")
        raw = arr.astype(_BLOB_DTYPES[tag], copy=False).tobytes()
        blobs.append({"name": name, "dtype": tag,
                      "shape": list(arr.shape), "nbytes": len(raw)})
        payloads.append(raw)

    header = dict(manifest)
    header["format_version"] = FORMAT_VERSION
    header["blobs"] = blobs
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(encoded)))
        f.write(encoded)
        for raw in payloads:
            f.write(raw)


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Read a checkpoint file back into (manifest, state). Bitwise faithful."""
    with open(path, "rb") as f:
        prefix = f.read(4)
        if len(prefix) != 4:
            raise DataError(f"{path}: truncated manifest length prefix")
        (mlen,) = struct.unpack("<I", prefix)
        encoded = f.read(mlen)
        if len(encoded) != mlen:
            raise DataError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(encoded.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: bad manifest: {e}") from None
        if manifest.get("format_version") != FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported format version {manifest.get('format_version')!r}")
        state = {}
        for blob in manifest.get("blobs", []):
            raw = f.read(blob["nbytes"])
            if len(raw) != blob["nbytes"]:
                raise DataError(f"{path}: truncated blob {blob['name']!r}")
            arr = np.frombuffer(raw, dtype=_BLOB_DTYPES[blob["dtype"]])
            state[blob["name"]] = arr.reshape(blob["shape"]).astype(
                arr.dtype.newbyteorder("="), copy=True)
    return manifest, state
