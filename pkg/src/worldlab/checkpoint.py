"""Checkpoint directory format: manifest.json + weights.bin.

The manifest records a format version, the model build config, and a
tensor table (name, shape, byte offset/length) over a little-endian
float32 blob, plus a sha256 checksum of the blob. Loading verifies all
three independently so each corruption mode gets its own diagnostic.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

FORMAT_VERSION = 1

_BUILDERS = {}


def register_model_kind(kind: str, builder):
    """builder(config_dict) -> model with .parameters()."""
    _BUILDERS[kind] = builder


class CheckpointVersionError(RuntimeError):
    pass


class CheckpointIntegrityError(RuntimeError):
    pass


def save_model(model, path: str, config: dict):
    """Write ``path``/manifest.json and ``path``/weights.bin."""
    os.makedirs(path, exist_ok=True)
    params = model.parameters()
    table = []
    blob = bytearray()
    for name in sorted(params):
        data = params[name].data.astype("<f4")
        raw = data.tobytes()
        table.append({
            "name": name,
            "shape": list(data.shape),
            "dtype": "f32",
            "byte_offset": len(blob),
            "byte_len": len(raw),
        })
        blob.extend(raw)
    blob = bytes(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": config,
        "tensors": table,
        "checksum": hashlib.sha256(blob).hexdigest(),
    }
    with open(os.path.join(path, "weights.bin"), "wb") as fh:
        fh.write(blob)
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path: str):
    """Rebuild the model from a checkpoint directory; returns
    (model, config_dict)."""
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format_version {version} unsupported (expected {FORMAT_VERSION})")
    with open(os.path.join(path, "weights.bin"), "rb") as fh:
        blob = fh.read()
    expected_len = sum(t["byte_len"] for t in manifest["tensors"])
    if expected_len != len(blob):
        raise CheckpointIntegrityError(
            f"weights.bin is {len(blob)} bytes but manifest declares {expected_len}")
    checksum = hashlib.sha256(blob).hexdigest()
    if checksum != manifest["checksum"]:
        raise CheckpointIntegrityError("weights.bin checksum mismatch")
    config = manifest["model_config"]
    kind = config["kind"]
    if kind not in _BUILDERS:
        raise CheckpointIntegrityError(f"unknown model kind {kind!r}")
    model = _BUILDERS[kind](config)
    params = model.parameters()
    names = sorted(params)
    if names != [t["name"] for t in manifest["tensors"]]:
        raise CheckpointIntegrityError("tensor table does not match model parameters")
    for entry in manifest["tensors"]:
        p = params[entry["name"]]
        raw = blob[entry["byte_offset"]:entry["byte_offset"] + entry["byte_len"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        if list(p.data.shape) != entry["shape"]:
            raise CheckpointIntegrityError(
                f"shape mismatch for {entry['name']}: {entry['shape']} vs {list(p.data.shape)}")
        p.data = arr.astype(np.float32).copy()
    return model, config
