"""Binary checkpoint format for model parameters.

Layout: magic bytes ``HMF1``, one format-version byte, a little-endian
uint32 length-prefixed JSON manifest (config plus ordered array names and
shapes), then the raw arrays as little-endian float32 concatenated in
manifest order. Loading validates magic, version, and every shape before
touching array bytes, so truncated or mismatched files fail loudly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .network import ModelConfig, ModelParams, config_from_dict, config_to_dict, init_params

MAGIC = b"HMF1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated, or incompatible checkpoint file."""


def save_checkpoint(params: ModelParams, config: ModelConfig, path) -> None:
    named = params.named_tensors()
    manifest = {
        "config": config_to_dict(config),
        "arrays": [{"name": n, "shape": list(t.shape)} for n, t in named],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path, expected_config: ModelConfig | None = None
                    ) -> tuple[ModelParams, ModelConfig]:
    """Read a checkpoint back into (params, config).

    If ``expected_config`` is given, the stored config must produce the
    same parameter shapes; a d_model=32 file loaded under a d_model=64
    config is rejected here rather than downstream.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 1 + 4:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version = raw[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version}"
        )
    off = len(MAGIC) + 1
    (manifest_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    if off + manifest_len > len(raw):
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[off : off + manifest_len].decode("utf-8"))
        config = config_from_dict(manifest["config"])
        arrays = manifest["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from None
    off += manifest_len

    params = init_params(config, dtype=np.float32)
    named = params.named_tensors()
    if len(named) != len(arrays):
        raise CheckpointError(
            f"{path}: manifest lists {len(arrays)} arrays, config implies "
            f"{len(named)}"
        )
    for (name, tensor), entry in zip(named, arrays):
        if entry["name"] != name or tuple(entry["shape"]) != tensor.shape:
            raise CheckpointError(
                f"{path}: manifest entry {entry['name']}{entry['shape']} "
                f"does not match expected {name}{list(tensor.shape)}"
            )
    if expected_config is not None:
        want = init_params(expected_config, dtype=np.float32).named_tensors()
        have = {n: t.shape for n, t in named}
        for name, tensor in want:
            if have.get(name) != tensor.shape:
                raise CheckpointError(
                    f"{path}: checkpoint shape for {name} is "
                    f"{have.get(name)}, expected {tensor.shape}"
                )
        if len(want) != len(named):
            raise CheckpointError(
                f"{path}: checkpoint has {len(named)} arrays, expected "
                f"config implies {len(want)}"
            )

    for name, tensor in named:
        nbytes = tensor.size * 4
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated array data at {name}")
        flat = np.frombuffer(raw, dtype="<f4", count=tensor.size, offset=off)
        tensor.data = flat.reshape(tensor.shape).astype(np.float32)
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return params, config
