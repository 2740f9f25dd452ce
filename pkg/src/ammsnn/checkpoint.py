"""Binary checkpoint format.

Layout::

    b"AMMSNN1"                      7-byte magic
    uint64 little-endian            manifest length in bytes
    manifest                        UTF-8 JSON: version, config, vocabulary,
                                    tensor names/shapes/byte offsets, payload digest
    payload                         float64 little-endian, tensors in manifest order
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from . import tensor as T
from .attention import AttentionParams
from .embedding import EmbeddingTable, Vocabulary
from .encoder import ConvParams, EncoderConfig, EncoderParams
from .errors import CheckpointError, ConfigError
from .model import AMMSNN, ModelConfig

MAGIC = b"AMMSNN1"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


def model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    enc = dict(d.pop("encoder"))
    enc["branches"] = [tuple(b) for b in enc.get("branches", [])]
    return ModelConfig(encoder=EncoderConfig(**enc), **d)


def encode_checkpoint(model: AMMSNN) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, tensor in model.named_parameters():
        raw = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": model.vocab.tokens,
        "tensors": entries,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LEN.pack(len(head)) + head + payload


def save_checkpoint(model: AMMSNN, path: Union[str, Path]) -> None:
    Path(path).write_bytes(encode_checkpoint(model))


def read_manifest(blob: bytes) -> dict:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint: magic bytes mismatch")
    pos = len(MAGIC)
    if len(blob) < pos + _LEN.size:
        raise CheckpointError("checkpoint truncated inside the header")
    (mlen,) = _LEN.unpack_from(blob, pos)
    pos += _LEN.size
    if len(blob) < pos + mlen:
        raise CheckpointError("checkpoint truncated inside the manifest")
    try:
        manifest = json.loads(blob[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint manifest is corrupt: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('format_version')!r} (expected {FORMAT_VERSION})"
        )
    manifest["_payload_start"] = pos + mlen
    return manifest


def decode_checkpoint(blob: bytes) -> AMMSNN:
    manifest = read_manifest(blob)
    payload = blob[manifest["_payload_start"]:]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"checkpoint payload is {len(payload)} bytes, manifest declares {manifest['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError("checkpoint payload digest mismatch (corrupted file)")
    arrays: Dict[str, np.ndarray] = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"]))
        if e["nbytes"] != 8 * count or e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"tensor {e['name']!r}: payload size does not match shape {e['shape']}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    try:
        config = model_config_from_dict(manifest["config"])
    except (ConfigError, TypeError, KeyError) as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from None
    vocab = Vocabulary(manifest["vocab"])
    return _assemble(config, vocab, arrays)


def _assemble(config: ModelConfig, vocab: Vocabulary, arrays: Dict[str, np.ndarray]) -> AMMSNN:
    def take(name, shape):
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        arr = arrays.pop(name)
        if tuple(arr.shape) != tuple(shape):
            raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, config expects {shape}")
        return T.Tensor(arr, requires_grad=True, name=name)

    W = take("W", (config.d, len(vocab)))
    layers = {}
    for lname, k, din, c in config.encoder.layer_specs(config.d):
        layers[lname] = ConvParams(take(f"{lname}.filters", (c, din, k)), take(f"{lname}.bias", (c,)))
    att = AttentionParams(take("U", (config.c_total, config.c_total))) if config.attention else None
    if arrays:
        raise CheckpointError(f"checkpoint has unexpected tensors {sorted(arrays)}")
    return AMMSNN(config, vocab, EmbeddingTable(W), EncoderParams(layers), att)


def load_checkpoint(path: Union[str, Path]) -> AMMSNN:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return decode_checkpoint(blob)
