"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"LAATCKPT"
    version      uint32    FORMAT_VERSION
    header_len   uint64
    header       UTF-8 JSON: config, vocab hash, token list, code vocabulary,
                 max_len, ordered parameter names, free-form ``extra``
    per parameter, in header order:
        ndim     uint32
        dims     ndim x uint64
        data     prod(dims) x float64, row-major
    digest       32 bytes  SHA-256 of every preceding byte

Parameter names are those of :func:`laat.model.parameter_shapes`.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CodeVocabulary, Vocabulary
from .model import LaatConfig, LaatModel

MAGIC = b"LAATCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: LaatModel
    vocab: Vocabulary
    codes: CodeVocabulary
    max_len: int
    extra: dict = field(default_factory=dict)

    @property
    def vocab_hash(self) -> str:
        return self.vocab.hash()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    model = ckpt.model
    names = list(model.params)
    header = {
        "config": model.config.to_dict(),
        "vocab_hash": ckpt.vocab.hash(),
        "vocab": ckpt.vocab.tokens,
        "codes": ckpt.codes.to_dict(),
        "max_len": ckpt.max_len,
        "params": names,
        "extra": ckpt.extra,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(hbytes)), hbytes]
    for name in names:
        arr = np.ascontiguousarray(model.params[name].data, dtype="<f8")
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    body = b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 12 + 32 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint is corrupted (checksum mismatch)")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", body, pos)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += 12
    header = json.loads(body[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    vocab = Vocabulary(header["vocab"][2:])
    if vocab.hash() != header["vocab_hash"]:
        raise CheckpointError("vocabulary hash does not match the stored vocabulary")
    state = {}
    for name in header["params"]:
        (ndim,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    if pos != len(body):
        raise CheckpointError("trailing bytes after parameter block")
    config = LaatConfig.from_dict(header["config"])
    model = LaatModel(config)
    model.load_state_dict(state)
    return Checkpoint(model, vocab, CodeVocabulary.from_dict(header["codes"]),
                      int(header["max_len"]), header.get("extra", {}))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    try:
        return decode_checkpoint(blob)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
