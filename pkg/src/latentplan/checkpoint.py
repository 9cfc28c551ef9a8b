"""Binary checkpoint format.

Layout (little-endian)::

    b"LPLN" | u32 version | 32-byte sha256 of the config text
    u32 config length | config text (utf-8)
    u32 segment count
    per segment: u32 name length | name | u32 manifest length | manifest JSON | float64 blob

The manifest lists ``{"name", "shape", "offset"}`` for every array in the blob
(parameters, then Adam moments prefixed ``m:`` and ``v:``) plus the step counter.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .diffmath import ParameterSet

MAGIC = b"LPLN"
VERSION = 1


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def encode_segment(params: ParameterSet) -> tuple[bytes, bytes]:
    arrays = []
    for name, t in params.items():
        arrays.append((name, t.value))
    for name in params.names():
        arrays.append(("m:" + name, params.m[name]))
        arrays.append(("v:" + name, params.v[name]))
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    manifest = json.dumps({"step": params.step, "nbytes": offset, "entries": entries}).encode()
    return manifest, b"".join(chunks)


def decode_segment(manifest: dict, blob: bytes) -> dict[str, np.ndarray]:
    out = {}
    for e in manifest["entries"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return out


def save_checkpoint(path, config_text: str, segments: dict[str, ParameterSet]) -> None:
    cfg = config_text.encode()
    parts = [MAGIC, _u32(VERSION), hashlib.sha256(cfg).digest(), _u32(len(cfg)), cfg,
             _u32(len(segments))]
    for name, params in segments.items():
        manifest, blob = encode_segment(params)
        raw_name = name.encode()
        parts += [_u32(len(raw_name)), raw_name, _u32(len(manifest)), manifest, blob]
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path) -> tuple[str, dict[str, tuple[dict, dict[str, np.ndarray]]]]:
    """Return ``(config_text, {segment: (manifest, arrays)})``."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    digest = r.take(32)
    cfg = r.take(r.u32())
    if hashlib.sha256(cfg).digest() != digest:
        raise ValueError(f"{path}: config hash mismatch")
    segments = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        manifest = json.loads(r.take(r.u32()))
        blob = r.take(manifest["nbytes"])
        segments[name] = (manifest, decode_segment(manifest, blob))
    return cfg.decode(), segments


def restore_segment(params: ParameterSet, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    params.load_values({n: arrays[n] for n in params.names()})
    for n in params.names():
        params.m[n] = arrays["m:" + n].copy()
        params.v[n] = arrays["v:" + n].copy()
    params.step = int(manifest["step"])
