"""THML checkpoint files.

Layout (little-endian)::

    magic    4 bytes  b"THML"
    version  u16      FORMAT_VERSION
    length   u64      total file length, CRC included
    meta     u32 length + UTF-8 JSON {"model_def": ..., "config": ...}
    count    u32      number of tensors
    tensor   u16 name length, name, u8 dtype tag, u8 rank, rank x u32 dims, raw payload
    crc      u32      CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from honeyscan.trainkit.model import ModelDef, Network

MAGIC = b"THML"
FORMAT_VERSION = 1
FORMAT_NAME = f"THML/{FORMAT_VERSION}"

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_HEADER = struct.Struct("<4sHQ")


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def encode_checkpoint(net: Network, config: dict | None = None) -> bytes:
    meta = json.dumps(
        {"model_def": asdict(net.model_def), "config": config or {}}, sort_keys=True, separators=(",", ":")
    ).encode()
    tensors = list(net.params.items()) + list(net.buffers.items())
    body = bytearray()
    body += struct.pack("<I", len(meta)) + meta
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        encoded = name.encode()
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        body += struct.pack("<H", len(encoded)) + encoded
        body += struct.pack("<BB", tag, arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
    total = _HEADER.size + len(body) + 4
    data = _HEADER.pack(MAGIC, FORMAT_VERSION, total) + bytes(body)
    return data + struct.pack("<I", zlib.crc32(data))


class _Reader:
    def __init__(self, data: bytes, offset: int) -> None:
        self.data = data
        self.offset = offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedCheckpointError(f"record at byte {self.offset} runs past the end of the file")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_checkpoint(data: bytes) -> tuple[Network, dict]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedCheckpointError(f"file is {len(data)} bytes, shorter than the header")
    _, version, total = _HEADER.unpack_from(data)
    if len(data) < total:
        raise TruncatedCheckpointError(f"file is {len(data)} bytes, header declares {total}")
    if len(data) > total:
        raise ChecksumError(f"{len(data) - total} unexpected trailing bytes")
    (stored,) = struct.unpack_from("<I", data, total - 4)
    if zlib.crc32(data[: total - 4]) != stored:
        raise ChecksumError("CRC-32 mismatch; the file is corrupted")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version} is not supported (expected {FORMAT_VERSION})")
    reader = _Reader(data[: total - 4], _HEADER.size)
    (meta_len,) = reader.unpack("<I")
    meta = json.loads(reader.take(meta_len))
    md = meta["model_def"]
    model_def = ModelDef(**{k: tuple(v) if isinstance(v, list) else v for k, v in md.items()})
    (count,) = reader.unpack("<I")
    params, buffers = {}, {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode()
        tag, rank = reader.unpack("<BB")
        if tag not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype tag {tag}")
        dims = reader.unpack(f"<{rank}I")
        dtype = _DTYPES[tag]
        size = int(np.prod(dims)) * dtype.itemsize
        arr = np.frombuffer(reader.take(size), dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        (buffers if name.endswith(("running_mean", "running_var")) else params)[name] = arr
    return Network(model_def, params, buffers), meta["config"]


def save_checkpoint(path: str | Path, net: Network, config: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(net, config))


def load_checkpoint(path: str | Path) -> tuple[Network, dict]:
    """Returns the network (model definition included) and the stored training config."""
    return decode_checkpoint(Path(path).read_bytes())
