"""
Checkpoint persistence.

File layout (all integers little-endian)::

    magic        8 bytes  b"SIMCLCKP"
    version      u16
    header_len   u32, then header_len bytes of UTF-8 JSON
                 {"descriptor": str, "step": int, "config_fingerprint": str}
    count        u32
    count × record:
        name_len u16, name (UTF-8)
        rank     u8, rank × u32 extents
        values   float32 × prod(extents)
    crc32        u32 over every preceding byte
"""
import json
import logging
import struct
import zlib
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from app.core.errors import CompatibilityError, FormatError, IngestionError
from app.core.exporter import atomic_write_bytes
from app.core.schemas import Checkpoint

logger = logging.getLogger(__name__)

MAGIC = b"SIMCLCKP"
FORMAT_VERSION = 1


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps(
        {"descriptor": ckpt.descriptor, "step": ckpt.step, "config_fingerprint": ckpt.config_fingerprint},
        sort_keys=True,
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(header)), header, struct.pack("<I", len(ckpt.params))]
    for name, values in ckpt.params.items():
        array = np.asarray(values, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
        parts.append(np.ascontiguousarray(array).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class _Reader:
    def __init__(self, data: bytes, end: int, source: str):
        self.data = data
        self.end = end
        self.offset = 0
        self.source = source

    def take(self, size: int) -> bytes:
        if self.offset + size > self.end:
            raise FormatError(f"{self.source}: unexpected end of data at byte offset {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, source: str = "checkpoint") -> Checkpoint:
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: not a checkpoint file (bad magic)")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise FormatError(f"{source}: checksum mismatch (file truncated or corrupted)")

    reader = _Reader(data, len(data) - 4, source)
    reader.take(len(MAGIC))
    version, header_len = reader.unpack("<HI")
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{source}: corrupt header: {e}") from e

    (count,) = reader.unpack("<I")
    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        extents = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(extents, dtype=np.int64)) if extents else 1
        values = np.frombuffer(reader.take(4 * size), dtype="<f4").astype(np.float32).reshape(extents)
        params[name] = values
    if reader.offset != reader.end:
        raise FormatError(f"{source}: {reader.end - reader.offset} trailing bytes at offset {reader.offset}")
    return Checkpoint(
        params=params,
        descriptor=header.get("descriptor", ""),
        step=int(header.get("step", 0)),
        config_fingerprint=header.get("config_fingerprint", ""),
    )


def save_checkpoint(ckpt: Checkpoint, path: str) -> Path:
    """
    Write a checkpoint atomically.

    Args:
        ckpt: Parameters, descriptor, step and fingerprint
        path: Destination file

    Returns:
        The written path
    """
    target = Path(path)
    atomic_write_bytes(target, encode_checkpoint(ckpt))
    logger.info(f"Saved checkpoint {target} ({ckpt.descriptor}, {len(ckpt.params)} tensors, step {ckpt.step})")
    return target


def descriptors_compatible(saved: str, expected: str) -> bool:
    """Encoder-only expectations match on the encoder part; full descriptors must match exactly."""
    if "+" not in expected:
        return saved.split("+", 1)[0] == expected
    return saved == expected


def load_checkpoint(path: str, expected_descriptor: Optional[str] = None) -> Checkpoint:
    """
    Read and verify a checkpoint.

    Args:
        path: Checkpoint file
        expected_descriptor: Architecture descriptor of the requesting model, if any

    Returns:
        Checkpoint with float32 parameter arrays
    """
    source = Path(path)
    try:
        data = source.read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read checkpoint {source}: {e}") from e
    ckpt = decode_checkpoint(data, source=source.name)
    if expected_descriptor is not None and not descriptors_compatible(ckpt.descriptor, expected_descriptor):
        raise CompatibilityError(
            f"{source.name} holds {ckpt.descriptor}, which does not fit the requested {expected_descriptor}"
        )
    logger.info(f"Loaded checkpoint {source} ({ckpt.descriptor}, step {ckpt.step})")
    return ckpt
