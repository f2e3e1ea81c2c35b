"""Weight checkpoint container (magic "DVMW", version 1).

Layout, little-endian throughout: magic, u32 version, u32 config length +
canonical-JSON config, then per tensor (u16 name length, name, u32 rank,
u32 dims, float32 payload), and a trailing CRC32 (IEEE) over everything
before it. Tensor order is the canonical parameter layout, so identical
(config, params) pairs serialize to identical bytes.
"""

import json
import struct
import zlib

import numpy as np

from .errors import ChecksumError, MagicError, TruncationError, VersionError
from .model import DvmeConfig, param_shapes

MAGIC = b"DVMW"
VERSION = 1


def _config_json(config):
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def checkpoint_bytes(config, params):
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = _config_json(config)
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    for name in param_shapes(config):
        tensor = np.ascontiguousarray(params[name], dtype=np.float32)
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<I", tensor.ndim)
        blob += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        blob += tensor.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    return bytes(blob)


def save_checkpoint(path, config, params):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(config, params))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.blob):
            raise TruncationError(
                f"need {count} bytes at offset {self.pos}, file has {len(self.blob)}"
            )
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Returns (config, params); raises a distinct error per corruption kind."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise MagicError("not a DVMW checkpoint")
    if len(blob) < 12:
        raise TruncationError("file ends inside the header")
    # CRC first: any flipped byte reports as corruption, not a parse failure.
    if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise ChecksumError("checkpoint CRC mismatch")

    reader = _Reader(blob[:-4])
    reader.take(4)
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (cfg_len,) = reader.unpack("<I")
    config = DvmeConfig.from_dict(json.loads(reader.take(cfg_len).decode()))
    params = {}
    for name, shape in param_shapes(config).items():
        (name_len,) = reader.unpack("<H")
        stored = reader.take(name_len).decode()
        if stored != name:
            raise VersionError(f"unexpected tensor {stored!r}, wanted {name!r}")
        (rank,) = reader.unpack("<I")
        dims = reader.unpack(f"<{rank}I")
        if dims != shape:
            raise VersionError(f"tensor {name!r} has shape {dims}, wanted {shape}")
        count = int(np.prod(dims))
        params[name] = np.frombuffer(reader.take(count * 4), dtype="<f4").reshape(dims).copy()
    if reader.pos != len(reader.blob):
        raise TruncationError("trailing bytes after the last tensor")
    return config, params
