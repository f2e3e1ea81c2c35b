"""Independent EMBX v1 implementation.

Deliberately shares no code with the consumer toolkit: this module is the
second, independent realization of the container contract, so the two sides
cross-check each other byte for byte. Layout (little-endian): magic "DVME",
u32 version=1, u32 source count, per source (u16 name length, UTF-8 name,
u32 dim), u32 num_classes, u8 has_group_ids, u64 N, N records of
(u16 label, i64 group id if flagged, per-source float32 vectors), trailing
CRC32 over everything before it.
"""

import struct
import zlib

import numpy as np

MAGIC = b"DVME"
VERSION = 1


class EmbxError(Exception):
    pass


def write_embx(path, sources, num_classes, labels, features, group_ids=None):
    """sources is an ordered [(name, dim)] list; features maps name -> (N, dim)."""
    labels = [int(v) for v in labels]
    n = len(labels)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(sources))
    for name, dim in sources:
        raw = name.encode()
        out += struct.pack("<H", len(raw))
        out += raw
        out += struct.pack("<I", int(dim))
    out += struct.pack("<I", int(num_classes))
    out += struct.pack("<B", 0 if group_ids is None else 1)
    out += struct.pack("<Q", n)
    for row in range(n):
        out += struct.pack("<H", labels[row])
        if group_ids is not None:
            out += struct.pack("<q", int(group_ids[row]))
        for name, dim in sources:
            vector = np.asarray(features[name][row], dtype="<f4")
            if vector.shape != (dim,):
                raise EmbxError(
                    f"source {name!r} row {row}: got shape {vector.shape}, want ({dim},)"
                )
            out += vector.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def _parse(blob):
    """Returns (fields dict, violations list); fields is None on fatal layout."""
    violations = []
    if blob[:4] != MAGIC:
        return None, ["magic: file does not start with 'DVME'"]
    if len(blob) < 12:
        return None, ["truncated: no room for version and checksum"]
    declared = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != declared:
        return None, ["crc32: checksum mismatch"]
    body = memoryview(blob)[: len(blob) - 4]
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(body):
            raise EmbxError(f"truncated at offset {pos}")
        values = struct.unpack_from(fmt, body, pos)
        pos += size
        return values

    try:
        (version,) = take("<I")
        if version != VERSION:
            return None, [f"version: {version} unsupported"]
        (num_sources,) = take("<I")
        sources = []
        for _ in range(num_sources):
            (name_len,) = take("<H")
            if pos + name_len > len(body):
                raise EmbxError(f"truncated inside a source name at offset {pos}")
            name = bytes(body[pos : pos + name_len]).decode()
            pos += name_len
            (dim,) = take("<I")
            sources.append((name, dim))
        (num_classes,) = take("<I")
        (has_groups,) = take("<B")
        (count,) = take("<Q")
        record_size = 2 + (8 if has_groups else 0) + sum(d * 4 for _, d in sources)
        need = record_size * count
        if pos + need != len(body):
            raise EmbxError(
                f"payload is {len(body) - pos} bytes, {need} expected for {count} records"
            )
        labels = np.empty(count, dtype=np.int64)
        groups = np.empty(count, dtype=np.int64) if has_groups else None
        features = {name: np.empty((count, dim), dtype=np.float32) for name, dim in sources}
        for row in range(count):
            (labels[row],) = struct.unpack_from("<H", body, pos)
            pos += 2
            if has_groups:
                (groups[row],) = struct.unpack_from("<q", body, pos)
                pos += 8
            for name, dim in sources:
                features[name][row] = np.frombuffer(body, dtype="<f4", count=dim, offset=pos)
                pos += dim * 4
    except EmbxError as exc:
        return None, [str(exc)]

    fields = {
        "sources": tuple(sources),
        "num_classes": num_classes,
        "labels": labels,
        "group_ids": groups,
        "features": features,
    }
    if count >= 1 and (labels.min() < 0 or labels.max() >= num_classes):
        violations.append("labels: values outside [0, num_classes)")
    return fields, violations


def read_embx(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, violations = _parse(blob)
    if fields is None or violations:
        raise EmbxError("; ".join(violations))
    return fields


def verify_format(path, expect_dims=None):
    """Structural check; returns a list of violations (empty means ok)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        return [f"io: {exc}"]
    fields, violations = _parse(blob)
    if fields is not None and expect_dims is not None:
        found = tuple(d for _, d in fields["sources"])
        if found != tuple(expect_dims):
            violations.append(f"dims: header has {found}, job expects {tuple(expect_dims)}")
    return violations
