"""Embedding dataset persistence and generation.

EMBX v1 container, little-endian: magic "DVME", u32 version, u32 source
count, per source (u16 name length, UTF-8 name, u32 dim), u32 num_classes,
u8 has_group_ids, u64 N, then N packed records (u16 label, optional i64
group id, each source's float32 vector), and a trailing CRC32 (IEEE) over
all preceding bytes. A sidecar manifest is informative only; the binary
file is authoritative.
"""

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    ChecksumError,
    MagicError,
    ParameterError,
    TruncationError,
    VersionError,
)

MAGIC = b"DVME"
VERSION = 1

DEFAULT_SOURCE_NAMES = ("simclr", "swav", "dino")


@dataclass
class EmbeddingDataset:
    sources: tuple  # ((name, dim), ...)
    num_classes: int
    labels: np.ndarray
    features: dict  # name -> (N, dim) float32
    group_ids: np.ndarray | None = None

    def __post_init__(self):
        self.sources = tuple((str(n), int(d)) for n, d in self.sources)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if n < 1:
            raise ParameterError("dataset needs at least one sample")
        for name, dim in self.sources:
            if name not in self.features:
                raise ParameterError(f"features missing source {name!r}")
            if self.features[name].shape != (n, dim):
                raise ParameterError(
                    f"source {name!r} features must be ({n}, {dim}), "
                    f"got {self.features[name].shape}"
                )
            self.features[name] = np.ascontiguousarray(
                self.features[name], dtype=np.float32
            )
        if self.group_ids is not None:
            self.group_ids = np.asarray(self.group_ids, dtype=np.int64)
            if len(self.group_ids) != n:
                raise ParameterError("group_ids length does not match labels")

    def __len__(self):
        return len(self.labels)

    @property
    def source_names(self):
        return tuple(n for n, _ in self.sources)


def _record_dtype(sources, has_groups):
    fields = [("label", "<u2")]
    if has_groups:
        fields.append(("group", "<i8"))
    for name, dim in sources:
        fields.append((f"src_{name}", "<f4", (dim,)))
    return np.dtype(fields)


def embx_bytes(dataset):
    if dataset.labels.min() < 0 or dataset.labels.max() >= min(dataset.num_classes, 1 << 16):
        raise ParameterError("labels must fit [0, num_classes) and u16 storage")
    has_groups = dataset.group_ids is not None
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(dataset.sources))
    for name, dim in dataset.sources:
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<I", dim)
    blob += struct.pack("<I", dataset.num_classes)
    blob += struct.pack("<B", 1 if has_groups else 0)
    blob += struct.pack("<Q", len(dataset))

    records = np.empty(len(dataset), dtype=_record_dtype(dataset.sources, has_groups))
    records["label"] = dataset.labels.astype("<u2")
    if has_groups:
        records["group"] = dataset.group_ids
    for name, _ in dataset.sources:
        records[f"src_{name}"] = dataset.features[name]
    blob += records.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    return bytes(blob)


def write_embx(dataset, path):
    with open(path, "wb") as fh:
        fh.write(embx_bytes(dataset))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.blob):
            raise TruncationError(
                f"need {count} bytes at offset {self.pos}, payload has {len(self.blob)}"
            )
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_embx(path):
    """Bit-exact inverse of write_embx; distinct error per corruption kind."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise MagicError("not an EMBX file")
    if len(blob) < 12:
        raise TruncationError("file ends inside the header")
    if zlib.crc32(blob[:-4]) != struct.unpack("<I", blob[-4:])[0]:
        raise ChecksumError("EMBX CRC mismatch")

    reader = _Reader(blob[:-4])
    reader.take(4)
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise VersionError(f"unsupported EMBX version {version}")
    (num_sources,) = reader.unpack("<I")
    sources = []
    for _ in range(num_sources):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode()
        (dim,) = reader.unpack("<I")
        sources.append((name, dim))
    (num_classes,) = reader.unpack("<I")
    (has_groups,) = reader.unpack("<B")
    (count,) = reader.unpack("<Q")

    dtype = _record_dtype(sources, bool(has_groups))
    records = np.frombuffer(reader.take(dtype.itemsize * count), dtype=dtype, count=count)
    if reader.pos != len(reader.blob):
        raise TruncationError("trailing bytes after the last record")

    return EmbeddingDataset(
        sources=tuple(sources),
        num_classes=num_classes,
        labels=records["label"].astype(np.int64),
        features={name: records[f"src_{name}"].copy() for name, _ in sources},
        group_ids=records["group"].copy() if has_groups else None,
    )


def validate(dataset):
    """All invariant violations as human-readable strings; empty when clean."""
    violations = []
    n = len(dataset)
    for name, dim in dataset.sources:
        x = dataset.features[name]
        if x.shape != (n, dim):
            violations.append(f"source {name}: shape {x.shape} != ({n}, {dim})")
            continue
        bad_rows = np.flatnonzero(~np.isfinite(x).all(axis=1))
        for row in bad_rows:
            violations.append(f"sample {row} source {name}: non-finite value")
    out_of_range = np.flatnonzero(
        (dataset.labels < 0) | (dataset.labels >= dataset.num_classes)
    )
    for row in out_of_range:
        violations.append(
            f"sample {row}: label {dataset.labels[row]} outside [0, {dataset.num_classes})"
        )
    present = set(np.unique(dataset.labels).tolist())
    for c in range(dataset.num_classes):
        if c not in present:
            violations.append(f"class {c} has no samples")
    return violations


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int
    source_dims: tuple
    samples_per_class: int
    sigma: float
    mode: str  # "redundant" | "complementary"
    seed: int
    source_names: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "source_dims", tuple(int(d) for d in self.source_dims))
        if self.num_classes < 2:
            raise ParameterError("num_classes must be at least 2")
        if self.samples_per_class < 1:
            raise ParameterError("samples_per_class must be positive")
        if self.sigma <= 0:
            raise ParameterError("sigma must be positive")
        if self.mode not in ("redundant", "complementary"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if any(d < 1 for d in self.source_dims):
            raise ParameterError("source dims must be positive")
        k = len(self.source_dims)
        if self.mode == "complementary" and 2**k < self.num_classes:
            raise ParameterError(
                f"{k} sources cannot cover all class pairs of {self.num_classes} "
                "classes (need 2^sources >= classes)"
            )
        if self.source_names is None:
            names = (
                DEFAULT_SOURCE_NAMES
                if k == len(DEFAULT_SOURCE_NAMES)
                else tuple(f"src{i}" for i in range(k))
            )
            object.__setattr__(self, "source_names", names)
        else:
            object.__setattr__(self, "source_names", tuple(self.source_names))
        if len(self.source_names) != k:
            raise ParameterError("source_names length does not match source_dims")


def parity_codes(num_classes, num_sources):
    """±1 codeword per class: column s is the parity of (class & mask_s).

    Power-of-two masks come first, guaranteeing distinct codewords whenever
    2^num_sources >= num_classes; composite masks follow for extra sources.
    """
    bits = max(1, math.ceil(math.log2(num_classes)))
    masks = [1 << b for b in range(bits)]
    masks += [m for m in range(3, 1 << bits) if m & (m - 1)]  # non-powers
    while len(masks) < num_sources:
        masks += masks  # cycle if callers ask for very many sources
    codes = np.empty((num_classes, num_sources), dtype=np.float64)
    for c in range(num_classes):
        for s in range(num_sources):
            codes[c, s] = 1.0 if bin(c & masks[s]).count("1") % 2 == 0 else -1.0
    return codes


def _unit_vector(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synth_generate(config):
    """Seeded Gaussian mixture over unit-norm class means.

    redundant: every source gets its own mean per class, so any single source
    separates all classes. complementary: source s places class c at
    code[c, s] * u_s, so it distinguishes only the two parity groups of its
    mask while the source union separates everything.
    """
    rng = np.random.default_rng(config.seed)
    num_classes = config.num_classes
    n = num_classes * config.samples_per_class
    labels = np.repeat(np.arange(num_classes), config.samples_per_class)
    codes = parity_codes(num_classes, len(config.source_dims))

    features = {}
    for s, (name, dim) in enumerate(zip(config.source_names, config.source_dims)):
        if config.mode == "redundant":
            means = np.stack([_unit_vector(rng, dim) for _ in range(num_classes)])
        else:
            direction = _unit_vector(rng, dim)
            means = np.outer(codes[:, s], direction)
        noise = rng.standard_normal((n, dim)) * config.sigma
        features[name] = (means[labels] + noise).astype(np.float32)

    return EmbeddingDataset(
        sources=tuple(zip(config.source_names, config.source_dims)),
        num_classes=num_classes,
        labels=labels,
        features=features,
    )


def write_manifest(path, entries):
    """Informative sidecar: one "key: value" line per entry, insertion order."""
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}: {value}\n")
