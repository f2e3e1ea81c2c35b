"""DVMW weight container: byte-stable round trips and corruption errors."""

import struct
import zlib

import numpy as np
import pytest

from dvme.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from dvme.errors import ChecksumError, MagicError, TruncationError, VersionError
from dvme.model import DvmeConfig, dvme_forward, init_dvme

CONFIG = DvmeConfig(num_classes=3, source_dims=(("a", 5), ("b", 4), ("c", 3)), proj_dim=4)


def test_round_trip_is_bit_identical(tmp_path):
    params = init_dvme(CONFIG, seed=1)
    path = tmp_path / "w.dvmw"
    save_checkpoint(path, CONFIG, params)
    config, loaded = load_checkpoint(path)
    assert config == CONFIG
    assert set(loaded) == set(params)
    assert all(np.array_equal(loaded[k], params[k]) for k in params)
    assert checkpoint_bytes(config, loaded) == path.read_bytes()


def test_reload_reproduces_eval_logits_bit_exactly(tmp_path, rng):
    params = init_dvme(CONFIG, seed=2)
    inputs = {
        name: rng.standard_normal((6, dim)).astype(np.float32)
        for name, dim in CONFIG.source_dims
    }
    before, _ = dvme_forward(params, CONFIG, inputs)
    path = tmp_path / "w.dvmw"
    save_checkpoint(path, CONFIG, params)
    config, loaded = load_checkpoint(path)
    after, _ = dvme_forward(loaded, config, inputs)
    assert np.array_equal(before, after)


def test_float64_params_are_stored_as_float32(tmp_path):
    params = init_dvme(CONFIG, seed=3, dtype=np.float64)
    path = tmp_path / "w.dvmw"
    save_checkpoint(path, CONFIG, params)
    _, loaded = load_checkpoint(path)
    assert all(v.dtype == np.float32 for v in loaded.values())


def test_magic_error_on_empty_and_foreign_files(tmp_path):
    path = tmp_path / "bad"
    path.write_bytes(b"")
    with pytest.raises(MagicError):
        load_checkpoint(path)
    path.write_bytes(b"EMBX" + b"\x00" * 50)
    with pytest.raises(MagicError):
        load_checkpoint(path)


def test_version_error(tmp_path):
    blob = bytearray(checkpoint_bytes(CONFIG, init_dvme(CONFIG, seed=0)))[:-4]
    blob[4:8] = struct.pack("<I", 7)
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    path = tmp_path / "v7.dvmw"
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_any_byte_flip_is_a_checksum_error(tmp_path):
    blob = bytearray(checkpoint_bytes(CONFIG, init_dvme(CONFIG, seed=0)))
    path = tmp_path / "c.dvmw"
    for pos in (6, 15, len(blob) // 2, len(blob) - 2):
        corrupted = bytearray(blob)
        corrupted[pos] ^= 0x01
        path.write_bytes(bytes(corrupted))
        with pytest.raises(ChecksumError):
            load_checkpoint(path)


def test_truncation_with_recomputed_crc(tmp_path):
    blob = bytearray(checkpoint_bytes(CONFIG, init_dvme(CONFIG, seed=0)))[:-4]
    chopped = blob[:-9]
    chopped += struct.pack("<I", zlib.crc32(bytes(chopped)))
    path = tmp_path / "t.dvmw"
    path.write_bytes(bytes(chopped))
    with pytest.raises(TruncationError):
        load_checkpoint(path)
