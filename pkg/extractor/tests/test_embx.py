"""Independent EMBX implementation against the shared format contract."""

import pathlib

import numpy as np
import pytest

from dvme_extractor.embx import EmbxError, read_embx, verify_format, write_embx

GOLDEN = pathlib.Path(__file__).parent / "fixtures" / "golden.embx"


def sample_payload(n=5):
    rng = np.random.default_rng(3)
    sources = [("alpha", 4), ("beta", 2)]
    features = {
        name: rng.standard_normal((n, dim)).astype(np.float32) for name, dim in sources
    }
    labels = rng.integers(0, 3, size=n)
    return sources, 3, labels, features


def test_round_trip(tmp_path):
    sources, num_classes, labels, features = sample_payload()
    path = tmp_path / "d.embx"
    write_embx(path, sources, num_classes, labels, features, group_ids=labels * 2)
    fields = read_embx(path)
    assert fields["sources"] == tuple(sources)
    assert fields["num_classes"] == num_classes
    assert np.array_equal(fields["labels"], labels)
    assert np.array_equal(fields["group_ids"], labels * 2)
    for name, _ in sources:
        assert np.array_equal(fields["features"][name], features[name])


def test_golden_fixture_parses_identically(tmp_path):
    assert verify_format(GOLDEN) == []
    fields = read_embx(GOLDEN)
    assert fields["sources"] == (("simclr", 7), ("swav", 5), ("dino", 3))
    assert len(fields["labels"]) == 6
    # Writing the parsed content back reproduces the consumer's exact bytes.
    out = tmp_path / "rewrite.embx"
    write_embx(
        out,
        fields["sources"],
        fields["num_classes"],
        fields["labels"],
        fields["features"],
        group_ids=fields["group_ids"],
    )
    assert out.read_bytes() == GOLDEN.read_bytes()


def test_byte_flip_is_a_crc_violation(tmp_path):
    blob = bytearray(GOLDEN.read_bytes())
    blob[len(blob) // 2] ^= 0x08
    path = tmp_path / "bad.embx"
    path.write_bytes(bytes(blob))
    violations = verify_format(path)
    assert violations and violations[0].startswith("crc32")
    with pytest.raises(EmbxError):
        read_embx(path)


def test_magic_violation(tmp_path):
    path = tmp_path / "not.embx"
    path.write_bytes(b"what")
    assert any(v.startswith("magic") for v in verify_format(path))


def test_expected_dims_enforced():
    ok = verify_format(GOLDEN, expect_dims=(7, 5, 3))
    assert ok == []
    bad = verify_format(GOLDEN, expect_dims=(2048, 2048, 1536))
    assert any(v.startswith("dims") for v in bad)
