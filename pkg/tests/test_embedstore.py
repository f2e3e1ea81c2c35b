"""EMBX container round-trips and corruption handling; synthetic datasets."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvme.errors import (
    ChecksumError,
    MagicError,
    ParameterError,
    TruncationError,
    VersionError,
)
from dvme.embedstore import (
    EmbeddingDataset,
    SynthConfig,
    embx_bytes,
    parity_codes,
    read_embx,
    synth_generate,
    validate,
    write_embx,
    write_manifest,
)
from dvme.evalbench import auc_binary
from dvme.model import ProbeModel
from dvme.training import TrainConfig, fit


def random_dataset(rng, n=12, with_groups=False):
    sources = (("alpha", 5), ("beta", 3))
    return EmbeddingDataset(
        sources=sources,
        num_classes=3,
        labels=rng.integers(0, 3, size=n),
        features={
            name: rng.standard_normal((n, dim)).astype(np.float32)
            for name, dim in sources
        },
        group_ids=rng.integers(0, 6, size=n) if with_groups else None,
    )


class TestContainer:
    @pytest.mark.parametrize("with_groups", [False, True])
    def test_round_trip_is_bit_identical(self, rng, tmp_path, with_groups):
        dataset = random_dataset(rng, with_groups=with_groups)
        path = tmp_path / "data.embx"
        write_embx(dataset, path)
        loaded = read_embx(path)
        assert loaded.sources == dataset.sources
        assert loaded.num_classes == dataset.num_classes
        assert np.array_equal(loaded.labels, dataset.labels)
        for name, _ in dataset.sources:
            assert np.array_equal(loaded.features[name], dataset.features[name])
        if with_groups:
            assert np.array_equal(loaded.group_ids, dataset.group_ids)
        # Re-serialization reproduces the exact bytes.
        assert embx_bytes(loaded) == path.read_bytes()

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(1, 9))
    def test_round_trip_property(self, tmp_path_factory, seed, n):
        rng = np.random.default_rng(seed)
        dataset = random_dataset(rng, n=n, with_groups=bool(seed % 2))
        path = tmp_path_factory.mktemp("embx") / "d.embx"
        write_embx(dataset, path)
        assert embx_bytes(read_embx(path)) == path.read_bytes()

    def test_any_flipped_byte_is_a_checksum_error(self, rng, tmp_path):
        dataset = random_dataset(rng)
        blob = bytearray(embx_bytes(dataset))
        path = tmp_path / "d.embx"
        # Probe positions across header, payload, and the CRC itself.
        for pos in [4, 9, 20, len(blob) // 2, len(blob) - 5, len(blob) - 1]:
            corrupted = bytearray(blob)
            corrupted[pos] ^= 0x40
            path.write_bytes(bytes(corrupted))
            with pytest.raises(ChecksumError):
                read_embx(path)

    def test_empty_file_is_a_magic_error(self, tmp_path):
        path = tmp_path / "empty.embx"
        path.write_bytes(b"")
        with pytest.raises(MagicError):
            read_embx(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.embx"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(MagicError):
            read_embx(path)

    def test_unsupported_version(self, rng, tmp_path):
        import struct
        import zlib

        blob = bytearray(embx_bytes(random_dataset(rng)))[:-4]
        blob[4:8] = struct.pack("<I", 9)
        blob += struct.pack("<I", zlib.crc32(bytes(blob)))
        path = tmp_path / "v9.embx"
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionError):
            read_embx(path)

    def test_truncation_with_recomputed_crc(self, rng, tmp_path):
        import struct
        import zlib

        blob = bytearray(embx_bytes(random_dataset(rng)))[:-4]
        chopped = blob[:-10]
        chopped += struct.pack("<I", zlib.crc32(bytes(chopped)))
        path = tmp_path / "short.embx"
        path.write_bytes(bytes(chopped))
        with pytest.raises(TruncationError):
            read_embx(path)


class TestValidate:
    def test_clean_dataset(self, rng):
        assert validate(random_dataset(rng)) == []

    def test_single_nan_yields_one_violation_naming_sample_and_source(self, rng):
        dataset = random_dataset(rng)
        dataset.features["beta"][4, 1] = np.nan
        violations = validate(dataset)
        assert violations == ["sample 4 source beta: non-finite value"]

    def test_label_out_of_range(self, rng):
        dataset = random_dataset(rng)
        dataset.labels[2] = 3  # == num_classes
        violations = validate(dataset)
        assert any("sample 2: label 3" in v for v in violations)

    def test_missing_class_reported(self, rng):
        dataset = random_dataset(rng)
        dataset.labels[:] = 0
        assert set(validate(dataset)) == {"class 1 has no samples", "class 2 has no samples"}


class TestSynth:
    def test_same_seed_is_identical(self):
        config = SynthConfig(4, (8, 8, 8), 5, sigma=0.5, mode="complementary", seed=11)
        a = synth_generate(config)
        b = synth_generate(config)
        assert np.array_equal(a.labels, b.labels)
        assert all(np.array_equal(a.features[s], b.features[s]) for s in a.features)

    def test_default_source_names_for_three_sources(self):
        dataset = synth_generate(
            SynthConfig(2, (4, 4, 4), 3, sigma=0.1, mode="redundant", seed=0)
        )
        assert dataset.source_names == ("simclr", "swav", "dino")

    def test_generated_dataset_is_clean(self):
        dataset = synth_generate(
            SynthConfig(3, (6, 5), 7, sigma=0.3, mode="redundant", seed=2)
        )
        assert validate(dataset) == []

    def test_pair_cover_infeasibility_is_a_config_error(self):
        with pytest.raises(ParameterError, match="cover"):
            SynthConfig(5, (8, 8), 4, sigma=0.5, mode="complementary", seed=0)

    def test_parity_codes_are_distinct_and_balanced_for_c4_k3(self):
        codes = parity_codes(4, 3)
        assert len({tuple(row) for row in codes}) == 4
        assert np.abs(codes.sum(axis=0)).max() == 0  # each source splits 2/2

    def test_complementary_sources_see_only_two_clusters(self):
        config = SynthConfig(4, (16, 16, 16), 50, sigma=0.5, mode="complementary", seed=3)
        dataset = synth_generate(config)
        codes = parity_codes(4, 3)
        for s, name in enumerate(dataset.source_names):
            x = dataset.features[name].astype(np.float64)
            # Class means collapse onto +/- one direction: same-parity classes
            # are statistically indistinguishable within this source.
            class_means = np.stack([x[dataset.labels == c].mean(axis=0) for c in range(4)])
            for c in range(4):
                for c2 in range(c + 1, 4):
                    gap = np.linalg.norm(class_means[c] - class_means[c2])
                    if codes[c, s] == codes[c2, s]:
                        assert gap < 0.8  # noise-level only (~sigma*sqrt(2d/n))
                    else:
                        assert gap > 1.5  # separated by ~2 along the direction

    def test_redundant_low_noise_probe_reaches_perfect_auc(self, rng):
        config = SynthConfig(2, (6, 6, 6), 40, sigma=0.01, mode="redundant", seed=5)
        dataset = synth_generate(config)
        shuffle = rng.permutation(len(dataset))
        train, val = shuffle[:60], shuffle[60:]
        x = dataset.features["simclr"]
        result = fit(
            ProbeModel(6, 2),
            x[train],
            dataset.labels[train],
            x[val],
            dataset.labels[val],
            TrainConfig(min_epochs=2, max_epochs=10, batch_size=32, seed=0, initial_lr=0.05),
        )
        assert max(r.val_score for r in result.history.records) == 1.0


def test_golden_fixture_bytes(tmp_path):
    """The committed fixture regenerates exactly from its recipe and round-trips.

    The secondary extractor ships a copy of this file; byte equality here and
    there is the cross-component format contract.
    """
    import pathlib

    rng = np.random.default_rng(20240904)
    sources = (("simclr", 7), ("swav", 5), ("dino", 3))
    n = 6
    dataset = EmbeddingDataset(
        sources=sources,
        num_classes=2,
        labels=rng.integers(0, 2, size=n),
        features={
            name: rng.standard_normal((n, dim)).astype(np.float32)
            for name, dim in sources
        },
        group_ids=np.array([0, 0, 1, 2, 2, 3]),
    )
    golden = pathlib.Path(__file__).parent / "fixtures" / "golden.embx"
    assert embx_bytes(dataset) == golden.read_bytes()
    loaded = read_embx(golden)
    assert validate(loaded) == []
    assert embx_bytes(loaded) == golden.read_bytes()


def test_manifest_is_plain_key_value_text(tmp_path):
    path = tmp_path / "d.manifest"
    write_manifest(path, {"dataset": "synth", "mode": "complementary", "seed": 7})
    assert path.read_text() == "dataset: synth\nmode: complementary\nseed: 7\n"
