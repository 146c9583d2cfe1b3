import json

import numpy as np
import pytest

from dpoptlab.errors import (
    ChecksumMismatchError,
    DatasetIntegrityError,
    MemoryBudgetError,
    TruncatedDatasetError,
    VersionMismatchError,
)
from dpoptlab.synth_data import (
    FrequencyGroup,
    GeneratorSpec,
    generate,
    group_table,
    load,
    planned_shape,
    save,
)


def test_spec_invariants():
    with pytest.raises(ValueError):
        GeneratorSpec(num_groups=0, scale_exponent=4)
    with pytest.raises(ValueError):
        GeneratorSpec(num_groups=5, scale_exponent=3)  # S < G-1
    with pytest.raises(ValueError):
        GeneratorSpec(num_groups=2, scale_exponent=2, min_class_size=0)
    GeneratorSpec(num_groups=5, scale_exponent=4)  # S = G-1 is allowed


def test_paper_scale_group_table():
    spec = GeneratorSpec(num_groups=8, scale_exponent=10)
    n, d, c = planned_shape(spec)
    assert (n, d, c) == (8192, 9216, 255)
    groups = group_table(spec)
    assert [(g.num_classes, g.samples_per_class) for g in groups] == [
        (1, 1024), (2, 512), (4, 256), (8, 128),
        (16, 64), (32, 32), (64, 16), (128, 8),
    ]
    assert sum(g.num_classes for g in groups) == 2**8 - 1
    # no clamping at defaults: every group holds G-independent 2^S samples
    assert all(g.num_samples == 2**10 for g in groups)


def test_min_class_size_clamp():
    dataset, stats, groups = generate(GeneratorSpec(num_groups=1, scale_exponent=0))
    assert dataset.c == 1
    assert groups[0].samples_per_class == 5  # max(2^0, 5)
    assert dataset.n == 5
    assert dataset.d == 6


def test_small_instance_arithmetic():
    spec = GeneratorSpec(num_groups=3, scale_exponent=4)
    dataset, stats, groups = generate(spec)
    assert [(g.num_classes, g.samples_per_class) for g in groups] == [
        (1, 16), (2, 8), (4, 5)]
    assert dataset.n == 52 and dataset.d == 68 and dataset.c == 7


def test_class_counts_match_group_table():
    dataset, stats, groups = generate(GeneratorSpec(num_groups=4, scale_exponent=5))
    counts = np.bincount(dataset.labels, minlength=dataset.c)
    for g in groups:
        for k in g.class_ids:
            assert counts[k] == g.samples_per_class
            assert stats.group_of_class[k] == g.group_id
    assert stats.frequencies.sum() == pytest.approx(1.0, abs=1e-12)


def test_same_seed_same_bytes():
    spec = GeneratorSpec(num_groups=3, scale_exponent=4, seed=123)
    a, _, _ = generate(spec)
    b, _, _ = generate(spec)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    c, _, _ = generate(GeneratorSpec(num_groups=3, scale_exponent=4, seed=124))
    assert a.features.tobytes() != c.features.tobytes()


def test_feature_marginals_sane():
    dataset, _, _ = generate(GeneratorSpec(num_groups=1, scale_exponent=10))
    assert dataset.n == 1024
    mean_per_dim = dataset.features.mean(axis=0)
    tol = 5.0 / np.sqrt(dataset.n)
    assert np.abs(mean_per_dim - 0.5).max() < tol


def test_memory_budget_refusal():
    spec = GeneratorSpec(num_groups=3, scale_exponent=4)
    n, d, _ = planned_shape(spec)
    with pytest.raises(MemoryBudgetError) as exc:
        generate(spec, memory_budget_bytes=100)
    assert exc.value.required_bytes == n * d * 12
    assert str(exc.value.required_bytes) in str(exc.value)


# ------------------------------------------------------------ file format

@pytest.fixture
def saved(tmp_path):
    spec = GeneratorSpec(num_groups=3, scale_exponent=4, seed=9)
    triple = generate(spec)
    path = tmp_path / "data.bin"
    save(*triple, path, spec=spec)
    return spec, triple, path


def test_round_trip_bit_exact(saved):
    _, (dataset, stats, groups), path = saved
    dataset2, stats2, groups2 = load(path)
    assert dataset2.features.tobytes() == dataset.features.tobytes()
    assert dataset2.labels.tobytes() == dataset.labels.tobytes()
    assert dataset2.c == dataset.c
    np.testing.assert_array_equal(stats2.counts, stats.counts)
    np.testing.assert_array_equal(stats2.group_of_class, stats.group_of_class)
    assert groups2 == groups


def test_double_round_trip_stable(saved, tmp_path):
    _, _, path = saved
    triple = load(path)
    path2 = tmp_path / "data2.bin"
    save(*triple, path2)
    a = path.read_bytes()
    b = path2.read_bytes()
    # payload identical; headers differ only in the recorded spec
    assert a[a.index(b"\n"):] == b[b.index(b"\n"):]


def test_truncated_file(saved, tmp_path):
    _, _, path = saved
    raw = path.read_bytes()
    bad = tmp_path / "trunc.bin"
    bad.write_bytes(raw[:-7])
    with pytest.raises(TruncatedDatasetError):
        load(bad)


def test_truncated_feature_block(saved, tmp_path):
    _, (dataset, _, _), path = saved
    raw = path.read_bytes()
    header_end = raw.index(b"\n") + 1
    bad = tmp_path / "trunc.bin"
    bad.write_bytes(raw[:header_end + 10])
    with pytest.raises(TruncatedDatasetError, match="feature block"):
        load(bad)


def test_checksum_mismatch(saved, tmp_path):
    _, _, path = saved
    raw = bytearray(path.read_bytes())
    header_end = raw.index(b"\n") + 1
    raw[header_end + 5] ^= 0xFF
    bad = tmp_path / "flip.bin"
    bad.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatchError):
        load(bad)


def test_version_mismatch(saved, tmp_path):
    _, _, path = saved
    raw = path.read_bytes()
    header_end = raw.index(b"\n")
    header = json.loads(raw[:header_end])
    header["format_version"] = 99
    bad = tmp_path / "ver.bin"
    bad.write_bytes(json.dumps(header, sort_keys=True).encode() + raw[header_end:])
    with pytest.raises(VersionMismatchError):
        load(bad)


def test_header_payload_inconsistency(saved, tmp_path):
    # header that declares fewer samples than the payload carries
    _, _, path = saved
    raw = path.read_bytes()
    header_end = raw.index(b"\n")
    header = json.loads(raw[:header_end])
    header["n"] -= 1
    bad = tmp_path / "short_header.bin"
    bad.write_bytes(json.dumps(header, sort_keys=True).encode() + raw[header_end:])
    with pytest.raises(DatasetIntegrityError, match="trailing"):
        load(bad)


def test_frequency_group_class_ids():
    g = FrequencyGroup(group_id=2, num_classes=4, samples_per_class=8, first_class=3)
    assert list(g.class_ids) == [3, 4, 5, 6]
    assert g.num_samples == 32
