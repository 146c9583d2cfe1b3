"""Heavy-tail class-imbalanced synthetic dataset generator and file format.

The label distribution is dyadic: group g (g = 0..G-1) holds 2^g classes
with max(2^(S-g), min_class_size) samples each, so a handful of frequent
classes coexist with a long tail of rare ones. With G=8, S=10 this gives
n=8192 samples over c=255 classes in d=9216 dimensions and the group
table 1x1024, 2x512, 4x256, 8x128, 16x64, 32x32, 64x16, 128x8.

Features are i.i.d. uniform on [0,1]^d, drawn directly in float32 so the
float32 on-disk format round-trips bit exactly. RNG order is fixed:
features first, then the sample-order permutation.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import (
    MemoryBudgetError,
    DatasetIOError,
    VersionMismatchError,
    TruncatedDatasetError,
    ChecksumMismatchError,
    DatasetIntegrityError,
)
from .linear_model import Dataset, ClassStats

FORMAT_VERSION = 1
MAGIC = "dpoptlab-dataset"

# Generation allocates the float32 draw plus the float64 compute copy.
DEFAULT_MEMORY_BUDGET_BYTES = 8 * 1024**3
_BYTES_PER_ENTRY = 4 + 8


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of the dyadic heavy-tail generator.

    d follows the feature-dimension rule d = n + 2^scale_exponent.
    """

    num_groups: int          # G
    scale_exponent: int      # S
    min_class_size: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.num_groups < 1:
            raise ValueError(f"num_groups must be >= 1, got {self.num_groups}")
        if self.scale_exponent < self.num_groups - 1:
            raise ValueError(
                f"scale_exponent must be >= num_groups - 1 "
                f"({self.num_groups - 1}), got {self.scale_exponent}"
            )
        if self.min_class_size < 1:
            raise ValueError(f"min_class_size must be >= 1, got {self.min_class_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class FrequencyGroup:
    """One dyadic group: 2^g classes of equal size, contiguous class ids."""

    group_id: int
    num_classes: int
    samples_per_class: int
    first_class: int

    @property
    def class_ids(self) -> range:
        return range(self.first_class, self.first_class + self.num_classes)

    @property
    def num_samples(self) -> int:
        return self.num_classes * self.samples_per_class


def group_table(spec: GeneratorSpec) -> list[FrequencyGroup]:
    groups = []
    first = 0
    for g in range(spec.num_groups):
        nc = 2**g
        spc = max(2 ** (spec.scale_exponent - g), spec.min_class_size)
        groups.append(FrequencyGroup(g, nc, spc, first))
        first += nc
    return groups


def planned_shape(spec: GeneratorSpec) -> tuple[int, int, int]:
    """(n, d, c) the generator will produce, without allocating anything."""
    groups = group_table(spec)
    n = sum(g.num_samples for g in groups)
    c = sum(g.num_classes for g in groups)
    return n, n + 2**spec.scale_exponent, c


def generate(
    spec: GeneratorSpec,
    memory_budget_bytes: int = DEFAULT_MEMORY_BUDGET_BYTES,
) -> tuple[Dataset, ClassStats, list[FrequencyGroup]]:
    """Draw the dataset for `spec` deterministically from its seed."""
    groups = group_table(spec)
    n = sum(g.num_samples for g in groups)
    c = sum(g.num_classes for g in groups)
    d = n + 2**spec.scale_exponent

    required = n * d * _BYTES_PER_ENTRY
    if required > memory_budget_bytes:
        raise MemoryBudgetError(required, memory_budget_bytes)

    counts = np.zeros(c, dtype=np.int64)
    group_of_class = np.zeros(c, dtype=np.int64)
    blocked = np.empty(n, dtype=np.int64)
    pos = 0
    for g in groups:
        for k in g.class_ids:
            blocked[pos:pos + g.samples_per_class] = k
            counts[k] = g.samples_per_class
            group_of_class[k] = g.group_id
            pos += g.samples_per_class

    rng = np.random.default_rng(spec.seed)
    features32 = rng.random((n, d), dtype=np.float32)
    perm = rng.permutation(n)

    dataset = Dataset(
        features=features32[perm].astype(np.float64),
        labels=blocked[perm],
        num_classes=c,
    )
    stats = ClassStats(counts, counts / n, group_of_class)
    return dataset, stats, groups


def save(dataset: Dataset, stats: ClassStats, groups: list[FrequencyGroup],
         path, spec: GeneratorSpec | None = None) -> None:
    """Write JSON header line + float32 feature block + uint32 label block."""
    feat = np.ascontiguousarray(dataset.features, dtype="<f4")
    labs = np.ascontiguousarray(dataset.labels, dtype="<u4")
    feat_bytes = feat.tobytes()
    lab_bytes = labs.tobytes()
    header = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "n": dataset.n,
        "d": dataset.d,
        "c": dataset.c,
        "spec": asdict(spec) if spec is not None else None,
        "groups": [asdict(g) for g in groups],
        "group_of_class": stats.group_of_class.tolist(),
        "feature_crc32": zlib.crc32(feat_bytes),
        "label_crc32": zlib.crc32(lab_bytes),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(feat_bytes)
        fh.write(lab_bytes)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    return _parse_header(line)


def _parse_header(line: bytes) -> dict:
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetIOError(f"unreadable dataset header: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise DatasetIOError("not a dpoptlab dataset file (bad magic)")
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"dataset format version {header.get('format_version')} "
            f"is not supported (expected {FORMAT_VERSION})"
        )
    return header


def load(path) -> tuple[Dataset, ClassStats, list[FrequencyGroup]]:
    """Read a dataset written by save(); round-trip is bit exact."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = _parse_header(fh.readline())
        n, d, c = header["n"], header["d"], header["c"]
        feat_len = n * d * 4
        lab_len = n * 4
        feat_bytes = fh.read(feat_len)
        if len(feat_bytes) < feat_len:
            raise TruncatedDatasetError(
                f"feature block has {len(feat_bytes)} bytes, header declares {feat_len}"
            )
        lab_bytes = fh.read(lab_len)
        if len(lab_bytes) < lab_len:
            raise TruncatedDatasetError(
                f"label block has {len(lab_bytes)} bytes, header declares {lab_len}"
            )
        if fh.read(1):
            raise DatasetIntegrityError(
                "trailing bytes after the payload declared in the header"
            )

    if zlib.crc32(feat_bytes) != header["feature_crc32"]:
        raise ChecksumMismatchError("feature block checksum mismatch")
    if zlib.crc32(lab_bytes) != header["label_crc32"]:
        raise ChecksumMismatchError("label block checksum mismatch")

    features = np.frombuffer(feat_bytes, dtype="<f4").reshape(n, d)
    labels = np.frombuffer(lab_bytes, dtype="<u4").astype(np.int64)
    dataset = Dataset(features=features.astype(np.float64), labels=labels, num_classes=c)

    group_of_class = np.asarray(header["group_of_class"], dtype=np.int64)
    counts = np.bincount(labels, minlength=c)
    stats = ClassStats(counts, counts / n, group_of_class)
    groups = [FrequencyGroup(**g) for g in header["groups"]]
    return dataset, stats, groups
