"""Datasets: the HOPD binary embedding format, a deterministic hashing
embedder, and a synthetic moment-separable stream generator.

HOPD split file, all integers and floats little-endian:

    magic "HOPD" | version u32 | channels u32 | n_classes u32 | count u32
    then per sample: length u32 | label u32 | length*channels float32

A sibling ``<name>.manifest.json`` records name, split, channels, counts
and a sha256 of the file bytes. Sequences are ragged; padding is never
stored, so pooling always sees exactly the L real tokens.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    DataError,
    EmptySequenceError,
    FormatError,
    ShapeError,
    ValidationError,
)
from .tensor import make_rng

HOPD_MAGIC = b"HOPD"
HOPD_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class EmbeddedSequence:
    """One sample: an L x Q token-embedding matrix plus its class label."""

    tokens: np.ndarray
    label: int

    def __post_init__(self):
        self.tokens = np.ascontiguousarray(self.tokens, dtype=np.float32)
        if self.tokens.ndim != 2:
            raise ShapeError("tokens must be an L x Q matrix")
        if self.tokens.shape[0] < 1:
            raise EmptySequenceError("a sample needs at least one token")
        if not np.all(np.isfinite(self.tokens)):
            raise ValidationError("tokens contain non-finite values")
        self.label = int(self.label)
        if self.label < 0:
            raise ValidationError("label must be non-negative")

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]


@dataclass
class ProblemDataset:
    """One continual-learning problem with train/val/test splits."""

    problem_id: int
    name: str
    n_classes: int
    train: list[EmbeddedSequence]
    val: list[EmbeddedSequence]
    test: list[EmbeddedSequence]

    def split(self, name: str) -> list[EmbeddedSequence]:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def validate(self) -> None:
        widths = set()
        for split_name in SPLITS:
            samples = self.split(split_name)
            if not samples:
                raise DataError(f"split {split_name!r} of {self.name!r} is empty")
            for s in samples:
                widths.add(s.channels)
                if s.label >= self.n_classes:
                    raise ValidationError(
                        f"label {s.label} >= n_classes {self.n_classes} in {self.name!r}"
                    )
        if len(widths) != 1:
            raise ShapeError(f"mixed channel counts {sorted(widths)} in {self.name!r}")

    @property
    def channels(self) -> int:
        return self.train[0].channels


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def write_split(path, samples: list[EmbeddedSequence], n_classes: int,
                name: str, split: str) -> Path:
    """Write one split as a HOPD file plus its manifest; returns the path."""
    path = Path(path)
    if not samples:
        raise DataError("refusing to write an empty split")
    channels = samples[0].channels
    parts = [HOPD_MAGIC, struct.pack("<IIII", HOPD_VERSION, channels,
                                     n_classes, len(samples))]
    label_counts: dict[str, int] = {}
    for s in samples:
        if s.channels != channels:
            raise ShapeError("all samples in a split must share the channel count")
        if s.label >= n_classes:
            raise ValidationError(f"label {s.label} >= n_classes {n_classes}")
        parts.append(struct.pack("<II", s.length, s.label))
        parts.append(np.ascontiguousarray(s.tokens, dtype="<f4").tobytes())
        label_counts[str(s.label)] = label_counts.get(str(s.label), 0) + 1
    payload = b"".join(parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    manifest = {
        "name": name,
        "split": split,
        "channels": channels,
        "n_classes": n_classes,
        "count": len(samples),
        "label_counts": label_counts,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict | None:
    mpath = manifest_path(path)
    if not mpath.exists():
        return None
    return json.loads(mpath.read_text())


def read_split(path, expected_channels: int | None = None,
               max_len: int | None = None, verify_checksum: bool = True):
    """Read one HOPD split; returns (samples, n_classes, manifest | None)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:4] != HOPD_MAGIC:
        raise FormatError(f"{path}: not a HOPD file")
    version, channels, n_classes, count = struct.unpack("<IIII", raw[4:20])
    if version != HOPD_VERSION:
        raise FormatError(f"{path}: unsupported HOPD version {version}")
    manifest = read_manifest(path)
    if manifest is not None and verify_checksum:
        if manifest.get("sha256") != hashlib.sha256(raw).hexdigest():
            raise CorruptionError(f"{path}: checksum mismatch")
    if expected_channels is not None and channels != expected_channels:
        raise ShapeError(f"{path}: file has {channels} channels, expected {expected_channels}")
    samples = []
    offset = 20
    for _ in range(count):
        if offset + 8 > len(raw):
            raise CorruptionError(f"{path}: truncated sample header")
        length, label = struct.unpack_from("<II", raw, offset)
        offset += 8
        if length == 0:
            raise ValidationError(f"{path}: zero-length sequence")
        if max_len is not None and length > max_len:
            raise ValidationError(f"{path}: sequence length {length} exceeds max {max_len}")
        if label >= n_classes:
            raise ValidationError(f"{path}: label {label} >= n_classes {n_classes}")
        nbytes = length * channels * 4
        if offset + nbytes > len(raw):
            raise CorruptionError(f"{path}: truncated sample payload")
        tokens = np.frombuffer(raw, dtype="<f4", count=length * channels,
                               offset=offset).reshape(length, channels)
        offset += nbytes
        samples.append(EmbeddedSequence(tokens=tokens.copy(), label=label))
    if offset != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - offset} trailing bytes")
    return samples, n_classes, manifest


def write_dataset(directory, dataset: ProblemDataset) -> Path:
    """Write train/val/test HOPD files for one problem into a directory."""
    dataset.validate()
    directory = Path(directory)
    for split in SPLITS:
        write_split(directory / f"{split}.hopd", dataset.split(split),
                    dataset.n_classes, dataset.name, split)
    return directory


def read_dataset(directory, problem_id: int = 0,
                 expected_channels: int | None = None,
                 max_len: int | None = None) -> ProblemDataset:
    """Read a problem directory written by write_dataset."""
    directory = Path(directory)
    splits = {}
    n_classes = None
    name = directory.name
    for split in SPLITS:
        fpath = directory / f"{split}.hopd"
        if not fpath.exists():
            raise FormatError(f"missing split file {fpath}")
        samples, nc, manifest = read_split(fpath, expected_channels, max_len)
        if n_classes is None:
            n_classes = nc
        elif nc != n_classes:
            raise FormatError(f"{fpath}: n_classes {nc} disagrees with {n_classes}")
        if manifest is not None:
            name = manifest.get("name", name)
        splits[split] = samples
    ds = ProblemDataset(problem_id=problem_id, name=name, n_classes=n_classes, **splits)
    ds.validate()
    return ds


def hash_embed(text: str, channels: int, max_len: int, seed: int) -> np.ndarray:
    """Deterministic text embedding without any trained model.

    Lowercases, splits on whitespace, truncates to max_len tokens; each
    token string is hashed (blake2b-64, keyed by the seed) and the hash
    seeds a PCG64 stream that emits a unit-variance channel vector.
    Identical tokens map to identical rows.
    """
    if channels < 1:
        raise ShapeError("channels must be >= 1")
    words = text.lower().split()[:max_len]
    if not words:
        raise EmptySequenceError("text has no tokens after splitting")
    key = int(seed).to_bytes(8, "little", signed=False)
    rows = []
    for w in words:
        h = hashlib.blake2b(w.encode("utf-8"), digest_size=8, key=key).digest()
        token_rng = make_rng(int.from_bytes(h, "little"))
        rows.append(token_rng.standard_normal(channels))
    return np.asarray(rows, dtype=np.float32)


@dataclass(frozen=True)
class ClassSpec:
    """Per-class token distribution: location, scale, skew."""

    mean: float = 0.0
    scale: float = 1.0
    skew: float = 0.0


@dataclass
class SynthProblemSpec:
    name: str
    classes: list[ClassSpec]


@dataclass
class SynthSpec:
    """Controllable synthetic stream of embedding problems.

    Tokens are drawn as mean + scale * f(z) with z standard normal and
    f the sinh-arcsinh skew map sinh(asinh(z) + skew), standardized to
    zero mean / unit variance by Gauss-Hermite quadrature, so the class
    mean and variance equal the requested values exactly.

    mean_jitter adds a per-sample, per-channel location offset shared by
    all tokens of the sample: it erases class information from the mean
    while leaving central moments untouched. neutral_first_token redraws
    token 0 with a uniformly random class's parameters, making position
    0 a content-free classification-token stand-in.
    """

    problems: list[SynthProblemSpec]
    n_train: int = 120
    n_val: int = 40
    n_test: int = 100
    min_len: int = 16
    max_len: int = 16
    channels: int = 8
    mean_jitter: float = 0.0
    neutral_first_token: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.problems:
            raise DataError("need at least one problem")
        if self.channels < 1:
            raise ShapeError("channels must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise DataError("need 1 <= min_len <= max_len")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise DataError("every split needs at least one sample")


_SKEW_CONST_CACHE: dict[float, tuple[float, float]] = {}
_HERME_NODES = None


def _skew_constants(skew: float) -> tuple[float, float]:
    """Mean and std of sinh(asinh(Z) + skew), Z ~ N(0,1), by quadrature."""
    key = float(skew)
    if key not in _SKEW_CONST_CACHE:
        global _HERME_NODES
        if _HERME_NODES is None:
            nodes, weights = np.polynomial.hermite_e.hermegauss(201)
            _HERME_NODES = (nodes, weights / math.sqrt(2.0 * math.pi))
        nodes, w = _HERME_NODES
        f = np.sinh(np.arcsinh(nodes) + key)
        m = float((w * f).sum())
        s = math.sqrt(float((w * (f - m) ** 2).sum()))
        _SKEW_CONST_CACHE[key] = (m, s)
    return _SKEW_CONST_CACHE[key]


def _skewed_standard(rng: np.random.Generator, shape, skew: float) -> np.ndarray:
    z = rng.standard_normal(shape)
    if skew == 0.0:
        return z
    m, s = _skew_constants(skew)
    return (np.sinh(np.arcsinh(z) + skew) - m) / s


def _draw_sample(rng, spec: SynthSpec, classes: list[ClassSpec], label: int) -> EmbeddedSequence:
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    cs = classes[label]
    tokens = cs.mean + cs.scale * _skewed_standard(rng, (length, spec.channels), cs.skew)
    if spec.neutral_first_token:
        neutral = classes[int(rng.integers(0, len(classes)))]
        tokens[0] = neutral.mean + neutral.scale * _skewed_standard(
            rng, (spec.channels,), neutral.skew
        )
    if spec.mean_jitter > 0.0:
        tokens = tokens + spec.mean_jitter * rng.standard_normal(spec.channels)
    return EmbeddedSequence(tokens=tokens.astype(np.float32), label=label)


def generate_synthetic(spec: SynthSpec) -> list[ProblemDataset]:
    """Deterministically generate every problem of the spec."""
    datasets = []
    sizes = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    for p_idx, problem in enumerate(spec.problems):
        n_classes = len(problem.classes)
        splits = {}
        for s_idx, split in enumerate(SPLITS):
            rng = make_rng(spec.seed, "synth", p_idx, s_idx)
            splits[split] = [
                _draw_sample(rng, spec, problem.classes, i % n_classes)
                for i in range(sizes[split])
            ]
        ds = ProblemDataset(problem_id=p_idx, name=problem.name,
                            n_classes=n_classes, **splits)
        ds.validate()
        datasets.append(ds)
    return datasets
