"""Labeled IQ datasets with known bit payloads, and the RFADVD1 file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .modem import SCHEMES, ModScheme, PulseShape, bits_per_frame, modulate
from .receiver import decode_chain

DATASET_MAGIC = b"RFADVD1"


@dataclass
class Dataset:
    frames: np.ndarray  # (N, L) complex
    labels: np.ndarray  # (N,) class index into ``schemes``
    bits: list[np.ndarray]  # ground-truth payload per record
    schemes: tuple[ModScheme, ...]
    shape: PulseShape = PulseShape()

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.frames) != len(self.labels) or len(self.bits) != len(self.labels):
            raise ValueError("frames, labels and bits must have one entry per record")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.schemes)):
            raise ValueError("label outside the scheme table")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def frame_len(self) -> int:
        return self.frames.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.schemes)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(self.frames[idx], self.labels[idx], [self.bits[i] for i in idx],
                       self.schemes, self.shape)

    def of_class(self, c: int) -> "Dataset":
        return self.subset(self.labels == c)

    def per_class(self, n: int) -> "Dataset":
        """The first ``n`` records of every class."""
        keep = np.concatenate([np.flatnonzero(self.labels == c)[:n] for c in range(self.num_classes)])
        return self.subset(np.sort(keep))


def frame_rng(seed: int, class_index: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(class_index, frame_index)))


def generate_dataset(schemes: Sequence[ModScheme] = SCHEMES, frames_per_class: int = 250, *,
                     frame_len: int = 1024, shape: PulseShape = PulseShape(), seed: int = 0,
                     first_frame: int = 0) -> Dataset:
    """Clean unit-power frames with random payloads, ``frames_per_class`` per scheme.

    Each frame draws its payload from a generator keyed by (seed, class,
    frame index), so a test split can be taken from the same seed by
    offsetting ``first_frame``.
    """
    schemes = tuple(schemes)
    if frames_per_class < 1:
        raise ValueError("frames_per_class must be at least 1")
    frames, labels, bits = [], [], []
    for c, scheme in enumerate(schemes):
        n_bits = bits_per_frame(scheme, frame_len, shape.sps)
        for i in range(first_frame, first_frame + frames_per_class):
            b = frame_rng(seed, c, i).integers(0, 2, n_bits, dtype=np.uint8)
            frames.append(modulate(b, scheme, shape))
            labels.append(c)
            bits.append(b)
    return Dataset(np.asarray(frames, dtype=np.complex64), np.asarray(labels), bits, schemes, shape)


def check_loopback(ds: Dataset, max_per_class: int | None = None) -> int:
    """Total bit errors of the clean decode chain over (a sample of) the dataset."""
    errors = 0
    for c, scheme in enumerate(ds.schemes):
        idx = np.flatnonzero(ds.labels == c)[:max_per_class]
        for i in idx:
            f = ds.frames[i].astype(complex)
            errors += decode_chain(f, ds.bits[i], f, scheme, ds.shape).bit_errors
    return errors


class DatasetFileError(ValueError):
    pass


def save_dataset(ds: Dataset, path) -> None:
    """Write RFADVD1.

    Header: magic, u32 frame length, u32 class count, per class (u8 name
    length, ASCII name), u32 sps, f64 rolloff, u32 span, u32 record count.
    Record: u16 label, u32 payload bits, packed payload bits (MSB first),
    frame as interleaved float32 I/Q.  All little-endian.
    """
    head = [DATASET_MAGIC, struct.pack("<II", ds.frame_len, ds.num_classes)]
    for s in ds.schemes:
        name = s.name.encode("ascii")
        head.append(struct.pack("<B", len(name)) + name)
    head.append(struct.pack("<IdII", ds.shape.sps, ds.shape.rolloff, ds.shape.span_symbols, len(ds)))
    iq = np.empty((len(ds), ds.frame_len, 2), dtype="<f4")
    iq[..., 0] = ds.frames.real
    iq[..., 1] = ds.frames.imag
    body = []
    for i in range(len(ds)):
        b = np.asarray(ds.bits[i], dtype=np.uint8)
        body.append(struct.pack("<HI", ds.labels[i], b.size))
        body.append(np.packbits(b).tobytes())
        body.append(iq[i].tobytes())
    Path(path).write_bytes(b"".join(head + body))


def load_dataset(path) -> Dataset:
    data = memoryview(Path(path).read_bytes())
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise DatasetFileError(f"{path}: truncated at byte {pos}")
        out = data[pos:pos + n]
        pos += n
        return out

    if bytes(take(len(DATASET_MAGIC))) != DATASET_MAGIC:
        raise DatasetFileError(f"{path}: bad magic, not an RFADVD1 dataset")
    L, C = struct.unpack("<II", take(8))
    schemes = []
    for _ in range(C):
        (n,) = struct.unpack("<B", take(1))
        schemes.append(ModScheme.from_name(bytes(take(n)).decode("ascii")))
    sps, rolloff, span, count = struct.unpack("<IdII", take(20))
    frames = np.empty((count, L), dtype=np.complex64)
    labels = np.empty(count, dtype=np.int64)
    bits = []
    for i in range(count):
        label, n_bits = struct.unpack("<HI", take(6))
        if label >= C:
            raise DatasetFileError(f"{path}: record {i} label {label} >= {C} classes")
        packed = np.frombuffer(take((n_bits + 7) // 8), dtype=np.uint8)
        bits.append(np.unpackbits(packed)[:n_bits])
        iq = np.frombuffer(take(8 * L), dtype="<f4").reshape(L, 2)
        frames[i] = iq[:, 0] + 1j * iq[:, 1]
        labels[i] = label
    if pos != len(data):
        raise DatasetFileError(f"{path}: {len(data) - pos} trailing bytes")
    return Dataset(frames, labels, bits, tuple(schemes), PulseShape(rolloff, span, sps))
