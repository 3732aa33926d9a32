"""Dataset ingestion (IDX, UCR-style CSV) and the bundled synthetic cross-domain task."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError

IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_MAGIC = 0x00000803


@dataclass
class Normalization:
    """``normalized = clip((raw - center) / spread)``.

    ``center``/``spread`` broadcast against the sample matrix (per feature or
    per series). Values changed by clipping are kept so the map stays invertible.
    """

    center: np.ndarray
    spread: np.ndarray
    clip_index: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    clip_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kind: str = "affine"

    def invert(self, normalized) -> np.ndarray:
        raw = np.asarray(normalized, dtype=np.float64) * self.spread + self.center
        if len(self.clip_values):
            raw[self.clip_index[:, 0], self.clip_index[:, 1]] = self.clip_values
        return raw


def _normalize(raw, center, spread, kind, clip=True):
    raw = np.asarray(raw, dtype=np.float64)
    out = (raw - center) / spread
    clip_index = np.zeros((0, 2), dtype=np.int64)
    clip_values = np.zeros(0)
    if clip:
        outside = (out < -1.0) | (out > 1.0)
        if outside.any():
            clip_index = np.argwhere(outside)
            clip_values = raw[outside]
            np.clip(out, -1.0, 1.0, out=out)
    return out, Normalization(center, spread, clip_index, clip_values, kind)


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    normalization: Normalization | None = None
    label_names: list | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        self.samples = self.samples.reshape(self.samples.shape[0], -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.samples.shape[0],):
            raise DataFormatError(f"{self.samples.shape[0]} samples but {self.labels.size} labels")
        if len(self.labels) and self.labels.min() < 0:
            raise DataFormatError("labels must be non-negative")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def denormalize(self) -> np.ndarray:
        if self.normalization is None:
            return self.samples.copy()
        return self.normalization.invert(self.samples)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.samples[idx], self.labels[idx], None, self.label_names)


# --------------------------------------------------------------------- IDX


def _parse_idx_raw(data: bytes):
    data = bytes(data)
    if len(data) < 4:
        raise DataFormatError(f"IDX header needs 4 bytes, got {len(data)}")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic not in (IDX_LABELS_MAGIC, IDX_IMAGES_MAGIC):
        raise DataFormatError(f"bad IDX magic 0x{magic:08x}; expected 0x00000801 or 0x00000803")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DataFormatError(f"truncated IDX header: expected {header} bytes, got {len(data)}")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    expected = int(np.prod(dims))
    actual = len(data) - header
    if actual < expected:
        raise DataFormatError(
            f"truncated IDX payload: expected {expected} bytes, got {actual} ({expected - actual} missing)")
    if actual > expected:
        raise DataFormatError(f"IDX payload has {actual - expected} trailing bytes")
    values = np.frombuffer(data, dtype=np.uint8, count=expected, offset=header)
    return magic, dims, values


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX file.

    Image files (0x00000803) give a float array of shape (n, rows * cols) scaled
    from [0, 255] to [-1, 1]; label files (0x00000801) give an int64 vector.
    """
    magic, dims, values = _parse_idx_raw(data)
    if magic == IDX_LABELS_MAGIC:
        return values.astype(np.int64)
    return values.reshape(dims[0], -1).astype(np.float64) / 127.5 - 1.0


def load_idx_dataset(images_path, labels_path) -> Dataset:
    _, dims, raw = _parse_idx_raw(Path(images_path).read_bytes())
    labels = parse_idx(Path(labels_path).read_bytes())
    raw = raw.reshape(dims[0], -1).astype(np.float64)
    if len(labels) != raw.shape[0]:
        raise DataFormatError(f"{raw.shape[0]} images but {len(labels)} labels")
    samples, norm = _normalize(raw, 127.5, 127.5, "u8-affine", clip=False)
    return Dataset(samples, labels, norm)


# --------------------------------------------------------------------- UCR


def _label_key(token):
    try:
        return (0, float(token), token)
    except ValueError:
        return (1, 0.0, token)


def parse_ucr_csv(text: str) -> Dataset:
    """Parse ``label,v1,...,vd`` lines (commas or tabs).

    Each series is z-normalised then clipped to [-1, 1]; a constant series
    becomes all zeros. Labels are remapped to 0..K-1 in sorted order, with the
    original tokens kept in ``label_names``.
    """
    tokens, rows = [], []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = re.split(r"[,\t]", line.strip())
        if len(fields) < 2:
            raise DataFormatError(f"line {lineno}: needs a label and at least one value")
        if width is None:
            width = len(fields) - 1
        elif len(fields) - 1 != width:
            raise DataFormatError(f"line {lineno}: ragged row with {len(fields) - 1} values, expected {width}")
        try:
            rows.append([float(v) for v in fields[1:]])
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: non-numeric field ({exc})") from None
        if not np.all(np.isfinite(rows[-1])):
            raise DataFormatError(f"line {lineno}: non-finite value")
        tokens.append(fields[0].strip())
    if not rows:
        raise DataFormatError("no data rows")
    raw = np.array(rows)
    names = sorted(set(tokens), key=_label_key)
    index = {name: i for i, name in enumerate(names)}
    labels = np.array([index[tok] for tok in tokens])
    center = raw.mean(axis=1, keepdims=True)
    spread = raw.std(axis=1, keepdims=True)
    spread[spread == 0] = 1.0
    samples, norm = _normalize(raw, center, spread, "series-z")
    return Dataset(samples, labels, norm, names)


def load_ucr_csv(path) -> Dataset:
    return parse_ucr_csv(Path(path).read_text())


# --------------------------------------------------------------- synthetic


def _source_prototypes(rng, n_classes=10, side=8):
    """Smooth random 8x8 patterns in [-1, 1], one per class."""
    protos = []
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    for _ in range(n_classes):
        img = np.zeros((side, side))
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 2.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        protos.append(img / np.abs(img).max())
    return np.array(protos)


def make_source_task(n_train=2000, n_test=1000, seed=0, noise=0.35) -> tuple:
    """10-class classification of noisy 8x8 patterns (d=64). Returns (train, test)."""
    rng = np.random.default_rng(seed)
    protos = _source_prototypes(rng).reshape(10, -1)

    def draw(n):
        y = rng.integers(0, 10, size=n)
        x = protos[y] * rng.uniform(0.6, 1.0, size=(n, 1)) + noise * rng.standard_normal((n, 64))
        return Dataset(np.clip(x, -1.0, 1.0), y)

    return draw(n_train), draw(n_test)


def make_target_task(n_train=200, n_test=400, seed=1, noise=0.7) -> tuple:
    """2-class 4x4 task (d=16): noisy horizontal versus vertical stripes."""
    rng = np.random.default_rng(seed)
    rows = np.tile([[1.0], [-1.0], [1.0], [-1.0]], (1, 4))
    protos = np.array([rows, rows.T]).reshape(2, -1)

    def draw(n):
        y = np.arange(n) % 2
        rng.shuffle(y)
        x = protos[y] * rng.uniform(0.5, 1.0, size=(n, 1)) + noise * rng.standard_normal((n, 16))
        return Dataset(np.clip(x, -1.0, 1.0), y)

    return draw(n_train), draw(n_test)
