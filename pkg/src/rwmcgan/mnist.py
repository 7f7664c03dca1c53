"""MNIST IDX files, normalization, few-shot subsetting and batch iteration."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, LengthError
from .rng import Rng, derive_seed

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

# Stream keys for derive_seed.
_SUBSET_KEY = 1
_BATCH_KEY = 2


def _read(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _check_magic(buf, expected, path):
    if len(buf) < 4:
        raise LengthError(f"{path}: file shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected:08x}")


def parse_idx_images(buf, path="<bytes>"):
    _check_magic(buf, IMAGE_MAGIC, path)
    if len(buf) < 16:
        raise LengthError(f"{path}: truncated image header ({len(buf)} bytes)")
    n, rows, cols = struct.unpack(">III", buf[4:16])
    expected = 16 + n * rows * cols
    if len(buf) != expected:
        raise LengthError(f"{path}: expected {expected} bytes for {n}x{rows}x{cols}, found {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(n, rows, cols).copy()


def parse_idx_labels(buf, path="<bytes>"):
    _check_magic(buf, LABEL_MAGIC, path)
    if len(buf) < 8:
        raise LengthError(f"{path}: truncated label header ({len(buf)} bytes)")
    (n,) = struct.unpack(">I", buf[4:8])
    if len(buf) != 8 + n:
        raise LengthError(f"{path}: expected {8 + n} bytes for {n} labels, found {len(buf)}")
    labels = np.frombuffer(buf, dtype=np.uint8, offset=8).copy()
    if labels.size and labels.max() > 9:
        raise DomainError(f"{path}: label value {int(labels.max())} outside [0, 9]")
    return labels


def load_idx_images(path):
    """Read an IDX3 image file into an ``N x rows x cols`` uint8 array."""
    return parse_idx_images(_read(path), path)


def load_idx_labels(path):
    return parse_idx_labels(_read(path), path)


def encode_idx_images(images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes()


def encode_idx_labels(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes()


def normalize(raw):
    """Map bytes to [-1, 1] via ``v / 127.5 - 1``."""
    return (np.asarray(raw, dtype=np.float64) / 127.5 - 1.0).astype(np.float32)


def denormalize(images):
    return (np.asarray(images, dtype=np.float64) + 1.0) * 127.5


@dataclass(frozen=True)
class LabeledImageSet:
    images: np.ndarray  # N x 1 x 28 x 28 float32 in [-1, 1]
    labels: np.ndarray  # N int64
    provenance: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DomainError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def take(self, indices, note=None):
        indices = np.asarray(indices, dtype=np.int64)
        prov = self.provenance + ((note,) if note else ())
        return LabeledImageSet(self.images[indices], self.labels[indices], prov)

    def of_class(self, class_id):
        return self.take(np.flatnonzero(self.labels == class_id))


def load_split(data_dir, split="train"):
    """Load the ``train`` or ``test`` split of MNIST as a normalized set."""
    data_dir = Path(data_dir)
    img_name, lbl_name = (TRAIN_IMAGES, TRAIN_LABELS) if split == "train" else (TEST_IMAGES, TEST_LABELS)
    raw = load_idx_images(data_dir / img_name)
    labels = load_idx_labels(data_dir / lbl_name)
    if len(raw) != len(labels):
        raise FormatError(f"{img_name} has {len(raw)} images but {lbl_name} has {len(labels)} labels")
    images = normalize(raw)[:, None, :, :]
    return LabeledImageSet(images, labels.astype(np.int64), (img_name, lbl_name, "normalize:v/127.5-1"))


def subset_per_class(dataset, n_per_class, seed, num_classes=10):
    """Pick exactly ``n_per_class`` samples of every class.

    Class ``c`` draws a permutation of its members from stream
    ``derive_seed(seed, 1, c)`` and keeps the first ``n_per_class``, in
    ascending dataset order.
    """
    if n_per_class < 1:
        raise DomainError(f"n_per_class must be positive, got {n_per_class}")
    chosen = []
    for c in range(num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < n_per_class:
            raise DomainError(f"class {c} has {len(members)} samples, fewer than {n_per_class}")
        order = Rng(derive_seed(seed, _SUBSET_KEY, c)).permutation(len(members))
        chosen.append(np.sort(members[order[:n_per_class]]))
    return dataset.take(np.concatenate(chosen), note=f"subset_per_class:{n_per_class}:seed={seed}")


def epoch_permutation(n, seed, epoch):
    return Rng(derive_seed(seed, _BATCH_KEY, epoch)).permutation(n)


def make_batches(dataset, batch_size, seed, epoch):
    """Index batches for one epoch; the final short batch is kept."""
    if batch_size < 1:
        raise DomainError(f"batch_size must be positive, got {batch_size}")
    order = epoch_permutation(len(dataset), seed, epoch)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
