"""Dataset ingestion and synthetic task generation.

IDX files are parsed big-endian with their magic numbers validated
(0x00000803 for images, 0x00000801 for labels); gzip-compressed files are
detected by their two-byte signature and inflated transparently. Pixels are
stored as raw bytes and scaled to [0, 1] doubles when batches are built.

The variable-delay copy task: each example is 10 one-hot data tokens drawn
from symbols 1..8, T blank tokens with T ~ U{0..t_max} per example, one go
token (index 9), then 10 recall steps with blank inputs. Targets are blank
everywhere except the recall positions, which repeat the data tokens in
order. Batches are padded with blank inputs and blank targets to the common
length 21 + t_max, and the per-timestep loss averages over every position
(padding included); the recall mask exists for the separate recall-accuracy
and recall-loss metrics only.
"""

from __future__ import annotations

import gzip
import hashlib
import math
import struct
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .numcore import RngStream

__all__ = [
    "IdxDataset",
    "load_idx",
    "write_idx",
    "fetch_idx_files",
    "SequenceDataset",
    "sequentialize",
    "CopyTaskConfig",
    "TaskBatch",
    "gen_copy_batch",
    "chance_baseline_loss",
    "chance_recall_loss",
    "recall_cross_entropy",
    "MNIST_FILES",
]

_IMAGE_MAGIC = 0x00000803
_LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


@dataclass
class IdxDataset:
    """Raw image/label pair; pixels as bytes, scaled on access."""

    images: np.ndarray    # (count, rows, cols) uint8
    labels: np.ndarray    # (count,) uint8
    scale: float = 1.0 / 255.0

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"image count {len(self.images)} != label count {len(self.labels)}")

    def __len__(self):
        return len(self.images)

    def pixels(self, idx=slice(None)) -> np.ndarray:
        """Pixels as float64 in [0, 1]."""
        return self.images[idx].astype(float) * self.scale


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}", offset=fh.tell())
    return data


def _open_maybe_gzip(path):
    fh = open(path, "rb")
    sig = fh.read(2)
    fh.seek(0)
    if sig == b"\x1f\x8b":
        return gzip.open(fh)
    return fh


def load_idx(images_path, labels_path) -> IdxDataset:
    """Parse an IDX image/label file pair (plain or gzipped)."""
    with _open_maybe_gzip(images_path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != _IMAGE_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08x}", offset=0)
        raw = _read_exact(fh, count * rows * cols, "image data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    with _open_maybe_gzip(labels_path) as fh:
        magic, lcount = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != _LABEL_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08x}", offset=0)
        labels = np.frombuffer(_read_exact(fh, lcount, "label data"), dtype=np.uint8)
    return IdxDataset(images.copy(), labels.copy())


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray):
    """Write an IDX pair (test-fixture and export helper)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IMAGE_MAGIC, count, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def fetch_idx_files(base_url: str, dest_dir, names=MNIST_FILES,
                    checksums: dict | None = None) -> dict:
    """Download IDX files from a configured base URL, verifying checksums
    when provided. Returns {key: local path}."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    out = {}
    for key, name in names.items():
        target = dest / name
        if not target.exists():
            with urllib.request.urlopen(f"{base_url.rstrip('/')}/{name}") as resp:
                target.write_bytes(resp.read())
        if checksums and name in checksums:
            digest = hashlib.sha256(target.read_bytes()).hexdigest()
            if digest != checksums[name]:
                raise FormatError(f"checksum mismatch for {name}: {digest}")
        out[key] = target
    return out


@dataclass
class SequenceDataset:
    """Images flattened to pixel sequences under one fixed permutation."""

    train: np.ndarray       # (n_train, 784) uint8
    train_labels: np.ndarray
    val: np.ndarray         # (3000, 784) uint8
    val_labels: np.ndarray
    test: np.ndarray
    test_labels: np.ndarray
    permutation: np.ndarray

    def scaled(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        seq = getattr(self, split)
        labels = getattr(self, f"{split}_labels")
        return seq.astype(float) / 255.0, labels.astype(np.int64)


def sequentialize(train: IdxDataset, test: IdxDataset, permutation_seed: int,
                  identity: bool = False, val_size: int = 3000) -> SequenceDataset:
    """Flatten 28x28 images to length-784 sequences under one shared
    permutation; carve a random validation split out of the training set."""
    if train.images.shape[1:] != (28, 28) or test.images.shape[1:] != (28, 28):
        raise ValueError("sequentialize expects 28x28 images")
    rng = RngStream(permutation_seed)
    perm = np.arange(784) if identity else rng.permutation(784)
    flat_train = train.images.reshape(len(train), 784)[:, perm]
    flat_test = test.images.reshape(len(test), 784)[:, perm]
    val_idx = rng.permutation(len(train))[:val_size]
    val_mask = np.zeros(len(train), dtype=bool)
    val_mask[val_idx] = True
    return SequenceDataset(
        train=flat_train[~val_mask], train_labels=train.labels[~val_mask].astype(np.int64),
        val=flat_train[val_mask], val_labels=train.labels[val_mask].astype(np.int64),
        test=flat_test, test_labels=test.labels.astype(np.int64),
        permutation=perm,
    )


@dataclass(frozen=True)
class CopyTaskConfig:
    t_max: int
    seq_len: int = 10
    n_symbols: int = 8
    blank: int = 0
    go: int = 9
    token_dim: int = 10
    batch_size: int = 128

    def __post_init__(self):
        if self.t_max < 0:
            raise ValueError("t_max must be >= 0")
        if max(self.blank, self.go, self.n_symbols) >= self.token_dim:
            raise ValueError("token indices must fit in token_dim")

    @property
    def total_len(self) -> int:
        return 2 * self.seq_len + self.t_max + 1


@dataclass
class TaskBatch:
    inputs: np.ndarray    # (B, T, token_dim) one-hot float64
    targets: np.ndarray   # (B, T) int64 class indices
    mask: np.ndarray      # (B, T) bool, True on the recall positions


def gen_copy_batch(cfg: CopyTaskConfig, rng: RngStream,
                   batch_size: int | None = None) -> TaskBatch:
    """Sample one padded batch; the delay is drawn per example."""
    B = cfg.batch_size if batch_size is None else batch_size
    T = cfg.total_len
    sl = cfg.seq_len
    tokens = np.full((B, T), cfg.blank, dtype=np.int64)
    targets = np.full((B, T), cfg.blank, dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    data = rng.integers(1, cfg.n_symbols + 1, (B, sl))
    delays = rng.integers(0, cfg.t_max + 1, B)
    tokens[:, :sl] = data
    rows = np.arange(B)
    tokens[rows, sl + delays] = cfg.go
    for offset in range(sl):
        cols = sl + delays + 1 + offset
        targets[rows, cols] = data[:, offset]
        mask[rows, cols] = True
    inputs = np.zeros((B, T, cfg.token_dim))
    inputs[rows[:, None], np.arange(T)[None, :], tokens] = 1.0
    return TaskBatch(inputs, targets, mask)


def chance_baseline_loss(cfg: CopyTaskConfig) -> float:
    """Closed-form full-sequence cross-entropy of the memoryless reference.

    The reference predictor emits the blank token with certainty outside the
    recall window (it can tell those positions from the input stream alone)
    and a uniform guess over the data symbols on the 10 recall steps, so the
    sequence-averaged loss is 10 log(n_symbols) / (21 + t_max).
    """
    return cfg.seq_len * math.log(cfg.n_symbols) / cfg.total_len


def chance_recall_loss(cfg: CopyTaskConfig) -> float:
    """The same reference restricted to the recall positions: log(n_symbols)."""
    return math.log(cfg.n_symbols)


def recall_cross_entropy(logits: np.ndarray, targets: np.ndarray,
                         mask: np.ndarray) -> float:
    """Mean cross-entropy over the masked recall positions (metric only)."""
    z = logits[mask]
    y = targets[mask]
    zmax = z.max(axis=-1, keepdims=True)
    logp = z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())
