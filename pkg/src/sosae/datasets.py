"""IDX ingestion, synthetic blobs, splits and input corruption."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

NOISE_KINDS = ("none", "zero_mask", "gaussian")


class FormatError(ValueError):
    """File is not a well-formed IDX container."""


class ConsistencyError(ValueError):
    """Images and labels disagree."""


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    split: Split
    n_classes: int
    name: str = "dataset"

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def part(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        idx = getattr(self.split, which)
        return self.x[idx], self.labels[idx]

    def eval_part(self) -> str:
        """Held-out split used for reporting: test when present, else val."""
        return "test" if len(self.split.test) else "val"


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    nu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"masking fraction nu must lie in [0, 1], got {self.nu}")
        if self.sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma}")


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header ({len(raw)} bytes)")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(
            f"{path}: bad IDX magic {raw[:4].hex()} (expected {magic:08x})"
        )
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length {len(raw) - header} does not match dims {dims}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (images if 3-D, labels if 1-D)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}[array.ndim]
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.tobytes()
    if str(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    Path(path).write_bytes(payload)


def make_split(n: int, seed: int, val_fraction: float = 1 / 6,
               test_fraction: float = 0.0) -> Split:
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise ValueError(f"bad split fractions val={val_fraction}, test={test_fraction}")
    perm = Rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    n_test = int(round(n * test_fraction))
    return Split(
        train=np.sort(perm[n_val + n_test:]),
        val=np.sort(perm[:n_val]),
        test=np.sort(perm[n_val:n_val + n_test]),
    )


def load_idx(images_path, labels_path, *, seed: int = 0, val_fraction: float = 1 / 6,
             test_fraction: float = 0.0, limit: int | None = None,
             test_images_path=None, test_labels_path=None) -> Dataset:
    """Load an IDX image/label pair, scaled into [0, 1] and flattened.

    With a separate test pair, its samples are appended and form the test
    split; otherwise ``test_fraction`` of the first pair is held out.
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    split = make_split(len(y), seed, val_fraction, 0.0 if test_images_path else test_fraction)
    if test_images_path is not None:
        tx = _parse_idx(_read_bytes(test_images_path), IDX_IMAGES_MAGIC, test_images_path)
        ty = _parse_idx(_read_bytes(test_labels_path), IDX_LABELS_MAGIC, test_labels_path)
        if tx.shape[0] != ty.shape[0]:
            raise ConsistencyError(f"{tx.shape[0]} test images but {ty.shape[0]} test labels")
        if tx.shape[1:] != images.shape[1:]:
            raise ConsistencyError(f"test image shape {tx.shape[1:]} != {images.shape[1:]}")
        n_train = len(y)
        x = np.vstack([x, tx.reshape(tx.shape[0], -1) / 255.0])
        y = np.concatenate([y, ty.astype(np.int64)])
        split.test = np.arange(n_train, len(y))
    return Dataset(x=np.ascontiguousarray(x), labels=y, split=split,
                   n_classes=int(y.max()) + 1, name=Path(images_path).parent.name or "idx")


def synth_blobs(n: int, d: int, n_classes: int, seed: int, *, spread: float = 0.03,
                val_fraction: float = 1 / 6, test_fraction: float = 0.0) -> Dataset:
    """Class-conditional Gaussian blobs in the unit cube.

    Centers are drawn until pairwise separation is at least 8*spread, so the
    classes stay linearly separable well beyond the 95% level.
    """
    if not n >= n_classes >= 2 or d < 1:
        raise ValueError(f"need n >= n_classes >= 2 and d >= 1, got n={n}, "
                         f"n_classes={n_classes}, d={d}")
    rng = Rng(seed)
    centers = np.empty((0, d))
    for _ in range(100_000):
        if centers.shape[0] == n_classes:
            break
        c = rng.uniform(0.1, 0.9, 1, d)
        if centers.shape[0] == 0 or np.min(np.linalg.norm(centers - c, axis=1)) >= 8 * spread:
            centers = np.vstack([centers, c])
    else:
        raise ValueError(f"cannot place {n_classes} centers {8 * spread:g} apart in {d} dims; "
                         "lower the spread")
    labels = np.arange(n) % n_classes
    x = centers[labels] + rng.normal(spread, n, d)
    x = np.clip(x, 0.0, 1.0)
    split = make_split(n, seed, val_fraction, test_fraction)
    return Dataset(x=x, labels=labels.astype(np.int64), split=split,
                   n_classes=n_classes, name="blobs")


def corrupt(x: np.ndarray, spec: NoiseSpec, rng: Rng) -> np.ndarray:
    if spec.kind == "none":
        return x
    if spec.kind == "zero_mask":
        keep = rng.random(*x.shape) >= spec.nu
        return np.where(keep, x, 0.0)
    noisy = x + rng.normal(spec.sigma, *x.shape)
    return np.clip(noisy, 0.0, 1.0)
