"""Datasets: CIFAR-10 binary batches and a deterministic synthetic generator.

The binary layout is one record per image: a single label byte followed by
3072 channel-planar pixel bytes (1024 red, 1024 green, 1024 blue, row-major
within each plane). The synthetic generator produces labeled geometric
patterns at the same (32, 32, 3) uint8 shape, byte-identical for a given
seed, so training and tests never need the network.

Dataset strings of the form ``synthetic:n=512,classes=10,seed=7`` address a
generated dataset; anything else is treated as a file or a directory of
``*.bin`` files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

RECORD_BYTES = 3073
IMAGE_SHAPE = (32, 32, 3)


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, 3) uint8
    labels: np.ndarray  # (N,) int64
    num_classes: int = 10
    source: str = ""

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise FormatError(
                f"images {self.images.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise FormatError(
                f"labels outside [0, {self.num_classes}): "
                f"min {self.labels.min()}, max {self.labels.max()}"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


def _parse_batch_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    if len(raw) % RECORD_BYTES:
        offset = len(raw) - (len(raw) % RECORD_BYTES)
        raise FormatError(f"truncated record at byte offset {offset} in {path}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise FormatError(
            f"invalid label {labels[bad[0]]} at byte offset {int(bad[0]) * RECORD_BYTES} in {path}"
        )
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def load_cifar_batches(path) -> Dataset:
    """Read one batch file, or every ``*.bin`` file (sorted) in a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.bin"))
        if not files:
            raise FormatError(f"no .bin batch files found in {path}")
    elif path.is_file():
        files = [path]
    else:
        raise FormatError(f"dataset path does not exist: {path}")
    parts = [_parse_batch_file(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return Dataset(images, labels, num_classes=10, source=str(path))


# ---------------------------------------------------------------------------
# synthetic data


def _pattern(label: int, rng: np.random.Generator) -> np.ndarray:
    """One (32, 32) luminance pattern in [0, 1] for the given class."""
    y, x = np.mgrid[0:32, 0:32].astype(np.float64)
    period = rng.uniform(5.0, 9.0)
    phase = rng.uniform(0.0, period)
    if label == 0:  # horizontal stripes
        return 0.5 + 0.5 * np.sin(2 * np.pi * (y + phase) / period)
    if label == 1:  # vertical stripes
        return 0.5 + 0.5 * np.sin(2 * np.pi * (x + phase) / period)
    if label == 2:  # checkerboard
        cell = int(rng.integers(3, 7))
        return (((y // cell) + (x // cell)) % 2).astype(np.float64)
    if label == 3:  # diagonal stripes
        return 0.5 + 0.5 * np.sin(2 * np.pi * (x + y + phase) / period)
    if label == 4:  # anti-diagonal stripes
        return 0.5 + 0.5 * np.sin(2 * np.pi * (x - y + phase) / period)
    if label == 5:  # concentric rings
        cy, cx = 15.5 + rng.uniform(-3, 3), 15.5 + rng.uniform(-3, 3)
        r = np.hypot(y - cy, x - cx)
        return 0.5 + 0.5 * np.sin(2 * np.pi * r / period)
    if label == 6:  # bright upper band (absolute position matters)
        edge = 16.0 + rng.uniform(-2, 2)
        return 1.0 / (1.0 + np.exp((y - edge) / 1.5))
    if label == 7:  # bright lower band
        edge = 16.0 + rng.uniform(-2, 2)
        return 1.0 / (1.0 + np.exp(-(y - edge) / 1.5))
    if label == 8:  # central blob
        cy, cx = 15.5 + rng.uniform(-2, 2), 15.5 + rng.uniform(-2, 2)
        sigma = rng.uniform(5.0, 8.0)
        return np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma * sigma))
    if label == 9:  # four corner blobs
        sigma = rng.uniform(4.0, 6.0)
        acc = np.zeros((32, 32))
        for cy, cx in ((0.0, 0.0), (0.0, 31.0), (31.0, 0.0), (31.0, 31.0)):
            acc = np.maximum(acc, np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma * sigma)))
        return acc
    raise ConfigError(f"no pattern defined for label {label}")


def synthetic_dataset(n: int, classes: int, seed: int) -> Dataset:
    """Deterministic labeled geometric patterns with per-sample jitter."""
    if not 2 <= classes <= 10:
        raise ConfigError(f"synthetic classes must be in [2, 10], got {classes}")
    if n < 1:
        raise ConfigError(f"synthetic n must be >= 1, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([0x5D47, seed]))
    images = np.empty((n,) + IMAGE_SHAPE, dtype=np.uint8)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % classes
        base = rng.uniform(30.0, 70.0)
        amp = rng.uniform(90.0, 150.0)
        tint = rng.uniform(0.55, 1.0, size=3)
        pattern = _pattern(label, rng)
        noise = rng.normal(0.0, 10.0, size=IMAGE_SHAPE)
        img = base + amp * pattern[..., None] * tint[None, None, :] + noise
        images[i] = np.clip(img, 0, 255).astype(np.uint8)
        labels[i] = label
    return Dataset(images, labels, num_classes=classes, source=f"synthetic:seed={seed}")


def parse_synthetic_spec(spec: str) -> tuple[int, int, int]:
    body = spec[len("synthetic:"):]
    fields = {"n": 512, "classes": 10, "seed": 0}
    if body:
        for part in body.split(","):
            if "=" not in part:
                raise ConfigError(f"bad synthetic field {part!r} in {spec!r}")
            key, value = part.split("=", 1)
            key = key.strip()
            if key not in fields:
                raise ConfigError(f"unknown synthetic field {key!r} in {spec!r}")
            try:
                fields[key] = int(value)
            except ValueError as exc:
                raise ConfigError(f"synthetic field {key!r} must be an int, got {value!r}") from exc
    return fields["n"], fields["classes"], fields["seed"]


def load_dataset(path_or_spec) -> Dataset:
    """Dispatch on ``synthetic:...`` specs versus filesystem paths."""
    text = str(path_or_spec)
    if text.startswith("synthetic:") or text == "synthetic":
        n, classes, seed = parse_synthetic_spec(text if ":" in text else "synthetic:")
        return synthetic_dataset(n, classes, seed)
    return load_cifar_batches(text)


# ---------------------------------------------------------------------------
# augmentation


def pad_crop(img: np.ndarray, pad: int, oy: int, ox: int) -> np.ndarray:
    """Zero-pad by ``pad`` on each side, then crop back to the original size
    starting at (oy, ox) in the padded frame."""
    h, w = img.shape[:2]
    if not (0 <= oy <= 2 * pad and 0 <= ox <= 2 * pad):
        raise ConfigError(f"crop offset ({oy}, {ox}) outside [0, {2 * pad}]")
    padded = np.zeros((h + 2 * pad, w + 2 * pad) + img.shape[2:], dtype=img.dtype)
    padded[pad : pad + h, pad : pad + w] = img
    return padded[oy : oy + h, ox : ox + w].copy()


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def augment(img: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Pad-4 random crop, then horizontal flip with probability 1/2. Shape
    and dtype are preserved."""
    oy = int(rng.integers(0, 2 * pad + 1))
    ox = int(rng.integers(0, 2 * pad + 1))
    out = pad_crop(img, pad, oy, ox)
    if rng.random() < 0.5:
        out = hflip(out)
    return out
