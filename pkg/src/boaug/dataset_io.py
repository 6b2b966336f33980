"""Labeled image datasets: CIFAR-10 binary files, class-per-directory PNG trees,
reduced search splits, and a procedural dataset for desk-scale experiments."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, DomainError
from .image_ops import make_rng

CIFAR_RECORD = 1 + 32 * 32 * 3
CIFAR_CLASSES = 10

# Training-set sizes of the reduced search datasets.
REDUCED_TRAIN_SIZE = {"cifar10": 4000, "svhn": 1000}


@dataclass(frozen=True)
class LabeledDataset:
    """``images`` is a uint8 stack (N, H, W, 3) when all images share a size,
    otherwise a list of (H, W, 3) arrays."""

    images: np.ndarray | list
    labels: np.ndarray
    class_count: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if len(self.images) != len(labels):
            raise DomainError(f"{len(self.images)} images but {len(labels)} labels")
        if self.class_count < 1:
            raise DomainError("class_count must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DomainError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        if isinstance(self.images, np.ndarray):
            images = self.images[indices]
        else:
            images = [self.images[i] for i in indices]
        return LabeledDataset(images, self.labels[indices], self.class_count, self.class_names)

    def stacked(self) -> np.ndarray:
        if isinstance(self.images, np.ndarray):
            return self.images
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1:
            raise DomainError(f"images have mixed shapes {sorted(shapes)}")
        return np.stack(self.images)


def load_cifar10_binary(path) -> LabeledDataset:
    path = Path(path)
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        whole = raw.size // CIFAR_RECORD
        raise DatasetFormatError(
            f"{path}: length {raw.size} is not a multiple of {CIFAR_RECORD}; "
            f"trailing partial record starts at byte offset {whole * CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise DatasetFormatError(
            f"{path}: record {i} (byte offset {i * CIFAR_RECORD}) has label {labels[i]} >= {CIFAR_CLASSES}")
    planes = records[:, 1:].reshape(-1, 3, 32, 32)
    images = np.ascontiguousarray(planes.transpose(0, 2, 3, 1))
    return LabeledDataset(images, labels, CIFAR_CLASSES)


def save_cifar10_binary(path, ds: LabeledDataset):
    images = ds.stacked()
    if images.shape[1:] != (32, 32, 3):
        raise DomainError(f"CIFAR-10 records hold 32x32x3 images, got {images.shape[1:]}")
    if ds.class_count > 256:
        raise DomainError("labels must fit in one byte")
    records = np.empty((len(ds), CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = ds.labels
    records[:, 1:] = images.transpose(0, 3, 1, 2).reshape(len(ds), -1)
    records.tofile(Path(path))


def read_png(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as err:
        raise DatasetFormatError(f"cannot decode image {path}: {err}") from None


def write_png(path, img):
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def load_image_dir(path) -> LabeledDataset:
    """Load ``path/<class>/*.png``; classes sorted by name give the label indices."""
    root = Path(path)
    if not root.is_dir():
        raise DatasetFormatError(f"{root}: not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    images, labels = [], []
    for label, name in enumerate(classes):
        for f in sorted((root / name).glob("*.png")):
            images.append(read_png(f))
            labels.append(label)
    if not images:
        raise DatasetFormatError(f"{root}: no PNG images found under class subdirectories")
    if len({im.shape for im in images}) == 1:
        images = np.stack(images)
    return LabeledDataset(images, np.asarray(labels), len(classes), tuple(classes))


def load_dataset(path, fmt: str | None = None) -> LabeledDataset:
    """Dispatch on ``fmt`` ("cifar10" or "dir"), guessing from the path when omitted."""
    path = Path(path)
    if fmt is None:
        fmt = "dir" if path.is_dir() else "cifar10"
    if fmt == "cifar10":
        if path.is_dir():
            files = sorted(path.glob("data_batch_*.bin")) or sorted(path.glob("*.bin"))
            if not files:
                raise DatasetFormatError(f"{path}: no .bin files")
            parts = [load_cifar10_binary(f) for f in files]
            return LabeledDataset(np.concatenate([p.images for p in parts]),
                                  np.concatenate([p.labels for p in parts]), CIFAR_CLASSES)
        return load_cifar10_binary(path)
    if fmt == "dir":
        return load_image_dir(path)
    raise DomainError(f"unknown dataset format {fmt!r}")


def _stratified_order(labels, perm, n_take):
    """Per-class quotas by largest remainder, filled in ``perm`` order."""
    classes, counts = np.unique(labels[perm], return_counts=True)
    exact = counts * (n_take / len(perm))
    quota = np.floor(exact).astype(int)
    short = n_take - quota.sum()
    quota[np.argsort(-(exact - quota), kind="stable")[:short]] += 1
    left = dict(zip(classes.tolist(), quota.tolist()))
    chosen = []
    for i in perm:
        lab = int(labels[i])
        if left[lab] > 0:
            chosen.append(i)
            left[lab] -= 1
    return np.asarray(chosen, dtype=np.int64)


def make_reduced_split(ds: LabeledDataset, train_n: int, val_n: int | None = None,
                       seed: int = 0, stratify: bool = False):
    """Seeded random (train, val) subsets; ``val_n`` defaults to ``train_n // 5``."""
    if val_n is None:
        val_n = train_n // 5
    if train_n < 0 or val_n < 0:
        raise DomainError("split sizes must be non-negative")
    if train_n + val_n > len(ds):
        raise DomainError(f"requested {train_n}+{val_n} images from a dataset of {len(ds)}")
    perm = make_rng(seed).permutation(len(ds))
    if stratify:
        train_idx = _stratified_order(ds.labels, perm, train_n)
        rest = perm[~np.isin(perm, train_idx)]
        val_idx = _stratified_order(ds.labels, rest, val_n) if val_n else rest[:0]
    else:
        train_idx, val_idx = perm[:train_n], perm[train_n:train_n + val_n]
    return ds.subset(train_idx), ds.subset(val_idx)


# --------------------------------------------------------------------------
# Procedural dataset
# --------------------------------------------------------------------------

def _glyph_masks(size):
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) * 2.0 - 1.0
    r = np.hypot(xx, yy)
    return [
        (np.abs(xx) < 0.22) & (np.abs(yy) < 0.8),                      # vertical bar
        (np.abs(yy) < 0.22) & (np.abs(xx) < 0.8),                      # horizontal bar
        (r > 0.45) & (r < 0.75),                                       # ring
        (np.abs(xx) < 0.2) & (np.abs(yy) < 0.8) | (np.abs(yy) < 0.2) & (np.abs(xx) < 0.8),  # plus
        np.abs(xx - yy) < 0.28,                                        # diagonal
        (np.maximum(np.abs(xx), np.abs(yy)) > 0.5) & (np.maximum(np.abs(xx), np.abs(yy)) < 0.8),  # square
    ]


def synthetic_shapes(n: int, seed: int = 0, size: int = 32, n_classes: int = 4,
                     max_shift: int = 4, noise: float = 12.0, swap_prob: float = 0.0) -> LabeledDataset:
    """Glyphs with random position, colours, contrast and noise.

    The class is the glyph; all other factors are nuisance variation, so
    label-preserving augmentation (shifts, colour and brightness changes) has
    something to teach a pixel-level classifier. ``swap_prob`` exchanges
    foreground and background colours, which defeats linear classifiers.
    """
    masks = _glyph_masks(size)
    if not 2 <= n_classes <= len(masks):
        raise DomainError(f"n_classes must lie in [2, {len(masks)}]")
    rng = make_rng(seed)
    labels = rng.integers(0, n_classes, size=n)
    images = np.empty((n, size, size, 3), dtype=np.uint8)
    pad = max_shift
    for i in range(n):
        mask = masks[labels[i]]
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        shifted = np.pad(mask, pad)[pad - dy:pad - dy + size, pad - dx:pad - dx + size]
        fg = rng.uniform(60, 255, size=3)
        bg = rng.uniform(0, 200, size=3)
        if rng.random() < swap_prob:
            fg, bg = bg, fg
        img = np.where(shifted[..., None], fg, bg) + rng.normal(0, noise, size=(size, size, 3))
        images[i] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return LabeledDataset(images, labels, n_classes)
