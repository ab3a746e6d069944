"""Train/test splitting, chipping and flip augmentation of labeled images."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import DataError, DimensionMismatch, NoTrainRegion
from .raster import LabelMap

CHIP_SIZE = 128
TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class SplitLayout:
    trainval_width: int
    test_offset_x: int
    test_width: int
    chip_size: int = CHIP_SIZE

    @property
    def width(self) -> int:
        return self.trainval_width + self.test_width


@dataclass(frozen=True, eq=False)
class Chip:
    x: int
    y: int
    size: int
    image: np.ndarray
    labels: np.ndarray
    split: str | None = None
    variant: int = 0

    @property
    def origin(self):
        return (self.x, self.y)


def crop(image, labels: LabelMap, rect):
    """Crop an image and its label map to ``rect = (x, y, w, h)``."""
    x, y, w, h = (int(v) for v in rect)
    image = np.asarray(image)
    if image.shape[:2] != labels.shape:
        raise DimensionMismatch(f"image {image.shape[:2]} and labels {labels.shape} differ")
    H, W = labels.shape
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise DataError(f"crop rect {rect} outside {W}x{H} image")
    return image[y:y + h, x:x + w].copy(), labels.with_pixels(labels.pixels[y:y + h, x:x + w])


def compute_split(width: int, chip_size: int = CHIP_SIZE) -> SplitLayout:
    """Left three quarters (rounded down to whole chips) for train/val, rest for test."""
    if chip_size <= 0:
        raise DataError("chip_size must be positive")
    trainval = (3 * int(width) // 4) // chip_size * chip_size
    if trainval <= 0:
        raise NoTrainRegion(f"width {width} leaves no {chip_size}-px chip in the left three quarters")
    return SplitLayout(trainval, trainval, int(width) - trainval, chip_size)


def holdout_region(image, labels: LabelMap, layout: SplitLayout):
    """The undivided test section right of the train/val region."""
    return crop(image, labels, (layout.test_offset_x, 0, layout.test_width, labels.height))


def chip_region(image, labels: LabelMap, layout: SplitLayout) -> list[Chip]:
    """Non-overlapping chips over the train/val region in row-major order.

    Partial chips along the bottom edge are dropped.
    """
    image = np.asarray(image)
    if image.shape[:2] != labels.shape:
        raise DimensionMismatch(f"image {image.shape[:2]} and labels {labels.shape} differ")
    if layout.width != labels.width:
        raise DataError(f"layout is for width {layout.width}, image is {labels.width}")
    s = layout.chip_size
    chips = []
    for row in range(labels.height // s):
        for col in range(layout.trainval_width // s):
            x, y = col * s, row * s
            chips.append(Chip(x, y, s, image[y:y + s, x:x + s].copy(), labels.pixels[y:y + s, x:x + s].copy()))
    return chips


def d4_transform(a: np.ndarray, variant: int) -> np.ndarray:
    """Variant bits: 1 = horizontal flip, 2 = vertical flip, 4 = transpose (applied in that order)."""
    if variant & 1:
        a = a[:, ::-1]
    if variant & 2:
        a = a[::-1, :]
    if variant & 4:
        a = np.swapaxes(a, 0, 1)
    return np.ascontiguousarray(a)


def augment_d4(chip: Chip) -> list[Chip]:
    """All 8 flip/transpose variants of a square chip; variant 0 is the identity."""
    if chip.image.shape[0] != chip.image.shape[1] or chip.labels.shape[0] != chip.labels.shape[1]:
        raise DataError("augment_d4 needs a square chip")
    return [replace(chip, image=d4_transform(chip.image, v), labels=d4_transform(chip.labels, v), variant=v)
            for v in range(8)]


def n_train(n: int, train_fraction: float) -> int:
    # exact decimal arithmetic so 0.8 * 10 is 8, not 8.000000000000002
    return math.ceil(Fraction(str(train_fraction)) * n)


def assign_split(chips, train_fraction: float = TRAIN_FRACTION, seed: int = 0) -> list[Chip]:
    """Seeded shuffle, then the first ceil(fraction * n) chips are train, the rest val.

    Returned chips keep their input order; only ``split`` is set.
    """
    chips = list(chips)
    if not chips:
        raise DataError("no chips to split")
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(chips))
    k = n_train(len(chips), train_fraction)
    tags = np.empty(len(chips), dtype=object)
    tags[perm[:k]] = "train"
    tags[perm[k:]] = "val"
    return [replace(c, split=str(t)) for c, t in zip(chips, tags)]


def prepare_chips(image, labels: LabelMap, chip_size=CHIP_SIZE, train_fraction=TRAIN_FRACTION, seed=0):
    """Split, chip, assign and augment (train only). Returns ``(layout, chips)``."""
    layout = compute_split(labels.width, chip_size)
    chips = assign_split(chip_region(image, labels, layout), train_fraction, seed)
    out = []
    for c in chips:
        out.extend(augment_d4(c) if c.split == "train" else [c])
    return layout, out
