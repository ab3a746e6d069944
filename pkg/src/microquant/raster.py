"""Core raster types, palette handling and file formats.

Label rasters are 8-bit RGB PNGs with one color per class. Score stacks use
the MQSS container: ``b"MQSS"``, u32 version, u32 T, C, H, W (all little
endian) followed by T*C*H*W little-endian float32 values in
[trial][class][row][col] order.
"""
from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    DimensionOverflow,
    EmptyImage,
    NormalizationViolation,
    TruncatedPayload,
    UnknownColor,
)


class ClassId(enum.IntEnum):
    GRAIN = 0
    BOUNDARY = 1
    VOID = 2
    IMPURITY = 3
    PRECIPITATE = 4

    @property
    def label(self) -> str:
        return self.name.lower()


N_CLASSES = 5
CLASS_NAMES = tuple(c.label for c in ClassId)
DEFECT_CLASSES = (ClassId.VOID, ClassId.IMPURITY, ClassId.PRECIPITATE)


def parse_class(value) -> ClassId:
    """Accept a ClassId, an index, or a (case-insensitive) class name."""
    if isinstance(value, ClassId):
        return value
    if isinstance(value, (int, np.integer)):
        return ClassId(int(value))
    key = str(value).strip().lower()
    for c in ClassId:
        if c.label == key:
            return c
    # plural forms show up in hand-written CLI args
    if key.endswith("s") and key[:-1] in CLASS_NAMES:
        return ClassId(CLASS_NAMES.index(key[:-1]))
    raise DataError(f"unknown class name {value!r}")


class Palette:
    """Bijective map between class ids and 8-bit RGB triples."""

    def __init__(self, colors):
        colors = {parse_class(k): tuple(int(v) for v in rgb) for k, rgb in dict(colors).items()}
        if sorted(colors) != list(ClassId):
            raise DataError("palette must define a color for every class")
        if len(set(colors.values())) != len(colors):
            raise DataError("palette colors must be distinct")
        for rgb in colors.values():
            if len(rgb) != 3 or not all(0 <= v <= 255 for v in rgb):
                raise DataError(f"invalid RGB triple {rgb}")
        self._colors = colors
        self._codes = {_rgb_code(rgb): int(c) for c, rgb in colors.items()}

    def color(self, cls) -> tuple[int, int, int]:
        return self._colors[parse_class(cls)]

    def lookup(self, rgb):
        """Class for an RGB triple, or None."""
        c = self._codes.get(_rgb_code(rgb))
        return None if c is None else ClassId(c)

    def table(self) -> np.ndarray:
        return np.array([self._colors[c] for c in ClassId], dtype=np.uint8)

    def __eq__(self, other):
        return isinstance(other, Palette) and self._colors == other._colors

    def __repr__(self):
        return f"Palette({ {c.label: rgb for c, rgb in self._colors.items()} })"


def _rgb_code(rgb) -> int:
    r, g, b = (int(v) for v in rgb)
    return (r << 16) | (g << 8) | b


DEFAULT_PALETTE = Palette({
    ClassId.GRAIN: (0, 0, 0),
    ClassId.BOUNDARY: (255, 0, 0),
    ClassId.VOID: (0, 255, 0),
    ClassId.IMPURITY: (255, 255, 0),
    ClassId.PRECIPITATE: (0, 0, 255),
})


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class raster with an isotropic pixel size in micrometres."""

    pixels: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise DataError(f"label map must be 2-D, got shape {px.shape}")
        if px.size == 0:
            raise EmptyImage("label map has a zero dimension")
        if px.min() < 0 or px.max() >= N_CLASSES:
            raise DataError("label map contains values outside 0..4")
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise DataError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "pixels", _frozen(px.astype(np.uint8)))
        object.__setattr__(self, "pixel_size", float(self.pixel_size))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def area_um2(self) -> float:
        return self.width * self.height * self.pixel_size ** 2

    def mask(self, cls) -> np.ndarray:
        return self.pixels == int(parse_class(cls))

    def with_pixels(self, pixels) -> "LabelMap":
        return LabelMap(pixels, self.pixel_size)

    def __eq__(self, other):
        return (isinstance(other, LabelMap) and self.pixel_size == other.pixel_size
                and np.array_equal(self.pixels, other.pixels))


def load_label_image(path, palette: Palette = DEFAULT_PALETTE, pixel_size: float = 1.0) -> LabelMap:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "RGBA":
                alpha = np.asarray(im.getchannel("A"))
                if alpha.min() != 255:
                    raise DataError(f"{path}: label raster has transparent pixels")
            if im.mode not in ("RGB", "RGBA", "P", "L"):
                raise DataError(f"{path}: unsupported image mode {im.mode}")
            rgb = np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot read label image {path}: {exc}") from exc
    if rgb.shape[0] == 0 or rgb.shape[1] == 0:
        raise EmptyImage(f"{path}: zero-sized image")
    return LabelMap(decode_rgb(rgb, palette), pixel_size)


def decode_rgb(rgb: np.ndarray, palette: Palette = DEFAULT_PALETTE) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.uint32)
    codes = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    table = palette.table().astype(np.uint32)
    known = (table[:, 0] << 16) | (table[:, 1] << 8) | table[:, 2]
    order = np.argsort(known)
    pos = np.searchsorted(known[order], codes)
    pos = np.clip(pos, 0, len(known) - 1)
    hit = known[order][pos] == codes
    if not hit.all():
        y, x = np.argwhere(~hit)[0]
        raise UnknownColor(x, y, rgb[y, x])
    return order[pos].astype(np.uint8)


def encode_rgb(labels: LabelMap | np.ndarray, palette: Palette = DEFAULT_PALETTE) -> np.ndarray:
    px = labels.pixels if isinstance(labels, LabelMap) else np.asarray(labels)
    return palette.table()[px]


def save_label_image(labels: LabelMap, palette: Palette = DEFAULT_PALETTE, path=None) -> None:
    if path is None:
        raise TypeError("save_label_image requires a path")
    path = Path(path)
    try:
        Image.fromarray(encode_rgb(labels, palette), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write label image {path}: {exc}") from exc


def class_counts(labels: LabelMap):
    """Pixel counts and proportions per class, keyed by class name."""
    counts = np.bincount(labels.pixels.ravel(), minlength=N_CLASSES).astype(np.int64)
    total = int(counts.sum())
    props = counts / total
    return ({name: int(counts[i]) for i, name in enumerate(CLASS_NAMES)},
            {name: float(props[i]) for i, name in enumerate(CLASS_NAMES)})


# --------------------------------------------------------------------------
# score stacks

MQSS_MAGIC = b"MQSS"
MQSS_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")
MAX_ELEMENTS = 1 << 31
SOFTMAX_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class ScoreStack:
    """Trials x classes x rows x cols softmax scores."""

    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float32)
        if s.ndim != 4:
            raise DataError(f"score stack must be 4-D (T, C, H, W), got shape {s.shape}")
        if s.shape[1] != N_CLASSES:
            raise DataError(f"score stack must have {N_CLASSES} classes, got {s.shape[1]}")
        if 0 in s.shape:
            raise EmptyImage("score stack has a zero dimension")
        check_normalized(s)
        object.__setattr__(self, "scores", _frozen(s))

    @property
    def trials(self) -> int:
        return self.scores.shape[0]

    @property
    def height(self) -> int:
        return self.scores.shape[2]

    @property
    def width(self) -> int:
        return self.scores.shape[3]

    def argmax(self) -> np.ndarray:
        """Per-trial predicted class, shape (T, H, W)."""
        return np.argmax(self.scores, axis=1).astype(np.uint8)

    def features(self, trial: int) -> np.ndarray:
        """Score vectors of one trial as an (H*W, C) array in raster order."""
        return self.scores[trial].reshape(N_CLASSES, -1).T

    def __eq__(self, other):
        return isinstance(other, ScoreStack) and np.array_equal(self.scores, other.scores)


def check_normalized(scores: np.ndarray, tol: float = SOFTMAX_TOL) -> None:
    if not np.all(np.isfinite(scores)):
        raise NormalizationViolation("score stack contains non-finite values")
    if scores.min() < -tol or scores.max() > 1 + tol:
        raise NormalizationViolation("scores must lie in [0, 1]")
    sums = scores.astype(np.float64).sum(axis=1)
    bad = np.abs(sums - 1.0) > tol
    if bad.any():
        t, y, x = np.argwhere(bad)[0]
        raise NormalizationViolation(
            f"scores at trial {t}, pixel ({x}, {y}) sum to {sums[t, y, x]:.6g}, not 1")


def save_score_stack(stack: ScoreStack, path) -> None:
    t, c, h, w = stack.scores.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MQSS_MAGIC, MQSS_VERSION, t, c, h, w))
        fh.write(stack.scores.astype("<f4", copy=False).tobytes(order="C"))


def load_score_stack(path) -> ScoreStack:
    data = Path(path).read_bytes()
    return parse_score_stack(data)


def parse_score_stack(data: bytes) -> ScoreStack:
    if data[:4] != MQSS_MAGIC:
        raise BadMagic(f"bad magic {bytes(data[:4])!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"header needs {_HEADER.size} bytes, got {len(data)}")
    _, version, t, c, h, w = _HEADER.unpack_from(data)
    if version != MQSS_VERSION:
        raise DataError(f"unsupported MQSS version {version}")
    n = t * c * h * w
    if n > MAX_ELEMENTS:
        raise DimensionOverflow(f"{t}x{c}x{h}x{w} exceeds {MAX_ELEMENTS} elements")
    need = _HEADER.size + 4 * n
    if len(data) < need:
        raise TruncatedPayload(f"payload needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise DataError(f"{len(data) - need} trailing bytes after payload")
    scores = np.frombuffer(data, dtype="<f4", count=n, offset=_HEADER.size)
    return ScoreStack(scores.reshape(t, c, h, w).astype(np.float32))


# --------------------------------------------------------------------------
# metadata

CONDITIONS = ("irradiated", "unirradiated")


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    condition: str
    pixel_size: float
    instrument: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise DataError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if not (self.pixel_size > 0):
            raise DataError(f"pixel_size_um must be positive, got {self.pixel_size}")

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "condition": self.condition,
                "pixel_size_um": self.pixel_size, "instrument": dict(self.instrument)}

    @classmethod
    def from_json(cls, obj: dict) -> "ImageMeta":
        missing = [k for k in ("image_id", "condition", "pixel_size_um") if k not in obj]
        if missing:
            raise DataError(f"metadata missing keys: {', '.join(missing)}")
        instrument = obj.get("instrument", {}) or {}
        if not isinstance(instrument, dict) or any(isinstance(v, (dict, list)) for v in instrument.values()):
            raise DataError("instrument must be a flat object")
        return cls(str(obj["image_id"]), str(obj["condition"]), float(obj["pixel_size_um"]), dict(instrument))


def load_meta(path) -> ImageMeta:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    return ImageMeta.from_json(obj)


def save_meta(meta: ImageMeta, path) -> None:
    Path(path).write_text(json.dumps(meta.to_json(), indent=2, sort_keys=True) + "\n")


def normalize_metadata(metas):
    """Z-score numeric instrument fields and dummy-code categorical ones.

    Returns ``{image_id: {feature: value}}``. Numeric fields use the population
    standard deviation; a constant field maps to 0. Booleans count as
    categorical.
    """
    metas = list(metas)
    keys = sorted({k for m in metas for k in m.instrument})
    out = {m.image_id: {} for m in metas}
    for key in keys:
        values = [m.instrument.get(key) for m in metas]
        numeric = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values)
        if numeric:
            arr = np.asarray(values, dtype=float)
            sd = arr.std()
            z = (arr - arr.mean()) / sd if sd > 0 else np.zeros_like(arr)
            for m, v in zip(metas, z):
                out[m.image_id][key] = float(v)
        else:
            levels = sorted({str(v) for v in values})
            for m, v in zip(metas, values):
                for level in levels:
                    out[m.image_id][f"{key}={level}"] = 1.0 if str(v) == level else 0.0
    return out
