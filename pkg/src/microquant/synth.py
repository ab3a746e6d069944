"""Synthetic micrograph scenes: label maps, noisy predictions, score stacks, datasets."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import DEFECT_CLASSES, ClassId, ImageMeta, LabelMap, ScoreStack, save_label_image, save_meta
from .spatial import gen_csr, gen_thomas

DEFAULT_SHAPE = (192, 256)
DEFAULT_PIXEL_SIZE = 0.02  # um
BOUNDARY_HALF_WIDTH = 1.0
# chance that a defect of each class is placed on a boundary line
ON_BOUNDARY_RATE = {ClassId.VOID: 0.25, ClassId.IMPURITY: 0.4, ClassId.PRECIPITATE: 0.75}
GRAY_LEVEL = np.array([110, 70, 30, 200, 160], dtype=float)

MODELS = (
    {"model": "synth-fine", "optimizer": "adam", "loss": "ewce", "quality": 0.9},
    {"model": "synth-coarse", "optimizer": "sgd", "loss": "ce", "quality": 0.7},
)


@dataclass
class Scene:
    height: int
    width: int
    pixel_size: float
    lines: list  # (x0, y0, angle) in pixels / radians
    defects: list = field(default_factory=list)  # (cls, cx, cy, radius) in pixels

    def boundary_mask(self, half_width: float = BOUNDARY_HALF_WIDTH) -> np.ndarray:
        yy, xx = np.mgrid[0:self.height, 0:self.width].astype(float)
        m = np.zeros((self.height, self.width), dtype=bool)
        for x0, y0, a in self.lines:
            m |= np.abs((xx - x0) * math.sin(a) - (yy - y0) * math.cos(a)) < half_width
        return m


def paint(height, width, boundary: np.ndarray, defects) -> np.ndarray:
    px = np.where(boundary, np.uint8(ClassId.BOUNDARY), np.uint8(ClassId.GRAIN)).astype(np.uint8)
    for cls, cx, cy, r in defects:
        ri = int(math.ceil(r))
        y0, y1 = max(int(cy) - ri, 0), min(int(cy) + ri + 1, height)
        x0, x1 = max(int(cx) - ri, 0), min(int(cx) + ri + 1, width)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        px[y0:y1, x0:x1][disc] = int(cls)
    return px


def make_scene(height=DEFAULT_SHAPE[0], width=DEFAULT_SHAPE[1], pixel_size=DEFAULT_PIXEL_SIZE, seed=0,
               n_lines=3, n_void_parents=4, n_impurity=8, n_precipitate=30) -> Scene:
    """Straight grain boundaries plus disc defects.

    Voids follow a Thomas cluster process, impurities and precipitates are
    uniform; a class-dependent share of each is moved onto a boundary line.
    """
    rng = np.random.default_rng(seed)
    lines = []
    for _ in range(n_lines):
        lines.append((float(rng.uniform(0.2, 0.8) * width), float(rng.uniform(0.2, 0.8) * height),
                      float(rng.uniform(0, math.pi))))
    s = int(rng.integers(0, 2 ** 31))
    voids = gen_thomas(n_void_parents, 6, 0.03 * width, width, height, seed=s)
    pts = {
        ClassId.VOID: np.column_stack([voids.x, voids.y]),
        ClassId.IMPURITY: _xy(gen_csr(n_impurity, width, height, seed=s + 1)),
        ClassId.PRECIPITATE: _xy(gen_csr(n_precipitate, width, height, seed=s + 2)),
    }
    scene = Scene(height, width, pixel_size, lines)
    for cls in DEFECT_CLASSES:
        for cx, cy in pts[cls]:
            if lines and rng.random() < ON_BOUNDARY_RATE[cls]:
                x0, y0, a = lines[int(rng.integers(len(lines)))]
                # project onto the line, keep it inside the frame
                t = (cx - x0) * math.cos(a) + (cy - y0) * math.sin(a)
                cx = min(max(x0 + t * math.cos(a), 0.0), width - 1.0)
                cy = min(max(y0 + t * math.sin(a), 0.0), height - 1.0)
            r = float(rng.choice([1.0, 1.5, 2.0, 2.5, 3.5]))
            scene.defects.append((cls, float(cx), float(cy), r))
    return scene


def _xy(p):
    return np.column_stack([p.x, p.y])


def render_truth(scene: Scene) -> LabelMap:
    return LabelMap(paint(scene.height, scene.width, scene.boundary_mask(), scene.defects), scene.pixel_size)


def render_prediction(scene: Scene, quality: float = 0.85, seed=0) -> LabelMap:
    """Imperfect segmentation: missed, shifted, relabeled and spurious defects, ragged boundaries."""
    rng = np.random.default_rng(seed)
    miss = 1.0 - quality
    boundary = scene.boundary_mask(BOUNDARY_HALF_WIDTH + float(rng.uniform(-0.3, 0.3)))
    boundary &= rng.random(boundary.shape) >= miss / 2
    boundary |= rng.random(boundary.shape) < miss / 100
    defects = []
    for cls, cx, cy, r in scene.defects:
        if rng.random() < miss:
            continue
        if rng.random() < miss:
            cls = DEFECT_CLASSES[int(rng.integers(len(DEFECT_CLASSES)))]
        dx, dy = rng.integers(-1, 2, 2)
        defects.append((cls, cx + float(dx), cy + float(dy), max(r + float(rng.choice([-0.5, 0.0, 0.5])), 1.0)))
    for _ in range(int(round(miss * len(scene.defects) / 2))):
        cls = DEFECT_CLASSES[int(rng.integers(len(DEFECT_CLASSES)))]
        defects.append((cls, float(rng.uniform(0, scene.width)), float(rng.uniform(0, scene.height)),
                        float(rng.choice([1.0, 1.5, 2.0]))))
    return LabelMap(paint(scene.height, scene.width, boundary, defects), scene.pixel_size)


def render_image(labels: LabelMap, seed=0, noise: float = 12.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = GRAY_LEVEL[labels.pixels] + rng.normal(0, noise, labels.shape)
    return np.clip(np.floor(g + 0.5), 0, 255).astype(np.uint8)


def synth_scores(labels: LabelMap, trials: int = 10, seed=0, strength: float = 3.0, noise: float = 1.0) -> ScoreStack:
    """Softmax stack peaked on ``labels`` with per-trial logit noise."""
    rng = np.random.default_rng(seed)
    onehot = np.eye(5)[labels.pixels].transpose(2, 0, 1)
    logits = strength * onehot[None] + rng.normal(0, noise, (trials,) + onehot.shape)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return ScoreStack((e / e.sum(axis=1, keepdims=True)).astype(np.float32))


def write_dataset(out_dir, n_images: int = 3, seed: int = 0, shape=DEFAULT_SHAPE,
                  pixel_size: float = DEFAULT_PIXEL_SIZE, models=MODELS) -> Path:
    """Write ``manifest.json`` plus one folder per image (image, truth, predictions, meta)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(n_images)]
    ids = []
    for i, s in enumerate(seeds):
        image_id = f"img{i + 1:02d}"
        ids.append(image_id)
        d = out / image_id
        d.mkdir(exist_ok=True)
        # every third image is from the unirradiated condition
        cond = "unirradiated" if i % 3 == 2 else "irradiated"
        scene = make_scene(shape[0], shape[1], pixel_size, seed=s,
                           n_precipitate=30 if cond == "irradiated" else 8)
        truth = render_truth(scene)
        save_label_image(truth, path=d / "truth.png")
        Image.fromarray(render_image(truth, seed=s + 1), mode="L").save(d / "image.png", optimize=False)
        for j, m in enumerate(models):
            pred = render_prediction(scene, m["quality"], seed=s + 10 + j)
            save_label_image(pred, path=d / f"pred_{m['model']}.png")
        save_meta(ImageMeta(image_id, cond, pixel_size,
                            {"beam_current_pa": 50.0 + 25.0 * i, "voltage_kv": 5.0, "detector": "tld"}),
                  d / "meta.json")
    manifest = {
        "seed": seed,
        "images": ids,
        "models": [{k: m[k] for k in ("model", "optimizer", "loss")} | {"file": f"pred_{m['model']}.png"}
                   for m in models],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
