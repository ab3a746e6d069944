import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from microquant.errors import DataError, NoTrainRegion
from microquant.prep import (Chip, assign_split, augment_d4, chip_region, compute_split, crop, d4_transform,
                             holdout_region, n_train, prepare_chips)
from microquant.raster import LabelMap


def _scene(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (h, w), dtype=np.uint8), LabelMap(rng.integers(0, 5, (h, w), dtype=np.uint8))


@pytest.mark.parametrize("width, expected", [(640, (384, 256)), (1024, (768, 256)), (200, (128, 72))])
def test_compute_split(width, expected):
    lay = compute_split(width)
    assert (lay.trainval_width, lay.test_width) == expected
    assert lay.test_offset_x == lay.trainval_width


def test_no_train_region():
    with pytest.raises(NoTrainRegion):
        compute_split(100)


@given(st.integers(171, 5000))
def test_split_properties(width):
    lay = compute_split(width)
    assert lay.trainval_width % 128 == 0
    assert lay.trainval_width <= 0.75 * width
    assert lay.trainval_width + lay.test_width == width


def test_crop():
    img, lab = _scene(10, 12)
    ci, cl = crop(img, lab, (2, 3, 4, 5))
    assert ci.shape == (5, 4) and (cl.pixels == lab.pixels[3:8, 2:6]).all()
    with pytest.raises(DataError):
        crop(img, lab, (10, 0, 4, 4))


def test_chips_tile_region_exactly():
    img, lab = _scene(300, 640)
    lay = compute_split(640)
    chips = chip_region(img, lab, lay)
    assert len(chips) == 2 * 3
    assert [c.origin for c in chips] == [(0, 0), (128, 0), (256, 0), (0, 128), (128, 128), (256, 128)]
    cover = np.zeros(lab.shape, int)
    for c in chips:
        cover[c.y:c.y + 128, c.x:c.x + 128] += 1
        assert (c.labels == lab.pixels[c.y:c.y + 128, c.x:c.x + 128]).all()
    assert (cover[:256, :384] == 1).all() and cover[256:].sum() == 0 and cover[:, 384:].sum() == 0
    ti, tl = holdout_region(img, lab, lay)
    assert tl.shape == (300, 256) and (tl.pixels == lab.pixels[:, 384:]).all()


def test_augment_d4_group():
    _, lab = _scene(8, 8, seed=3)
    chip = Chip(0, 0, 8, lab.pixels.copy(), lab.pixels.copy())
    variants = augment_d4(chip)
    assert len(variants) == 8
    assert len({v.labels.tobytes() for v in variants}) == 8
    assert (variants[0].labels == chip.labels).all()
    hist = np.bincount(chip.labels.ravel(), minlength=5)
    keys = {v.labels.tobytes() for v in variants}
    for v in variants:
        assert (np.bincount(v.labels.ravel(), minlength=5) == hist).all()
        # closed under further flips and transposes
        for k in (1, 2, 4):
            assert d4_transform(v.labels, k).tobytes() in keys


def test_augment_requires_square():
    a = np.zeros((4, 6), np.uint8)
    with pytest.raises(DataError):
        augment_d4(Chip(0, 0, 4, a, a))


def test_n_train_uses_exact_fraction():
    assert n_train(10, 0.8) == 8
    assert n_train(11, 0.8) == 9
    assert n_train(1, 0.8) == 1


def test_assign_split_seeded():
    chips = [Chip(i, 0, 1, np.zeros((1, 1)), np.zeros((1, 1))) for i in range(10)]
    a = assign_split(chips, 0.8, seed=7)
    b = assign_split(chips, 0.8, seed=7)
    assert [c.split for c in a] == [c.split for c in b]
    assert sum(c.split == "train" for c in a) == 8
    assert [c.x for c in a] == list(range(10))


def test_prepare_chips_reproducible_and_val_not_augmented():
    img, lab = _scene(384, 1024, seed=5)
    lay1, c1 = prepare_chips(img, lab, seed=11)
    lay2, c2 = prepare_chips(img, lab, seed=11)
    assert lay1 == lay2
    assert [(c.origin, c.variant, c.split) for c in c1] == [(c.origin, c.variant, c.split) for c in c2]
    assert all(np.array_equal(a.image, b.image) and np.array_equal(a.labels, b.labels) for a, b in zip(c1, c2))
    base = 3 * (768 // 128)
    n_tr = n_train(base, 0.8)
    assert sum(c.split == "train" for c in c1) == 8 * n_tr
    assert all(c.variant == 0 for c in c1 if c.split == "val")
    assert sum(c.split == "val" for c in c1) == base - n_tr
