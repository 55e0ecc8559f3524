import json

import numpy as np
import pytest

from algaeid.segmentation import (BinaryMask, DegenerateBandError, LabelMap,
                                  Organism, binarize, connected_components,
                                  extract_organisms, fuse_masks,
                                  labelmap_to_pgm, organisms_to_json,
                                  otsu_index, otsu_threshold)
from algaeid.stack_io import ImageStack, read_pgm

from helpers import flood_fill_components, oracle_otsu_index, random_histogram


def test_otsu_index_matches_bruteforce():
    rng = np.random.default_rng(13)
    for _ in range(100):
        counts = random_histogram(rng)
        assert otsu_index(counts) == oracle_otsu_index(counts)


def test_otsu_two_level_band():
    band = np.zeros((10, 10))
    band[:5] = 200.0
    band[5:] = 10.0
    theta = otsu_threshold(band)
    mask = binarize(band, theta)
    assert np.all(mask.foreground[:5])
    assert not np.any(mask.foreground[5:])
    # smallest optimal threshold: center of the first bin
    assert theta == 10.0 + 0.5 * (200.0 - 10.0) / 256


def test_otsu_constant_band_degenerate():
    with pytest.raises(DegenerateBandError):
        otsu_threshold(np.full((8, 8), 42.0))


def test_otsu_validates_bins():
    with pytest.raises(ValueError):
        otsu_threshold(np.array([[0.0, 1.0]]), num_bins=1)


def test_binarize_strict_inequality():
    band = np.array([[50.0, 51.0]])
    mask = binarize(band, 50.0)
    assert not mask.foreground[0, 0]  # equal to threshold stays background
    assert mask.foreground[0, 1]
    assert mask.threshold_used == 50.0


def test_binarize_all_zero():
    mask = binarize(np.zeros((4, 4)), 0.0)
    assert not mask.foreground.any()


def test_fuse_identity_and_union():
    rng = np.random.default_rng(14)
    a = BinaryMask(foreground=rng.random((8, 8)) < 0.4)
    assert np.array_equal(fuse_masks([a, a]).foreground, a.foreground)

    m1 = np.zeros((4, 4), dtype=bool)
    m2 = np.zeros((4, 4), dtype=bool)
    m1[1, 1] = True
    m2[2, 3] = True
    fused = fuse_masks([BinaryMask(m1), BinaryMask(m2)])
    assert fused.foreground[1, 1] and fused.foreground[2, 3]
    assert fused.foreground.sum() == 2
    assert fused.threshold_used is None

    empty = BinaryMask(np.zeros((8, 8), dtype=bool))
    assert np.array_equal(fuse_masks([a, empty]).foreground, a.foreground)


def test_fuse_validates():
    with pytest.raises(ValueError):
        fuse_masks([])
    with pytest.raises(ValueError):
        fuse_masks([BinaryMask(np.zeros((2, 2), dtype=bool)),
                    BinaryMask(np.zeros((3, 3), dtype=bool))])


def test_components_single_square():
    mask = np.zeros((7, 7), dtype=bool)
    mask[2:5, 2:5] = True
    lab = connected_components(BinaryMask(mask))
    assert lab.count == 1
    assert (lab.labels == 1).sum() == 9


def test_components_diagonal_is_connected():
    mask = np.zeros((4, 4), dtype=bool)
    mask[1, 1] = True
    mask[2, 2] = True
    assert connected_components(BinaryMask(mask)).count == 1


def test_components_match_flood_fill_oracle():
    rng = np.random.default_rng(15)
    for _ in range(50):
        mask = rng.random((64, 64)) < rng.uniform(0.2, 0.7)
        lab = connected_components(BinaryMask(mask))
        oracle_labels, oracle_count = flood_fill_components(mask)
        assert lab.count == oracle_count
        # both number components in raster order of first pixel, so the
        # label maps agree exactly, not just up to renaming
        assert np.array_equal(lab.labels, oracle_labels)
        assert (lab.labels > 0).sum() == mask.sum()


def test_components_deterministic():
    rng = np.random.default_rng(16)
    mask = rng.random((32, 32)) < 0.5
    a = connected_components(BinaryMask(mask))
    b = connected_components(BinaryMask(mask))
    assert a.count == b.count
    assert np.array_equal(a.labels, b.labels)


def test_component_ids_contiguous_and_sizes_sum():
    rng = np.random.default_rng(17)
    mask = rng.random((48, 48)) < 0.45
    lab = connected_components(BinaryMask(mask))
    ids = np.unique(lab.labels)
    assert ids[0] == 0 or lab.count == len(ids)
    assert set(ids) - {0} == set(range(1, lab.count + 1))
    assert sum((lab.labels == i).sum() for i in range(1, lab.count + 1)) == mask.sum()


def _stack_like(labels_shape, m=2, fill=5.0):
    bands = tuple(np.full(labels_shape, fill + i) for i in range(m))
    wl = tuple(405.0 + 25 * i for i in range(m))
    base = ImageStack(bands=bands, wavelengths_nm=wl, role_tag="raw")
    return base.with_bands(bands, role_tag="corrected")


def test_extract_basic_and_filter():
    lab = np.zeros((10, 10), dtype=np.int32)
    lab[1:6, 1:6] = 1  # 25 px
    stack = _stack_like((10, 10))
    orgs = extract_organisms(LabelMap(lab, 1), stack, min_area_px=10)
    assert len(orgs) == 1
    assert orgs[0].area == 25
    assert (orgs[0].x_min, orgs[0].y_min, orgs[0].x_max, orgs[0].y_max) == (1, 1, 5, 5)
    assert not orgs[0].touches_border
    assert orgs[0].patches[0].shape == (5, 5)

    small = np.zeros((10, 10), dtype=np.int32)
    small[0, 0:4] = 1  # 4 px
    assert extract_organisms(LabelMap(small, 1), stack, min_area_px=10) == []


def test_extract_ordering_and_border_flag():
    lab = np.zeros((12, 12), dtype=np.int32)
    lab[0:5, 0:6] = 1   # 30 px, touches border
    lab[7:10, 7:11] = 2  # 12 px
    stack = _stack_like((12, 12))
    orgs = extract_organisms(LabelMap(lab, 2), stack, min_area_px=10)
    assert [o.id for o in orgs] == [1, 2]
    assert [o.area for o in orgs] == [30, 12]
    assert orgs[0].touches_border and not orgs[1].touches_border


def test_extract_dimension_mismatch():
    lab = LabelMap(np.zeros((4, 4), dtype=np.int32), 0)
    with pytest.raises(ValueError):
        extract_organisms(lab, _stack_like((5, 5)), min_area_px=1)


def test_extract_bbox_tight_and_pixel_ids():
    rng = np.random.default_rng(18)
    mask = rng.random((20, 20)) < 0.4
    lab = connected_components(BinaryMask(mask))
    stack = _stack_like((20, 20))
    for org in extract_organisms(lab, stack, min_area_px=1):
        ys, xs = org.pixels[:, 0], org.pixels[:, 1]
        assert ys.min() == org.y_min and ys.max() == org.y_max
        assert xs.min() == org.x_min and xs.max() == org.x_max
        assert np.all(lab.labels[ys, xs] == org.id)


def test_organism_invariants():
    with pytest.raises(ValueError):
        Organism(id=1, pixels=np.zeros((0, 2)), x_min=0, y_min=0, x_max=0, y_max=0)
    with pytest.raises(ValueError):
        Organism(id=1, pixels=np.array([[5, 5]]), x_min=0, y_min=0, x_max=2, y_max=2)


def test_labelmap_pgm_export(tmp_path):
    lab = np.zeros((6, 6), dtype=np.int32)
    lab[2:4, 2:4] = 1
    lab[5, 5] = 2
    labelmap_to_pgm(LabelMap(lab, 2), tmp_path / "labels.pgm")
    back = read_pgm(tmp_path / "labels.pgm")
    assert np.array_equal(back.astype(np.int32), lab)


def test_organisms_json_round_trip():
    lab = np.zeros((8, 8), dtype=np.int32)
    lab[0:3, 0:3] = 1
    stack = _stack_like((8, 8))
    orgs = extract_organisms(LabelMap(lab, 1), stack, min_area_px=1)
    doc = organisms_to_json(orgs)
    parsed = json.loads(json.dumps(doc))
    assert parsed[0]["id"] == 1
    assert parsed[0]["area"] == 9
    assert parsed[0]["bbox"] == [0, 0, 2, 2]
    assert parsed[0]["touches_border"] is True
