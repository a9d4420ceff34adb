import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsynth.errors import BoundsError, ShapeError
from gridsynth.grid import (
    DistanceConfig,
    GridImage,
    SimilarityTensor,
    build_similarity_tensor,
    distance,
    load_png,
    save_png,
    subimage,
)

from conftest import tiles_image


def reference_distance(pa, pb, bins, w_emd, w_struct):
    """Pixel-loop reimplementation of the tile distance."""
    m = pa.shape[0]
    npix = m * m
    emd = 0.0
    for ch in range(3):
        ha = [0] * bins
        hb = [0] * bins
        for y in range(m):
            for x in range(m):
                ha[int(pa[y, x, ch]) * bins // 256] += 1
                hb[int(pb[y, x, ch]) * bins // 256] += 1
        ca = cb = 0.0
        acc = 0.0
        for i in range(bins):
            ca += ha[i] / npix
            cb += hb[i] / npix
            acc += abs(ca - cb)
        emd += acc / (bins - 1)
    emd /= 3

    def gray(p):
        return [
            (0.299 * int(p[y, x, 0]) + 0.587 * int(p[y, x, 1]) + 0.114 * int(p[y, x, 2])) / 255
            for y in range(m)
            for x in range(m)
        ]

    ga, gb = gray(pa), gray(pb)
    ma, mb = sum(ga) / npix, sum(gb) / npix
    sa = sum((g - ma) ** 2 for g in ga)
    sb = sum((g - mb) ** 2 for g in gb)
    if sa == 0 or sb == 0:
        corr = 1.0 if abs(ma - mb) < 1 / 255 else 0.0
    else:
        corr = sum((x - ma) * (y - mb) for x, y in zip(ga, gb)) / math.sqrt(sa * sb)
    struct = min(1.0, max(0.0, 1.0 - corr))
    return w_emd * emd + w_struct * struct


def test_subimage_offset():
    rng = np.random.default_rng(0)
    px = rng.integers(0, 256, size=(144, 144, 3), dtype=np.uint8)
    img = GridImage(px, 9, 16)
    sub = subimage(img, (3, 4))
    assert np.array_equal(sub.pixels, px[32:48, 48:64])
    assert sub.origin == (3, 4)


def test_subimage_corners():
    img = tiles_image([[0, 1], [2, 3]], cell_m=3)
    assert np.array_equal(subimage(img, (1, 1)).pixels, img.pixels[:3, :3])
    assert np.array_equal(subimage(img, (2, 2)).pixels, img.pixels[3:, 3:])


@pytest.mark.parametrize("cell", [(0, 1), (1, 0), (3, 1), (1, 3)])
def test_subimage_out_of_bounds(cell):
    img = tiles_image([[0, 1], [2, 3]])
    with pytest.raises(BoundsError):
        subimage(img, cell)


def test_gridimage_shape_mismatch():
    with pytest.raises(ShapeError):
        GridImage(np.zeros((10, 10, 3), dtype=np.uint8), 3, 3)


def test_png_roundtrip(tmp_path):
    img = tiles_image([[0, 1, 2], [2, 1, 0], [0, 0, 1]], cell_m=5)
    save_png(img, tmp_path / "x.png")
    assert load_png(tmp_path / "x.png", 3, 5) == img


def test_png_wrong_dims_names_expected(tmp_path):
    img = tiles_image([[0, 1], [1, 0]], cell_m=5)
    save_png(img, tmp_path / "x.png")
    with pytest.raises(ShapeError, match="expected 12x12"):
        load_png(tmp_path / "x.png", 3, 4)


def test_black_white_emd_only():
    black = np.zeros((4, 4, 3), dtype=np.uint8)
    white = np.full((4, 4, 3), 255, dtype=np.uint8)
    cfg = DistanceConfig(hist_bins=2, w_emd=1.0, w_struct=0.0)
    assert distance(black, white, cfg) == 1.0


def test_identical_tiles_zero():
    rng = np.random.default_rng(3)
    tile = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    assert distance(tile, tile.copy()) == 0.0


def test_distance_matches_reference():
    rng = np.random.default_rng(7)
    for trial in range(40):
        m = int(rng.integers(2, 6))
        a = rng.integers(0, 256, size=(m, m, 3), dtype=np.uint8)
        b = rng.integers(0, 256, size=(m, m, 3), dtype=np.uint8)
        if trial % 4 == 0:
            b = np.full_like(b, int(rng.integers(256)))
        bins = int(rng.integers(2, 20))
        w1, w2 = float(rng.random()), float(rng.random()) + 0.01
        cfg = DistanceConfig(hist_bins=bins, w_emd=w1, w_struct=w2)
        assert distance(a, b, cfg) == pytest.approx(reference_distance(a, b, bins, w1, w2), abs=1e-9)


def test_weight_doubling_doubles_distance():
    rng = np.random.default_rng(11)
    a = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    d1 = distance(a, b, DistanceConfig(w_emd=0.3, w_struct=0.2))
    d2 = distance(a, b, DistanceConfig(w_emd=0.6, w_struct=0.4))
    assert d2 == pytest.approx(2 * d1, rel=1e-12)


def test_distance_shape_mismatch():
    with pytest.raises(ShapeError):
        distance(np.zeros((2, 2, 3), np.uint8), np.zeros((3, 3, 3), np.uint8))


@pytest.mark.parametrize("kw", [dict(hist_bins=1), dict(w_emd=-1.0), dict(w_emd=0.0, w_struct=0.0)])
def test_distance_config_validation(kw):
    with pytest.raises(ValueError):
        DistanceConfig(**kw)


tile = st.integers(2, 4).flatmap(
    lambda m: st.tuples(
        *[st.lists(st.integers(0, 255), min_size=m * m * 3, max_size=m * m * 3) for _ in range(2)]
    ).map(lambda ab: tuple(np.array(v, dtype=np.uint8).reshape(m, m, 3) for v in ab))
)


@settings(max_examples=80, deadline=None)
@given(tile)
def test_distance_symmetric_and_bounded(pair):
    a, b = pair
    d = distance(a, b)
    assert d == distance(b, a)
    assert 0.0 <= d <= 1.0
    assert distance(a, a) == 0.0


def test_tensor_n3_one_identical_pair():
    labels = np.arange(9).reshape(3, 3)
    labels[2, 2] = labels[0, 0]
    img = tiles_image(labels, cell_m=4, seed=5)
    bx = build_similarity_tensor(img, 0.0)
    assert bx.popcount() == 9 + 2
    assert bx[1, 1, 3, 3] and bx[3, 3, 1, 1]
    assert not bx[1, 1, 1, 2]


def test_tensor_eps_zero_vs_large():
    img = tiles_image([[0, 1], [2, 3]], seed=2)
    assert build_similarity_tensor(img, 1.0) == SimilarityTensor.ones(2)
    bx0 = build_similarity_tensor(img, 0.0)
    assert bx0.popcount() == 4 and bx0.is_reflexive()


def test_tensor_negative_eps():
    with pytest.raises(ValueError):
        build_similarity_tensor(tiles_image([[0]]), -0.1)


def test_tensor_threads_invariant():
    rng = np.random.default_rng(9)
    labels = rng.integers(0, 4, size=(5, 5))
    img = tiles_image(labels, seed=9)
    for eps in (0.0, 0.2, 0.4):
        assert build_similarity_tensor(img, eps, threads=1) == build_similarity_tensor(img, eps, threads=4)


def test_tensor_numpy_roundtrip():
    rng = np.random.default_rng(1)
    arr = rng.random((3, 3, 3, 3)) < 0.3
    t = SimilarityTensor.from_numpy(arr)
    assert np.array_equal(t.to_numpy(), arr)
    assert t.popcount() == int(arr.sum())
    assert (~t).popcount() == 81 - int(arr.sum())
    assert (t | ~t) == SimilarityTensor.ones(3)
    assert (t & ~t) == SimilarityTensor.zeros(3)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=9, max_size=9), st.floats(0.0, 1.0))
def test_tensor_symmetric_reflexive(labels, eps):
    img = tiles_image(np.array(labels).reshape(3, 3), seed=sum(labels))
    bx = build_similarity_tensor(img, eps)
    assert bx.is_symmetric()
    assert bx.is_reflexive()
    # equal tiles are always similar
    for i, li in enumerate(labels):
        for j, lj in enumerate(labels):
            if li == lj:
                assert bx[i // 3 + 1, i % 3 + 1, j // 3 + 1, j % 3 + 1]
