import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from agripipe.errors import MissingBand
from agripipe.indices import (
    CHANNEL_ORDER,
    FeatureStack,
    build_feature_stack,
    compute_index,
    index_values,
)
from agripipe.raster import Band, BandKind, IndexKind, MultispectralImage, read_raster

from conftest import constant_image

unit = st.floats(0.0, 1.0)


def _image(**bands):
    kinds = {"red": BandKind.RED, "green": BandKind.GREEN, "blue": BandKind.BLUE, "nir": BandKind.NIR, "re": BandKind.RED_EDGE}
    return MultispectralImage(tuple(Band(kinds[k], np.atleast_2d(np.asarray(v, dtype=np.float64))) for k, v in bands.items()))


def _one(kind, l_factor=0.5, **bands):
    band = compute_index(_image(**bands), kind, l_factor)
    return float(band.values[0, 0]), bool(band.valid[0, 0])


def test_ndvi_example():
    assert _one(IndexKind.NDVI, nir=0.5, red=0.25)[0] == pytest.approx(1 / 3, abs=1e-6)
    assert _one(IndexKind.NDVI, nir=0.4, red=0.4) == (0.0, True)


def test_evi_example():
    assert _one(IndexKind.EVI, nir=0.5, red=0.25, blue=0.1)[0] == pytest.approx(0.277778, abs=1e-6)


def test_msavi_example():
    assert _one(IndexKind.MSAVI, nir=1.0, red=0.0)[0] == pytest.approx(1.0, abs=1e-7)


def test_gndvi_example():
    assert _one(IndexKind.GNDVI, nir=0.6, green=0.2)[0] == pytest.approx(0.5, abs=1e-6)


def test_zero_denominator_marks_invalid():
    assert _one(IndexKind.NDVI, nir=0.0, red=0.0) == (0.0, False)
    # 0.5 + 6*0.375 - 7.5*0.5 + 1 == 0, all exact in binary
    assert _one(IndexKind.EVI, nir=0.5, red=0.375, blue=0.5) == (0.0, False)


def test_evi_is_clipped():
    value, ok = _one(IndexKind.EVI, nir=1.0, red=0.0, blue=0.2)
    assert ok and value == 2.5


def test_missing_band():
    with pytest.raises(MissingBand):
        compute_index(_image(nir=0.5, red=0.2), IndexKind.EVI)
    with pytest.raises(MissingBand):
        build_feature_stack(_image(nir=0.5, red=0.2, green=0.1, blue=0.1))


@settings(max_examples=200, deadline=None)
@given(n=unit, r=unit, g=unit, b=unit, l=st.floats(0.0, 1.0))
def test_indices_match_scalar_oracle(n, r, g, b, l):
    checks = [
        (IndexKind.NDVI, dict(red=r), lambda: oracles.ndvi(n, r), n + r),
        (IndexKind.GNDVI, dict(green=g), lambda: oracles.gndvi(n, g), n + g),
        (IndexKind.EVI, dict(red=r, blue=b), lambda: max(-2.5, min(2.5, oracles.evi(n, r, b))), n + 6 * r - 7.5 * b + 1),
        (IndexKind.SAVI, dict(red=r), lambda: oracles.savi(n, r, l), n + r + l),
        (IndexKind.MSAVI, dict(red=r), lambda: oracles.msavi(n, r), 1.0),
    ]
    for kind, extra, oracle, den in checks:
        values, defined = index_values(kind, np.array([n]), l_factor=l, **{k: np.array([v]) for k, v in extra.items()})
        if abs(den) < 1e-12:
            assert not defined[0]
            continue
        assert defined[0]
        assert values[0] == pytest.approx(oracle(), abs=1e-9, rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(n=unit, r=unit, g=unit, l=st.floats(0.0, 2.0))
def test_index_ranges(n, r, g, l):
    for kind, other in ((IndexKind.NDVI, dict(red=r)), (IndexKind.GNDVI, dict(green=g))):
        v, ok = index_values(kind, np.array([n]), **{k: np.array([x]) for k, x in other.items()})
        assert not ok[0] or -1 <= v[0] <= 1
    v, ok = index_values(IndexKind.SAVI, np.array([n]), red=np.array([r]), l_factor=l)
    assert not ok[0] or -(1 + l) <= v[0] <= 1 + l
    assert (2 * n - 1) ** 2 + 8 * r >= 0


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (2, 8), elements=unit))
def test_savi_without_soil_factor_is_ndvi(arr):
    image = _image(nir=arr[:1], red=arr[1:])
    ndvi = compute_index(image, IndexKind.NDVI)
    savi = compute_index(image, IndexKind.SAVI, l_factor=0.0)
    assert np.array_equal(ndvi.valid, savi.valid)
    np.testing.assert_allclose(savi.values[savi.valid], ndvi.values[ndvi.valid], rtol=0, atol=1e-9)


def test_index_is_pixelwise(rng):
    nir, red = rng.random((2, 1, 50))
    perm = rng.permutation(50)
    a = compute_index(_image(nir=nir, red=red), IndexKind.MSAVI).values[0]
    b = compute_index(_image(nir=nir[:, perm], red=red[:, perm]), IndexKind.MSAVI).values[0]
    np.testing.assert_array_equal(a[perm], b)


def test_constant_stack():
    stack = build_feature_stack(constant_image(0.5, 4, 3))
    assert stack.channels.shape == (10, 3, 4)
    assert np.all(stack.plane(IndexKind.NDVI) == 0) and np.all(stack.plane(IndexKind.GNDVI) == 0)
    assert stack.valid.all()


def test_invalid_nir_pixel_propagates():
    image = constant_image(0.5, 4, 4)
    valid = np.ones((4, 4), dtype=bool)
    valid[1, 2] = False
    image = image.with_bands(b.replace(valid=valid) if b.kind == BandKind.NIR else b for b in image.bands)
    for kind in IndexKind:
        assert not compute_index(image, kind).valid[1, 2]
    stack = build_feature_stack(image)
    assert not stack.valid[1, 2] and stack.valid.sum() == 15
    assert np.all(stack.channels[:, 1, 2] == 0)


def test_stack_matches_per_kind(rng):
    image = MultispectralImage(tuple(Band(k, rng.random((2, 2))) for k in BandKind))
    stack = build_feature_stack(image, l_factor=0.3)
    for i, kind in enumerate(CHANNEL_ORDER):
        expect = image.band(kind).values if isinstance(kind, BandKind) else compute_index(image, kind, 0.3).values
        np.testing.assert_array_equal(stack.channels[i], expect)


def test_stack_file_uses_index_tags(tmp_path, rng):
    image = MultispectralImage(tuple(Band(k, rng.random((3, 5))) for k in BandKind))
    stack = build_feature_stack(image)
    stack.save(tmp_path / "f.msr")
    raw = (tmp_path / "f.msr").read_bytes()
    assert list(raw[15:25]) == list(range(10))
    assert read_raster(tmp_path / "f.msr").kinds == CHANNEL_ORDER
    back = FeatureStack.load(tmp_path / "f.msr")
    assert np.array_equal(back.channels, stack.channels) and np.array_equal(back.valid, stack.valid)


def test_out_of_range_reflectance_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="agripipe"):
        build_feature_stack(constant_image(1.5, 4, 4))
    assert "outside [0, 1]" in caplog.text
