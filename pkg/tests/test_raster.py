import datetime as dt
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from agripipe.errors import (
    DuplicateBand,
    InvalidDate,
    InvalidTime,
    IoFailure,
    MalformedHeader,
    NonFiniteValueWithValidFlag,
    PatternMismatch,
    TruncatedPayload,
    UnknownProduct,
)
from agripipe.raster import (
    Band,
    BandKind,
    CaptureMeta,
    IndexKind,
    MultispectralImage,
    as_label_mask,
    format_capture_filename,
    parse_capture_filename,
    read_raster,
    write_raster,
)

from conftest import random_image


def _msr_bytes(width, height, kinds, payloads, validity):
    out = struct.pack("<4sHIIB", b"MSRA", 1, width, height, len(kinds)) + bytes(kinds)
    for values, valid in zip(payloads, validity):
        out += np.asarray(values, dtype="<f4").tobytes() + np.asarray(valid, dtype=np.uint8).tobytes()
    return out


def test_minimal_single_red_pixel(tmp_path):
    path = tmp_path / "one.msr"
    path.write_bytes(_msr_bytes(1, 1, [0], [[0.5]], [[1]]))
    image = read_raster(path)
    assert image.kinds == (BandKind.RED,)
    assert image.band(BandKind.RED).values[0, 0] == np.float32(0.5)


def test_layout_is_bit_exact(tmp_path):
    image = MultispectralImage((Band(BandKind.NIR, np.array([[0.25, 1.0]]), np.array([[True, False]])),))
    path = tmp_path / "x.msr"
    write_raster(image, path)
    assert path.read_bytes() == _msr_bytes(2, 1, [3], [[0.25, 0.0]], [[1, 0]])


def test_round_trip_five_bands(tmp_path, rng):
    image = random_image(rng, 4, 3, invalid_fraction=0.2)
    write_raster(image, tmp_path / "r.msr")
    back = read_raster(tmp_path / "r.msr")
    assert back.kinds == image.kinds
    for a, b in zip(image.bands, back.bands):
        assert a.values.tobytes() == b.values.tobytes()
        assert np.array_equal(a.valid, b.valid)


def test_zero_pixel_round_trip(tmp_path):
    image = MultispectralImage((Band(BandKind.RED, np.zeros((1, 1))),))
    write_raster(image, tmp_path / "z.msr")
    assert read_raster(tmp_path / "z.msr").band(BandKind.RED).values[0, 0] == 0.0


def test_nan_on_invalid_pixel_is_normalized(tmp_path):
    values = np.array([[np.nan, 0.3]])
    image = MultispectralImage((Band(BandKind.RED, values, np.array([[False, True]])),))
    write_raster(image, tmp_path / "n.msr")
    band = read_raster(tmp_path / "n.msr").band(BandKind.RED)
    assert band.values[0, 0] == 0.0 and not band.valid[0, 0]
    assert band.valid[0, 1]


def test_duplicate_band_in_file(tmp_path):
    path = tmp_path / "d.msr"
    path.write_bytes(_msr_bytes(1, 1, [3, 3], [[0.1], [0.2]], [[1], [1]]))
    with pytest.raises(DuplicateBand):
        read_raster(path)


def test_duplicate_band_in_constructor():
    b = Band(BandKind.NIR, np.zeros((2, 2)))
    with pytest.raises(DuplicateBand):
        MultispectralImage((b, b))


def test_bad_magic_and_truncation(tmp_path):
    good = _msr_bytes(2, 2, [0], [np.zeros((2, 2))], [np.ones((2, 2))])
    (tmp_path / "m.msr").write_bytes(b"XXXX" + good[4:])
    with pytest.raises(MalformedHeader):
        read_raster(tmp_path / "m.msr")
    (tmp_path / "t.msr").write_bytes(good[:-3])
    with pytest.raises(TruncatedPayload):
        read_raster(tmp_path / "t.msr")
    (tmp_path / "h.msr").write_bytes(good[:7])
    with pytest.raises((MalformedHeader, TruncatedPayload)):
        read_raster(tmp_path / "h.msr")


def test_nonfinite_valid_value_rejected(tmp_path):
    path = tmp_path / "f.msr"
    path.write_bytes(_msr_bytes(1, 1, [0], [[np.inf]], [[1]]))
    with pytest.raises(NonFiniteValueWithValidFlag):
        read_raster(path)
    with pytest.raises(NonFiniteValueWithValidFlag):
        Band(BandKind.RED, np.array([[np.nan]]))


def test_unwritable_path(tmp_path):
    image = MultispectralImage((Band(BandKind.RED, np.zeros((1, 1))),))
    with pytest.raises(IoFailure):
        write_raster(image, tmp_path / "missing-dir" / "x.msr")


def test_mismatched_band_sizes_rejected():
    with pytest.raises(ValueError):
        MultispectralImage((Band(BandKind.RED, np.zeros((2, 2))), Band(BandKind.NIR, np.zeros((2, 3)))))


def test_index_channels_round_trip(tmp_path):
    image = MultispectralImage((Band(IndexKind.NDVI, np.full((2, 2), -0.5)), Band(BandKind.RED, np.ones((2, 2)))))
    write_raster(image, tmp_path / "i.msr")
    assert read_raster(tmp_path / "i.msr").kinds == (IndexKind.NDVI, BandKind.RED)


def test_bands_are_immutable():
    band = Band(BandKind.RED, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        band.values[0, 0] = 1.0


@settings(max_examples=40, deadline=None)
@given(
    values=hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                      elements=st.floats(-1e6, 1e6, width=32)),
    data=st.data(),
)
def test_round_trip_property(tmp_path_factory, values, data):
    valid = data.draw(hnp.arrays(bool, values.shape))
    image = MultispectralImage((Band(BandKind.RED_EDGE, values, valid),))
    path = tmp_path_factory.mktemp("prop") / "p.msr"
    write_raster(image, path)
    back = read_raster(path).band(BandKind.RED_EDGE)
    assert np.array_equal(back.valid, valid)
    assert np.array_equal(back.values, np.where(valid, values, 0.0).astype(np.float32))
    assert np.isfinite(back.values[back.valid]).all()


@pytest.mark.parametrize(
    "name, expected",
    [
        ("20240423_E2_1230_RGB.tif", (dt.date(2024, 4, 23), "E2", dt.time(12, 30), "RGB")),
        ("20200101_E8_0000_NIR.tif", (dt.date(2020, 1, 1), "E8", dt.time(0, 0), "NIR")),
        ("20231130_B17_2359_RedEdge.tif", (dt.date(2023, 11, 30), "B17", dt.time(23, 59), "RedEdge")),
    ],
)
def test_parse_capture_filename(name, expected):
    meta = parse_capture_filename(name)
    assert (meta.date, meta.area_id, meta.time, meta.product) == expected


@pytest.mark.parametrize(
    "name, error",
    [
        ("notes.txt", PatternMismatch),
        ("20241345_E2_1230_RGB.tif", InvalidDate),
        ("20240423_E2_2460_RGB.tif", InvalidTime),
        ("20240423_E2_1230_SWIR.tif", UnknownProduct),
    ],
)
def test_parse_capture_filename_errors(name, error):
    with pytest.raises(error):
        parse_capture_filename(name)


@settings(max_examples=60, deadline=None)
@given(
    date=st.dates(dt.date(1900, 1, 1), dt.date(9999, 12, 31)),
    area=st.text("ABCDEFXYZ0123456789", min_size=1, max_size=5),
    time=st.times().map(lambda t: t.replace(second=0, microsecond=0)),
    product=st.sampled_from(["RGB", "NIR", "RedEdge"]),
)
def test_filename_format_parse_identity(date, area, time, product):
    meta = CaptureMeta(date, area, time, product)
    assert parse_capture_filename(format_capture_filename(meta)) == meta


def test_label_mask_validation():
    assert as_label_mask([[0, 1], [2, 1]]).dtype == np.uint8
    with pytest.raises(ValueError):
        as_label_mask([[0, 3]])
    with pytest.raises(ValueError):
        as_label_mask([[0, 1]], shape=(2, 1))
