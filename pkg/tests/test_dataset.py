import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agripipe.dataset import (
    AUGMENT_VARIANTS,
    SplitManifest,
    SplitMix64,
    Tile,
    augment_tile,
    fisher_yates,
    load_tile,
    parse_tile_id,
    save_tile,
    split_tiles,
    stitch_predictions,
    tile_image,
    training_windows,
    window_origins,
)
from agripipe.errors import NonSquareTile, PatchOutOfBounds, TileLargerThanImage, TooFewTiles
from agripipe.indices import FeatureStack


def _stack(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureStack(rng.random((10, h, w)).astype(np.float32), np.ones((h, w), dtype=bool))


def _labels(h, w, seed=0):
    return np.random.default_rng(seed).integers(0, 3, (h, w)).astype(np.uint8)


def _tile(size=8, seed=0):
    rng = np.random.default_rng(seed)
    valid = rng.random((size, size)) > 0.1
    feats = np.where(valid, rng.random((10, size, size)), 0).astype(np.float32)
    return Tile(feats, rng.integers(0, 3, (size, size)).astype(np.uint8), valid, (16, 32), "f")


# tiling ----------------------------------------------------------------------

def test_nine_tiles_on_1024():
    stack = FeatureStack(np.zeros((10, 1024, 1024), np.float32), np.ones((1024, 1024), bool))
    tiles = tile_image(stack, np.zeros((1024, 1024), np.uint8), 512, 256)
    assert len(tiles) == 9
    assert [t.origin for t in tiles[:4]] == [(0, 0), (256, 0), (512, 0), (0, 256)]


def test_single_tile_when_image_equals_tile():
    stack = _stack(16, 16)
    for stride in (1, 5, 16):
        tiles = tile_image(stack, _labels(16, 16), 16, stride)
        assert [t.origin for t in tiles] == [(0, 0)]


def test_tile_larger_than_image():
    with pytest.raises(TileLargerThanImage):
        tile_image(_stack(16, 15), _labels(16, 15), 16, 8)


def test_tile_contents_and_partial_border_discarded():
    stack, labels = _stack(20, 27), _labels(20, 27)
    tiles = tile_image(stack, labels, 8, 8, source_id="plot")
    assert len(tiles) == 2 * 3
    t = tiles[4]
    assert t.origin == (8, 8) and t.tile_id == "plot_x8_y8"
    np.testing.assert_array_equal(t.features, stack.channels[:, 8:16, 8:16])
    np.testing.assert_array_equal(t.labels, labels[8:16, 8:16])


@settings(max_examples=50, deadline=None)
@given(length=st.integers(1, 300), tile=st.integers(1, 300), stride=st.integers(1, 300))
def test_window_origin_arithmetic(length, tile, stride):
    if tile > length or stride > tile:
        return
    starts = window_origins(length, tile, stride)
    assert len(starts) == (length - tile) // stride + 1
    assert starts[-1] + tile <= length
    edge = window_origins(length, tile, stride, cover_edge=True)
    assert edge[-1] + tile == length


def test_training_windows_stay_inside_training_tiles():
    stack, labels = _stack(32, 32), _labels(32, 32)
    grid = tile_image(stack, labels, 8, 8)
    train = [t for t in grid if t.origin[1] < 16]
    windows = training_windows(stack, labels, train, 4)
    origins = {t.origin for t in windows}
    assert {t.origin for t in train} <= origins
    assert all(y + 8 <= 16 for _, y in origins)
    assert (4, 4) in origins and (4, 12) not in origins


# split -----------------------------------------------------------------------

def test_splitmix64_reference_stream():
    gen = SplitMix64(1234567)
    assert [gen.next() for _ in range(3)] == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_fisher_yates_is_a_permutation():
    items = list(range(50))
    shuffled = fisher_yates(items, 9)
    assert sorted(shuffled) == items and shuffled != items


def test_fisher_yates_is_roughly_uniform():
    counts = np.zeros((4, 4))
    for seed in range(4000):
        for pos, item in enumerate(fisher_yates(range(4), seed)):
            counts[item, pos] += 1
    assert np.abs(counts / 4000 - 0.25).max() < 0.04


@pytest.mark.parametrize("n, expect", [(100, (70, 10, 20)), (10, (7, 1, 2)), (19, (13, 1, 5)), (33, (23, 3, 7))])
def test_split_counts(n, expect):
    m = split_tiles([f"t{i}" for i in range(n)], seed=5)
    assert (len(m.train), len(m.val), len(m.test)) == expect


@settings(max_examples=50, deadline=None)
@given(n=st.integers(10, 400), seed=st.integers(0, 2**63))
def test_split_partition_property(n, seed):
    ids = [f"id{i}" for i in range(n)]
    m = split_tiles(ids, seed)
    assert len(m.train) == (7 * n) // 10 and len(m.val) == n // 10
    assert sorted(m.train + m.val + m.test) == sorted(ids)
    assert len(set(m.train) | set(m.val) | set(m.test)) == n


def test_split_determinism_and_seed_sensitivity(tmp_path):
    ids = [f"t{i}" for i in range(100)]
    a, b = split_tiles(ids, 7), split_tiles(ids, 7)
    assert a.dumps() == b.dumps()
    assert split_tiles(ids, 8).train != a.train
    a.save(tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text()
    assert text.startswith("seed=7\ntrain t")
    assert SplitManifest.load(tmp_path / "m.txt") == a


def test_too_few_tiles():
    with pytest.raises(TooFewTiles):
        split_tiles([f"t{i}" for i in range(9)], 0)


# augmentation ----------------------------------------------------------------

def test_six_named_variants():
    variants = augment_tile(_tile())
    assert [v.variant for v in variants] == list(AUGMENT_VARIANTS)
    assert all(v.tile_id == f"f_x16_y32_{v.variant}" for v in variants)
    assert parse_tile_id(variants[0].tile_id) == ("f", (16, 32), "rot90")


def test_constant_tile_geometric_variants_equal_original():
    tile = Tile(np.full((10, 6, 6), 0.3, np.float32), np.ones((6, 6), np.uint8), np.ones((6, 6), bool), (0, 0))
    variants = augment_tile(tile)
    assert all(v.equals(tile) for v in variants[:5])


def test_rot180_twice_is_identity():
    tile = _tile()
    rot = augment_tile(tile)[1]
    assert augment_tile(rot)[1].equals(tile)


def test_rot90_index_mapping():
    labels = np.zeros((512, 512), np.uint8)
    labels[0, 0] = 2
    tile = Tile(np.zeros((10, 512, 512), np.float32), labels, np.ones((512, 512), bool), (0, 0))
    rotated = augment_tile(tile)[0].labels
    assert rotated[511, 0] == 2 and rotated.sum() == 2


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), size=st.integers(1, 12))
def test_geometric_variants_preserve_class_counts(seed, size):
    tile = _tile(size, seed)
    counts = np.bincount(tile.labels.ravel(), minlength=3)
    for v in augment_tile(tile)[:5]:
        assert np.array_equal(np.bincount(v.labels.ravel(), minlength=3), counts)
        assert np.array_equal(np.sort(v.features, axis=None), np.sort(tile.features, axis=None))


def test_blur_touches_features_only():
    tile = _tile(16)
    blurred = augment_tile(tile)[5]
    assert np.array_equal(blurred.labels, tile.labels) and np.array_equal(blurred.valid, tile.valid)
    assert not np.array_equal(blurred.features, tile.features)
    assert blurred.features[:, tile.valid].std() < tile.features[:, tile.valid].std()


def test_non_square_tile():
    tile = Tile(np.zeros((10, 4, 6), np.float32), np.zeros((4, 6), np.uint8), np.ones((4, 6), bool), (0, 0))
    with pytest.raises(NonSquareTile):
        augment_tile(tile)


# stitching -------------------------------------------------------------------

def test_single_patch_is_argmax():
    probs = np.random.default_rng(0).random((3, 8, 8))
    np.testing.assert_array_equal(stitch_predictions([((0, 0), probs)], (8, 8)), probs.argmax(0))


def test_duplicate_patches_are_idempotent():
    probs = np.random.default_rng(1).random((3, 4, 4))
    one = stitch_predictions([((2, 1), probs)], (8, 6))
    two = stitch_predictions([((2, 1), probs), ((2, 1), probs)], (8, 6))
    np.testing.assert_array_equal(one, two)
    assert (one[0] == 0).all()


def test_disagreement_tie_goes_to_background():
    a = np.zeros((3, 2, 2))
    a[0], a[1] = 0.6, 0.4
    b = np.zeros((3, 2, 2))
    b[0], b[1] = 0.4, 0.6
    out = stitch_predictions([((0, 0), a), ((1, 0), b)], (3, 2))
    assert out[0, 1] == 0 and out[0, 0] == 0 and out[0, 2] == 1


def test_patch_out_of_bounds():
    with pytest.raises(PatchOutOfBounds):
        stitch_predictions([((5, 0), np.zeros((3, 4, 4)))], (8, 8))


def test_tile_then_stitch_constant_reconstructs():
    stack, labels = _stack(24, 24), _labels(24, 24)
    tiles = tile_image(stack, labels, 8, 4)
    probs = np.zeros((3, 8, 8))
    probs[2] = 1.0
    out = stitch_predictions([(t.origin, probs) for t in tiles], (26, 24))
    assert (out[:, :24] == 2).all() and (out[:, 24:] == 0).all()


def test_tile_file_round_trip(tmp_path):
    tile = _tile(8)
    path = save_tile(tile, tmp_path)
    assert path.name == "f_x16_y32.msr" and (tmp_path / "f_x16_y32.labels.npy").exists()
    back = load_tile(tmp_path, tile.tile_id)
    assert back.equals(tile) and back.origin == tile.origin and back.source_id == "f"
