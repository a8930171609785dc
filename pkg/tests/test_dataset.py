import numpy as np
import pytest
from PIL import Image

from app.annotations import AnnotationMask
from app.dataset import (
    DatasetError,
    corrupt_annotations,
    corrupt_dataset,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
    subsample,
)
from app.dataset_cache import DatasetCache
from app.schemas import NoiseSpec, SplitSizes
from app.utils.morphology import grow_or_shrink


def test_synthetic_is_deterministic():
    a = generate_synthetic(10, image_size=32, seed=9)
    b = generate_synthetic(10, image_size=32, seed=9)
    for x, y in zip(a, b):
        assert x.id == y.id and x.label == y.label
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask.F, y.mask.F)
        np.testing.assert_array_equal(x.mask.C, y.mask.C)


def test_synthetic_construction_invariants():
    data = generate_synthetic(21, image_size=32, class_count=2, seed=1)
    counts = np.bincount(data.labels)
    assert abs(counts[0] - counts[1]) <= 1
    for sample in data:
        assert sample.image.shape == (1, 32, 32)
        assert 0.0 <= sample.image.min() and sample.image.max() <= 1.0
        assert sample.mask.F_clean.any()
        assert not (sample.mask.F_clean & sample.mask.C_clean).any()


def test_synthetic_rejects_small_images():
    with pytest.raises(ValueError):
        generate_synthetic(2, image_size=16)


def test_zero_noise_is_identity():
    data = generate_synthetic(6, image_size=32, seed=2)
    noisy = corrupt_dataset(data, NoiseSpec(boundary_radius=0, drop_probability=0.0, seed=3))
    for sample in noisy:
        np.testing.assert_array_equal(sample.mask.F, sample.mask.F_clean)
        np.testing.assert_array_equal(sample.mask.C, sample.mask.C_clean)


def test_full_dropout_empties_annotations():
    data = generate_synthetic(4, image_size=32, seed=2)
    noisy = corrupt_dataset(data, NoiseSpec(drop_probability=1.0, seed=0))
    for sample in noisy:
        assert not sample.mask.F.any()
        assert not sample.mask.C.any()
        assert sample.mask.F_clean.any()


def test_dilation_of_square_matches_brute_force():
    f = np.zeros((12, 12), dtype=np.uint8)
    f[0:5, 5:10] = 1  # touches the top border, so the 9x9 result is clipped
    clean = AnnotationMask(f, np.zeros_like(f))
    noisy = corrupt_annotations(clean, NoiseSpec(boundary_radius=2, seed=0))

    expected = np.zeros_like(f)
    for y, x in zip(*np.nonzero(f)):
        expected[max(0, y - 2):y + 3, max(0, x - 2):x + 3] = 1
    np.testing.assert_array_equal(noisy.F, expected)
    assert noisy.F.sum() == 7 * 9


def test_erosion_shrinks_square():
    f = np.zeros((10, 10), dtype=np.uint8)
    f[2:7, 2:7] = 1
    np.testing.assert_array_equal(np.nonzero(grow_or_shrink(f, -1))[0], np.repeat(np.arange(3, 6), 3))


def test_corruption_keeps_masks_disjoint():
    f = np.zeros((10, 10), dtype=np.uint8)
    c = np.zeros_like(f)
    f[2:5, 2:5] = 1
    c[2:5, 5:8] = 1
    noisy = corrupt_annotations(AnnotationMask(f, c), NoiseSpec(boundary_radius=2, seed=0))
    assert not (noisy.F & noisy.C).any()
    assert noisy.C.any()


def test_split_is_disjoint_stratified_and_reproducible():
    data = generate_synthetic(50, image_size=32, seed=4)
    train, val, test = split(data, SplitSizes(train=10, val=20, test=20), seed=1)
    ids = train.ids + val.ids + test.ids
    assert len(set(ids)) == 50
    counts = np.bincount(train.labels, minlength=2)
    assert abs(counts[0] - counts[1]) <= 1
    again = split(data, (10, 20, 20), seed=1)
    assert again[0].ids == train.ids and again[2].ids == test.ids


def test_split_oversubscription_raises():
    data = generate_synthetic(10, image_size=32, seed=4)
    with pytest.raises(ValueError):
        split(data, (5, 5, 5))


def test_subsample_is_stratified_prefix():
    data = generate_synthetic(20, image_size=32, seed=4)
    small = subsample(data, 6)
    assert len(small) == 6
    assert np.bincount(small.labels).tolist() == [3, 3]
    assert subsample(data, 6).ids == small.ids


def test_save_load_roundtrip(tmp_path):
    data = corrupt_dataset(generate_synthetic(5, image_size=32, seed=6), NoiseSpec(boundary_radius=1, seed=1))
    save_dataset(data, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert loaded.ids == data.ids
    for x, y in zip(data, loaded):
        assert x.label == y.label
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask.F, y.mask.F)
        np.testing.assert_array_equal(x.mask.C, y.mask.C)
        np.testing.assert_array_equal(x.mask.F_clean, y.mask.F_clean)


def test_saving_twice_gives_identical_bytes(tmp_path):
    data = generate_synthetic(3, image_size=32, seed=6)
    save_dataset(data, tmp_path / "a")
    save_dataset(data, tmp_path / "b")
    for name in ("images/00000.png", "masks_pos/00002.png", "labels.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def _write_sample_dir(root, with_negatives=True):
    (root / "images").mkdir(parents=True)
    (root / "masks_pos").mkdir()
    if with_negatives:
        (root / "masks_neg").mkdir()
    for i in range(3):
        Image.fromarray(np.full((8, 8, 3), 40 * i, dtype=np.uint8)).save(root / "images" / f"s{i}.png")
        pos = np.zeros((8, 8), dtype=np.uint8)
        pos[:4, :4] = 200
        Image.fromarray(pos).save(root / "masks_pos" / f"s{i}.png")
        if with_negatives:
            neg = np.zeros((8, 8), dtype=np.uint8)
            neg[6:, 6:] = 255
            Image.fromarray(neg).save(root / "masks_neg" / f"s{i}.png")
    (root / "labels.csv").write_text("id,label\ns2,1\ns0,0\ns1,1\n", encoding="utf8")


def test_load_external_directory(tmp_path):
    _write_sample_dir(tmp_path)
    data = load_dataset(tmp_path)
    assert data.ids == ["s0", "s1", "s2"]
    assert data.labels.tolist() == [0, 1, 1]
    assert data.image_shape == (3, 8, 8)
    assert data[0].mask.F.sum() == 16
    assert data[0].mask.C.sum() == 4
    assert not data.has_clean


def test_missing_negative_masks_default_to_empty(tmp_path):
    _write_sample_dir(tmp_path, with_negatives=False)
    assert not any(s.mask.C.any() for s in load_dataset(tmp_path))


def test_mask_size_mismatch_names_the_file(tmp_path):
    _write_sample_dir(tmp_path)
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(tmp_path / "masks_pos" / "s1.png")
    with pytest.raises(DatasetError, match="s1.png"):
        load_dataset(tmp_path)


def test_missing_image_is_reported(tmp_path):
    _write_sample_dir(tmp_path)
    (tmp_path / "images" / "s2.png").unlink()
    with pytest.raises(DatasetError, match="s2.png"):
        load_dataset(tmp_path)


def test_cache_reuses_loaded_dataset(tmp_path):
    _write_sample_dir(tmp_path / "one")
    _write_sample_dir(tmp_path / "two")
    cache = DatasetCache(max_size=1)
    first = cache.get(tmp_path / "one")
    assert cache.get(tmp_path / "one") is first
    cache.get(tmp_path / "two")
    assert len(cache) == 1
    assert (tmp_path / "one") not in cache
