import numpy as np
import pytest

from berrystack import (
    AugmentationSpec,
    BispectralSample,
    FormatError,
    LabeledDataset,
    StereoFrame,
    augment,
    bootstrap_subset,
    crop_resize,
    hist_equalize,
    load_dataset,
    make_bispectral_dataset,
    pseudo_colour,
    random_oversample,
    save_dataset,
    split_stereo,
    stratified_split,
)
from berrystack.data import RIPE, UNRIPE, bilinear_resize


def make_sample(fill700=0.5, fill770=0.5, label=RIPE, berry_id="b0"):
    return BispectralSample(
        np.full((32, 32, 3), fill700),
        np.full((32, 32, 3), fill770),
        label,
        berry_id,
    )


def synthetic_dataset(n_ripe, n_unripe, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_ripe + n_unripe):
        label = RIPE if i < n_ripe else UNRIPE
        fill = float(rng.uniform(0.2, 0.8))
        samples.append(make_sample(fill, fill, label, berry_id=f"s{i:04d}"))
    return LabeledDataset(samples)


class TestSplitStereo:
    def test_halves_64_wide_frame(self):
        frame = StereoFrame(np.zeros((32, 64), np.uint8), "b1")
        left, right = split_stereo(frame)
        assert left.shape == (32, 32) and right.shape == (32, 32)

    def test_left_and_right_content(self):
        pixels = np.zeros((32, 64), np.uint8)
        pixels[:, 32:] = 255
        left, right = split_stereo(StereoFrame(pixels, "b2"))
        assert left.max() == 0 and right.min() == 255

    def test_odd_width_rejected(self):
        with pytest.raises(FormatError, match="odd"):
            split_stereo(np.zeros((32, 63), np.uint8))
        with pytest.raises(FormatError, match="odd"):
            StereoFrame(np.zeros((32, 63), np.uint8), "b3")


class TestCropResize:
    def test_exact_region_is_identity(self):
        rng = np.random.default_rng(0)
        image = rng.uniform(size=(40, 40))
        out = crop_resize(image, (4, 6, 32, 32))
        np.testing.assert_array_equal(out, image[4:36, 6:38])

    def test_constant_region_stays_constant(self):
        out = crop_resize(np.full((50, 50), 0.3), (0, 0, 50, 50))
        np.testing.assert_allclose(out, 0.3, atol=1e-15)

    def test_checkerboard_mean_preserved(self):
        board = np.indices((64, 64)).sum(axis=0) % 2
        out = crop_resize(board.astype(float), (0, 0, 64, 64))
        assert out.shape == (32, 32)
        assert abs(out.mean() - board.mean()) <= 1 / 255
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_out_of_bounds_bbox_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            crop_resize(np.zeros((40, 40)), (20, 20, 32, 32))

    def test_empty_bbox_rejected(self):
        with pytest.raises(ValueError, match="area"):
            crop_resize(np.zeros((40, 40)), (0, 0, 0, 5))


class TestHistEqualize:
    def test_constant_image_unchanged(self):
        image = np.full((10, 10), 0.4)
        np.testing.assert_array_equal(hist_equalize(image), image)

    def test_balanced_two_level_image_unchanged(self):
        image = np.zeros((4, 4), np.uint8)
        image[:, 2:] = 255
        np.testing.assert_array_equal(hist_equalize(image), image)

    def test_flattens_cdf_on_random_images(self):
        # equalization must not move the level CDF further from uniform
        def cdf_deviation(levels):
            hist = np.bincount(levels.ravel(), minlength=256)
            cdf = np.cumsum(hist) / levels.size
            uniform = (np.arange(256) + 1) / 256
            return np.max(np.abs(cdf - uniform))

        rng = np.random.default_rng(3)
        for _ in range(20):
            # skewed images: squashed uniform noise
            image = (rng.uniform(size=(32, 32)) ** 2 * 0.6).astype(float)
            out = hist_equalize(image)
            before = cdf_deviation(np.rint(image * 255).astype(np.uint8))
            after = cdf_deviation(np.rint(out * 255).astype(np.uint8))
            assert after <= before + 1e-12

    def test_uint8_in_uint8_out(self):
        image = np.array([[0, 10], [20, 255]], np.uint8)
        assert hist_equalize(image).dtype == np.uint8

    def test_float_output_stays_in_range(self):
        rng = np.random.default_rng(4)
        out = hist_equalize(rng.uniform(size=(16, 16)))
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestPseudoColour:
    def test_replicates_constant_band(self):
        out = pseudo_colour(np.full((32, 32), 0.5))
        assert out.shape == (32, 32, 3)
        np.testing.assert_array_equal(out, 0.5)

    def test_channels_identical_for_gradient(self):
        band = np.linspace(0, 1, 32 * 32).reshape(32, 32)
        out = pseudo_colour(band)
        np.testing.assert_array_equal(out[:, :, 0], out[:, :, 1])
        np.testing.assert_array_equal(out[:, :, 1], out[:, :, 2])
        np.testing.assert_array_equal(out[:, :, 0], band)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError, match="32x32"):
            pseudo_colour(np.zeros((16, 16)))


class TestStratifiedSplit:
    def test_paper_scale_counts(self):
        dataset = synthetic_dataset(164, 37)
        train, val, test = stratified_split(dataset, seed=5)
        assert train.class_counts == {RIPE: 98, UNRIPE: 22}
        assert val.class_counts == {RIPE: 32, UNRIPE: 7}
        assert test.class_counts == {RIPE: 34, UNRIPE: 8}

    def test_balanced_exact_ratios(self):
        dataset = synthetic_dataset(10, 10)
        train, val, test = stratified_split(dataset, seed=1)
        assert train.class_counts == {RIPE: 6, UNRIPE: 6}
        assert val.class_counts == {RIPE: 2, UNRIPE: 2}
        assert test.class_counts == {RIPE: 2, UNRIPE: 2}

    def test_same_seed_same_membership(self):
        dataset = synthetic_dataset(20, 9)
        first = stratified_split(dataset, seed=3)
        second = stratified_split(dataset, seed=3)
        for a, b in zip(first, second):
            assert [s.berry_id for s in a.samples] == [s.berry_id for s in b.samples]

    def test_partition_property(self):
        dataset = synthetic_dataset(23, 11)
        splits = stratified_split(dataset, seed=7)
        ids = [s.berry_id for split in splits for s in split.samples]
        assert sorted(ids) == sorted(s.berry_id for s in dataset.samples)
        assert len(set(ids)) == len(ids)

    def test_per_class_counts_add_up(self):
        dataset = synthetic_dataset(31, 13)
        splits = stratified_split(dataset, seed=2)
        for label in (RIPE, UNRIPE):
            total = sum(split.class_counts.get(label, 0) for split in splits)
            assert total == dataset.class_counts[label]

    def test_small_class_rejected(self):
        dataset = synthetic_dataset(5, 2)
        with pytest.raises(ValueError, match="at least 3"):
            stratified_split(dataset)


class TestRandomOversample:
    def test_paper_scale_balances(self):
        dataset = synthetic_dataset(164, 37)
        out = random_oversample(dataset, seed=4)
        assert out.class_counts == {RIPE: 164, UNRIPE: 164}

    def test_already_balanced_is_noop(self):
        dataset = synthetic_dataset(8, 8)
        out = random_oversample(dataset, seed=4)
        assert [s.berry_id for s in out.samples] == [s.berry_id for s in dataset.samples]

    def test_duplicates_are_copies_of_inputs(self):
        dataset = synthetic_dataset(20, 6)
        out = random_oversample(dataset, seed=9)
        minority_ids = {s.berry_id for s in dataset.samples if s.label == UNRIPE}
        for extra in out.samples[len(dataset) :]:
            assert extra.label == UNRIPE
            assert extra.berry_id in minority_ids

    def test_originals_retained_in_order(self):
        dataset = synthetic_dataset(20, 6)
        out = random_oversample(dataset, seed=9)
        assert [s.berry_id for s in out.samples[: len(dataset)]] == [
            s.berry_id for s in dataset.samples
        ]

    def test_single_class_rejected(self):
        dataset = synthetic_dataset(5, 0)
        with pytest.raises(ValueError, match="both classes"):
            random_oversample(dataset)


class TestBootstrapSubset:
    def test_singleton_input(self):
        dataset = LabeledDataset([make_sample()])
        out = bootstrap_subset(dataset, seed=0)
        assert len(out) == 1 and out.samples[0].berry_id == "b0"

    def test_size_preserved(self):
        dataset = synthetic_dataset(13, 7)
        for seed in range(5):
            assert len(bootstrap_subset(dataset, seed=seed)) == 20

    def test_unique_fraction_near_limit(self):
        dataset = synthetic_dataset(150, 50)
        fractions = []
        for seed in range(1000):
            subset = bootstrap_subset(dataset, seed=seed)
            fractions.append(len({s.berry_id for s in subset.samples}) / 200)
        assert abs(np.mean(fractions) - 0.632) <= 0.02


class TestAugment:
    def identity_spec(self):
        return AugmentationSpec(0.0, (1.0, 1.0), (1.0, 1.0), seed=0)

    def test_identity_parameters_are_identity(self):
        sample = make_sample(0.3, 0.6)
        out = augment(sample, self.identity_spec(), seed=123)
        np.testing.assert_array_equal(out.band700, sample.band700)
        np.testing.assert_array_equal(out.band770, sample.band770)

    def test_fixed_brightness_scales_values(self):
        sample = make_sample(0.8, 0.8)
        spec = AugmentationSpec(0.0, (1.0, 1.0), (0.5, 0.5), seed=0)
        out = augment(sample, spec, seed=1)
        np.testing.assert_allclose(out.band700, 0.4, atol=1e-12)
        np.testing.assert_allclose(out.band770, 0.4, atol=1e-12)

    def test_both_bands_share_the_drawn_parameters(self):
        # identical input bands must stay identical under any shared transform
        rng = np.random.default_rng(5)
        band = pseudo_colour(rng.uniform(size=(32, 32)))
        sample = BispectralSample(band, band.copy(), RIPE, "twin")
        spec = AugmentationSpec(25.0, (0.5, 1.5), (0.4, 1.3), seed=0)
        for seed in range(5):
            out = augment(sample, spec, seed=seed)
            np.testing.assert_array_equal(out.band700, out.band770)
            assert not np.array_equal(out.band700, sample.band700)

    def test_same_seed_reproduces(self):
        dataset = make_bispectral_dataset(2, 2, seed=8)
        spec = AugmentationSpec(10.0, (0.2, 1.0), (0.2, 1.0), seed=0)
        a = augment(dataset.samples[0], spec, seed=77)
        b = augment(dataset.samples[0], spec, seed=77)
        np.testing.assert_array_equal(a.band700, b.band700)

    def test_outputs_stay_in_range(self):
        dataset = make_bispectral_dataset(3, 3, seed=2, noise=0.1)
        spec = AugmentationSpec(30.0, (0.2, 2.0), (0.2, 2.0), seed=0)
        for i, sample in enumerate(dataset.samples):
            out = augment(sample, spec, seed=i)
            for band in (out.band700, out.band770):
                assert band.min() >= 0.0 and band.max() <= 1.0

    def test_descending_range_rejected(self):
        with pytest.raises(ValueError, match="zoom_range"):
            AugmentationSpec(0.0, (1.0, 0.2), (1.0, 1.0))


class TestBilinearResize:
    def test_identity_at_same_size(self):
        rng = np.random.default_rng(6)
        image = rng.uniform(size=(32, 32))
        np.testing.assert_array_equal(bilinear_resize(image, 32, 32), image)

    def test_constant_preserved_at_any_size(self):
        image = np.full((10, 10), 0.7)
        np.testing.assert_allclose(bilinear_resize(image, 23, 9), 0.7, atol=1e-15)


class TestManifestRoundTrip:
    def test_save_load_preserves_samples_to_8bit(self, tmp_path):
        dataset = make_bispectral_dataset(3, 2, seed=1)
        manifest = save_dataset(dataset, tmp_path / "ds")
        loaded = load_dataset(manifest)
        assert [s.berry_id for s in loaded.samples] == [s.berry_id for s in dataset.samples]
        assert loaded.labels().tolist() == dataset.labels().tolist()
        for original, reloaded in zip(dataset.samples, loaded.samples):
            np.testing.assert_allclose(original.band700, reloaded.band700, atol=1 / 255 / 2 + 1e-9)

    def test_oversampled_manifest_reuses_images(self, tmp_path):
        dataset = random_oversample(synthetic_dataset(6, 3, seed=2), seed=0)
        manifest = save_dataset(dataset, tmp_path / "over")
        loaded = load_dataset(manifest)
        assert len(loaded) == 12
        assert loaded.class_counts == {RIPE: 6, UNRIPE: 6}

    def test_unknown_columns_rejected(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("a\tb\n1\t2\n")
        with pytest.raises(FormatError, match="columns"):
            load_dataset(bad)
