import numpy as np
import pytest

from berrystack import (
    ClassSpectrum,
    FormatError,
    HyperspectralCube,
    SegmentationMask,
    WavelengthPair,
    calibrate,
    class_separation,
    load_cube,
    make_ripeness_cube,
    make_ripeness_spectra,
    mean_spectrum,
    normalize_spectrum,
    save_cube,
    select_wavelengths,
)


def tiny_cube(values, wavelengths=(600.0, 700.0, 900.0)):
    values = np.asarray(values, dtype=float)
    return HyperspectralCube(np.asarray(wavelengths), values)


class TestCubeFiles:
    def write(self, tmp_path, cube, name="cube"):
        header = tmp_path / f"{name}.hdr"
        data = tmp_path / f"{name}.dat"
        save_cube(header, data, cube)
        return header, data

    def test_round_trip(self, tmp_path):
        cube = tiny_cube(np.arange(12, dtype=float).reshape(3, 2, 2) / 16.0)
        header, data = self.write(tmp_path, cube)
        loaded = load_cube(header, data)
        np.testing.assert_array_equal(loaded.wavelengths, cube.wavelengths)
        np.testing.assert_allclose(loaded.reflectance, cube.reflectance, atol=1e-7)
        assert loaded.reflectance.shape == (3, 2, 2)

    def test_truncated_data_names_byte_counts(self, tmp_path):
        cube = tiny_cube(np.zeros((3, 2, 2)))
        header, data = self.write(tmp_path, cube)
        data.write_bytes(data.read_bytes()[:-4])
        with pytest.raises(FormatError, match="expected 48 bytes.*got 44"):
            load_cube(header, data)

    def test_duplicate_wavelength_rejected(self, tmp_path):
        cube = tiny_cube(np.zeros((3, 2, 2)))
        header, data = self.write(tmp_path, cube)
        text = header.read_text().replace("600,700,900", "600,700,700")
        header.write_text(text)
        with pytest.raises(FormatError, match="increasing"):
            load_cube(header, data)

    def test_band_count_mismatch_rejected(self, tmp_path):
        cube = tiny_cube(np.zeros((3, 2, 2)))
        header, data = self.write(tmp_path, cube)
        header.write_text(header.read_text().replace("bands=3", "bands=2"))
        with pytest.raises(FormatError):
            load_cube(header, data)

    def test_instrument_range_enforced_unless_overridden(self, tmp_path):
        values = np.zeros((2, 1, 1))
        cube = HyperspectralCube(np.array([500.0, 700.0]), values, wavelength_limits=None)
        header, data = self.write(tmp_path, cube)
        with pytest.raises(ValueError, match="override"):
            load_cube(header, data)
        loaded = load_cube(header, data, wavelength_limits=None)
        assert loaded.wavelengths[0] == 500.0


class TestCalibrate:
    def test_raw_equals_white_gives_ones(self):
        raw = tiny_cube(np.full((3, 2, 2), 0.7))
        dark = tiny_cube(np.full((3, 2, 2), 0.1))
        out = calibrate(raw, raw, dark)
        np.testing.assert_array_equal(out.reflectance, np.ones((3, 2, 2)))

    def test_raw_equals_dark_gives_zeros(self):
        raw = tiny_cube(np.full((3, 2, 2), 0.1))
        white = tiny_cube(np.full((3, 2, 2), 0.9))
        out = calibrate(raw, white, raw)
        np.testing.assert_array_equal(out.reflectance, np.zeros((3, 2, 2)))

    def test_hand_value(self):
        raw = tiny_cube(np.full((3, 2, 2), 0.5))
        dark = tiny_cube(np.full((3, 2, 2), 0.1))
        white = tiny_cube(np.full((3, 2, 2), 0.9))
        out = calibrate(raw, white, dark)
        np.testing.assert_allclose(out.reflectance, 0.5, atol=1e-15)

    def test_white_equals_dark_pixels_become_zero(self):
        raw = tiny_cube(np.full((3, 2, 2), 0.5))
        flat = tiny_cube(np.full((3, 2, 2), 0.2))
        out = calibrate(raw, flat, flat)
        np.testing.assert_array_equal(out.reflectance, np.zeros((3, 2, 2)))

    def test_dimension_mismatch(self):
        raw = tiny_cube(np.zeros((3, 2, 2)))
        small = HyperspectralCube(raw.wavelengths, np.zeros((3, 1, 2)))
        with pytest.raises(ValueError, match="dimensions"):
            calibrate(raw, small, raw)

    def test_affine_invariance_under_common_scaling(self):
        rng = np.random.default_rng(1)
        raw = tiny_cube(rng.uniform(0.2, 0.8, size=(3, 2, 2)))
        white = tiny_cube(rng.uniform(0.85, 1.0, size=(3, 2, 2)))
        dark = tiny_cube(rng.uniform(0.0, 0.1, size=(3, 2, 2)))
        base = calibrate(raw, white, dark)
        for factor in (0.5, 3.0, 17.0):
            scaled = calibrate(
                tiny_cube(raw.reflectance * factor),
                tiny_cube(white.reflectance * factor),
                tiny_cube(dark.reflectance * factor),
            )
            np.testing.assert_allclose(scaled.reflectance, base.reflectance, atol=1e-12)


class TestMeanSpectrum:
    def test_single_pixel_mask(self):
        cube = tiny_cube(np.arange(12, dtype=float).reshape(3, 2, 2))
        mask = np.zeros((2, 2), dtype=bool)
        mask[1, 0] = True
        spectrum = mean_spectrum(cube, SegmentationMask(mask), 2)
        np.testing.assert_array_equal(spectrum.values, cube.reflectance[:, 1, 0])

    def test_two_pixel_average(self):
        values = np.zeros((3, 1, 2))
        values[:, 0, 0] = 0.2
        values[:, 0, 1] = 0.4
        spectrum = mean_spectrum(tiny_cube(values), SegmentationMask(np.ones((1, 2), bool)), 0)
        np.testing.assert_allclose(spectrum.values, 0.3, atol=1e-15)

    def test_constant_cube_full_mask(self):
        cube = tiny_cube(np.full((3, 2, 2), 0.42))
        spectrum = mean_spectrum(cube, SegmentationMask(np.ones((2, 2), bool)), 4)
        np.testing.assert_array_equal(spectrum.values, [0.42] * 3)

    def test_empty_mask_rejected(self):
        cube = tiny_cube(np.zeros((3, 2, 2)))
        with pytest.raises(ValueError, match="no pixels"):
            mean_spectrum(cube, SegmentationMask(np.zeros((2, 2), bool)), 0)

    def test_disjoint_union_is_count_weighted_mean(self):
        rng = np.random.default_rng(2)
        cube = tiny_cube(rng.uniform(size=(3, 4, 4)))
        mask_a = np.zeros((4, 4), bool)
        mask_a[:1] = True  # 4 pixels
        mask_b = np.zeros((4, 4), bool)
        mask_b[1:] = True  # 12 pixels
        union = SegmentationMask(mask_a | mask_b)
        spectrum_a = mean_spectrum(cube, SegmentationMask(mask_a), 0).values
        spectrum_b = mean_spectrum(cube, SegmentationMask(mask_b), 0).values
        merged = mean_spectrum(cube, union, 0).values
        np.testing.assert_allclose(merged, (4 * spectrum_a + 12 * spectrum_b) / 16, atol=1e-12)


class TestNormalizeSpectrum:
    def test_three_point_hand_case(self):
        spectrum = ClassSpectrum(1, [600.0, 700.0, 900.0], [0.1, 0.5, 0.9])
        out = normalize_spectrum(spectrum)
        np.testing.assert_allclose(out.values, [0.0, 0.5, 1.0], atol=1e-15)
        assert out.normalized

    def test_full_span_keeps_extremes(self):
        spectrum = ClassSpectrum(1, [600.0, 700.0, 900.0], [0.0, 0.25, 1.0])
        out = normalize_spectrum(spectrum)
        assert out.values[0] == 0.0 and out.values[-1] == 1.0

    def test_constant_spectrum_rejected(self):
        spectrum = ClassSpectrum(1, [600.0, 700.0], [0.4, 0.4])
        with pytest.raises(ValueError, match="constant"):
            normalize_spectrum(spectrum)


def flat_spectrum(ripeness_class, values, wavelengths):
    return ClassSpectrum(ripeness_class, wavelengths, values, normalized=True)


class TestClassSeparation:
    grid = np.array([600.0, 700.0, 770.0, 900.0])

    def test_identical_spectra_score_zero(self):
        a = flat_spectrum(2, [0.0, 0.5, 0.5, 1.0], self.grid)
        b = flat_spectrum(3, [0.0, 0.5, 0.5, 1.0], self.grid)
        np.testing.assert_array_equal(class_separation([a, b], 2, 3), np.zeros(4))

    def test_single_band_difference(self):
        a = flat_spectrum(2, [0.0, 0.5, 0.8, 1.0], self.grid)
        b = flat_spectrum(3, [0.0, 0.5, 0.5, 1.0], self.grid)
        np.testing.assert_allclose(class_separation([a, b], 2, 3), [0, 0, 0.3, 0], atol=1e-15)

    def test_symmetric_in_class_arguments(self):
        spectra = make_ripeness_spectra()
        np.testing.assert_array_equal(
            class_separation(spectra, 1, 4), class_separation(spectra, 4, 1)
        )

    def test_planted_bump_peaks_at_770(self):
        spectra = make_ripeness_spectra()
        scores = class_separation(spectra, 2, 3)
        assert spectra[0].wavelengths[np.argmax(scores)] == 770.0

    def test_missing_class_rejected(self):
        a = flat_spectrum(2, [0.0, 0.5, 0.5, 1.0], self.grid)
        with pytest.raises(ValueError, match="class 3"):
            class_separation([a], 2, 3)

    def test_unnormalized_rejected(self):
        a = ClassSpectrum(2, self.grid, [0.0, 0.5, 0.5, 1.0])
        b = ClassSpectrum(3, self.grid, [0.0, 0.5, 0.5, 1.0])
        with pytest.raises(ValueError, match="normalized"):
            class_separation([a, b], 2, 3)


class TestSelectWavelengths:
    def test_planted_spectra_select_700_770(self):
        pair = select_wavelengths(make_ripeness_spectra())
        assert (pair.visible_nm, pair.nir_nm) == (700.0, 770.0)

    def test_single_band_per_range(self):
        grid = np.array([700.0, 770.0])
        spectra = [
            flat_spectrum(c, [0.1 * c, 1.0 - 0.1 * c], grid) for c in range(5)
        ]
        pair = select_wavelengths(spectra)
        assert (pair.visible_nm, pair.nir_nm) == (700.0, 770.0)

    def test_nir_tie_breaks_to_lower_wavelength(self):
        grid = np.array([700.0, 760.0, 780.0])
        spectra = [flat_spectrum(c, [0.2 * c, 0.0, 0.0], grid) for c in (0, 1, 4)]
        spectra.append(flat_spectrum(2, [0.4, 0.5, 0.5], grid))
        spectra.append(flat_spectrum(3, [0.6, 0.2, 0.2], grid))
        pair = select_wavelengths(spectra)
        assert pair.nir_nm == 760.0

    def test_range_without_bands_rejected(self):
        grid = np.array([700.0, 770.0])
        spectra = [flat_spectrum(c, [0.1 * c, 1 - 0.1 * c], grid) for c in range(5)]
        with pytest.raises(ValueError, match="no cube wavelengths"):
            select_wavelengths(spectra, visible_range=(600.0, 650.0))

    def test_common_offset_does_not_move_argmax(self):
        spectra = make_ripeness_spectra()
        baseline = select_wavelengths(spectra)
        shifted = [
            ClassSpectrum(s.ripeness_class, s.wavelengths, 0.5 * s.values + 0.2, normalized=True)
            for s in spectra
        ]
        pair = select_wavelengths(shifted)
        assert (pair.visible_nm, pair.nir_nm) == (baseline.visible_nm, baseline.nir_nm)

    def test_full_cube_pipeline_returns_exact_pair(self):
        cube, masks = make_ripeness_cube()
        spectra = [
            normalize_spectrum(mean_spectrum(cube, masks[c], c)) for c in range(5)
        ]
        pair = select_wavelengths(spectra)
        assert (pair.visible_nm, pair.nir_nm) == (700.0, 770.0)

    def test_pair_ordering_enforced(self):
        with pytest.raises(ValueError, match="below"):
            WavelengthPair(800.0, 700.0)
