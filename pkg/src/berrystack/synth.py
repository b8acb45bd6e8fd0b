"""Deterministic synthetic fixtures.

Two generators live here: ripeness spectra with separation peaks planted at
700 nm (visible, all class pairs) and 770 nm (near ripe vs ripe), exposed both
as spectra and as a full cube with per-class masks; and a bispectral image
benchmark whose class signal is the 700/770 intensity ratio of a noisy berry
blob, so it survives common brightness scaling of both bands.
"""

from __future__ import annotations

import numpy as np

from .data import (
    RIPE,
    SAMPLE_SIZE,
    UNRIPE,
    BispectralSample,
    LabeledDataset,
    bilinear_resize,
    pseudo_colour,
)
from .spectral import ClassSpectrum, HyperspectralCube, SegmentationMask


def _bump(wavelengths: np.ndarray, centre: float, halfwidth: float) -> np.ndarray:
    """Compactly supported quadratic bump: 1 at the centre, exactly 0 beyond +/- halfwidth."""
    return np.maximum(0.0, 1.0 - ((wavelengths - centre) / halfwidth) ** 2)


def make_ripeness_spectra(step_nm: float = 5.0) -> list[ClassSpectrum]:
    """Normalized spectra for the five ripeness classes on a 600..975 nm grid.

    Construction: a shared 0-to-1 ramp, plus a visible bump at 700 nm whose height
    grows with the class index (separating every class pair there), plus opposite
    NIR bumps at 770 nm on the near-ripe and ripe classes only. Every spectrum
    spans exactly [0, 1], so min-max normalization is the identity on them.
    """
    grid = np.arange(600.0, 975.0 + step_nm / 2, step_nm)
    ramp = (grid - 600.0) / 375.0
    visible = _bump(grid, 700.0, 45.0)
    nir = _bump(grid, 770.0, 40.0)
    spectra = []
    for ripeness_class in range(5):
        values = ramp + 0.08 * ripeness_class * visible
        if ripeness_class == 2:
            values = values + 0.15 * nir
        elif ripeness_class == 3:
            values = values - 0.15 * nir
        spectra.append(ClassSpectrum(ripeness_class, grid, values, normalized=True))
    return spectra


def make_ripeness_cube(
    step_nm: float = 5.0, block_rows: int = 4, width: int = 20
) -> tuple[HyperspectralCube, dict[int, SegmentationMask]]:
    """A cube whose pixels carry an affine transform (0.1 + 0.7 * s) of the planted
    spectra, one horizontal block of rows per class, plus the per-class masks."""
    spectra = make_ripeness_spectra(step_nm)
    bands = spectra[0].wavelengths.size
    height = 5 * block_rows
    reflectance = np.zeros((bands, height, width))
    masks: dict[int, SegmentationMask] = {}
    for spectrum in spectra:
        start = spectrum.ripeness_class * block_rows
        rows = slice(start, start + block_rows)
        reflectance[:, rows, :] = (0.1 + 0.7 * spectrum.values)[:, None, None]
        membership = np.zeros((height, width), dtype=bool)
        membership[rows, :] = True
        masks[spectrum.ripeness_class] = SegmentationMask(membership)
    cube = HyperspectralCube(spectra[0].wavelengths.copy(), reflectance)
    return cube, masks


# Band gains: unripe berries reflect more at 770 nm than at 700 nm, ripe ones the
# reverse, so the class signal lives in the between-band ratio.
_GAINS = {RIPE: (0.55, 0.36), UNRIPE: (0.42, 0.67)}


def _berry_images(rng: np.random.Generator, label: int, noise: float) -> tuple[np.ndarray, np.ndarray]:
    size = SAMPLE_SIZE
    centre = (size - 1) / 2.0 + rng.uniform(-2.0, 2.0, size=2)
    radius = rng.uniform(9.0, 12.0)
    rows, cols = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float), indexing="ij")
    distance = np.sqrt((rows - centre[0]) ** 2 + (cols - centre[1]) ** 2)
    blob = np.clip((radius - distance) / 2.0 + 0.5, 0.0, 1.0)
    texture = bilinear_resize(rng.uniform(0.55, 1.0, size=(8, 8)), size, size)
    pattern = blob * texture + 0.04

    lighting = rng.uniform(0.75, 1.1)  # common to both bands, like field illumination
    gain700, gain770 = _GAINS[label]
    jitter700, jitter770 = rng.uniform(0.93, 1.07, size=2)
    band700 = lighting * gain700 * jitter700 * pattern + rng.normal(0.0, noise, size=(size, size))
    band770 = lighting * gain770 * jitter770 * pattern + rng.normal(0.0, noise, size=(size, size))
    return np.clip(band700, 0.0, 1.0), np.clip(band770, 0.0, 1.0)


def make_bispectral_dataset(
    n_ripe: int,
    n_unripe: int,
    seed: int = 0,
    noise: float = 0.02,
    farm: str = "synthetic",
) -> LabeledDataset:
    """Seeded benchmark dataset of labeled 32x32x3 band pairs."""
    if n_ripe < 0 or n_unripe < 0 or n_ripe + n_unripe == 0:
        raise ValueError("need a positive number of samples")
    rng = np.random.default_rng(seed)
    samples = []
    spec = [(RIPE, n_ripe), (UNRIPE, n_unripe)]
    index = 0
    for label, count in spec:
        for _ in range(count):
            band700, band770 = _berry_images(rng, label, noise)
            samples.append(
                BispectralSample(
                    pseudo_colour(band700),
                    pseudo_colour(band770),
                    label,
                    berry_id=f"synth-{index:04d}",
                    source_farm=farm,
                )
            )
            index += 1
    return LabeledDataset(samples)
