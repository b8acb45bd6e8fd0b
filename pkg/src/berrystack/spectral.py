"""Hyperspectral cube handling: ingestion, white/dark reflectance calibration,
mask-averaged class spectra, and data-driven selection of the two acquisition
wavelengths (one visible, one near-infrared)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import FormatError
from .ioutil import atomic_write_bytes, atomic_write_text, read_keyvalue

INSTRUMENT_RANGE = (600.0, 975.0)
RIPENESS_CLASSES = (0, 1, 2, 3, 4)  # raw, unripe, near ripe, ripe, overripe
DEFAULT_VISIBLE_RANGE = (600.0, 750.0)  # half-open [lo, hi)
DEFAULT_NIR_RANGE = (750.0, 975.0)  # closed [lo, hi]

_HEADER_KEYS = {"width", "height", "bands", "wavelengths", "byte_order", "dtype"}


@dataclass
class HyperspectralCube:
    """A width x height x bands reflectance grid with per-band wavelengths in nm.

    `reflectance` is stored band-sequentially as (bands, height, width).
    Wavelengths must be finite, strictly increasing, and inside
    `wavelength_limits` (pass None to lift the instrument-range check).
    """

    wavelengths: np.ndarray
    reflectance: np.ndarray
    wavelength_limits: tuple[float, float] | None = field(
        default=INSTRUMENT_RANGE, repr=False, compare=False
    )

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=float)
        self.reflectance = np.asarray(self.reflectance, dtype=float)
        if self.wavelengths.ndim != 1 or self.wavelengths.size == 0:
            raise ValueError("wavelengths must be a nonempty 1-D array")
        if self.reflectance.ndim != 3:
            raise ValueError("reflectance must be (bands, height, width)")
        if self.reflectance.shape[0] != self.wavelengths.size:
            raise ValueError(
                f"{self.reflectance.shape[0]} bands but {self.wavelengths.size} wavelengths"
            )
        if not np.all(np.isfinite(self.wavelengths)):
            raise ValueError("wavelengths must be finite")
        if not np.all(np.diff(self.wavelengths) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if self.wavelength_limits is not None:
            lo, hi = self.wavelength_limits
            if self.wavelengths[0] < lo or self.wavelengths[-1] > hi:
                raise ValueError(
                    f"wavelengths outside [{lo}, {hi}] nm; pass wavelength_limits=None to override"
                )
        if not np.all(np.isfinite(self.reflectance)):
            raise ValueError("reflectance values must be finite")

    @property
    def bands(self) -> int:
        return self.reflectance.shape[0]

    @property
    def height(self) -> int:
        return self.reflectance.shape[1]

    @property
    def width(self) -> int:
        return self.reflectance.shape[2]


@dataclass
class SegmentationMask:
    """Per-pixel membership raster for one fruit class."""

    membership: np.ndarray

    def __post_init__(self):
        self.membership = np.asarray(self.membership, dtype=bool)
        if self.membership.ndim != 2:
            raise ValueError("mask must be 2-D")

    @property
    def pixel_count(self) -> int:
        return int(self.membership.sum())


@dataclass
class ClassSpectrum:
    """Mean reflectance per wavelength for one ripeness class."""

    ripeness_class: int
    wavelengths: np.ndarray
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if self.ripeness_class not in RIPENESS_CLASSES:
            raise ValueError(f"ripeness class must be in {RIPENESS_CLASSES}")
        self.wavelengths = np.asarray(self.wavelengths, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.wavelengths.shape:
            raise ValueError("values and wavelengths must align")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrum values must be finite")
        if self.normalized and (self.values.min() < -1e-12 or self.values.max() > 1.0 + 1e-12):
            raise ValueError("normalized spectrum values must lie in [0, 1]")


@dataclass
class WavelengthPair:
    """The chosen visible and near-infrared acquisition wavelengths in nm."""

    visible_nm: float
    nir_nm: float

    def __post_init__(self):
        if not self.visible_nm < self.nir_nm:
            raise ValueError("visible wavelength must be below the NIR wavelength")


def load_cube(
    header_path: str | os.PathLike,
    data_path: str | os.PathLike,
    wavelength_limits: tuple[float, float] | None = INSTRUMENT_RANGE,
) -> HyperspectralCube:
    """Read a cube from its plain-text header and band-sequential float32 data file."""
    header = read_keyvalue(header_path)
    unknown = set(header) - _HEADER_KEYS
    if unknown:
        raise FormatError(f"{header_path}: unknown header keys {sorted(unknown)}")
    missing = _HEADER_KEYS - set(header)
    if missing:
        raise FormatError(f"{header_path}: missing header keys {sorted(missing)}")
    try:
        width = int(header["width"])
        height = int(header["height"])
        bands = int(header["bands"])
        wavelengths = np.array([float(v) for v in header["wavelengths"].split(",")])
    except ValueError as exc:
        raise FormatError(f"{header_path}: malformed numeric field: {exc}") from exc
    if width <= 0 or height <= 0 or bands <= 0:
        raise FormatError(f"{header_path}: dimensions must be positive")
    if header["byte_order"] != "little-endian":
        raise FormatError(f"{header_path}: unsupported byte_order {header['byte_order']!r}")
    if header["dtype"] != "float32":
        raise FormatError(f"{header_path}: unsupported dtype {header['dtype']!r}")
    if wavelengths.size != bands:
        raise FormatError(
            f"{header_path}: {wavelengths.size} wavelengths listed for {bands} bands"
        )
    if not np.all(np.diff(wavelengths) > 0):
        raise FormatError(f"{header_path}: wavelengths must be strictly increasing")

    try:
        raw = Path(data_path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read cube data {data_path}: {exc}") from exc
    expected = width * height * bands * 4
    if len(raw) != expected:
        raise FormatError(
            f"{data_path}: expected {expected} bytes ({bands}x{height}x{width} float32), "
            f"got {len(raw)}"
        )
    values = np.frombuffer(raw, dtype="<f4").astype(float).reshape(bands, height, width)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{data_path}: non-finite reflectance values")
    return HyperspectralCube(wavelengths, values, wavelength_limits)


def save_cube(
    header_path: str | os.PathLike, data_path: str | os.PathLike, cube: HyperspectralCube
) -> None:
    """Write a cube in the same header + band-sequential binary layout load_cube reads."""
    header = (
        f"width={cube.width}\n"
        f"height={cube.height}\n"
        f"bands={cube.bands}\n"
        f"wavelengths={','.join(format(w, 'g') for w in cube.wavelengths)}\n"
        "byte_order=little-endian\n"
        "dtype=float32\n"
    )
    atomic_write_text(header_path, header)
    atomic_write_bytes(data_path, np.ascontiguousarray(cube.reflectance, dtype="<f4").tobytes())


def calibrate(
    raw: HyperspectralCube, white: HyperspectralCube, dark: HyperspectralCube
) -> HyperspectralCube:
    """Per-element reflectance (raw - dark) / (white - dark); 0 where white equals dark."""
    for name, other in (("white", white), ("dark", dark)):
        if other.reflectance.shape != raw.reflectance.shape:
            raise ValueError(f"{name} reference dimensions do not match the raw cube")
        if not np.array_equal(other.wavelengths, raw.wavelengths):
            raise ValueError(f"{name} reference wavelengths do not match the raw cube")
    numerator = raw.reflectance - dark.reflectance
    denominator = white.reflectance - dark.reflectance
    out = np.zeros_like(numerator)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return HyperspectralCube(raw.wavelengths.copy(), out, wavelength_limits=raw.wavelength_limits)


def mean_spectrum(
    cube: HyperspectralCube, mask: SegmentationMask, ripeness_class: int
) -> ClassSpectrum:
    """Arithmetic mean over the masked pixels, band by band."""
    if mask.membership.shape != (cube.height, cube.width):
        raise ValueError(
            f"mask shape {mask.membership.shape} does not match cube "
            f"{(cube.height, cube.width)}"
        )
    if not mask.membership.any():
        raise ValueError("mask selects no pixels")
    values = cube.reflectance[:, mask.membership].mean(axis=1)
    return ClassSpectrum(ripeness_class, cube.wavelengths.copy(), values, normalized=False)


def normalize_spectrum(spectrum: ClassSpectrum) -> ClassSpectrum:
    """Min-max scale the spectrum to [0, 1]."""
    lo = float(spectrum.values.min())
    hi = float(spectrum.values.max())
    if hi == lo:
        raise ValueError("constant spectrum cannot be min-max normalized")
    return ClassSpectrum(
        spectrum.ripeness_class,
        spectrum.wavelengths.copy(),
        (spectrum.values - lo) / (hi - lo),
        normalized=True,
    )


def _spectrum_for(spectra: list[ClassSpectrum], ripeness_class: int) -> ClassSpectrum:
    for spectrum in spectra:
        if spectrum.ripeness_class == ripeness_class:
            return spectrum
    raise ValueError(f"no spectrum provided for ripeness class {ripeness_class}")


def _common_grid(spectra: list[ClassSpectrum]) -> np.ndarray:
    grid = spectra[0].wavelengths
    for spectrum in spectra:
        if not spectrum.normalized:
            raise ValueError("spectra must be normalized before comparison")
        if not np.array_equal(spectrum.wavelengths, grid):
            raise ValueError("spectra must share a common wavelength grid")
    return grid


def class_separation(
    spectra: list[ClassSpectrum], class_a: int, class_b: int
) -> np.ndarray:
    """Absolute reflectance difference |R_a - R_b| per wavelength."""
    a = _spectrum_for(spectra, class_a)
    b = _spectrum_for(spectra, class_b)
    _common_grid([a, b])
    return np.abs(a.values - b.values)


def select_wavelengths(
    spectra: list[ClassSpectrum],
    visible_range: tuple[float, float] = DEFAULT_VISIBLE_RANGE,
    nir_range: tuple[float, float] = DEFAULT_NIR_RANGE,
) -> WavelengthPair:
    """Pick one acquisition wavelength per spectral region.

    NIR ([lo, hi]): the wavelength maximizing the near-ripe vs ripe separation,
    the pair that is hardest to tell apart at maturity. Visible ([lo, hi)): the
    wavelength maximizing the minimum pairwise separation across every class pair,
    so all ripeness levels stay distinguishable. Ties break toward the lower
    wavelength.
    """
    if visible_range[1] > nir_range[0]:
        raise ValueError("visible and NIR ranges must not overlap")
    if len(spectra) < 2:
        raise ValueError("need at least two class spectra")
    grid = _common_grid(spectra)

    visible_idx = np.flatnonzero((grid >= visible_range[0]) & (grid < visible_range[1]))
    nir_idx = np.flatnonzero((grid >= nir_range[0]) & (grid <= nir_range[1]))
    if visible_idx.size == 0:
        raise ValueError("visible range contains no cube wavelengths")
    if nir_idx.size == 0:
        raise ValueError("NIR range contains no cube wavelengths")

    nir_score = class_separation(spectra, 2, 3)
    nir_pick = nir_idx[int(np.argmax(nir_score[nir_idx]))]  # argmax takes the first = lowest

    classes = sorted({s.ripeness_class for s in spectra})
    pair_scores = np.stack(
        [class_separation(spectra, a, b) for a, b in combinations(classes, 2)]
    )
    visible_score = pair_scores.min(axis=0)
    visible_pick = visible_idx[int(np.argmax(visible_score[visible_idx]))]

    return WavelengthPair(float(grid[visible_pick]), float(grid[nir_pick]))
