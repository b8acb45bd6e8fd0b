"""Sample preparation and resampling: stereo-frame splitting, crop/resize,
histogram equalization, pseudo-colouring, seeded augmentation, stratified
splitting, random oversampling, and bootstrap subsets.

Band images are float arrays in [0, 1]; every image-producing operation keeps
values inside that range. Label convention: ripe = 0, unripe = 1.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError
from .ioutil import atomic_write_text
from .raster import load_gray8, save_gray8

RIPE = 0
UNRIPE = 1
SAMPLE_SIZE = 32

MANIFEST_COLUMNS = ("berry_id", "farm", "label", "band700", "band770")
STEREO_COLUMNS = ("berry_id", "farm", "label", "frame")


@dataclass
class StereoFrame:
    """One side-by-side capture: the left half is the 700 nm band, the right the 770 nm band."""

    pixels: np.ndarray
    berry_id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2 or self.pixels.dtype != np.uint8:
            raise FormatError(f"stereo frame must be a 2-D uint8 raster, got {self.pixels.shape}")
        height, width = self.pixels.shape
        if width % 2 != 0:
            raise FormatError(f"stereo frame width {width} is odd; cannot split into two bands")
        if width // 2 < SAMPLE_SIZE or height < SAMPLE_SIZE:
            raise FormatError(
                f"stereo frame halves must be at least {SAMPLE_SIZE}x{SAMPLE_SIZE}, "
                f"got {height}x{width // 2}"
            )


@dataclass
class BispectralSample:
    """A labeled pair of 32x32x3 pseudo-coloured band images at 700 nm and 770 nm."""

    band700: np.ndarray
    band770: np.ndarray
    label: int
    berry_id: str
    source_farm: str = "synthetic"

    def __post_init__(self):
        self.band700 = np.asarray(self.band700, dtype=float)
        self.band770 = np.asarray(self.band770, dtype=float)
        expected = (SAMPLE_SIZE, SAMPLE_SIZE, 3)
        for name, image in (("band700", self.band700), ("band770", self.band770)):
            if image.shape != expected:
                raise ValueError(f"{name} must be {expected}, got {image.shape}")
            if image.min() < 0.0 or image.max() > 1.0:
                raise ValueError(f"{name} values must lie in [0, 1]")
        if self.label not in (RIPE, UNRIPE):
            raise ValueError(f"label must be {RIPE} (ripe) or {UNRIPE} (unripe)")


@dataclass
class LabeledDataset:
    samples: list[BispectralSample]

    def __post_init__(self):
        if not self.samples:
            raise ValueError("dataset must be nonempty")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def class_counts(self) -> dict[int, int]:
        return dict(Counter(s.label for s in self.samples))

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)


@dataclass
class AugmentationSpec:
    """Ranges for the three farm-condition perturbations, plus the base seed used
    when augmenting whole datasets (per-sample seeds are base seed + index)."""

    max_rotation_deg: float = 10.0
    zoom_range: tuple[float, float] = (0.2, 1.0)
    brightness_range: tuple[float, float] = (0.2, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be non-negative")
        for name, (lo, hi) in (
            ("zoom_range", self.zoom_range),
            ("brightness_range", self.brightness_range),
        ):
            if not (0.0 < lo <= hi <= 2.0):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi <= 2, got ({lo}, {hi})")


def split_stereo(frame: StereoFrame | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a side-by-side frame into (700 nm, 770 nm) halves."""
    pixels = frame.pixels if isinstance(frame, StereoFrame) else np.asarray(frame)
    if pixels.ndim != 2:
        raise FormatError("stereo frame must be 2-D")
    width = pixels.shape[1]
    if width % 2 != 0:
        raise FormatError(f"stereo frame width {width} is odd; cannot split into two bands")
    half = width // 2
    return pixels[:, :half].copy(), pixels[:, half:].copy()


def _bilinear_sample(image: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample `image` at fractional (row, col) positions with edge replication.

    Accepts (H, W) or (H, W, C) images; coordinates outside the grid clamp to the
    border, so interpolated values never leave the input's value range.
    """
    height, width = image.shape[:2]
    rows = np.clip(rows, 0.0, height - 1.0)
    cols = np.clip(cols, 0.0, width - 1.0)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, height - 1)
    c1 = np.minimum(c0 + 1, width - 1)
    fr = rows - r0
    fc = cols - c0
    if image.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = image[r0, c0] * (1.0 - fc) + image[r0, c1] * fc
    bottom = image[r1, c0] * (1.0 - fc) + image[r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def bilinear_resize(image: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centre alignment (identity at equal size)."""
    if out_height <= 0 or out_width <= 0:
        raise ValueError("output size must be positive")
    image = np.asarray(image, dtype=float)
    height, width = image.shape[:2]
    row_coords = (np.arange(out_height) + 0.5) * (height / out_height) - 0.5
    col_coords = (np.arange(out_width) + 0.5) * (width / out_width) - 0.5
    rows, cols = np.meshgrid(row_coords, col_coords, indexing="ij")
    return _bilinear_sample(image, rows, cols)


def crop_resize(image: np.ndarray, bbox: tuple[int, int, int, int]) -> np.ndarray:
    """Crop (top, left, height, width) out of a [0, 1] image and resample to 32x32."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("crop_resize expects a single-band 2-D image")
    top, left, box_h, box_w = bbox
    if box_h < 1 or box_w < 1:
        raise ValueError("bbox area must be at least 1 pixel")
    if top < 0 or left < 0 or top + box_h > image.shape[0] or left + box_w > image.shape[1]:
        raise ValueError(f"bbox {bbox} falls outside image of shape {image.shape}")
    crop = image[top : top + box_h, left : left + box_w]
    return bilinear_resize(crop, SAMPLE_SIZE, SAMPLE_SIZE)


def hist_equalize(image: np.ndarray) -> np.ndarray:
    """Classic 256-bin histogram equalization via the cumulative distribution.

    Levels map through h(v) = round((cdf(v) - cdf_min) / (N - cdf_min) * 255).
    Accepts uint8 or float [0, 1] input (quantized to 256 bins) and returns the
    same kind. Constant images come back unchanged.
    """
    image = np.asarray(image)
    if image.dtype == np.uint8:
        levels = image
        as_float = False
    else:
        arr = np.asarray(image, dtype=float)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("float image values must lie in [0, 1]")
        levels = np.rint(arr * 255.0).astype(np.uint8)
        as_float = True

    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    total = levels.size
    cdf_min = int(cdf[np.flatnonzero(hist)[0]])
    if total == cdf_min:  # single occupied bin
        return image.copy()
    mapping = np.rint((cdf - cdf_min) / (total - cdf_min) * 255.0)
    mapping = np.clip(mapping, 0, 255).astype(np.uint8)
    out = mapping[levels]
    return out.astype(float) / 255.0 if as_float else out


def pseudo_colour(band: np.ndarray) -> np.ndarray:
    """Replicate a single 32x32 band into three identical channels."""
    band = np.asarray(band, dtype=float)
    if band.shape != (SAMPLE_SIZE, SAMPLE_SIZE):
        raise ValueError(f"expected a {SAMPLE_SIZE}x{SAMPLE_SIZE} band, got {band.shape}")
    return np.repeat(band[:, :, None], 3, axis=2)


def _require_unique_ids(dataset: LabeledDataset) -> None:
    counts = Counter(s.berry_id for s in dataset.samples)
    dupes = [berry_id for berry_id, n in counts.items() if n > 1]
    if dupes:
        raise ValueError(f"berry ids must be unique here, found duplicates: {sorted(dupes)[:5]}")


def stratified_split(
    dataset: LabeledDataset,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Per-class shuffle, then floor(r_train * n) to train, floor(r_val * n) to
    validation, and the remainder to test. Keeps each split's class ratio within
    one sample of the global ratio."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive values summing to 1, got {ratios}")
    _require_unique_ids(dataset)
    by_class: dict[int, list[int]] = {}
    for index, sample in enumerate(dataset.samples):
        by_class.setdefault(sample.label, []).append(index)
    for label, indices in sorted(by_class.items()):
        if len(indices) < 3:
            raise ValueError(f"class {label} has {len(indices)} samples; need at least 3 to split")

    rng = np.random.default_rng(seed)
    picks: tuple[list[int], list[int], list[int]] = ([], [], [])
    for label in sorted(by_class):
        indices = np.array(by_class[label])
        indices = indices[rng.permutation(len(indices))]
        n = len(indices)
        n_train = int(np.floor(ratios[0] * n))
        n_val = int(np.floor(ratios[1] * n))
        picks[0].extend(indices[:n_train].tolist())
        picks[1].extend(indices[n_train : n_train + n_val].tolist())
        picks[2].extend(indices[n_train + n_val :].tolist())
    return tuple(LabeledDataset([dataset.samples[i] for i in part]) for part in picks)


def random_oversample(dataset: LabeledDataset, seed: int = 0) -> LabeledDataset:
    """Duplicate minority samples uniformly at random until class counts balance.

    Every input sample is retained verbatim; duplicates are appended after them.
    """
    counts = dataset.class_counts
    if len(counts) < 2:
        raise ValueError("oversampling needs both classes present")
    minority = min(counts, key=lambda label: (counts[label], label))
    majority_count = max(counts.values())
    minority_samples = [s for s in dataset.samples if s.label == minority]
    deficit = majority_count - counts[minority]
    if deficit == 0:
        return LabeledDataset(list(dataset.samples))
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(minority_samples), size=deficit)
    extra = [minority_samples[i] for i in picks]
    return LabeledDataset(list(dataset.samples) + extra)


def bootstrap_subset(dataset: LabeledDataset, seed: int = 0) -> LabeledDataset:
    """Draw len(dataset) samples uniformly with replacement."""
    n = len(dataset)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, n, size=n)
    return LabeledDataset([dataset.samples[i] for i in picks])


def _rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image centre, bilinear, replicating border pixels."""
    theta = np.deg2rad(degrees)
    height, width = image.shape[:2]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    out_r, out_c = np.meshgrid(np.arange(height, dtype=float), np.arange(width, dtype=float), indexing="ij")
    dy = out_r - cy
    dx = out_c - cx
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    src_r = cy + dy * cos_t - dx * sin_t
    src_c = cx + dy * sin_t + dx * cos_t
    return _bilinear_sample(image, src_r, src_c)


def _zoom(image: np.ndarray, factor: float) -> np.ndarray:
    """Zoom as centre crop (factor < 1) or edge-replicated pad (factor > 1), then resize back."""
    size = image.shape[0]
    side = max(1, int(np.rint(size * factor)))
    if side == size:
        return image
    if side < size:
        offset = (size - side) // 2
        window = image[offset : offset + side, offset : offset + side]
    else:
        grow = side - size
        before = grow // 2
        after = grow - before
        pad = ((before, after), (before, after)) + (((0, 0),) if image.ndim == 3 else ())
        window = np.pad(image, pad, mode="edge")
    return bilinear_resize(window, size, size)


def augment(sample: BispectralSample, spec: AugmentationSpec, seed: int) -> BispectralSample:
    """Apply one sampled (rotation, zoom, brightness) triple identically to both bands.

    The draws are always taken in that fixed order from the given seed, so a spec
    with identity ranges reproduces the input bit for bit.
    """
    rng = np.random.default_rng(seed)
    degrees = float(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg))
    zoom = float(rng.uniform(*spec.zoom_range))
    brightness = float(rng.uniform(*spec.brightness_range))

    def transform(image: np.ndarray) -> np.ndarray:
        out = image
        if degrees != 0.0:
            out = _rotate(out, degrees)
        if zoom != 1.0:
            out = _zoom(out, zoom)
        if brightness != 1.0:
            out = np.clip(out * brightness, 0.0, 1.0)
        return np.clip(out, 0.0, 1.0) if out is not image else image.copy()

    return replace(sample, band700=transform(sample.band700), band770=transform(sample.band770))


def augment_dataset(dataset: LabeledDataset, spec: AugmentationSpec) -> LabeledDataset:
    """Augment every sample with per-sample seeds spec.seed + index."""
    return LabeledDataset(
        [augment(sample, spec, spec.seed + i) for i, sample in enumerate(dataset.samples)]
    )


def save_dataset(
    dataset: LabeledDataset,
    out_dir: str | os.PathLike,
    manifest_name: str = "manifest.tsv",
    image_subdir: str = "images",
) -> Path:
    """Write band images as 8-bit PNGs plus a tab-separated manifest; returns the manifest path.

    Image files are keyed by berry id, so duplicated samples (oversampled sets)
    share files and only their manifest rows repeat.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / image_subdir
    image_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    written: set[str] = set()
    for sample in dataset.samples:
        name700 = f"{sample.berry_id}_700.png"
        name770 = f"{sample.berry_id}_770.png"
        if sample.berry_id not in written:
            save_gray8(image_dir / name700, np.rint(sample.band700[:, :, 0] * 255).astype(np.uint8))
            save_gray8(image_dir / name770, np.rint(sample.band770[:, :, 0] * 255).astype(np.uint8))
            written.add(sample.berry_id)
        rows.append(
            (
                sample.berry_id,
                sample.source_farm,
                str(sample.label),
                f"{image_subdir}/{name700}",
                f"{image_subdir}/{name770}",
            )
        )
    manifest_path = out_dir / manifest_name
    lines = ["\t".join(MANIFEST_COLUMNS)] + ["\t".join(row) for row in rows]
    atomic_write_text(manifest_path, "\n".join(lines) + "\n")
    return manifest_path


def _read_manifest_rows(path: str | os.PathLike, columns: tuple[str, ...]) -> list[dict[str, str]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    if not lines:
        raise FormatError(f"{path}: empty manifest")
    header = tuple(lines[0].split("\t"))
    if header != columns:
        raise FormatError(f"{path}: expected columns {columns}, got {header}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(columns):
            raise FormatError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(fields)}")
        rows.append(dict(zip(columns, fields)))
    if not rows:
        raise FormatError(f"{path}: manifest lists no samples")
    return rows


def _parse_label(text: str, where: str) -> int:
    if text not in ("0", "1"):
        raise FormatError(f"{where}: label must be 0 (ripe) or 1 (unripe), got {text!r}")
    return int(text)


def manifest_kind(path: str | os.PathLike) -> str:
    """Report whether a manifest lists stereo frames or pre-split band images."""
    try:
        first = Path(path).read_text(encoding="utf-8").splitlines()[0]
    except (OSError, IndexError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    header = tuple(first.split("\t"))
    if header == MANIFEST_COLUMNS:
        return "bands"
    if header == STEREO_COLUMNS:
        return "stereo"
    raise FormatError(f"{path}: unrecognized manifest columns {header}")


def load_dataset(manifest_path: str | os.PathLike) -> LabeledDataset:
    """Load a band-image manifest into memory; paths resolve relative to the manifest."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    samples = []
    for row in _read_manifest_rows(manifest_path, MANIFEST_COLUMNS):
        band700 = load_gray8(base / row["band700"]).astype(float) / 255.0
        band770 = load_gray8(base / row["band770"]).astype(float) / 255.0
        for name, band in (("band700", band700), ("band770", band770)):
            if band.shape != (SAMPLE_SIZE, SAMPLE_SIZE):
                raise FormatError(
                    f"{row[name]}: expected {SAMPLE_SIZE}x{SAMPLE_SIZE} image, got {band.shape}"
                )
        samples.append(
            BispectralSample(
                pseudo_colour(band700),
                pseudo_colour(band770),
                _parse_label(row["label"], str(manifest_path)),
                row["berry_id"],
                row["farm"],
            )
        )
    return LabeledDataset(samples)


def load_stereo_manifest(
    manifest_path: str | os.PathLike,
) -> list[tuple[StereoFrame, str, int]]:
    """Load a stereo-frame manifest as (frame, farm, label) triples."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    out = []
    for row in _read_manifest_rows(manifest_path, STEREO_COLUMNS):
        pixels = load_gray8(base / row["frame"])
        try:
            frame = StereoFrame(pixels, row["berry_id"])
        except FormatError as exc:
            raise FormatError(f"{base / row['frame']}: {exc}") from exc
        out.append((frame, row["farm"], _parse_label(row["label"], str(manifest_path))))
    return out
