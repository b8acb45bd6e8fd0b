"""Command-line surface tying the pipeline together.

Usage: berrystack <command> --config <path> [--seed N] [--out DIR]

Configs are INI-style key=value files parsed strictly: unknown sections or keys
abort the run. Every command writes its reports plus a run manifest under the
output directory. Exit codes: 0 success, 2 usage/config error, 3 data/format
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    AugmentationSpec,
    BispectralSample,
    LabeledDataset,
    augment_dataset,
    crop_resize,
    hist_equalize,
    load_dataset,
    load_stereo_manifest,
    manifest_kind,
    pseudo_colour,
    random_oversample,
    save_dataset,
    split_stereo,
    stratified_split,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleModel,
    fit_meta,
    load_ensemble,
    predict_ensemble_batch,
    save_ensemble,
    stack_digest,
    stack_predictions,
    train_base_learners,
)
from .errors import ConfigError, FormatError, NumericError
from .ioutil import atomic_write_text
from .metrics import (
    DEFAULT_CORRELATION_VARIABLES,
    SensoryRecord,
    confusion,
    pearson_matrix,
    pr_curve,
    roc_auc,
    sensory_report,
    weighted_metrics,
)
from .model import (
    FeatureExtractor,
    ModelConfig,
    TrainedModel,
    load_extractor,
    load_model,
    make_surrogate_extractor,
    predict_batch,
    save_model,
    train_model,
)
from .raster import load_mask
from .spectral import (
    DEFAULT_NIR_RANGE,
    DEFAULT_VISIBLE_RANGE,
    SegmentationMask,
    calibrate,
    load_cube,
    mean_spectrum,
    normalize_spectrum,
    select_wavelengths,
)
from .synth import make_bispectral_dataset
from .tuning import GridSpec, coordinate_grid_search, format_cell

PREDICTIONS_COLUMNS = ("berry_id", "target", "confidence_pct")
SENSORY_COLUMNS = (
    "berry_id",
    "mass_g",
    "shininess",
    "colour_uniformity",
    "firmness",
    "skin_strength",
    "flavor",
    "sweetness",
    "texture",
    "human_ripeness",
    "target",
    "machine_confidence_pct",
)

# Schema entries: (required, is_input_path)
_REQ_PATH = (True, True)
_OPT_PATH = (False, True)
_OPT = (False, False)

_EXTRACTOR_KEYS = {"kind": _OPT, "seed": _OPT, "output_dim": _OPT, "path": _OPT_PATH}
_MODEL_KEYS = {
    "fc1": _OPT,
    "fc2": _OPT,
    "optimizer": _OPT,
    "learning_rate": _OPT,
    "momentum": _OPT,
    "batch_size": _OPT,
    "epochs": _OPT,
    "patience": _OPT,
    "seed": _OPT,
}

SCHEMAS: dict[str, dict[str, dict[str, tuple[bool, bool]]]] = {
    "select-wavelengths": {
        "cube": {
            "header": _REQ_PATH,
            "data": _REQ_PATH,
            "white_header": _OPT_PATH,
            "white_data": _OPT_PATH,
            "dark_header": _OPT_PATH,
            "dark_data": _OPT_PATH,
        },
        "masks": {f"class_{c}": _REQ_PATH for c in range(5)},
        "selection": {"visible_lo": _OPT, "visible_hi": _OPT, "nir_lo": _OPT, "nir_hi": _OPT},
    },
    "prepare": {
        "data": {"manifest": _REQ_PATH, "equalize_770": _OPT},
        "split": {"train": _OPT, "val": _OPT, "test": _OPT},
    },
    "train": {
        "data": {"train_manifest": _REQ_PATH, "val_manifest": _REQ_PATH},
        "extractor": _EXTRACTOR_KEYS,
        "model": _MODEL_KEYS,
    },
    "tune": {
        "data": {"manifest": _REQ_PATH},
        "extractor": _EXTRACTOR_KEYS,
        "model": _MODEL_KEYS,
        "tuning": {
            "fc_candidates": _OPT,
            "optimizer_candidates": _OPT,
            "batch_candidates": _OPT,
            "epoch_candidates": _OPT,
            "k": _OPT,
            "metric": _OPT,
        },
    },
    "train-ensemble": {
        "data": {"train_manifest": _REQ_PATH, "val_manifest": _REQ_PATH},
        "extractor": _EXTRACTOR_KEYS,
        "model": _MODEL_KEYS,
        "ensemble": {"learners": _OPT, "seed": _OPT, "oversample": _OPT, "ridge": _OPT},
    },
    "evaluate": {
        "data": {"predictions": _OPT_PATH, "test_manifest": _OPT_PATH},
        "artifact": {"model": _OPT_PATH, "ensemble": _OPT_PATH},
        "extractor": _EXTRACTOR_KEYS,
    },
    "robustness": {
        "data": {"test_manifest": _REQ_PATH},
        "artifact": {"model": _OPT_PATH, "ensemble": _OPT_PATH},
        "extractor": _EXTRACTOR_KEYS,
        "augmentation": {
            "max_rotation_deg": _OPT,
            "zoom_lo": _OPT,
            "zoom_hi": _OPT,
            "brightness_lo": _OPT,
            "brightness_hi": _OPT,
        },
    },
    "correlate": {
        "data": {"sensory": _REQ_PATH, "manifest": _OPT_PATH},
        "artifact": {"ensemble": _OPT_PATH},
        "extractor": _EXTRACTOR_KEYS,
        "correlate": {"variables": _OPT},
    },
    "synth": {
        "synth": {"ripe": _OPT, "unripe": _OPT, "noise": _OPT},
    },
}

_RUN_KEYS = {"seed": _OPT, "out": _OPT}


class RunConfig:
    """Resolved, validated configuration for one command invocation."""

    def __init__(self, command: str, sections: dict[str, dict[str, str]], seed: int, out_dir: Path):
        self.command = command
        self.sections = sections
        self.seed = seed
        self.out_dir = out_dir
        canonical = [f"command={command}", f"seed={seed}"]
        for section in sorted(sections):
            for key in sorted(sections[section]):
                canonical.append(f"{section}.{key}={sections[section][key]}")
        self.digest = hashlib.sha256("\n".join(canonical).encode("utf-8")).hexdigest()

    def section(self, name: str) -> dict[str, str]:
        return self.sections.get(name, {})

    def get(self, section: str, key: str, default: str | None = None) -> str | None:
        return self.sections.get(section, {}).get(key, default)


def _typed(caster, what: str):
    def get(config: RunConfig, section: str, key: str, default):
        raw = config.get(section, key)
        if raw is None:
            return default
        try:
            return caster(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: expected {what}, got {raw!r}") from exc

    return get


_get_int = _typed(int, "an integer")
_get_float = _typed(float, "a number")


def _get_bool(config: RunConfig, section: str, key: str, default: bool) -> bool:
    raw = config.get(section, key)
    if raw is None:
        return default
    if raw.lower() in ("true", "yes", "1"):
        return True
    if raw.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"[{section}] {key}: expected true/false, got {raw!r}")


def load_run_config(
    command: str, config_path: str, seed_override: int | None, out_override: str | None
) -> RunConfig:
    schema = SCHEMAS[command]
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    base = path.parent
    sections: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section != "run" and section not in schema:
            raise ConfigError(f"{path}: unknown section [{section}] for command {command}")
        allowed = _RUN_KEYS if section == "run" else schema[section]
        for key, value in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            sections.setdefault(section, {})[key] = value

    for section, keys in schema.items():
        for key, (required, is_path) in keys.items():
            value = sections.get(section, {}).get(key)
            if value is None:
                if required:
                    raise ConfigError(f"{path}: missing required key {key!r} in section [{section}]")
                continue
            if is_path:
                resolved = (base / value).resolve() if not Path(value).is_absolute() else Path(value)
                if not resolved.exists():
                    raise ConfigError(f"{path}: [{section}] {key} refers to missing path {resolved}")
                sections[section][key] = str(resolved)

    if seed_override is not None:
        seed = seed_override
    elif "seed" in sections.get("run", {}):
        try:
            seed = int(sections["run"]["seed"])
        except ValueError as exc:
            raise ConfigError(f"{path}: [run] seed must be an integer") from exc
    else:
        raise ConfigError("a seed is mandatory: set [run] seed or pass --seed")

    out_raw = out_override if out_override is not None else sections.get("run", {}).get("out")
    if out_raw is None:
        raise ConfigError("an output directory is mandatory: set [run] out or pass --out")
    out_dir = Path(out_raw)
    if not out_dir.is_absolute():
        out_dir = (Path.cwd() / out_dir).resolve()

    return RunConfig(command, sections, seed, out_dir)


def _write_table(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    lines = ["\t".join(header)] + ["\t".join(str(cell) for cell in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_run_manifest(config: RunConfig, started: float, artifacts: list[Path]) -> None:
    items: dict[str, object] = {
        "command": config.command,
        "config_digest": config.digest,
        "tool_version": __version__,
        "duration_seconds": f"{time.time() - started:.3f}",
    }
    for i, artifact in enumerate(artifacts):
        items[f"artifact_{i}"] = artifact
    text = "".join(f"{k}={v}\n" for k, v in items.items())
    atomic_write_text(config.out_dir / "run_manifest.txt", text)


def _build_extractor(config: RunConfig, default_seed: int) -> FeatureExtractor:
    section = config.section("extractor")
    kind = section.get("kind", "surrogate")
    if kind == "surrogate":
        seed = _get_int(config, "extractor", "seed", default_seed)
        output_dim = _get_int(config, "extractor", "output_dim", 512)
        return make_surrogate_extractor(seed, output_dim)
    if kind == "file":
        if "path" not in section:
            raise ConfigError("[extractor] kind=file requires a path")
        return load_extractor(section["path"])
    raise ConfigError(f"[extractor] kind must be surrogate or file, got {kind!r}")


def _model_config(config: RunConfig) -> ModelConfig:
    defaults = ModelConfig()
    fc1 = _get_int(config, "model", "fc1", defaults.fc_spec[0])
    fc2 = _get_int(config, "model", "fc2", defaults.fc_spec[1])
    try:
        return ModelConfig(
            fc_spec=(fc1, fc2),
            optimizer=config.get("model", "optimizer", defaults.optimizer),
            learning_rate=_get_float(config, "model", "learning_rate", None),
            momentum=_get_float(config, "model", "momentum", defaults.momentum),
            batch_size=_get_int(config, "model", "batch_size", defaults.batch_size),
            epochs=_get_int(config, "model", "epochs", defaults.epochs),
            patience=_get_int(config, "model", "patience", defaults.patience),
            seed=_get_int(config, "model", "seed", config.seed),
        )
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from exc


def _load_artifact(config: RunConfig) -> tuple[str, TrainedModel | EnsembleModel]:
    section = config.section("artifact")
    has_model = "model" in section
    has_ensemble = "ensemble" in section
    if has_model == has_ensemble:
        raise ConfigError("[artifact] must name exactly one of model or ensemble")
    extractor = _build_extractor(config, config.seed) if "extractor" in config.sections else None
    if has_model:
        return "model", load_model(section["model"], extractor)
    return "ensemble", load_ensemble(section["ensemble"], extractor)


def _predict_artifact(artifact, samples: list[BispectralSample]) -> np.ndarray:
    if isinstance(artifact, EnsembleModel):
        return predict_ensemble_batch(artifact, samples)
    return predict_batch(artifact, samples)


def _metric_rows(confidences: np.ndarray, labels: np.ndarray) -> tuple:
    report = weighted_metrics(confusion((confidences >= 0.5).astype(int), labels))
    return report, (
        f"{report.weighted_precision:.6f}",
        f"{report.weighted_recall:.6f}",
        f"{report.weighted_f1:.6f}",
        f"{report.accuracy:.6f}",
    )


# ---------------------------------------------------------------------------
# command handlers


def cmd_select_wavelengths(config: RunConfig) -> list[Path]:
    cube_section = config.section("cube")
    cube = load_cube(cube_section["header"], cube_section["data"])
    reference_keys = ("white_header", "white_data", "dark_header", "dark_data")
    present = [k for k in reference_keys if k in cube_section]
    if present and len(present) != 4:
        raise ConfigError("[cube] calibration needs all of white/dark header and data files")
    if present:
        white = load_cube(cube_section["white_header"], cube_section["white_data"])
        dark = load_cube(cube_section["dark_header"], cube_section["dark_data"])
        cube = calibrate(cube, white, dark)

    spectra = []
    for ripeness_class in range(5):
        mask = SegmentationMask(load_mask(config.get("masks", f"class_{ripeness_class}")))
        spectra.append(normalize_spectrum(mean_spectrum(cube, mask, ripeness_class)))

    visible_range = (
        _get_float(config, "selection", "visible_lo", DEFAULT_VISIBLE_RANGE[0]),
        _get_float(config, "selection", "visible_hi", DEFAULT_VISIBLE_RANGE[1]),
    )
    nir_range = (
        _get_float(config, "selection", "nir_lo", DEFAULT_NIR_RANGE[0]),
        _get_float(config, "selection", "nir_hi", DEFAULT_NIR_RANGE[1]),
    )
    pair = select_wavelengths(spectra, visible_range, nir_range)

    spectra_path = config.out_dir / "spectra.tsv"
    header = ("wavelength_nm",) + tuple(f"class_{c}" for c in range(5))
    rows = []
    for i, wavelength in enumerate(cube.wavelengths):
        rows.append((f"{wavelength:.1f}",) + tuple(f"{s.values[i]:.6f}" for s in spectra))
    _write_table(spectra_path, header, rows)

    pair_path = config.out_dir / "wavelengths.txt"
    atomic_write_text(pair_path, f"visible_nm={pair.visible_nm:g}\nnir_nm={pair.nir_nm:g}\n")
    return [spectra_path, pair_path]


def _prepare_samples(config: RunConfig) -> LabeledDataset:
    manifest = config.get("data", "manifest")
    kind = manifest_kind(manifest)
    if kind == "bands":
        dataset = load_dataset(manifest)
        if _get_bool(config, "data", "equalize_770", False):
            dataset = LabeledDataset(
                [
                    BispectralSample(
                        s.band700,
                        pseudo_colour(hist_equalize(s.band770[:, :, 0])),
                        s.label,
                        s.berry_id,
                        s.source_farm,
                    )
                    for s in dataset.samples
                ]
            )
        return dataset

    samples = []
    equalize = _get_bool(config, "data", "equalize_770", True)
    for frame, farm, label in _load_stereo_checked(manifest):
        left, right = split_stereo(frame)
        band700 = crop_resize(left.astype(float) / 255.0, (0, 0) + left.shape)
        band770 = crop_resize(right.astype(float) / 255.0, (0, 0) + right.shape)
        if equalize:
            band770 = hist_equalize(band770)
        samples.append(
            BispectralSample(pseudo_colour(band700), pseudo_colour(band770), label, frame.berry_id, farm)
        )
    return LabeledDataset(samples)


def _load_stereo_checked(manifest: str):
    # Frame-level precondition failures count as unusable configuration, so the
    # offending file is named and the run exits with the config error code.
    try:
        return load_stereo_manifest(manifest)
    except FormatError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_prepare(config: RunConfig) -> list[Path]:
    dataset = _prepare_samples(config)
    ratios = (
        _get_float(config, "split", "train", 0.6),
        _get_float(config, "split", "val", 0.2),
        _get_float(config, "split", "test", 0.2),
    )
    try:
        train, val, test = stratified_split(dataset, ratios, seed=config.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    oversampled = random_oversample(train, seed=config.seed)

    artifacts = []
    summary = ["split\tripe\tunripe\ttotal"]
    for name, split in (
        ("train", train),
        ("val", val),
        ("test", test),
        ("train_oversampled", oversampled),
    ):
        artifacts.append(save_dataset(split, config.out_dir / name))
        counts = split.class_counts
        summary.append(f"{name}\t{counts.get(0, 0)}\t{counts.get(1, 0)}\t{len(split)}")
    summary_path = config.out_dir / "summary.txt"
    atomic_write_text(summary_path, "\n".join(summary) + "\n")
    return artifacts + [summary_path]


def _history_table(path: Path, model: TrainedModel) -> None:
    history = model.history
    rows = [
        (
            epoch + 1,
            f"{history.train_loss[epoch]:.6f}",
            f"{history.val_loss[epoch]:.6f}",
            f"{history.train_accuracy[epoch]:.6f}",
            f"{history.val_accuracy[epoch]:.6f}",
        )
        for epoch in range(len(history.train_loss))
    ]
    _write_table(path, ("epoch", "train_loss", "val_loss", "train_accuracy", "val_accuracy"), rows)


def cmd_train(config: RunConfig) -> list[Path]:
    extractor = _build_extractor(config, config.seed)
    train = load_dataset(config.get("data", "train_manifest"))
    val = load_dataset(config.get("data", "val_manifest"))
    model = train_model(train, val, _model_config(config), extractor)
    model_dir = save_model(model, config.out_dir / "model")
    history_path = config.out_dir / "history.tsv"
    _history_table(history_path, model)
    summary_path = config.out_dir / "summary.txt"
    atomic_write_text(
        summary_path,
        f"best_epoch={model.history.best_epoch}\n"
        f"epochs_run={model.history.stopped_epoch}\n"
        f"best_val_loss={model.history.val_loss[model.history.best_epoch - 1]:.6f}\n",
    )
    return [model_dir, history_path, summary_path]


def _parse_grid(config: RunConfig) -> tuple[GridSpec, int]:
    def candidates(key: str, default: str) -> list[str]:
        raw = config.get("tuning", key, default)
        return [item.strip() for item in raw.split(",") if item.strip()]

    try:
        fc = tuple(
            tuple(int(part) for part in item.split("x")) for item in candidates("fc_candidates", "1024x1024,512x256")
        )
        if any(len(spec) != 2 for spec in fc):
            raise ValueError("fc candidates look like 1024x1024")
        optimizers = tuple(candidates("optimizer_candidates", "adam,sgd,adagrad"))
        batches = tuple(int(v) for v in candidates("batch_candidates", "4,6,8,10,12,14"))
        epochs = tuple(int(v) for v in candidates("epoch_candidates", "16,20,40,60,80"))
        grid = GridSpec(fc, optimizers, batches, epochs, metric=config.get("tuning", "metric", "f1"))
    except ValueError as exc:
        raise ConfigError(f"[tuning] {exc}") from exc
    return grid, _get_int(config, "tuning", "k", 10)


def cmd_tune(config: RunConfig) -> list[Path]:
    extractor = _build_extractor(config, config.seed)
    dataset = load_dataset(config.get("data", "manifest"))
    grid, k = _parse_grid(config)
    result = coordinate_grid_search(grid, dataset, k, config.seed, extractor, base=_model_config(config))

    report_path = config.out_dir / "tune_report.tsv"
    header = ("hyperparameter", "value", "precision", "recall", "f1", "train_accuracy", "test_accuracy", "chosen")
    rows = [
        (
            row.axis,
            row.value,
            format_cell(*row.stats["precision"]),
            format_cell(*row.stats["recall"]),
            format_cell(*row.stats["f1"]),
            format_cell(*row.stats["train_accuracy"]),
            format_cell(*row.stats["test_accuracy"]),
            "yes" if row.chosen else "",
        )
        for row in result.rows
    ]
    _write_table(report_path, header, rows)

    best = result.config
    config_path = config.out_dir / "best_config.ini"
    lines = [
        "[model]",
        f"fc1 = {best.fc_spec[0]}",
        f"fc2 = {best.fc_spec[1]}",
        f"optimizer = {best.optimizer}",
        f"learning_rate = {best.resolved_learning_rate:g}",
        f"batch_size = {best.batch_size}",
        f"epochs = {best.epochs}",
        f"patience = {best.patience}",
        f"seed = {best.seed}",
    ]
    atomic_write_text(config_path, "\n".join(lines) + "\n")
    return [report_path, config_path]


def cmd_train_ensemble(config: RunConfig) -> list[Path]:
    extractor = _build_extractor(config, config.seed)
    train = load_dataset(config.get("data", "train_manifest"))
    val = load_dataset(config.get("data", "val_manifest"))
    if _get_bool(config, "ensemble", "oversample", True):
        train = random_oversample(train, seed=config.seed)
    try:
        ensemble_config = EnsembleConfig(
            n_learners=_get_int(config, "ensemble", "learners", 5),
            base=_model_config(config),
            seed=_get_int(config, "ensemble", "seed", config.seed),
        )
    except ValueError as exc:
        raise ConfigError(f"[ensemble] {exc}") from exc

    learners = train_base_learners(train, val, ensemble_config, extractor)
    stacked = stack_predictions(learners, val.samples)
    meta = fit_meta(stacked, ridge=_get_float(config, "ensemble", "ridge", 1e-3))
    ensemble = EnsembleModel(learners, meta, ensemble_config)
    ensemble_dir = save_ensemble(ensemble, config.out_dir / "ensemble", stacked)

    report_path = config.out_dir / "ensemble_report.txt"
    lines = []
    val_labels = val.labels()
    for i, learner in enumerate(learners):
        predictions = (predict_batch(learner, val.samples) >= 0.5).astype(int)
        lines.append(f"learner_{i:02d}_val_accuracy={np.mean(predictions == val_labels):.6f}")
    lines.append(f"meta_iterations={meta.diagnostics.iterations}")
    lines.append(f"meta_final_nll={meta.diagnostics.final_nll:.6f}")
    lines.append(f"meta_converged={str(meta.diagnostics.converged).lower()}")
    lines.append(f"stack_digest={stack_digest(stacked)}")
    atomic_write_text(report_path, "\n".join(lines) + "\n")
    return [ensemble_dir, report_path]


def _load_predictions(path: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != PREDICTIONS_COLUMNS:
        raise FormatError(f"{path}: expected columns {PREDICTIONS_COLUMNS}")
    ids, labels, confidences = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 fields")
        ids.append(fields[0])
        try:
            labels.append(int(fields[1]))
            confidences.append(float(fields[2]) / 100.0)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not ids:
        raise FormatError(f"{path}: no prediction rows")
    return ids, np.array(labels), np.array(confidences)


def cmd_evaluate(config: RunConfig) -> list[Path]:
    predictions_path = config.get("data", "predictions")
    manifest_path = config.get("data", "test_manifest")
    if (predictions_path is None) == (manifest_path is None):
        raise ConfigError("[data] needs exactly one of predictions or test_manifest")
    if predictions_path is not None:
        ids, labels, confidences = _load_predictions(predictions_path)
    else:
        test = load_dataset(manifest_path)
        _, artifact = _load_artifact(config)
        confidences = _predict_artifact(artifact, test.samples)
        labels = test.labels()
        ids = [s.berry_id for s in test.samples]

    report, cells = _metric_rows(confidences, labels)
    metrics_path = config.out_dir / "metrics.tsv"
    _write_table(
        metrics_path,
        ("metric", "value"),
        [
            ("accuracy", f"{report.accuracy:.6f}"),
            ("weighted_precision", f"{report.weighted_precision:.6f}"),
            ("weighted_recall", f"{report.weighted_recall:.6f}"),
            ("weighted_f1", f"{report.weighted_f1:.6f}"),
        ],
    )
    cm = confusion((confidences >= 0.5).astype(int), labels)
    confusion_path = config.out_dir / "confusion.tsv"
    _write_table(confusion_path, ("tp", "fp", "tn", "fn"), [(cm.tp, cm.fp, cm.tn, cm.fn)])

    roc = roc_auc(confidences, labels)
    roc_path = config.out_dir / "roc.tsv"
    _write_table(
        roc_path,
        ("fpr", "tpr"),
        [(f"{x:.6f}", f"{y:.6f}") for x, y in roc.points],
    )
    pr = pr_curve(confidences, labels)
    pr_path = config.out_dir / "pr.tsv"
    _write_table(pr_path, ("recall", "precision"), [(f"{x:.6f}", f"{y:.6f}") for x, y in pr.points])
    auc_path = config.out_dir / "auc.txt"
    atomic_write_text(auc_path, f"roc_auc={roc.auc:.6f}\n")

    records = [
        SensoryRecord(berry_id=i, target=int(t), machine_confidence_pct=float(c) * 100.0)
        for i, t, c in zip(ids, labels, confidences)
    ]
    per_berry_path = config.out_dir / "per_berry.tsv"
    atomic_write_text(per_berry_path, sensory_report(records))
    return [metrics_path, confusion_path, roc_path, pr_path, auc_path, per_berry_path]


def cmd_robustness(config: RunConfig) -> list[Path]:
    test = load_dataset(config.get("data", "test_manifest"))
    _, artifact = _load_artifact(config)
    try:
        full_spec = AugmentationSpec(
            max_rotation_deg=_get_float(config, "augmentation", "max_rotation_deg", 10.0),
            zoom_range=(
                _get_float(config, "augmentation", "zoom_lo", 0.2),
                _get_float(config, "augmentation", "zoom_hi", 1.0),
            ),
            brightness_range=(
                _get_float(config, "augmentation", "brightness_lo", 0.2),
                _get_float(config, "augmentation", "brightness_hi", 1.0),
            ),
            seed=config.seed,
        )
    except ValueError as exc:
        raise ConfigError(f"[augmentation] {exc}") from exc
    no_brightness = AugmentationSpec(
        full_spec.max_rotation_deg, full_spec.zoom_range, (1.0, 1.0), full_spec.seed
    )

    labels = test.labels()
    rows = []
    for state, spec in (
        ("No augmentation", None),
        ("Rotation+Zoom", no_brightness),
        ("Rotation+Zoom+Brightness", full_spec),
    ):
        samples = test.samples if spec is None else augment_dataset(test, spec).samples
        _, cells = _metric_rows(_predict_artifact(artifact, samples), labels)
        rows.append((state,) + cells)

    report_path = config.out_dir / "robustness.tsv"
    _write_table(report_path, ("state", "precision", "recall", "f1", "test_accuracy"), rows)
    return [report_path]


def load_sensory_table(path: str) -> list[SensoryRecord]:
    """Parse the tab-separated sensory panel table, '-' marking missing scores."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or tuple(lines[0].split("\t")) != SENSORY_COLUMNS:
        raise FormatError(f"{path}: expected columns {SENSORY_COLUMNS}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(SENSORY_COLUMNS):
            raise FormatError(f"{path}:{lineno}: expected {len(SENSORY_COLUMNS)} fields")
        row = dict(zip(SENSORY_COLUMNS, fields))

        def number(key: str) -> float | None:
            return None if row[key] == "-" else float(row[key])

        try:
            records.append(
                SensoryRecord(
                    berry_id=row["berry_id"],
                    mass_g=number("mass_g"),
                    shininess=number("shininess"),
                    colour_uniformity=number("colour_uniformity"),
                    firmness=number("firmness"),
                    skin_strength=None if row["skin_strength"] == "-" else row["skin_strength"],
                    flavor=number("flavor"),
                    sweetness=number("sweetness"),
                    texture=number("texture"),
                    human_ripeness=number("human_ripeness"),
                    target=None if row["target"] == "-" else int(row["target"]),
                    machine_confidence_pct=number("machine_confidence_pct"),
                )
            )
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise FormatError(f"{path}: no sensory rows")
    return records


def cmd_correlate(config: RunConfig) -> list[Path]:
    records = load_sensory_table(config.get("data", "sensory"))
    ensemble_path = config.get("artifact", "ensemble")
    manifest_path = config.get("data", "manifest")
    if (ensemble_path is None) != (manifest_path is None):
        raise ConfigError("computing confidences needs both [artifact] ensemble and [data] manifest")
    if ensemble_path is not None:
        extractor = _build_extractor(config, config.seed) if "extractor" in config.sections else None
        ensemble = load_ensemble(ensemble_path, extractor)
        dataset = load_dataset(manifest_path)
        by_id = {s.berry_id: s for s in dataset.samples}
        missing = [r.berry_id for r in records if r.berry_id not in by_id]
        if missing:
            raise ValueError(f"berries missing from the manifest: {missing[:5]}")
        samples = [by_id[r.berry_id] for r in records]
        confidences = predict_ensemble_batch(ensemble, samples)
        for record, confidence in zip(records, confidences):
            record.machine_confidence_pct = float(confidence) * 100.0
    elif any(r.machine_confidence_pct is None for r in records):
        raise ConfigError(
            "sensory table lacks machine confidences; provide [artifact] ensemble and [data] manifest"
        )

    raw_variables = config.get("correlate", "variables")
    variables = (
        tuple(v.strip() for v in raw_variables.split(",") if v.strip())
        if raw_variables
        else DEFAULT_CORRELATION_VARIABLES
    )
    unknown = [v for v in variables if v not in SENSORY_COLUMNS[1:]]
    if unknown:
        raise ConfigError(f"[correlate] unknown variables {unknown}")
    matrix = pearson_matrix(records, variables)

    matrix_path = config.out_dir / "correlation.tsv"
    header = ("variable",) + matrix.variables
    rows = []
    for i, name in enumerate(matrix.variables):
        cells = tuple(
            "undef" if np.isnan(value) else f"{value:.5f}" for value in matrix.values[i]
        )
        rows.append((name,) + cells)
    _write_table(matrix_path, header, rows)

    report_path = config.out_dir / "sensory_report.tsv"
    atomic_write_text(report_path, sensory_report(records))
    return [matrix_path, report_path]


def cmd_synth(config: RunConfig) -> list[Path]:
    try:
        dataset = make_bispectral_dataset(
            n_ripe=_get_int(config, "synth", "ripe", 320),
            n_unripe=_get_int(config, "synth", "unripe", 80),
            seed=config.seed,
            noise=_get_float(config, "synth", "noise", 0.02),
        )
    except ValueError as exc:
        raise ConfigError(f"[synth] {exc}") from exc
    manifest = save_dataset(dataset, config.out_dir / "dataset")
    counts = dataset.class_counts
    summary_path = config.out_dir / "summary.txt"
    atomic_write_text(summary_path, f"ripe={counts.get(0, 0)}\nunripe={counts.get(1, 0)}\n")
    return [manifest, summary_path]


HANDLERS = {
    "select-wavelengths": cmd_select_wavelengths,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "tune": cmd_tune,
    "train-ensemble": cmd_train_ensemble,
    "evaluate": cmd_evaluate,
    "robustness": cmd_robustness,
    "correlate": cmd_correlate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="berrystack", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(HANDLERS))
    parser.add_argument("--config", required=True, help="path to the INI run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    parser.add_argument("--out", default=None, help="overrides [run] out")
    args = parser.parse_args(argv)

    started = time.time()
    try:
        config = load_run_config(args.command, args.config, args.seed, args.out)
        config.out_dir.mkdir(parents=True, exist_ok=True)
        artifacts = HANDLERS[args.command](config)
        _write_run_manifest(config, started, artifacts)
    except ConfigError as exc:
        print(f"berrystack: config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ValueError) as exc:
        print(f"berrystack: data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"berrystack: numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


def entry() -> None:
    sys.exit(main())
