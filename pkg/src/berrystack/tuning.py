"""Hyperparameter protocol: stratified k-fold construction and coordinate-wise
grid search (one axis at a time, best value carried forward) with mean +/- std
reporting per candidate."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import LabeledDataset
from .errors import NumericError, TrainingError
from .metrics import confusion, weighted_metrics
from .model import FeatureExtractor, ModelConfig, accuracy_on, predict_batch, train_model

AXIS_ORDER = ("fc_spec", "optimizer", "batch_size", "epochs")
METRIC_KEYS = {"precision": "precision", "f1": "f1", "accuracy": "test_accuracy"}
STAT_KEYS = ("precision", "recall", "f1", "train_accuracy", "test_accuracy")


@dataclass
class FoldAssignment:
    k: int
    fold_of: np.ndarray  # fold index per sample
    seed: int

    def __post_init__(self):
        self.fold_of = np.asarray(self.fold_of, dtype=int)
        if self.k < 2:
            raise ValueError("need at least 2 folds")
        if self.fold_of.min() < 0 or self.fold_of.max() >= self.k:
            raise ValueError("fold indices out of range")

    def split(self, dataset: LabeledDataset, fold: int) -> tuple[LabeledDataset, LabeledDataset]:
        """(held-out fold, remaining samples) for one round."""
        held = [s for s, f in zip(dataset.samples, self.fold_of) if f == fold]
        rest = [s for s, f in zip(dataset.samples, self.fold_of) if f != fold]
        return LabeledDataset(held), LabeledDataset(rest)


def stratified_kfold(dataset: LabeledDataset, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Per-class seeded shuffle then round-robin fold assignment, so every fold's
    class counts deviate from even by at most one sample."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    by_class: dict[int, list[int]] = {}
    for index, sample in enumerate(dataset.samples):
        by_class.setdefault(sample.label, []).append(index)
    for label, indices in sorted(by_class.items()):
        if len(indices) < k:
            raise ValueError(f"class {label} has {len(indices)} samples, fewer than k={k}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(dataset), dtype=int)
    for label in sorted(by_class):
        indices = np.array(by_class[label])
        indices = indices[rng.permutation(len(indices))]
        fold_of[indices] = np.arange(len(indices)) % k
    return FoldAssignment(k, fold_of, seed)


@dataclass
class GridSpec:
    """Ordered candidate axes (fully connected widths, optimizer, batch size,
    epochs) and the fold-mean metric used to pick winners."""

    fc_candidates: tuple[tuple[int, int], ...]
    optimizer_candidates: tuple[str, ...]
    batch_candidates: tuple[int, ...]
    epoch_candidates: tuple[int, ...]
    metric: str = "f1"

    def __post_init__(self):
        for name in ("fc_candidates", "optimizer_candidates", "batch_candidates", "epoch_candidates"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if self.metric not in METRIC_KEYS:
            raise ValueError(f"selection metric must be one of {sorted(METRIC_KEYS)}")


@dataclass
class TuneRow:
    axis: str
    value: str
    stats: dict[str, tuple[float, float]]  # metric -> (mean, std)
    chosen: bool = False


@dataclass
class TuneResult:
    rows: list[TuneRow]
    chosen: dict[str, object]
    config: ModelConfig


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.3f}±{std:.3f}"


def _carve_validation(
    dataset: LabeledDataset, k: int, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Hold out roughly 1/(k-1) of the data, per class, for early stopping.

    For k = 2 there is a single remaining fold, so half of it is carved instead.
    """
    fraction = 1.0 / max(k - 1, 2)
    by_class: dict[int, list[int]] = {}
    for index, sample in enumerate(dataset.samples):
        by_class.setdefault(sample.label, []).append(index)
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for label in sorted(by_class):
        indices = np.array(by_class[label])
        indices = indices[rng.permutation(len(indices))]
        n_val = max(1, int(np.floor(fraction * len(indices))))
        val_idx.extend(indices[:n_val].tolist())
        train_idx.extend(indices[n_val:].tolist())
    if not train_idx:
        raise ValueError("validation carve-out left no training samples")
    return (
        LabeledDataset([dataset.samples[i] for i in train_idx]),
        LabeledDataset([dataset.samples[i] for i in val_idx]),
    )


def evaluate_candidate(
    config: ModelConfig,
    dataset: LabeledDataset,
    folds: FoldAssignment,
    extractor: FeatureExtractor,
) -> dict[str, tuple[float, float]]:
    """Cross-validate one configuration: each fold is tested once by a model trained
    on the remaining data (with an internal early-stopping carve-out). Returns
    mean and sample standard deviation per metric over the k runs."""
    per_fold: dict[str, list[float]] = {key: [] for key in STAT_KEYS}
    for fold in range(folds.k):
        test_set, rest = folds.split(dataset, fold)
        train_set, val_set = _carve_validation(rest, folds.k, seed=folds.seed + fold)
        try:
            model = train_model(train_set, val_set, config, extractor)
        except (TrainingError, NumericError) as exc:
            raise TrainingError(f"fold {fold}: {exc}") from exc
        predictions = (predict_batch(model, test_set.samples) >= 0.5).astype(int)
        report = weighted_metrics(confusion(predictions, test_set.labels()))
        per_fold["precision"].append(report.weighted_precision)
        per_fold["recall"].append(report.weighted_recall)
        per_fold["f1"].append(report.weighted_f1)
        per_fold["train_accuracy"].append(accuracy_on(model, train_set))
        per_fold["test_accuracy"].append(report.accuracy)
    return {
        key: (float(np.mean(values)), float(np.std(values, ddof=1)))
        for key, values in per_fold.items()
    }


def _with_axis(config: ModelConfig, axis: str, candidate) -> ModelConfig:
    if axis == "fc_spec":
        return replace(config, fc_spec=tuple(candidate))
    if axis == "optimizer":
        if isinstance(candidate, tuple):
            kind, rate = candidate
            return replace(config, optimizer=kind, learning_rate=rate)
        return replace(config, optimizer=candidate, learning_rate=None)
    if axis == "batch_size":
        return replace(config, batch_size=int(candidate))
    if axis == "epochs":
        return replace(config, epochs=int(candidate))
    raise ValueError(f"unknown axis {axis!r}")


def _label(axis: str, candidate) -> str:
    if axis == "fc_spec":
        return f"{candidate[0]}x{candidate[1]}"
    if axis == "optimizer" and isinstance(candidate, tuple):
        return f"{candidate[0]}@{candidate[1]:g}"
    return str(candidate)


def coordinate_grid_search(
    grid: GridSpec,
    dataset: LabeledDataset,
    k: int,
    seed: int,
    extractor: FeatureExtractor,
    base: ModelConfig | None = None,
) -> TuneResult:
    """Tune one axis at a time in the fixed order fc_spec -> optimizer -> batch ->
    epochs. Every candidate on the current axis is cross-validated with all other
    hyperparameters held at their current values; the winner (highest fold-mean of
    the selection metric, ties to the first declared candidate) is locked in
    before the next axis. Evaluates sum(|axis|) candidates, never the product."""
    folds = stratified_kfold(dataset, k, seed)
    current = base if base is not None else ModelConfig(seed=seed)
    metric_key = METRIC_KEYS[grid.metric]
    axes = (
        ("fc_spec", grid.fc_candidates),
        ("optimizer", grid.optimizer_candidates),
        ("batch_size", grid.batch_candidates),
        ("epochs", grid.epoch_candidates),
    )

    rows: list[TuneRow] = []
    chosen: dict[str, object] = {}
    for axis, candidates in axes:
        best_index = None
        best_mean = -np.inf
        axis_rows = []
        for candidate in candidates:
            stats = evaluate_candidate(_with_axis(current, axis, candidate), dataset, folds, extractor)
            axis_rows.append(TuneRow(axis, _label(axis, candidate), stats))
            mean = stats[metric_key][0]
            if mean > best_mean:  # strict: ties keep the earlier candidate
                best_mean = mean
                best_index = len(axis_rows) - 1
        axis_rows[best_index].chosen = True
        winner = candidates[best_index]
        chosen[axis] = winner
        current = _with_axis(current, axis, winner)
        rows.extend(axis_rows)
    return TuneResult(rows, chosen, current)
