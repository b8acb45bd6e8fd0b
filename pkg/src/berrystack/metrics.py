"""Evaluation mathematics: confusion counts, support-weighted binary metrics,
ROC and precision-recall sweeps, pairwise-complete Pearson correlation, and the
human-vs-machine sensory comparison table.

Positive class convention throughout: unripe = 1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import classify

SENSORY_SCALE_FIELDS = ("shininess", "colour_uniformity", "firmness", "flavor", "sweetness", "texture")
DEFAULT_CORRELATION_VARIABLES = (
    "mass_g",
    "shininess",
    "colour_uniformity",
    "firmness",
    "flavor",
    "sweetness",
    "texture",
    "human_ripeness",
    "target",
    "machine_confidence_pct",
)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {value!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    warnings: tuple[str, ...] = ()


@dataclass
class CurvePoints:
    kind: str  # "roc" or "pr"
    points: np.ndarray  # (n, 2): roc holds (fpr, tpr), pr holds (recall, precision)
    auc: float | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("curve points must be (n, 2)")


@dataclass
class SensoryRecord:
    """One panel row; score fields are None when the assessor left them blank."""

    berry_id: str
    mass_g: float | None = None
    shininess: float | None = None
    colour_uniformity: float | None = None
    firmness: float | None = None
    flavor: float | None = None
    sweetness: float | None = None
    texture: float | None = None
    skin_strength: str | None = None  # "Y" or "N"
    human_ripeness: float | None = None  # 0..4 colour scale, halves allowed
    target: int | None = None
    machine_confidence_pct: float | None = None

    def __post_init__(self):
        for name in SENSORY_SCALE_FIELDS:
            value = getattr(self, name)
            if value is not None and not 1.0 <= value <= 5.0:
                raise ValueError(f"{name} must lie in the 1..5 scale, got {value}")
        if self.skin_strength is not None and self.skin_strength not in ("Y", "N"):
            raise ValueError("skin_strength must be 'Y' or 'N'")
        if self.human_ripeness is not None and not 0.0 <= self.human_ripeness <= 4.0:
            raise ValueError("human_ripeness must lie in 0..4")
        if self.target is not None and self.target not in (0, 1):
            raise ValueError("target must be binary")
        if self.machine_confidence_pct is not None and not (
            0.0 <= self.machine_confidence_pct <= 100.0
        ):
            raise ValueError("machine_confidence_pct must lie in [0, 100]")

    def value_of(self, variable: str) -> float | None:
        if variable == "skin_strength":
            if self.skin_strength is None:
                return None
            return 1.0 if self.skin_strength == "Y" else 0.0
        value = getattr(self, variable)
        return None if value is None else float(value)


@dataclass
class CorrelationMatrix:
    variables: tuple[str, ...]
    values: np.ndarray  # NaN marks undefined entries
    counts: np.ndarray | None = None


def confusion(predictions, labels) -> ConfusionMatrix:
    """Count tp/fp/tn/fn with unripe (1) as the positive class."""
    predictions = np.asarray(predictions, dtype=int).ravel()
    labels = np.asarray(labels, dtype=int).ravel()
    if predictions.shape != labels.shape:
        raise ValueError(
            f"{predictions.size} predictions vs {labels.size} labels"
        )
    if predictions.size == 0:
        raise ValueError("nothing to score")
    for name, values in (("predictions", predictions), ("labels", labels)):
        if not np.all((values == 0) | (values == 1)):
            raise ValueError(f"{name} must be binary")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    return ConfusionMatrix(tp, fp, tn, fn)


def weighted_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Support-weighted averages of the per-class precision/recall/F1.

    Class supports are the label counts; a class with zero predicted positives
    contributes precision 0 (flagged in the warnings). Support-weighted recall
    collapses to plain accuracy, which is kept as an internal consistency check.
    """
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    warnings: list[str] = []

    support_pos = cm.tp + cm.fn
    support_neg = cm.tn + cm.fp

    def _safe(num: int, denom: int, message: str) -> float:
        if denom == 0:
            warnings.append(message)
            return 0.0
        return num / denom

    precision_pos = _safe(cm.tp, cm.tp + cm.fp, "no predicted positives: class-1 precision set to 0")
    precision_neg = _safe(cm.tn, cm.tn + cm.fn, "no predicted negatives: class-0 precision set to 0")
    recall_pos = cm.tp / support_pos if support_pos else 0.0
    recall_neg = cm.tn / support_neg if support_neg else 0.0

    def _f1(precision: float, recall: float) -> float:
        return 0.0 if precision + recall == 0.0 else 2.0 * precision * recall / (precision + recall)

    weighted = lambda pos, neg: (support_pos * pos + support_neg * neg) / cm.total
    # The support weights cancel against the recall denominators, so the weighted
    # recall telescopes to (tp + tn) / total; computing it that way keeps the
    # recall == accuracy identity exact instead of merely within rounding.
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        weighted_precision=weighted(precision_pos, precision_neg),
        weighted_recall=(cm.tp + cm.tn) / cm.total,
        weighted_f1=weighted(_f1(precision_pos, recall_pos), _f1(precision_neg, recall_neg)),
        warnings=tuple(warnings),
    )


def _score_sweep(confidences, labels):
    confidences = np.asarray(confidences, dtype=float).ravel()
    labels = np.asarray(labels, dtype=int).ravel()
    if confidences.shape != labels.shape or confidences.size == 0:
        raise ValueError("confidences and labels must be nonempty and aligned")
    if not np.all(np.isfinite(confidences)):
        raise ValueError("confidences must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    thresholds = np.unique(confidences)[::-1]  # equal scores collapse to one threshold
    return confidences, labels, thresholds


def roc_auc(confidences, labels) -> CurvePoints:
    """ROC sweep over the unique scores with trapezoidal area under the curve."""
    confidences, labels, thresholds = _score_sweep(confidences, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    points = [(0.0, 0.0)]
    for threshold in thresholds:
        predicted = confidences >= threshold
        tpr = np.sum(predicted & (labels == 1)) / n_pos
        fpr = np.sum(predicted & (labels == 0)) / n_neg
        points.append((float(fpr), float(tpr)))
    points = np.asarray(points)
    auc = float(np.trapezoid(points[:, 1], points[:, 0]))
    return CurvePoints("roc", points, auc)


def pr_curve(confidences, labels) -> CurvePoints:
    """(recall, precision) at every unique-score threshold, high threshold first."""
    confidences, labels, thresholds = _score_sweep(confidences, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("precision-recall needs at least one positive")
    points = []
    for threshold in thresholds:
        predicted = confidences >= threshold
        tp = np.sum(predicted & (labels == 1))
        points.append((float(tp / n_pos), float(tp / predicted.sum())))
    return CurvePoints("pr", np.asarray(points))


def pearson_matrix(records: list[SensoryRecord], variables=DEFAULT_CORRELATION_VARIABLES) -> CorrelationMatrix:
    """Pairwise-complete Pearson r for every variable pair.

    Rows missing either variable drop out of that pair only. Pairs with fewer than
    3 complete rows, or a constant variable, get NaN (undefined) rather than a
    number.
    """
    if len(records) < 3:
        raise ValueError("need at least 3 records to correlate")
    variables = tuple(variables)
    columns = {
        var: np.array(
            [np.nan if r.value_of(var) is None else r.value_of(var) for r in records], dtype=float
        )
        for var in variables
    }
    size = len(variables)
    values = np.full((size, size), np.nan)
    counts = np.zeros((size, size), dtype=int)
    for i, var_a in enumerate(variables):
        for j in range(i, size):
            var_b = variables[j]
            a, b = columns[var_a], columns[var_b]
            keep = ~(np.isnan(a) | np.isnan(b))
            counts[i, j] = counts[j, i] = int(keep.sum())
            if counts[i, j] < 3:
                continue
            x, y = a[keep], b[keep]
            if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
                continue  # constant variable: correlation undefined
            r = float(np.corrcoef(x, y)[0, 1])
            values[i, j] = values[j, i] = r
    return CorrelationMatrix(variables, values, counts)


def sensory_rows(records: list[SensoryRecord]) -> list[dict]:
    """Per-berry machine labels, agreement flags, and near-boundary highlights.

    A row is near-boundary when its confidence sits within 10 percentage points of
    the 50% threshold.
    """
    rows = []
    for record in records:
        if record.target is None or record.machine_confidence_pct is None:
            raise ValueError(f"berry {record.berry_id}: needs both target and machine confidence")
        machine_label = classify(record.machine_confidence_pct / 100.0)
        rows.append(
            {
                "berry_id": record.berry_id,
                "target": record.target,
                "machine_label": machine_label,
                "confidence_pct": record.machine_confidence_pct,
                "agreement": machine_label == record.target,
                "near_boundary": abs(record.machine_confidence_pct - 50.0) <= 10.0,
            }
        )
    return rows


def sensory_report(records: list[SensoryRecord]) -> str:
    """Tab-separated comparison table of human targets against machine labels."""
    header = "berry_id\ttarget\tmachine_label\tconfidence_pct\tagreement\tnear_boundary"
    lines = [header]
    for row in sensory_rows(records):
        lines.append(
            "\t".join(
                (
                    row["berry_id"],
                    str(row["target"]),
                    str(row["machine_label"]),
                    f"{row['confidence_pct']:.2f}",
                    "yes" if row["agreement"] else "NO",
                    "*" if row["near_boundary"] else "-",
                )
            )
        )
    return "\n".join(lines) + "\n"
