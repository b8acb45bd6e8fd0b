"""Homogeneous ensembles: bootstrap-trained copies of the two-branch head,
combined by stacking their confidences as features for a logistic-regression
meta-learner fitted by maximum likelihood (ridge-damped gradient descent)."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import BispectralSample, LabeledDataset, bootstrap_subset
from .errors import ConfigError, FormatError, NumericError, TrainingError
from .ioutil import read_keyvalue, write_keyvalue
from .model import (
    FeatureExtractor,
    ModelConfig,
    TrainedModel,
    features_matrix,
    load_model,
    save_model,
    train_model,
)


@dataclass
class EnsembleConfig:
    n_learners: int = 5
    base: ModelConfig = None
    seed: int = 0

    def __post_init__(self):
        if self.n_learners < 2:
            raise ValueError("an ensemble needs at least 2 base learners")
        if self.base is None:
            self.base = ModelConfig()


@dataclass
class StackedFeatures:
    """Rows of base-learner confidences (one column per learner) with their labels."""

    matrix: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.matrix.ndim != 2 or self.matrix.shape[0] == 0:
            raise ValueError("stack must be a nonempty 2-D matrix")
        if self.labels.shape != (self.matrix.shape[0],):
            raise ValueError("one label per stacked row is required")
        if self.matrix.min() < 0.0 or self.matrix.max() > 1.0:
            raise ValueError("stacked confidences must lie in [0, 1]")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")

    @property
    def n_learners(self) -> int:
        return self.matrix.shape[1]


@dataclass
class FitDiagnostics:
    iterations: int
    final_nll: float
    converged: bool
    nll_trace: list[float]


@dataclass
class MetaLearner:
    """Logistic combiner sigma(intercept + coefficients . confidences)."""

    intercept: float
    coefficients: np.ndarray
    diagnostics: FitDiagnostics | None = None

    def __post_init__(self):
        self.intercept = float(self.intercept)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.ndim != 1:
            raise ValueError("coefficients must be a vector, one entry per learner")
        if not (np.isfinite(self.intercept) and np.all(np.isfinite(self.coefficients))):
            raise NumericError("meta-learner parameters must be finite")

    def predict(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.coefficients.size:
            raise ValueError(
                f"stack rows have {rows.shape[1]} columns, expected {self.coefficients.size}"
            )
        return nn.sigmoid(self.intercept + rows @ self.coefficients)


@dataclass
class EnsembleModel:
    learners: list[TrainedModel]
    meta: MetaLearner
    config: EnsembleConfig

    def __post_init__(self):
        if len(self.learners) != self.config.n_learners:
            raise ConfigError("learner count does not match the ensemble configuration")
        if self.meta.coefficients.size != len(self.learners):
            raise ConfigError("meta-learner width does not match the learner count")
        first = self.learners[0]
        for learner in self.learners[1:]:
            if learner.config.fc_spec != first.config.fc_spec:
                raise ConfigError("ensemble must be homogeneous: all heads share one fc_spec")
            if learner.extractor.digest != first.extractor.digest:
                raise ConfigError("ensemble learners must share one frozen extractor")

    @property
    def extractor(self) -> FeatureExtractor:
        return self.learners[0].extractor


def train_base_learners(
    train: LabeledDataset,
    val: LabeledDataset,
    config: EnsembleConfig,
    extractor: FeatureExtractor,
) -> list[TrainedModel]:
    """Train one head per bootstrap subset; learner i uses subset seed config.seed + i
    and initialization seed base.seed + i. Expects an already-oversampled train set."""
    learners = []
    for i in range(config.n_learners):
        subset = bootstrap_subset(train, seed=config.seed + i)
        learner_config = replace(config.base, seed=config.base.seed + i)
        try:
            learners.append(train_model(subset, val, learner_config, extractor))
        except (TrainingError, NumericError) as exc:
            raise TrainingError(f"base learner {i}: {exc}") from exc
    return learners


def stack_predictions(
    learners: list[TrainedModel], samples: list[BispectralSample]
) -> StackedFeatures:
    """matrix[s][i] = learner i's confidence on sample s."""
    if not samples:
        raise ValueError("need at least one sample to stack")
    if not learners:
        raise ValueError("need at least one learner to stack")
    first = learners[0].extractor
    if any(l.extractor.digest != first.digest for l in learners):
        raise ConfigError("stacking requires learners that share one extractor")
    features = features_matrix(samples, first)
    columns = [nn.network_apply(l.head, features).ravel() for l in learners]
    labels = np.array([s.label for s in samples], dtype=int)
    return StackedFeatures(np.column_stack(columns), labels)


def _nll(
    matrix: np.ndarray, labels: np.ndarray, intercept: float, coef: np.ndarray, ridge: float
) -> float:
    z = intercept + matrix @ coef
    # log(1 + e^z) - y z, the numerically safe Bernoulli negative log-likelihood
    return float(np.mean(np.logaddexp(0.0, z) - labels * z) + 0.5 * ridge * coef @ coef)


def fit_meta(
    stacked: StackedFeatures,
    ridge: float = 1e-3,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> MetaLearner:
    """Fit the logistic meta-learner by monotone gradient descent.

    Minimizes the mean Bernoulli negative log-likelihood plus an L2 ridge on the
    coefficients (the intercept stays unpenalized, so perfectly separable stacks
    keep finite parameters). Steps use backtracking with expansion: a step is only
    accepted if it lowers the objective, which makes the recorded trace
    non-increasing by construction. Converged means gradient max-norm < tol;
    hitting max_iter first is reported in the diagnostics, not raised.
    """
    labels = stacked.labels.astype(float)
    if labels.min() == labels.max():
        raise ValueError("meta-learner fitting needs both labels in the stack")
    matrix = stacked.matrix
    n, width = matrix.shape

    intercept = 0.0
    coef = np.zeros(width)
    # Upper bound on the objective's curvature gives a safe initial step.
    lipschitz = (np.sum(matrix * matrix) / n + 1.0) / 4.0 + ridge
    step = 1.0 / lipschitz

    current = _nll(matrix, labels, intercept, coef, ridge)
    trace = [current]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        p = nn.sigmoid(intercept + matrix @ coef)
        residual = p - labels
        grad_intercept = float(np.mean(residual))
        grad_coef = matrix.T @ residual / n + ridge * coef
        grad_max = max(abs(grad_intercept), float(np.max(np.abs(grad_coef))) if width else 0.0)
        if grad_max < tol:
            converged = True
            iterations -= 1
            break

        accepted = False
        trial = step
        for _ in range(60):
            cand_intercept = intercept - trial * grad_intercept
            cand_coef = coef - trial * grad_coef
            cand_nll = _nll(matrix, labels, cand_intercept, cand_coef, ridge)
            if cand_nll < current:
                intercept, coef, current = cand_intercept, cand_coef, cand_nll
                accepted = True
                break
            trial *= 0.5
        if not accepted:  # flat to machine precision
            iterations -= 1
            break
        trace.append(current)
        step = min(trial * 2.0, 1e6)

    diagnostics = FitDiagnostics(iterations, current, converged, trace)
    return MetaLearner(intercept, coef, diagnostics)


def predict_ensemble(model: EnsembleModel, sample: BispectralSample) -> float:
    """Meta-combined confidence sigma(intercept + coefficients . base confidences)."""
    stacked = stack_predictions(model.learners, [sample])
    return float(model.meta.predict(stacked.matrix)[0])


def predict_ensemble_batch(model: EnsembleModel, samples: list[BispectralSample]) -> np.ndarray:
    stacked = stack_predictions(model.learners, samples)
    return model.meta.predict(stacked.matrix)


def train_ensemble(
    train: LabeledDataset,
    val: LabeledDataset,
    config: EnsembleConfig,
    extractor: FeatureExtractor,
    ridge: float = 1e-3,
) -> EnsembleModel:
    """Full pipeline: bootstrap-train the learners, stack their predictions on the
    held-out validation split, and fit the meta-learner on that stack."""
    learners = train_base_learners(train, val, config, extractor)
    stacked = stack_predictions(learners, val.samples)
    meta = fit_meta(stacked, ridge=ridge)
    return EnsembleModel(learners, meta, config)


def stack_digest(stacked: StackedFeatures) -> str:
    payload = stacked.matrix.astype("<f8").tobytes() + stacked.labels.astype("<i8").tobytes()
    return hashlib.sha256(payload).hexdigest()


def save_ensemble(
    model: EnsembleModel, out_dir: str | os.PathLike, stacked: StackedFeatures | None = None
) -> Path:
    """Write one model directory per learner plus a plain-text meta file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, learner in enumerate(model.learners):
        save_model(learner, out_dir / f"learner_{i:02d}")
    meta_items: dict[str, object] = {
        "n_learners": model.config.n_learners,
        "seed": model.config.seed,
        "intercept": repr(float(model.meta.intercept)),
        "coefficients": ",".join(repr(float(c)) for c in model.meta.coefficients),
    }
    if stacked is not None:
        meta_items["stack_digest"] = stack_digest(stacked)
    write_keyvalue(out_dir / "meta.txt", meta_items)
    return out_dir


def load_ensemble(path: str | os.PathLike, extractor: FeatureExtractor | None = None) -> EnsembleModel:
    path = Path(path)
    meta_items = read_keyvalue(path / "meta.txt")
    try:
        n_learners = int(meta_items["n_learners"])
        seed = int(meta_items["seed"])
        intercept = float(meta_items["intercept"])
        coefficients = np.array([float(v) for v in meta_items["coefficients"].split(",")])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path / 'meta.txt'}: {exc}") from exc
    learners = []
    for i in range(n_learners):
        learner_dir = path / f"learner_{i:02d}"
        if not learner_dir.is_dir():
            raise FormatError(f"{path}: missing learner directory {learner_dir.name}")
        learner = load_model(learner_dir, extractor)
        if extractor is None:
            extractor = learner.extractor
        learners.append(learner)
    config = EnsembleConfig(n_learners=n_learners, base=learners[0].config, seed=seed)
    return EnsembleModel(learners, MetaLearner(intercept, coefficients), config)
