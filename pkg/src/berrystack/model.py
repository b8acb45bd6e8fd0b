"""The two-branch classifier: a frozen feature extractor applied to both band
images, feature concatenation, two trainable ReLU layers, and a sigmoid output
with the inclusive-0.5 decision rule (>= 0.5 means unripe)."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import RIPE, SAMPLE_SIZE, UNRIPE, BispectralSample, LabeledDataset
from .errors import ConfigError, FormatError
from .ioutil import read_keyvalue, write_keyvalue

FEATURE_INPUT = SAMPLE_SIZE * SAMPLE_SIZE * 3

DEFAULT_LEARNING_RATES = {"sgd": 0.01, "adam": 0.001, "adagrad": 0.001}


@dataclass
class FeatureExtractor:
    """A frozen dense stack mapping a flattened 32x32x3 image to a feature vector.

    Two kinds exist: "loaded" (weights read from a weight file, e.g. an exported
    backbone) and "surrogate" (a seeded random projection through a ReLU with zero
    bias, so an all-zero image yields an all-zero feature vector). Parameters are
    never updated by training.
    """

    layers: list[nn.DenseLayer]
    kind: str = "loaded"
    seed: int | None = None
    _digest: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("extractor needs at least one layer")
        if self.layers[0].in_dim != FEATURE_INPUT:
            raise ValueError(
                f"extractor input width must be {FEATURE_INPUT}, got {self.layers[0].in_dim}"
            )
        if any(not layer.frozen for layer in self.layers):
            raise ValueError("every extractor layer must be frozen")
        if self.kind not in ("loaded", "surrogate"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def digest(self) -> str:
        if self._digest is None:
            self._digest = hashlib.sha256(nn.weights_bytes(self.layers)).hexdigest()
        return self._digest

    def features(self, image: np.ndarray) -> np.ndarray:
        return nn.network_apply(self.layers, np.asarray(image, dtype=float).ravel())

    def features_batch(self, images: np.ndarray) -> np.ndarray:
        flat = np.asarray(images, dtype=float).reshape(len(images), -1)
        return nn.network_apply(self.layers, flat)


def make_surrogate_extractor(seed: int, output_dim: int = 512) -> FeatureExtractor:
    """Seeded random-projection extractor: flatten -> fixed He-scaled matrix -> ReLU."""
    if output_dim <= 0:
        raise ValueError("output_dim must be positive")
    rng = np.random.default_rng(seed)
    layer = nn.he_layer(rng, FEATURE_INPUT, output_dim, activation="relu", frozen=True)
    return FeatureExtractor([layer], kind="surrogate", seed=seed)


def load_extractor(path: str | os.PathLike) -> FeatureExtractor:
    """Load a frozen extractor from a weight file; every stored layer must be flagged frozen."""
    layers = nn.load_weights(path)
    if any(not layer.frozen for layer in layers):
        raise FormatError(f"{path}: extractor layers must all carry the frozen flag")
    try:
        return FeatureExtractor(layers, kind="loaded")
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def extract_features(
    sample: BispectralSample, extractor: FeatureExtractor
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic per-band feature vectors (f700, f770)."""
    return extractor.features(sample.band700), extractor.features(sample.band770)


def features_matrix(samples: list[BispectralSample], extractor: FeatureExtractor) -> np.ndarray:
    """Concatenated (f700 | f770) feature rows for a batch of samples."""
    band700 = np.stack([s.band700 for s in samples])
    band770 = np.stack([s.band770 for s in samples])
    return np.hstack([extractor.features_batch(band700), extractor.features_batch(band770)])


@dataclass
class ModelConfig:
    """Head architecture and training hyperparameters.

    Defaults: two 1024-neuron ReLU layers, adam, batch size 10, 20 epochs. When
    learning_rate is None the per-optimizer default applies (sgd 0.01, adam 0.001,
    adagrad 0.001).
    """

    fc_spec: tuple[int, int] = (1024, 1024)
    optimizer: str = "adam"
    learning_rate: float | None = None
    momentum: float = 0.0
    batch_size: int = 10
    epochs: int = 20
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        n1, n2 = self.fc_spec
        if n1 <= 0 or n2 <= 0:
            raise ValueError("fc_spec widths must be positive")
        if self.optimizer not in DEFAULT_LEARNING_RATES:
            raise ValueError(f"optimizer must be one of {sorted(DEFAULT_LEARNING_RATES)}")
        if self.batch_size <= 0 or self.epochs <= 0 or self.patience < 1:
            raise ValueError("batch_size, epochs and patience must be positive")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[self.optimizer]


@dataclass
class TrainedModel:
    extractor: FeatureExtractor
    head: list[nn.DenseLayer]
    config: ModelConfig
    history: nn.TrainHistory | None = None

    def __post_init__(self):
        if len(self.head) != 3:
            raise ConfigError("head must be fc1, fc2 and the sigmoid output layer")
        if self.head[0].in_dim != 2 * self.extractor.output_dim:
            raise ConfigError(
                f"head expects {self.head[0].in_dim} inputs but the extractor pair "
                f"produces {2 * self.extractor.output_dim}"
            )
        if self.head[-1].out_dim != 1 or self.head[-1].activation != "sigmoid":
            raise ConfigError("output layer must be a single sigmoid unit")


def build_head(rng: np.random.Generator, input_dim: int, fc_spec: tuple[int, int]) -> list[nn.DenseLayer]:
    n1, n2 = fc_spec
    return [
        nn.he_layer(rng, input_dim, n1, activation="relu"),
        nn.he_layer(rng, n1, n2, activation="relu"),
        nn.he_layer(rng, n2, 1, activation="sigmoid"),
    ]


def forward(model: TrainedModel, sample: BispectralSample) -> float:
    """Confidence in [0, 1] that the sample is unripe."""
    f700, f770 = extract_features(sample, model.extractor)
    return float(nn.network_apply(model.head, np.concatenate([f700, f770]))[0])


def predict_batch(model: TrainedModel, samples: list[BispectralSample]) -> np.ndarray:
    features = features_matrix(samples, model.extractor)
    return nn.network_apply(model.head, features).ravel()


def classify(confidence: float) -> int:
    """Threshold rule: confidence >= 0.5 is unripe (1), below is ripe (0)."""
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {confidence}")
    return UNRIPE if confidence >= 0.5 else RIPE


def train_model(
    train: LabeledDataset,
    val: LabeledDataset,
    config: ModelConfig,
    extractor: FeatureExtractor,
) -> TrainedModel:
    """Train the head on frozen features; the extractor itself is never touched."""
    rng = np.random.default_rng(config.seed)
    head = build_head(rng, 2 * extractor.output_dim, config.fc_spec)
    schedule = nn.TrainSchedule(config.epochs, config.batch_size, config.patience)
    state = nn.OptimizerState(
        config.optimizer, config.resolved_learning_rate, momentum=config.momentum
    )
    x_train = features_matrix(train.samples, extractor)
    x_val = features_matrix(val.samples, extractor)
    history = nn.fit(
        head,
        (x_train, train.labels()),
        (x_val, val.labels()),
        schedule,
        state,
        seed=config.seed,
    )
    return TrainedModel(extractor, head, config, history)


def accuracy_on(model: TrainedModel, dataset: LabeledDataset) -> float:
    predictions = (predict_batch(model, dataset.samples) >= 0.5).astype(int)
    return float(np.mean(predictions == dataset.labels()))


def save_model(model: TrainedModel, out_dir: str | os.PathLike) -> Path:
    """Persist head weights (binary) plus a plain-text config sidecar; returns the directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nn.save_weights(out_dir / "head.weights", model.head)
    cfg = model.config
    sidecar: dict[str, object] = {
        "fc1": cfg.fc_spec[0],
        "fc2": cfg.fc_spec[1],
        "optimizer": cfg.optimizer,
        "learning_rate": repr(float(cfg.resolved_learning_rate)),
        "momentum": repr(float(cfg.momentum)),
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "patience": cfg.patience,
        "seed": cfg.seed,
        "extractor_digest": model.extractor.digest,
        "extractor_kind": model.extractor.kind,
        "extractor_output_dim": model.extractor.output_dim,
    }
    if model.extractor.kind == "surrogate":
        sidecar["extractor_seed"] = model.extractor.seed
    write_keyvalue(out_dir / "model.cfg", sidecar)
    return out_dir


def load_model(path: str | os.PathLike, extractor: FeatureExtractor | None = None) -> TrainedModel:
    """Reload a persisted model. Surrogate extractors are rebuilt from the sidecar
    recipe when none is supplied; the sidecar digest is always verified."""
    path = Path(path)
    sidecar = read_keyvalue(path / "model.cfg")
    try:
        config = ModelConfig(
            fc_spec=(int(sidecar["fc1"]), int(sidecar["fc2"])),
            optimizer=sidecar["optimizer"],
            learning_rate=float(sidecar["learning_rate"]),
            momentum=float(sidecar["momentum"]),
            batch_size=int(sidecar["batch_size"]),
            epochs=int(sidecar["epochs"]),
            patience=int(sidecar["patience"]),
            seed=int(sidecar["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path / 'model.cfg'}: {exc}") from exc
    if extractor is None:
        if sidecar.get("extractor_kind") != "surrogate":
            raise ConfigError(f"{path}: loaded-extractor models need the extractor passed in")
        extractor = make_surrogate_extractor(
            int(sidecar["extractor_seed"]), int(sidecar["extractor_output_dim"])
        )
    if extractor.digest != sidecar.get("extractor_digest"):
        raise ConfigError(
            f"{path}: extractor digest mismatch; the model was trained with different features"
        )
    head = nn.load_weights(path / "head.weights")
    return TrainedModel(extractor, head, config, history=None)
