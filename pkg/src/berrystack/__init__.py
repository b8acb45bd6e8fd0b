"""berrystack: bispectral berry-ripeness pipeline.

Spectral wavelength selection from hyperspectral cubes, a two-branch classifier
with a frozen feature extractor and a trainable dense head, bootstrap ensembles
combined by a stacked logistic meta-learner, and the matching evaluation and
tuning machinery.
"""

__version__ = "0.1.0"

from .data import (
    RIPE,
    UNRIPE,
    AugmentationSpec,
    BispectralSample,
    LabeledDataset,
    StereoFrame,
    augment,
    augment_dataset,
    bootstrap_subset,
    crop_resize,
    hist_equalize,
    load_dataset,
    pseudo_colour,
    random_oversample,
    save_dataset,
    split_stereo,
    stratified_split,
)
from .ensemble import (
    EnsembleConfig,
    EnsembleModel,
    MetaLearner,
    StackedFeatures,
    fit_meta,
    predict_ensemble,
    predict_ensemble_batch,
    stack_predictions,
    train_base_learners,
    train_ensemble,
)
from .errors import ConfigError, FormatError, NumericError, TrainingError
from .metrics import (
    ConfusionMatrix,
    CorrelationMatrix,
    CurvePoints,
    MetricsReport,
    SensoryRecord,
    confusion,
    pearson_matrix,
    pr_curve,
    roc_auc,
    sensory_report,
    sensory_rows,
    weighted_metrics,
)
from .model import (
    FeatureExtractor,
    ModelConfig,
    TrainedModel,
    classify,
    extract_features,
    forward,
    load_extractor,
    load_model,
    make_surrogate_extractor,
    predict_batch,
    save_model,
    train_model,
)
from .spectral import (
    ClassSpectrum,
    HyperspectralCube,
    SegmentationMask,
    WavelengthPair,
    calibrate,
    class_separation,
    load_cube,
    mean_spectrum,
    normalize_spectrum,
    save_cube,
    select_wavelengths,
)
from .synth import make_bispectral_dataset, make_ripeness_cube, make_ripeness_spectra
from .tuning import (
    FoldAssignment,
    GridSpec,
    TuneResult,
    coordinate_grid_search,
    evaluate_candidate,
    stratified_kfold,
)
