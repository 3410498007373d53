"""Early battery-life prediction with a flexible parallel CNN.

A numpy library covering the full stack: synthetic fleet generation,
charge-curve preprocessing into video-like tensors, a dual-stream network
with a configurable number of inception units and hand-written backward
passes, a deterministic training loop with the standard regression
metrics, and Gaussian-process Bayesian hyperparameter search.
"""

__version__ = "0.1.0"

from .dataset import BatteryRecord, CycleCurve, load_canonical_dataset, save_canonical_dataset
from .datagen import SynthPolicy, generate_battery, generate_fleet
from .hyperopt import (
    Dimension,
    GpSurrogate,
    SearchSpace,
    Trial,
    bayes_optimize,
    default_search_space,
    expected_improvement,
    gp_fit,
    gp_predict,
    noi_sweep,
)
from .model import (
    DetachFlags,
    FpnnConfig,
    FpnnParams,
    build_model,
    export_block_weights,
    fpnn_backward,
    fpnn_forward,
    import_block_weights,
)
from .preprocess import (
    SamplePair,
    SampleSet,
    ScalerParams,
    apply_scaler,
    assemble_samples,
    fit_scaler,
    hampel_filter,
    load_sample_archive,
    preprocess_fleet,
    resample_to_grid,
    save_sample_archive,
    savitzky_golay,
    split_train_test,
)
from .training import (
    EvalReport,
    TrainConfig,
    adam_step,
    compute_metrics,
    evaluate,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
    train,
)

__all__ = [
    "__version__",
    "BatteryRecord", "CycleCurve", "load_canonical_dataset", "save_canonical_dataset",
    "SynthPolicy", "generate_battery", "generate_fleet",
    "Dimension", "GpSurrogate", "SearchSpace", "Trial", "bayes_optimize",
    "default_search_space", "expected_improvement", "gp_fit", "gp_predict", "noi_sweep",
    "DetachFlags", "FpnnConfig", "FpnnParams", "build_model", "export_block_weights",
    "fpnn_backward", "fpnn_forward", "import_block_weights",
    "SamplePair", "SampleSet", "ScalerParams", "apply_scaler", "assemble_samples",
    "fit_scaler", "hampel_filter", "load_sample_archive", "preprocess_fleet",
    "resample_to_grid", "save_sample_archive", "savitzky_golay", "split_train_test",
    "EvalReport", "TrainConfig", "adam_step", "compute_metrics", "evaluate",
    "load_checkpoint", "mse_loss", "save_checkpoint", "train",
]
