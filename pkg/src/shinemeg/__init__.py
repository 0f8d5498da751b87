"""MEG speech/silence decoding with the SHINE sequence-to-sequence network."""

__version__ = "0.1.0"

from .dataset import (
    SessionRecord,
    SplitPlan,
    SynthConfig,
    TrainingWindow,
    leave_session_out_split,
    load_session,
    make_windows,
    synth_session,
    write_session,
)
from .ensemble import EnsembleSpec, average_traces, combine_traces, ensemble_evaluate
from .estimator import ShineDecoder, ThresholdCalibrator
from .inference import (
    ConfusionCounts,
    PredictionTrace,
    binarize,
    confusion,
    f1_macro,
    predict_session,
    select_threshold,
)
from .model import ModelConfig, ShineModel, count_params, forward, init_model, load_checkpoint, save_checkpoint
from .signal_core import ScoreSequence, neg_pearson_loss, pearson_corr, trim_edges, zscore_normalize
from .training import TrainConfig, TrainReport, train, validate

__all__ = [
    "ConfusionCounts",
    "EnsembleSpec",
    "ModelConfig",
    "PredictionTrace",
    "ScoreSequence",
    "SessionRecord",
    "ShineDecoder",
    "ShineModel",
    "SplitPlan",
    "SynthConfig",
    "ThresholdCalibrator",
    "TrainConfig",
    "TrainReport",
    "TrainingWindow",
    "average_traces",
    "binarize",
    "combine_traces",
    "confusion",
    "count_params",
    "ensemble_evaluate",
    "f1_macro",
    "forward",
    "init_model",
    "leave_session_out_split",
    "load_checkpoint",
    "load_session",
    "make_windows",
    "neg_pearson_loss",
    "pearson_corr",
    "predict_session",
    "save_checkpoint",
    "select_threshold",
    "synth_session",
    "train",
    "trim_edges",
    "validate",
    "write_session",
    "zscore_normalize",
]
