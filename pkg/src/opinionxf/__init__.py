"""OpinionXf: predict post-deliberation survey answers from pre-exposure answers and
presentation content, with optional spectral fusion and a two-qubit quantum token."""
from ._jit import backend_name
from .dataset import (
    AnswerVocabulary,
    BayesOracle,
    DatasetSplit,
    GeneratorConfig,
    SurveyRecord,
    build_vocabulary,
    default_generator_config,
    generate_synthetic,
    load_records,
    split,
    write_records,
)
from .model import ModelConfig, OpinionXfParams, init_params
from .training import Checkpoint, TrainConfig, TrainHistory, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AnswerVocabulary",
    "BayesOracle",
    "Checkpoint",
    "DatasetSplit",
    "GeneratorConfig",
    "ModelConfig",
    "OpinionXfParams",
    "SurveyRecord",
    "TrainConfig",
    "TrainHistory",
    "backend_name",
    "build_vocabulary",
    "default_generator_config",
    "generate_synthetic",
    "init_params",
    "load_checkpoint",
    "load_records",
    "split",
    "train",
    "write_records",
]
