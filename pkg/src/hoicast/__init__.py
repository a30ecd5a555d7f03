"""Contact-consistent dual-branch diffusion for human-object interaction
forecasting, with a synthetic desk-scale data pipeline."""

__version__ = "0.1.0"

from .config import RunConfig, load_config, toy_config
from .diffusion import NoiseSchedule, make_schedule
from .hoi_data import (DataConfig, HoiSequence, generate_synthetic,
                       load_dataset, save_dataset)
from .metrics import EvalReport, evaluate, evaluate_model
from .model import InteractionModel, build_model, sample_interaction
from .training import LossWeights, StagePlan, train

__all__ = [
    "DataConfig", "EvalReport", "HoiSequence", "InteractionModel",
    "LossWeights", "NoiseSchedule", "RunConfig", "StagePlan", "build_model",
    "evaluate", "evaluate_model", "generate_synthetic", "load_config",
    "load_dataset", "make_schedule", "sample_interaction", "save_dataset",
    "toy_config", "train",
]
