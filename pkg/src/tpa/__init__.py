"""Temporal prompt alignment on precomputed frame embeddings."""
from .autodiff import Tensor, Tape, no_grad
from .config import Config, ConfigError, load_config
from .dataio import (DataFormatError, Dataset, PromptBank, VideoRecord, bin_ef, load_prompt_bank,
                     read_dataset, sample_clip, stratified_folds, synth_generate, write_dataset)
from .gradcheck import grad_check
from .metrics import CalibrationReport, PredictionSet, calibration_report
from .model import TPAModel
from .trainer import cross_validate, evaluate, train_fold

__version__ = "0.1.0"
