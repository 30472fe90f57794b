"""Viewport-unaware blind quality assessment for equirectangular and planar images."""

from .data import DatasetManifest, ErpImage, PreprocessConfig, QualityRecord, load_manifest, preprocess, split_dataset
from .evaluate import EvalResult, cross_database, evaluate
from .gmad import GmadPair, GmadQuery, select_pairs
from .metrics import logistic_fit, median_over_repeats, plcc, srcc
from .model import VUGA, ModelConfig, build_model
from .train import Checkpoint, TrainConfig, fit, mse_loss

__version__ = "0.1.0"
