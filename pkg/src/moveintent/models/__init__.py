"""Model zoo, training protocol, spectral SVM baseline and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import FUSION_VARIANTS, VARIANTS, ModelConfig, TrainConfig
from .svm import SvmConfig, SvmModel, select_lambda, spectral_features, svm_predict, svm_train
from .train import Evaluation, TrainResult, evaluate, train
from .zoo import Model, NaiveAverage, build_model, config_for, naive_average

__all__ = [
    "FUSION_VARIANTS", "VARIANTS", "Evaluation", "Model", "ModelConfig", "NaiveAverage",
    "SvmConfig", "SvmModel", "TrainConfig", "TrainResult", "build_model", "config_for",
    "evaluate", "load_checkpoint", "naive_average", "save_checkpoint", "select_lambda",
    "spectral_features", "svm_predict", "svm_train", "train",
]
