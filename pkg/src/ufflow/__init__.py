"""Unsupervised coarse-to-fine optical flow on a small numpy autodiff core."""

from .autograd import Variable, backward, no_grad
from .estimator import PyramidFlowEstimator
from .flow import estimate_backward, estimate_bidirectional, estimate_flow, predict_flow
from .losses import LossWeights, total_loss
from .params import ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .synth import SceneSpec, epe, export_scene, generate_pair
from .trainer import TrainConfig, evaluate, resume, train

__all__ = [
    "LossWeights",
    "ModelConfig",
    "ModelParams",
    "PyramidFlowEstimator",
    "SceneSpec",
    "TrainConfig",
    "Variable",
    "backward",
    "epe",
    "estimate_backward",
    "estimate_bidirectional",
    "estimate_flow",
    "evaluate",
    "export_scene",
    "generate_pair",
    "load_checkpoint",
    "no_grad",
    "predict_flow",
    "resume",
    "save_checkpoint",
    "total_loss",
    "train",
]
