"""scikit-learn style wrapper around the trainer and the flow network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .flow import predict_flow
from .params import ModelParams, load_checkpoint, save_checkpoint
from .pyramid import pad_to_multiple
from .synth import epe
from .trainer import PairSampler, TrainConfig, train


def check_image_pairs(X, channels: int = 1) -> np.ndarray:
    """Validate image pairs and return a float32 (n, 2, C, H, W) array.

    Accepts (n, 2, H, W) grayscale pairs or (n, 2, C, H, W).
    """
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 4:
        X = X[:, :, None]
    if X.ndim != 5 or X.shape[1] != 2:
        raise ValueError(f"expected image pairs of shape (n, 2, H, W) or (n, 2, C, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no image pairs given")
    if X.shape[2] != channels:
        raise ValueError(f"images have {X.shape[2]} channels, estimator expects {channels}")
    if not np.all(np.isfinite(X)):
        raise ValueError("image pairs contain NaN or infinite values")
    return X


def check_flow_targets(y, X: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float32)
    n, _, _, H, W = X.shape
    if y.shape != (n, 2, H, W):
        raise ValueError(f"flow targets must have shape {(n, 2, H, W)}, got {y.shape}")
    return y


class PyramidFlowEstimator(BaseEstimator):
    """Label-free coarse-to-fine optical flow.

    ``fit`` trains on image pairs with the photometric/census/smoothness
    objective; ``predict`` returns (n, 2, H, W) flow fields in pixels.
    """

    def __init__(
        self,
        steps: int = 2000,
        batch_size: int = 4,
        lr: float = 1e-4,
        lambda1: float = 0.2,
        lambda2: float = 1.0,
        lambda3: float = 50.0,
        levels: int = 4,
        widths=(16, 32, 64, 96),
        radius: int = 4,
        predictor_widths=(64, 32),
        include_backward: bool = True,
        random_state: int = 0,
    ):
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.levels = levels
        self.widths = widths
        self.radius = radius
        self.predictor_widths = predictor_widths
        self.include_backward = include_backward
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            lambda3=self.lambda3,
            levels=self.levels,
            widths=tuple(self.widths),
            radius=self.radius,
            predictor_widths=tuple(self.predictor_widths),
            include_backward=self.include_backward,
            val_scenes=0,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        """Train on image pairs; ``y`` is ignored (the objective is unsupervised)."""
        config = self._train_config()
        X = check_image_pairs(X)
        padded, _ = pad_to_multiple(X, 2**config.levels)
        sampler = PairSampler(padded[:, 0], padded[:, 1], config.batch_size, config.seed)
        result = train(config, data=sampler)
        self.params_ = result.params
        self.training_log_ = result.log
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_image_pairs(X, self.params_.config.image_channels)
        return predict_flow(self.params_, X[:, 0], X[:, 1])

    def transform(self, X) -> np.ndarray:
        """Flow fields flattened to (n, 2 * H * W) feature rows."""
        flow = self.predict(X)
        return flow.reshape(len(flow), -1)

    def score(self, X, y) -> float:
        """Negative mean end-point error against ground-truth flow ``y``."""
        X = check_image_pairs(X)
        y = check_flow_targets(y, X)
        flow = self.predict(X)
        return -float(np.mean([epe(f, t, margin=0) for f, t in zip(flow, y)]))

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(path, self.params_)

    @classmethod
    def from_checkpoint(cls, path) -> "PyramidFlowEstimator":
        params, _ = load_checkpoint(path)
        return cls.from_params(params)

    @classmethod
    def from_params(cls, params: ModelParams) -> "PyramidFlowEstimator":
        cfg = params.config
        est = cls(levels=cfg.levels, widths=cfg.widths, radius=cfg.radius, predictor_widths=cfg.predictor_widths)
        est.params_ = params
        est.training_log_ = []
        return est
