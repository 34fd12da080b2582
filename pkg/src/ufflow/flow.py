"""Coarse-to-fine flow estimation: warp, correlate, predict a residual, accumulate."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .autograd import Variable, as_variable, concat, leaky_relu, no_grad, value_of
from .params import ModelParams
from .pyramid import extract_pyramid, pad_to_multiple

warp = F.warp
cost_volume = F.cost_volume


def upsample_flow(flow) -> Variable:
    """Bilinear 2x upsampling; displacements are doubled to finer-grid pixels."""
    return F.upsample_bilinear_2x(flow) * 2.0


def predict_residual(q1, up_flow, cv, params: ModelParams, level: int) -> Variable:
    """Residual flow from features, the incoming coarse flow and the cost volume."""
    cfg = params.config
    x = concat([q1, up_flow, cv], axis=1)
    expected = cfg.predictor_inputs(level)
    if x.shape[1] != expected:
        raise ValueError(
            f"level {level} predictor expects {expected} input channels, got {x.shape[1]} "
            f"(features {value_of(q1).shape[1]}, flow {value_of(up_flow).shape[1]}, cost volume {value_of(cv).shape[1]})"
        )
    n_layers = len(cfg.predictor_widths) + 1
    for i in range(1, n_layers + 1):
        prefix = f"predictor.{level}.conv{i}"
        x = F.conv2d(x, params[prefix + ".weight"], params[prefix + ".bias"], stride=1, padding=1)
        if i < n_layers:
            x = leaky_relu(x, cfg.slope)
    return x


def coarse_to_fine(pyr1, pyr2, params: ModelParams) -> list[Variable]:
    """Run the estimator over two feature pyramids; entry ``l`` is the level-l flow."""
    cfg = params.config
    flows: list[Variable] = []
    flow = None
    for level in range(cfg.levels, -1, -1):
        q1, q2 = pyr1[level], pyr2[level]
        if flow is None:
            # the coarsest level starts from zero flow, so there is nothing to warp
            B, _, H, W = q1.shape
            up = np.zeros((B, 2, H, W), dtype=q1.dtype)
            q2w = q2
        else:
            up = upsample_flow(flow)
            q2w = warp(q2, up)
        cv = cost_volume(q1, q2w, cfg.radius)
        residual = predict_residual(q1, up, cv, params, level)
        flow = residual + up if isinstance(up, Variable) else residual
        flows.append(flow)
    return flows[::-1]


def _check_pair(I1, I2) -> None:
    s1, s2 = value_of(I1).shape, value_of(I2).shape
    if s1 != s2:
        raise ValueError(f"image shapes differ: {s1} vs {s2}")


def estimate_flow(I1, I2, params: ModelParams) -> list[Variable]:
    """Forward flow I1 -> I2 at every pyramid level, finest first."""
    _check_pair(I1, I2)
    return coarse_to_fine(extract_pyramid(I1, params), extract_pyramid(I2, params), params)


def estimate_backward(I1, I2, params: ModelParams) -> list[Variable]:
    """Backward flow I2 -> I1 with the same parameters."""
    return estimate_flow(I2, I1, params)


def estimate_bidirectional(I1, I2, params: ModelParams) -> tuple[list[Variable], list[Variable]]:
    """Forward and backward flows in one batched pass.

    Both images go through the feature extractor once; the backward direction
    reuses the same pyramids with the roles swapped.
    """
    _check_pair(I1, I2)
    B = value_of(I1).shape[0]
    pyr = extract_pyramid(concat([as_variable(I1), as_variable(I2)], axis=0), params)
    swapped = [concat([q[B:], q[:B]], axis=0) for q in pyr]
    flows = coarse_to_fine(pyr, swapped, params)
    return [f[:B] for f in flows], [f[B:] for f in flows]


def predict_flow(params: ModelParams, I1: np.ndarray, I2: np.ndarray) -> np.ndarray:
    """Full-resolution forward flow for arbitrary-size (B,C,H,W) images.

    Inputs are reflect-padded to the pyramid's size multiple and the level-0
    flow is cropped back.
    """
    I1 = np.asarray(I1, dtype=np.float32)
    I2 = np.asarray(I2, dtype=np.float32)
    _check_pair(I1, I2)
    p1, (H, W) = pad_to_multiple(I1, params.config.divisor)
    p2, _ = pad_to_multiple(I2, params.config.divisor)
    with no_grad():
        flow = estimate_flow(p1, p2, params)[0].value
    return np.ascontiguousarray(flow[:, :, :H, :W])
