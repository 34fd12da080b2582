"""Learned feature pyramids and plain image pyramids."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .autograd import Variable, as_variable, leaky_relu, value_of
from .params import ModelParams


class PaddingError(ValueError):
    """Spatial size not divisible by the pyramid's total reduction factor."""


def check_divisible(shape, levels: int) -> None:
    H, W = shape[-2:]
    div = 2**levels
    if H % div or W % div:
        need_h = -H % div
        need_w = -W % div
        raise PaddingError(
            f"input {H}x{W} must be divisible by {div} for {levels} levels; "
            f"pad by {need_h} rows and {need_w} columns (see pad_to_multiple)"
        )


def pad_to_multiple(image: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad the bottom/right of a (..., H, W) array to a multiple size.

    Returns the padded array and the original ``(H, W)`` for cropping.
    """
    H, W = image.shape[-2:]
    ph, pw = -H % multiple, -W % multiple
    if ph == 0 and pw == 0:
        return image, (H, W)
    widths = [(0, 0)] * (image.ndim - 2) + [(0, ph), (0, pw)]
    # reflect needs pad < size; fall back to edge for tiny inputs
    mode = "reflect" if ph < H and pw < W else "edge"
    return np.pad(image, widths, mode=mode), (H, W)


def extract_pyramid(image, params: ModelParams) -> list[Variable]:
    """Feature pyramid ``[q^0, ..., q^L]`` with ``q^0`` the input itself.

    Each level applies a stride-1 then a stride-2 3x3 convolution, both
    followed by leaky ReLU.
    """
    cfg = params.config
    x = as_variable(image)
    if x.ndim != 4:
        raise ValueError(f"extract_pyramid expects a (B,C,H,W) image, got shape {x.shape}")
    if x.shape[1] != cfg.image_channels:
        raise ValueError(f"image has {x.shape[1]} channels, model expects {cfg.image_channels}")
    check_divisible(x.shape, cfg.levels)
    levels = [x]
    for level in range(1, cfg.levels + 1):
        prefix = f"extractor.{level}"
        h = F.conv2d(x, params[prefix + ".conv1.weight"], params[prefix + ".conv1.bias"], stride=1, padding=1)
        h = leaky_relu(h, cfg.slope)
        h = F.conv2d(h, params[prefix + ".conv2.weight"], params[prefix + ".conv2.bias"], stride=2, padding=1)
        x = leaky_relu(h, cfg.slope)
        levels.append(x)
    return levels


def downsample_image_pyramid(image, levels: int = 4) -> list[np.ndarray]:
    """Image pyramid by repeated 2x2 averaging, finest first."""
    arr = value_of(image)
    check_divisible(arr.shape, levels)
    out = [arr]
    for _ in range(levels):
        out.append(F.avg_pool_2x(out[-1]).value)
    return out
