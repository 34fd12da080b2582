"""Multi-scale unsupervised objective: L1 photometric, soft census, edge-aware smoothness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .autograd import Variable, abs_, concat, pad2d, sqrt, square, sum_, value_of

CENSUS_OFFSETS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
CENSUS_SQUASH_EPS = 0.0064
CENSUS_DIST_EPS = 0.1
LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LossWeights:
    photometric: float = 0.2
    census: float = 1.0
    smoothness: float = 50.0

    def __post_init__(self):
        for name in ("photometric", "census", "smoothness"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {getattr(self, name)}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.photometric, self.census, self.smoothness)


@dataclass
class LevelTerms:
    level: int
    pixels: int
    diff: float
    census: float
    smooth: float
    total: float


@dataclass
class LossBreakdown:
    """Scalar objective plus the raw per-level sums it was assembled from."""

    total: Variable
    weights: LossWeights
    levels: list[LevelTerms] = field(default_factory=list)

    @property
    def value(self) -> float:
        return float(self.total.value)

    def term(self, name: str) -> float:
        """Pixel-normalized, unweighted sum of one term over levels."""
        return float(sum(getattr(t, name) / t.pixels for t in self.levels))

    def csv_fields(self) -> dict[str, float]:
        return {
            "loss_total": self.value,
            "loss_diff": self.term("diff"),
            "loss_census": self.term("census"),
            "loss_smooth": self.term("smooth"),
        }


def _check_same(a, b, what: str) -> None:
    sa, sb = value_of(a).shape, value_of(b).shape
    if sa != sb:
        raise ValueError(f"{what}: shape mismatch {sa} vs {sb}")


def photometric_l1(I1, I2_warped) -> Variable:
    _check_same(I1, I2_warped, "photometric_l1")
    return sum_(abs_(I1 - I2_warped))


def to_gray(image):
    """Luma conversion for 3-channel (B,3,H,W) input; 1-channel input passes through."""
    channels = value_of(image).shape[1]
    if channels == 1:
        return image
    if channels != 3:
        raise ValueError(f"cannot convert {channels}-channel image to grayscale")
    weights = np.asarray(LUMA, dtype=value_of(image).dtype).reshape(1, 3, 1, 1)
    return sum_(image * weights, axis=1, keepdims=True)


def census_signature(image) -> Variable:
    """Soft census code (B,8,H,W) over the 3x3 neighbourhood.

    Each channel is a squashed signed difference neighbour - centre;
    neighbours outside the image contribute a zero difference.
    """
    iv = value_of(image)
    if iv.ndim != 4 or iv.shape[1] != 1:
        raise ValueError(f"census needs a grayscale (B,1,H,W) image, got shape {iv.shape}")
    B, _, H, W = iv.shape
    padded = pad2d(image, 1)
    diffs = []
    for dy, dx in CENSUS_OFFSETS:
        valid = np.zeros((1, 1, H, W), dtype=iv.dtype)
        valid[..., max(0, -dy) : H - max(0, dy), max(0, -dx) : W - max(0, dx)] = 1
        neighbour = padded[:, :, 1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
        diffs.append((neighbour - image) * valid)
    d = concat(diffs, axis=1)
    return d / sqrt(square(d) + CENSUS_SQUASH_EPS)


def census_loss(I1, I2_warped) -> Variable:
    """Soft Hamming distance between census codes, summed over pixels."""
    _check_same(I1, I2_warped, "census_loss")
    diff = census_signature(I1) - census_signature(I2_warped)
    sq = square(diff)
    return sum_(sq / (sq + CENSUS_DIST_EPS))


def smoothness_loss(flow, I1) -> Variable:
    """First-order flow smoothness, down-weighted by exp(-|image gradient|)."""
    fv, iv = value_of(flow), value_of(I1)
    if fv.ndim != 4 or iv.ndim != 4 or fv.shape[0] != iv.shape[0] or fv.shape[2:] != iv.shape[2:]:
        raise ValueError(f"smoothness_loss: flow {fv.shape} and image {iv.shape} disagree")
    total = None
    for axis in (3, 2):
        n = fv.shape[axis]
        if n < 2:
            continue
        hi = (slice(None),) * axis + (slice(1, None),)
        lo = (slice(None),) * axis + (slice(None, -1),)
        image_grad = np.abs(iv[hi] - iv[lo]).sum(axis=1, keepdims=True)
        weight = np.exp(-image_grad)
        term = sum_(abs_(flow[hi] - flow[lo]) * weight)
        total = term if total is None else total + term
    if total is None:
        return Variable(np.zeros((), dtype=fv.dtype))
    return total


def _level_terms(I1, I2, flow):
    I2w = F.warp(I2, flow)
    diff = photometric_l1(I1, I2w)
    census = census_loss(to_gray(I1), to_gray(I2w))
    smooth = smoothness_loss(flow, I1)
    return diff, census, smooth


def total_loss(
    flows,
    I1_pyr,
    I2_pyr,
    weights: LossWeights = LossWeights(),
    backward_flows=None,
) -> LossBreakdown:
    """Weighted multi-scale objective.

    Per level, ``(l1 * diff + l2 * census + l3 * smooth) / M`` where ``M`` is
    the number of pixels at that level (times the batch size). Levels are
    weighted uniformly. When ``backward_flows`` is given the symmetric terms,
    warping the first image by the backward flow, are added.
    """
    if len(flows) != len(I1_pyr) or len(flows) != len(I2_pyr):
        raise ValueError(f"{len(flows)} flow levels vs image pyramids of {len(I1_pyr)}/{len(I2_pyr)}")
    if backward_flows is not None and len(backward_flows) != len(flows):
        raise ValueError("backward flows must cover the same levels")
    l1, l2, l3 = weights.as_tuple()
    breakdown = LossBreakdown(total=None, weights=weights)  # type: ignore[arg-type]
    grand = None
    for level, flow in enumerate(flows):
        I1, I2 = I1_pyr[level], I2_pyr[level]
        B, _, H, W = value_of(I1).shape
        pixels = B * H * W
        diff, census, smooth = _level_terms(I1, I2, flow)
        if backward_flows is not None:
            bd, bc, bs = _level_terms(I2, I1, backward_flows[level])
            diff, census, smooth = diff + bd, census + bc, smooth + bs
        level_total = (diff * l1 + census * l2 + smooth * l3) * (1.0 / pixels)
        grand = level_total if grand is None else grand + level_total
        breakdown.levels.append(
            LevelTerms(
                level=level,
                pixels=pixels,
                diff=float(diff.value),
                census=float(census.value),
                smooth=float(smooth.value),
                total=float(level_total.value),
            )
        )
    breakdown.total = grand
    return breakdown
