"""Synthetic frame pairs with analytic ground-truth flow.

Flow convention: channel 0 is the horizontal displacement (positive right),
channel 1 the vertical displacement (positive down). A pixel ``x`` of frame 1
appears at ``x + flow(x)`` in frame 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .imageio import save_image, write_flo

KINDS = ("translate", "rotate", "two-layer")
TEXTURE_SIGMA = 1.5


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene.

    ``shift`` is ``(u, v)`` in pixels; for ``two-layer`` it moves the
    background while ``fg_shift`` moves a centred square of side ``fg_size``.
    ``angle`` is in degrees; positive angles rotate clockwise on screen
    (y points down).
    """

    kind: str = "translate"
    seed: int = 0
    size: int = 64
    shift: tuple[float, float] = (0.0, 0.0)
    angle: float = 0.0
    noise: float = 0.0
    brightness: float = 0.0
    fg_shift: tuple[float, float] = (0.0, 0.0)
    fg_size: int = 24

    def __post_init__(self):
        object.__setattr__(self, "shift", tuple(float(s) for s in self.shift))
        object.__setattr__(self, "fg_shift", tuple(float(s) for s in self.fg_shift))
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}; expected one of {KINDS}")
        if self.size < 4:
            raise ValueError(f"scene size must be >= 4, got {self.size}")
        limit = self.size / 4
        for name in ("shift", "fg_shift"):
            vec = getattr(self, name)
            if len(vec) != 2:
                raise ValueError(f"{name} needs two components, got {vec}")
            if math.hypot(*vec) > limit:
                raise ValueError(f"|{name}| = {math.hypot(*vec):.3f} exceeds size/4 = {limit}")
        if abs(self.angle) > 15:
            raise ValueError(f"rotation angle must satisfy |angle| <= 15 degrees, got {self.angle}")
        if self.noise < 0:
            raise ValueError(f"noise sigma must be nonnegative, got {self.noise}")
        if self.kind == "two-layer" and not 0 < self.fg_size < self.size:
            raise ValueError(f"fg_size must lie in (0, {self.size}), got {self.fg_size}")

    def with_seed(self, seed: int) -> "SceneSpec":
        return replace(self, seed=int(seed))


def random_texture(rng: np.random.Generator, height: int, width: int, sigma: float = TEXTURE_SIGMA) -> np.ndarray:
    """Gaussian-smoothed uniform noise rescaled to span [0, 1]."""
    tex = gaussian_filter(rng.uniform(size=(height, width)), sigma, mode="reflect")
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / max(hi - lo, 1e-12)


def _sample(tex: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return map_coordinates(tex, [rows, cols], order=1, mode="nearest")


def ground_truth_flow(spec: SceneSpec) -> np.ndarray:
    """Analytic (2, H, W) displacement field of a scene."""
    n = spec.size
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    flow = np.zeros((2, n, n))
    if spec.kind == "rotate":
        c = (n - 1) / 2.0
        t = math.radians(spec.angle)
        dx, dy = xs - c, ys - c
        flow[0] = math.cos(t) * dx - math.sin(t) * dy - dx
        flow[1] = math.sin(t) * dx + math.cos(t) * dy - dy
    else:
        flow[0], flow[1] = spec.shift
        if spec.kind == "two-layer":
            lo = (n - spec.fg_size) // 2
            flow[0, lo : lo + spec.fg_size, lo : lo + spec.fg_size] = spec.fg_shift[0]
            flow[1, lo : lo + spec.fg_size, lo : lo + spec.fg_size] = spec.fg_shift[1]
    return flow


def generate_pair(spec: SceneSpec, seed: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render ``(frame1, frame2, flow)``: two (H, W) float32 frames and (2, H, W) flow.

    Frame 2 is frame 1's texture resampled bilinearly under the scene motion.
    The texture is drawn on a canvas with a margin so that frame 2 has no
    border artefacts.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n = spec.size
    margin = int(math.ceil(n / 4)) + 2 if spec.kind != "rotate" else n // 2
    tex = random_texture(rng, n + 2 * margin, n + 2 * margin)
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    frame1 = tex[margin : margin + n, margin : margin + n]

    if spec.kind == "rotate":
        c = (n - 1) / 2.0
        t = math.radians(spec.angle)
        dx, dy = xs - c, ys - c
        # inverse rotation: frame2(y) = frame1(c + R^-1 (y - c))
        src_x = math.cos(t) * dx + math.sin(t) * dy + c
        src_y = -math.sin(t) * dx + math.cos(t) * dy + c
        frame2 = _sample(tex, src_y + margin, src_x + margin)
    else:
        u, v = spec.shift
        frame2 = _sample(tex, ys - v + margin, xs - u + margin)
        if spec.kind == "two-layer":
            fg_tex = random_texture(rng, n + 2 * margin, n + 2 * margin)
            lo, side = (n - spec.fg_size) // 2, spec.fg_size
            fu, fv = spec.fg_shift
            frame1 = frame1.copy()
            frame1[lo : lo + side, lo : lo + side] = fg_tex[margin + lo : margin + lo + side, margin + lo : margin + lo + side]
            # foreground occupies [lo, lo + side) shifted by fg_shift in frame 2
            inside = (xs - fu >= lo) & (xs - fu <= lo + side - 1) & (ys - fv >= lo) & (ys - fv <= lo + side - 1)
            fg_vals = _sample(fg_tex, ys - fv + margin, xs - fu + margin)
            frame2 = np.where(inside, fg_vals, frame2)

    if spec.noise > 0:
        frame2 = frame2 + rng.normal(0.0, spec.noise, size=frame2.shape)
    if spec.brightness:
        frame2 = frame2 + spec.brightness
    frame1 = np.clip(frame1, 0.0, 1.0).astype(np.float32)
    frame2 = np.clip(frame2, 0.0, 1.0).astype(np.float32)
    return frame1, frame2, ground_truth_flow(spec).astype(np.float32)


def epe(flow: np.ndarray, gt: np.ndarray, margin: int = 4) -> float:
    """Mean end-point error over pixels at least ``margin`` from the border.

    Accepts (2, H, W) or (B, 2, H, W) arrays.
    """
    flow = np.asarray(flow, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if flow.shape != gt.shape:
        raise ValueError(f"flow shape {flow.shape} does not match ground truth {gt.shape}")
    if flow.shape[-3] != 2:
        raise ValueError(f"flow must have 2 channels, got shape {flow.shape}")
    H, W = flow.shape[-2:]
    if 2 * margin >= H or 2 * margin >= W:
        raise ValueError(f"margin {margin} leaves no interior in a {H}x{W} field")
    sl = (Ellipsis, slice(margin, H - margin), slice(margin, W - margin))
    d = flow[sl] - gt[sl]
    return float(np.sqrt(d[..., 0, :, :] ** 2 + d[..., 1, :, :] ** 2).mean())


def export_scene(spec: SceneSpec, directory, name: str) -> tuple[Path, Path, Path]:
    """Write ``NAME_1.pgm``, ``NAME_2.pgm`` and ``NAME.flo`` into ``directory``.

    Frames are quantized to 8 bits, so reloading them is exact only to 1/255.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    f1, f2, flow = generate_pair(spec)
    paths = (directory / f"{name}_1.pgm", directory / f"{name}_2.pgm", directory / f"{name}.flo")
    save_image(paths[0], f1)
    save_image(paths[1], f2)
    write_flo(paths[2], flow)
    return paths
