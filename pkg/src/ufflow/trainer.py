"""Unsupervised training loop, checkpointing, logging and EPE evaluation."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .autograd import backward
from .flow import estimate_bidirectional, estimate_flow, predict_flow
from .imageio import load_image, to_grayscale
from .losses import LossBreakdown, LossWeights, total_loss
from .optim import AdamState, adam_step
from .params import ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .pyramid import downsample_image_pyramid
from .synth import SceneSpec, epe, generate_pair

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "loss_total", "loss_diff", "loss_census", "loss_smooth", "epe_val")
STEP_RECORD = "train.step"
VALIDATION_SEED_BASE = 1_000_003


class ConfigError(ValueError):
    """Malformed or inconsistent training configuration."""


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, breakdown: LossBreakdown):
        self.step = step
        self.breakdown = breakdown
        terms = ", ".join(f"{k}={v:.6g}" for k, v in breakdown.csv_fields().items())
        super().__init__(f"non-finite loss at step {step}: {terms}")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    lambda1: float = 0.2
    lambda2: float = 1.0
    lambda3: float = 50.0
    levels: int = 4
    widths: tuple[int, ...] = (16, 32, 64, 96)
    radius: int = 4
    predictor_widths: tuple[int, ...] = (64, 32)
    include_backward: bool = True
    # synthetic | frames
    dataset: str = "synthetic"
    scene: str = "translate"
    shift: tuple[float, float] = (2.0, 1.0)
    angle: float = 0.0
    image_size: int = 64
    noise: float = 0.0
    brightness: float = 0.0
    frames_dir: str | None = None
    val_scenes: int = 4
    val_interval: int = 100
    checkpoint_interval: int = 500
    checkpoint_dir: str | None = None
    log_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.predictor_widths = tuple(int(w) for w in self.predictor_widths)
        self.shift = tuple(float(s) for s in self.shift)
        self.validate()

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        for name in ("batch_size", "levels", "radius", "image_size", "val_interval", "checkpoint_interval"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.val_scenes < 0:
            raise ConfigError(f"val_scenes must be >= 0, got {self.val_scenes}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.dataset not in ("synthetic", "frames"):
            raise ConfigError(f"dataset must be 'synthetic' or 'frames', got {self.dataset!r}")
        if self.dataset == "frames" and not self.frames_dir:
            raise ConfigError("dataset=frames requires frames_dir")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(
            levels=self.levels,
            widths=self.widths,
            radius=self.radius,
            predictor_widths=self.predictor_widths,
        )

    def scene_spec(self, seed: int = 0) -> SceneSpec:
        return SceneSpec(
            kind=self.scene,
            seed=seed,
            size=self.image_size,
            shift=self.shift,
            angle=self.angle,
            noise=self.noise,
            brightness=self.brightness,
        )

    def validation_scenes(self) -> list[SceneSpec]:
        return [self.scene_spec(VALIDATION_SEED_BASE + i) for i in range(self.val_scenes)]

    # flat key=value text form ------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(_fmt(v) for v in value)
            else:
                value = _fmt(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        defaults = cls.__new__(cls)
        for f in fields.values():
            setattr(defaults, f.name, f.default)
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(getattr(defaults, key), value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(default, text: str):
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return lowered in ("true", "1", "yes")
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return tuple(kind(part) for part in text.split(",") if part.strip())
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


# data ------------------------------------------------------------------------


def _batch_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def synthetic_batch(config: TrainConfig, step: int) -> tuple[np.ndarray, np.ndarray]:
    """Batch for ``step``; depends only on (seed, step) so training can resume."""
    rng = _batch_rng(config.seed, step)
    seeds = rng.integers(0, 2**31 - 1, size=config.batch_size)
    first, second = [], []
    for s in seeds:
        f1, f2, _ = generate_pair(config.scene_spec(int(s)))
        first.append(f1[None])
        second.append(f2[None])
    return np.stack(first), np.stack(second)


def load_frame_pairs(frames_dir) -> tuple[np.ndarray, np.ndarray]:
    """Consecutive-frame pairs (t, t+1) from a directory of PGM/PPM files."""
    paths = sorted(p for p in Path(frames_dir).iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if len(paths) < 2:
        raise ConfigError(f"{frames_dir}: need at least two PGM/PPM frames, found {len(paths)}")
    frames = [to_grayscale(load_image(p))[None] for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise ConfigError(f"{frames_dir}: frames differ in size: {sorted(shapes)}")
    stack = np.stack(frames)
    return stack[:-1], stack[1:]


class PairSampler:
    """Random minibatches from fixed arrays of image pairs, keyed by step."""

    def __init__(self, first: np.ndarray, second: np.ndarray, batch_size: int, seed: int):
        if len(first) == 0:
            raise ConfigError("dataset is empty")
        self.first, self.second = first, second
        self.batch_size = batch_size
        self.seed = seed

    def __call__(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        idx = _batch_rng(self.seed, step).integers(0, len(self.first), size=self.batch_size)
        return self.first[idx], self.second[idx]


def _batches(make: Callable[[int], tuple], start: int, stop: int) -> Iterator[tuple]:
    # one batch of look-ahead on a worker thread; delivery order is fixed
    if start >= stop:
        return
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = pool.submit(make, start)
        for step in range(start, stop):
            batch = pending.result()
            if step + 1 < stop:
                pending = pool.submit(make, step + 1)
            yield batch


# training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    state: AdamState
    log: list[dict] = field(default_factory=list)

    def last_losses(self) -> np.ndarray:
        return np.array([row["loss_total"] for row in self.log])


def training_step(params: ModelParams, I1: np.ndarray, I2: np.ndarray, config: TrainConfig):
    """Forward, loss and backward for one minibatch; returns (breakdown, grads)."""
    pyr1 = downsample_image_pyramid(I1, config.levels)
    pyr2 = downsample_image_pyramid(I2, config.levels)
    if config.include_backward:
        fwd, bwd = estimate_bidirectional(I1, I2, params)
    else:
        fwd, bwd = estimate_flow(I1, I2, params), None
    breakdown = total_loss(fwd, pyr1, pyr2, config.weights, backward_flows=bwd)
    if not math.isfinite(breakdown.value):
        return breakdown, None
    grads = backward(breakdown.total, params.tensors)
    params.zero_grad()
    return breakdown, grads


def _validation_epe(params: ModelParams, scenes: Sequence[SceneSpec]) -> float:
    return evaluate(params, scenes).mean


def checkpoint_records(state: AdamState, step: int) -> "OrderedDict[str, np.ndarray]":
    extra = state.to_records()
    extra[STEP_RECORD] = np.array([step], dtype=np.float32)
    return extra


def train(
    config: TrainConfig,
    params: ModelParams | None = None,
    state: AdamState | None = None,
    start_step: int = 0,
    data: Callable[[int], tuple] | None = None,
) -> TrainResult:
    """Optimize the flow network for ``config.steps`` total steps.

    ``params``/``state``/``start_step`` continue an earlier run (see
    :func:`resume`). ``data`` maps a step index to an ``(I1, I2)`` batch; by
    default it is derived from ``config``.
    """
    config.validate()
    if params is None:
        params = ModelParams.initialize(config.model, seed=config.seed)
    elif params.config != config.model:
        raise ConfigError(f"parameters built for {params.config}, config describes {config.model}")
    state = state if state is not None else AdamState()
    if data is None:
        if config.dataset == "synthetic":
            data = lambda step: synthetic_batch(config, step)  # noqa: E731
        else:
            data = PairSampler(*load_frame_pairs(config.frames_dir), config.batch_size, config.seed)
    val = config.validation_scenes() if config.dataset == "synthetic" else []
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_file = None
    writer = None
    if config.log_path:
        log_path = Path(config.log_path)
        append = start_step > 0 and log_path.exists()
        log_file = log_path.open("a" if append else "w", newline="")
        writer = csv.DictWriter(log_file, fieldnames=LOG_COLUMNS)
        if not append:
            writer.writeheader()

    result = TrainResult(params=params, state=state)
    try:
        for step, (I1, I2) in zip(range(start_step, config.steps), _batches(data, start_step, config.steps)):
            breakdown, grads = training_step(params, I1, I2, config)
            if grads is None:
                raise TrainingDiverged(step, breakdown)
            adam_step(params, grads, state, config.lr)
            done = step + 1
            row = {"step": done, **breakdown.csv_fields(), "epe_val": ""}
            if val and (done % config.val_interval == 0 or done == config.steps):
                row["epe_val"] = _validation_epe(params, val)
            result.log.append(row)
            if writer is not None:
                writer.writerow(row)
                log_file.flush()
            if done % config.val_interval == 0:
                logger.info("step %d loss %.5f epe_val %s", done, row["loss_total"], row["epe_val"])
            if ckpt_dir is not None and (done % config.checkpoint_interval == 0 or done == config.steps):
                save_checkpoint(ckpt_dir / f"step_{done:06d}.uftn", params, checkpoint_records(state, done))
    finally:
        if log_file is not None:
            log_file.close()
    return result


def resume(checkpoint, config: TrainConfig, data=None) -> TrainResult:
    """Continue training from a checkpoint written by :func:`train`."""
    params, extra = load_checkpoint(checkpoint, expected=config.model)
    state = AdamState.from_records(extra)
    start = int(extra[STEP_RECORD][0]) if STEP_RECORD in extra else state.step
    return train(config, params=params, state=state, start_step=start, data=data)


# evaluation ----------------------------------------------------------------------


@dataclass
class EvalReport:
    rows: list[dict]

    @property
    def mean(self) -> float:
        return float(np.mean([r["epe"] for r in self.rows]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["scene", "kind", "seed", "epe"])
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)
            writer.writerow({"scene": "mean", "kind": "", "seed": "", "epe": self.mean})


def evaluate(params: ModelParams, scenes: Sequence[SceneSpec], margin: int = 4) -> EvalReport:
    """End-point error of the level-0 flow on each synthetic scene."""
    if len(scenes) == 0:
        raise ValueError("evaluate() needs at least one scene")
    rows = []
    for i, spec in enumerate(scenes):
        f1, f2, gt = generate_pair(spec)
        flow = predict_flow(params, f1[None, None], f2[None, None])[0]
        rows.append({"scene": i, "kind": spec.kind, "seed": spec.seed, "epe": epe(flow, gt, margin)})
    return EvalReport(rows)
