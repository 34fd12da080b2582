"""Model configuration, learnable parameters and the checkpoint format.

Checkpoint layout (all integers u32 little-endian)::

    b"UFTN" | version | record*
    record = id_len | id utf-8 bytes | rank | dim * rank | f32 LE payload

Architecture metadata is stored as ``meta.*`` records so that a checkpoint can
be validated against the configuration it is loaded into.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Variable

MAGIC = b"UFTN"
FORMAT_VERSION = 1
META_PREFIX = "meta."


class CheckpointError(ValueError):
    """Malformed checkpoint file or one that does not match the model."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the pyramid flow network."""

    levels: int = 4
    widths: tuple[int, ...] = (16, 32, 64, 96)
    radius: int = 4
    image_channels: int = 1
    predictor_widths: tuple[int, ...] = (64, 32)
    slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "predictor_widths", tuple(int(w) for w in self.predictor_widths))
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if len(self.widths) != self.levels:
            raise ValueError(f"need one width per pyramid level ({self.levels}), got {self.widths}")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if self.image_channels not in (1, 3):
            raise ValueError(f"image_channels must be 1 or 3, got {self.image_channels}")

    def level_channels(self, level: int) -> int:
        """Feature channels of pyramid level ``level`` (level 0 is the image)."""
        return self.image_channels if level == 0 else self.widths[level - 1]

    def predictor_inputs(self, level: int) -> int:
        return self.level_channels(level) + 2 + (2 * self.radius + 1) ** 2

    @property
    def divisor(self) -> int:
        return 2**self.levels

    def to_meta(self) -> dict[str, np.ndarray]:
        return {
            META_PREFIX + "levels": np.array([self.levels], dtype=np.float32),
            META_PREFIX + "widths": np.array(self.widths, dtype=np.float32),
            META_PREFIX + "radius": np.array([self.radius], dtype=np.float32),
            META_PREFIX + "image_channels": np.array([self.image_channels], dtype=np.float32),
            META_PREFIX + "predictor_widths": np.array(self.predictor_widths, dtype=np.float32),
            META_PREFIX + "slope": np.array([self.slope], dtype=np.float32),
        }

    @classmethod
    def from_meta(cls, meta: dict[str, np.ndarray]) -> "ModelConfig":
        try:
            return cls(
                levels=int(meta[META_PREFIX + "levels"][0]),
                widths=tuple(int(w) for w in meta[META_PREFIX + "widths"]),
                radius=int(meta[META_PREFIX + "radius"][0]),
                image_channels=int(meta[META_PREFIX + "image_channels"][0]),
                predictor_widths=tuple(int(w) for w in meta[META_PREFIX + "predictor_widths"]),
                slope=round(float(meta[META_PREFIX + "slope"][0]), 6),
            )
        except KeyError as exc:
            raise CheckpointError(f"checkpoint lacks metadata record {exc.args[0]!r}") from None


def _conv_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, int, int, int]]]:
    shapes = []
    for level in range(1, config.levels + 1):
        cin, cout = config.level_channels(level - 1), config.level_channels(level)
        shapes.append((f"extractor.{level}.conv1", (cout, cin, 3, 3)))
        shapes.append((f"extractor.{level}.conv2", (cout, cout, 3, 3)))
    for level in range(config.levels + 1):
        chans = [config.predictor_inputs(level), *config.predictor_widths, 2]
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:]), start=1):
            shapes.append((f"predictor.{level}.conv{i}", (cout, cin, 3, 3)))
    return shapes


@dataclass
class ModelParams:
    """Named learnable tensors plus the architecture they belong to."""

    config: ModelConfig
    tensors: "OrderedDict[str, Variable]" = field(default_factory=OrderedDict)

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "ModelParams":
        """Weights uniform in +-sqrt(1/fan_in), biases zero."""
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        for name, shape in _conv_shapes(config):
            fan_in = shape[1] * shape[2] * shape[3]
            bound = np.sqrt(1.0 / fan_in)
            tensors[name + ".weight"] = rng.uniform(-bound, bound, size=shape).astype(dtype)
            tensors[name + ".bias"] = np.zeros(shape[0], dtype=dtype)
        return cls.from_arrays(config, tensors)

    @classmethod
    def zeros(cls, config: ModelConfig, dtype=np.float32) -> "ModelParams":
        tensors = OrderedDict()
        for name, shape in _conv_shapes(config):
            tensors[name + ".weight"] = np.zeros(shape, dtype=dtype)
            tensors[name + ".bias"] = np.zeros(shape[0], dtype=dtype)
        return cls.from_arrays(config, tensors)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays) -> "ModelParams":
        expected = [n for name, _ in _conv_shapes(config) for n in (name + ".weight", name + ".bias")]
        missing = [n for n in expected if n not in arrays]
        if missing:
            raise CheckpointError(f"missing parameters: {', '.join(missing[:5])}")
        tensors = OrderedDict()
        for name, shape in _conv_shapes(config):
            for suffix, want in ((".weight", shape), (".bias", (shape[0],))):
                arr = np.asarray(arrays[name + suffix])
                if arr.shape != want:
                    raise CheckpointError(f"{name + suffix}: shape {arr.shape}, architecture expects {want}")
                tensors[name + suffix] = Variable(arr.copy(), requires_grad=True, name=name + suffix)
        return cls(config, tensors)

    def __getitem__(self, key: str) -> Variable:
        return self.tensors[key]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Copies of the current values (the optimizer updates in place)."""
        return OrderedDict((k, v.value.copy()) for k, v in self.tensors.items())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams.from_arrays(self.config, {k: v.astype(dtype) for k, v in self.arrays().items()})

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays(self.config, self.arrays())

    def zero_grad(self) -> None:
        for var in self.tensors.values():
            var.grad = None

    @property
    def size(self) -> int:
        return sum(v.value.size for v in self.tensors.values())


def write_records(path, records: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in records.items():
        key = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(key)) + key)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_records(path) -> "OrderedDict[str, np.ndarray]":
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    records = OrderedDict()
    pos = 8
    try:
        while pos < len(data):
            (klen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + klen].decode("utf-8")
            pos += klen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            records[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * count
    except struct.error:
        raise CheckpointError(f"{path}: truncated record") from None
    return records


def save_checkpoint(path, params: ModelParams, extra: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters, architecture metadata and optional extra state."""
    records = OrderedDict(params.config.to_meta())
    records.update(params.arrays())
    if extra:
        records.update(extra)
    write_records(path, records)


def load_checkpoint(path, expected: ModelConfig | None = None):
    """Read a checkpoint; returns ``(params, extra_records)``.

    Raises :class:`CheckpointError` when ``expected`` is given and the stored
    architecture differs from it.
    """
    records = read_records(path)
    meta = {k: v for k, v in records.items() if k.startswith(META_PREFIX)}
    config = ModelConfig.from_meta(meta)
    if expected is not None and expected != config:
        diffs = [
            f"{name}: checkpoint {getattr(config, name)!r} vs expected {getattr(expected, name)!r}"
            for name in ("levels", "widths", "radius", "image_channels", "predictor_widths", "slope")
            if getattr(config, name) != getattr(expected, name)
        ]
        raise CheckpointError("architecture mismatch: " + "; ".join(diffs))
    param_names = [n for name, _ in _conv_shapes(config) for n in (name + ".weight", name + ".bias")]
    params = ModelParams.from_arrays(config, {n: records[n] for n in param_names if n in records})
    extra = OrderedDict((k, v) for k, v in records.items() if k not in meta and k not in params.tensors)
    return params, extra
