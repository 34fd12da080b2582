"""Binary PGM/PPM images, Middlebury ``.flo`` files and flow colour coding.

Images are channel-first float32 arrays ``(C, H, W)`` with values in [0, 1];
flow fields are ``(2, H, W)`` float32 arrays (u right, v down).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FLO_MAGIC = 202021.25
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class ImageFormatError(ValueError):
    """Base class for unreadable image or flow files."""


class UnsupportedFormatError(ImageFormatError):
    pass


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedDataError(ImageFormatError):
    pass


class BadMagicError(ImageFormatError):
    pass


def _read_header_tokens(data: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = start
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        begin = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if begin == pos:
            raise MalformedHeaderError("header ended early")
        tokens.append(data[begin:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    return tokens, pos + 1


def load_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"{path}: unsupported magic {magic!r}; only P5/P6 are read")
    try:
        tokens, offset = _read_header_tokens(data, 3, 2)
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: bad header: {exc}") from None
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{path}: invalid size {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} unsupported (need 255)")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    raster = data[offset : offset + need]
    if len(raster) < need:
        raise TruncatedDataError(f"{path}: expected {need} pixel bytes, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return (pixels.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path, image: np.ndarray) -> None:
    """Write a (H, W), (1, H, W) or (3, H, W) image in [0, 1] as PGM/PPM."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError(f"expected (H,W), (1,H,W) or (3,H,W) image, got shape {image.shape}")
    channels, height, width = image.shape
    magic = b"P5" if channels == 1 else b"P6"
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    raster = to_bytes(image).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(header + raster)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """(H, W) luma of a (C, H, W) image; single-channel input is squeezed."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image
    if image.shape[0] == 1:
        return image[0]
    if image.shape[0] != 3:
        raise ValueError(f"cannot convert {image.shape[0]} channels to grayscale")
    return np.tensordot(LUMA, image.astype(np.float64), axes=1).astype(np.float32)


def write_flo(path, flow: np.ndarray) -> None:
    """Write a (2, H, W) flow field in Middlebury format."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must be (2, H, W), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    _, height, width = flow.shape
    header = struct.pack("<fii", FLO_MAGIC, width, height)
    payload = np.ascontiguousarray(flow.transpose(1, 2, 0), dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_flo(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedDataError(f"{path}: file too short for a .flo header")
    magic, width, height = struct.unpack_from("<fii", data, 0)
    if magic != np.float32(FLO_MAGIC):
        raise BadMagicError(f"{path}: bad .flo magic {magic!r}")
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"{path}: invalid size {width}x{height}")
    need = 8 * width * height
    if len(data) - 12 != need:
        raise TruncatedDataError(f"{path}: {width}x{height} flow needs {need} payload bytes, found {len(data) - 12}")
    flow = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 2)
    return flow.transpose(2, 0, 1).astype(np.float32)


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros((3,) + h.shape)
    for k, (r, g, b) in enumerate(choices):
        mask = i == k
        rgb[0][mask], rgb[1][mask], rgb[2][mask] = r[mask], g[mask], b[mask]
    return rgb


def flow_to_color(flow: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Colour-code a (2, H, W) flow as a (3, H, W) RGB image.

    Hue is the direction ``atan2(v, u)``, saturation the magnitude divided by
    ``max_magnitude`` (default: 99th percentile of the field), so zero flow is
    white.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"flow must be (2, H, W), got {flow.shape}")
    u, v = flow
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, 99))
    if max_magnitude <= 0:
        max_magnitude = 1.0
    hue = np.mod(np.arctan2(v, u) / (2 * np.pi), 1.0)
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    return _hsv_to_rgb(hue, sat, np.ones_like(hue)).astype(np.float32)
