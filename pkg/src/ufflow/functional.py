"""Differentiable image operators on BCHW arrays.

Every function accepts :class:`~ufflow.autograd.Variable` or plain arrays and
returns a ``Variable``. Gradients are only computed for inputs that require
them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Variable, make_node, value_of


def _needs_grad(x) -> bool:
    return isinstance(x, Variable) and x.requires_grad


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Variable:
    """2-D cross-correlation of ``x`` (B,C,H,W) with ``weight`` (O,C,k,k)."""
    xv, wv = value_of(x), value_of(weight)
    if xv.ndim != 4 or wv.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {xv.shape} and {wv.shape}")
    B, C, H, W = xv.shape
    O, I, kh, kw = wv.shape
    if I != C:
        raise ValueError(f"conv2d: input has {C} channels but weight expects {I} (weight {wv.shape})")
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    k = kh
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d: input {H}x{W} too small for kernel {k} with padding {padding}")
    bv = None if bias is None else value_of(bias)
    if bv is not None and bv.shape != (O,):
        raise ValueError(f"conv2d: bias shape {bv.shape} does not match {O} output channels")

    # channels-last internally: im2col rows are (k, k, C) patches
    xh = xv.transpose(0, 2, 3, 1)
    xh = np.pad(xh, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else np.ascontiguousarray(xh)
    windows = sliding_window_view(xh, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, k * k * C)
    wmat = np.ascontiguousarray(wv.transpose(0, 2, 3, 1).reshape(O, k * k * C))
    out2d = cols @ wmat.T
    if bv is not None:
        out2d += bv
    # left channels-last in memory; elementwise consumers keep that layout
    out = out2d.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    need_x = _needs_grad(x)
    need_w = _needs_grad(weight)
    need_b = _needs_grad(bias)
    if not need_w:
        cols = None
    padded_shape = xh.shape

    def bw(g):
        g2d = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gx = gw = gb = None
        if need_w:
            # (cols^T g) runs faster than (g^T cols) for these tall operands
            gw = (cols.T @ g2d).T.reshape(O, k, k, C).transpose(0, 3, 1, 2)
        if need_b:
            gb = g2d.sum(axis=0)
        if need_x and stride == 1 and O < C and padding <= k - 1:
            # transposed convolution: correlate the padded output gradient
            # with the spatially flipped kernel; cheaper when O < C
            q = k - 1 - padding
            gh = g.transpose(0, 2, 3, 1)
            gh = np.pad(gh, ((0, 0), (q, q), (q, q), (0, 0))) if q else np.ascontiguousarray(gh)
            gwin = sliding_window_view(gh, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
            gcols = gwin.reshape(B * H * W, k * k * O)
            wflip = np.ascontiguousarray(wv[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(k * k * O, C))
            gx = (gcols @ wflip).reshape(B, H, W, C).transpose(0, 3, 1, 2)
        elif need_x:
            gcols = (g2d @ wmat).reshape(B, Ho, Wo, k, k, C)
            gxh = np.zeros(padded_shape, dtype=xv.dtype)
            for i in range(k):
                for j in range(k):
                    gxh[:, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += gcols[:, :, :, i, j]
            if padding:
                gxh = gxh[:, padding : padding + H, padding : padding + W]
            gx = gxh.transpose(0, 3, 1, 2)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return make_node(out, parents, lambda g: bw(g)[:2])
    return make_node(out, parents, bw)


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    # align_corners=False: output i samples the source at (i + 0.5) / 2 - 0.5
    src = np.clip((np.arange(2 * n) + 0.5) / 2.0 - 0.5, 0.0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    mat = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat.astype(dtype)


def upsample_bilinear_2x(x) -> Variable:
    """Bilinear 2x upsampling with the half-pixel (align-corners-false) grid."""
    xv = value_of(x)
    H, W = xv.shape[-2:]
    ah = _upsample_matrix(H, xv.dtype)
    aw = _upsample_matrix(W, xv.dtype)
    out = ah @ xv @ aw.T
    return make_node(out, (x,), lambda g: (ah.T @ g @ aw,))


def avg_pool_2x(x) -> Variable:
    """Mean over non-overlapping 2x2 blocks."""
    xv = value_of(x)
    B, C, H, W = xv.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool_2x needs even spatial size, got {H}x{W}")
    out = xv.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * xv.dtype.type(0.25),)

    return make_node(out, (x,), bw)


def warp(feature, flow) -> Variable:
    """Backward-warp ``feature`` by ``flow``: out(x) = feature(x + flow(x)).

    ``flow`` is (B,2,H,W) with channel 0 the horizontal (column) displacement
    and channel 1 the vertical (row) displacement, in pixels. Sample positions
    are clamped to the image border, where the flow gradient vanishes.
    """
    fv, uv = value_of(feature), value_of(flow)
    if fv.ndim != 4 or uv.ndim != 4 or uv.shape[1] != 2:
        raise ValueError(f"warp expects (B,C,H,W) feature and (B,2,H,W) flow, got {fv.shape} and {uv.shape}")
    B, C, H, W = fv.shape
    if uv.shape[0] != B or uv.shape[2:] != (H, W):
        raise ValueError(f"warp: flow shape {uv.shape} does not match feature shape {fv.shape}")
    dtype = fv.dtype
    gy, gx = np.meshgrid(np.arange(H, dtype=dtype), np.arange(W, dtype=dtype), indexing="ij")
    sx_raw = gx + uv[:, 0]
    sy_raw = gy + uv[:, 1]
    sx = np.clip(sx_raw, 0, W - 1)
    sy = np.clip(sy_raw, 0, H - 1)
    # non-finite flow yields NaN output through the weights, never a bad index
    x0 = np.clip(np.nan_to_num(np.floor(sx)), 0, max(W - 2, 0)).astype(np.intp)
    y0 = np.clip(np.nan_to_num(np.floor(sy)), 0, max(H - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (sx - x0).astype(dtype)[:, None]
    wy = (sy - y0).astype(dtype)[:, None]

    flat = fv.reshape(B, C, H * W)

    def gather(yy, xx):
        idx = (yy * W + xx).reshape(B, 1, H * W)
        return np.take_along_axis(flat, np.broadcast_to(idx, (B, C, H * W)), axis=2).reshape(B, C, H, W)

    f00, f01, f10, f11 = gather(y0, x0), gather(y0, x1), gather(y1, x0), gather(y1, x1)
    # convex-combination form so integer sample positions reproduce the input exactly
    top = f00 * (1 - wx) + f01 * wx
    bottom = f10 * (1 - wx) + f11 * wx
    out = top * (1 - wy) + bottom * wy

    need_f = _needs_grad(feature)
    need_u = _needs_grad(flow)

    def bw(g):
        gf = gu = None
        if need_f:
            base = (np.arange(B * C) * (H * W)).reshape(B, C, 1)
            chunks_idx, chunks_w = [], []
            for yy, xx, wgt in (
                (y0, x0, (1 - wy) * (1 - wx)),
                (y0, x1, (1 - wy) * wx),
                (y1, x0, wy * (1 - wx)),
                (y1, x1, wy * wx),
            ):
                idx = (yy * W + xx).reshape(B, 1, H * W) + base
                chunks_idx.append(idx.ravel())
                chunks_w.append((g * wgt).reshape(B, C, H * W).ravel())
            gf = np.bincount(
                np.concatenate(chunks_idx), weights=np.concatenate(chunks_w), minlength=B * C * H * W
            ).astype(dtype).reshape(B, C, H, W)
        if need_u:
            dx = (1 - wy) * (f01 - f00) + wy * (f11 - f10)
            dy = bottom - top
            inside_x = ((sx_raw >= 0) & (sx_raw <= W - 1)).astype(dtype)
            inside_y = ((sy_raw >= 0) & (sy_raw <= H - 1)).astype(dtype)
            if W == 1:
                inside_x[:] = 0
            if H == 1:
                inside_y[:] = 0
            gu = np.stack([(g * dx).sum(axis=1) * inside_x, (g * dy).sum(axis=1) * inside_y], axis=1)
        return gf, gu

    return make_node(out, (feature, flow), bw)


def cost_volume(q1, q2, radius: int) -> Variable:
    """Normalized local correlation between two feature maps.

    Output channel ``(dy + r) * (2r + 1) + (dx + r)`` holds
    ``dot(q1(x), q2(x + (dx, dy))) / N`` for ``N`` feature channels; positions
    outside ``q2`` contribute zero.
    """
    av, bv = np.ascontiguousarray(value_of(q1)), value_of(q2)
    if av.shape != bv.shape or av.ndim != 4:
        raise ValueError(f"cost_volume expects equal (B,N,H,W) shapes, got {av.shape} and {bv.shape}")
    if radius < 1:
        raise ValueError(f"cost_volume radius must be >= 1, got {radius}")
    B, N, H, W = av.shape
    r = radius
    span = 2 * r + 1
    inv_n = av.dtype.type(1.0 / N)
    bp = np.pad(bv, ((0, 0), (0, 0), (r, r), (r, r)))
    out = np.empty((B, span * span, H, W), dtype=av.dtype)
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    for k, (dy, dx) in enumerate(offsets):
        shifted = bp[:, :, r + dy : r + dy + H, r + dx : r + dx + W]
        out[:, k] = np.einsum("bnhw,bnhw->bhw", av, shifted) * inv_n

    need_a = _needs_grad(q1)
    need_b = _needs_grad(q2)

    def bw(g):
        # upstream gradients are often channels-last views; slice a dense copy
        g = np.ascontiguousarray(g)
        ga = np.zeros_like(av) if need_a else None
        gbp = np.zeros_like(bp) if need_b else None
        for k, (dy, dx) in enumerate(offsets):
            gk = g[:, k : k + 1] * inv_n
            if need_a:
                ga += gk * bp[:, :, r + dy : r + dy + H, r + dx : r + dx + W]
            if need_b:
                gbp[:, :, r + dy : r + dy + H, r + dx : r + dx + W] += gk * av
        gb = gbp[:, :, r : r + H, r : r + W] if need_b else None
        return ga, gb

    return make_node(out, (q1, q2), bw)
