import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ufflow import functional as F
from ufflow.imageio import load_image, read_flo
from ufflow.synth import SceneSpec, epe, export_scene, generate_pair, ground_truth_flow


def test_zero_translation_gives_identical_frames():
    f1, f2, gt = generate_pair(SceneSpec("translate", seed=0, shift=(0, 0)))
    np.testing.assert_array_equal(f1, f2)
    assert not gt.any()


def test_translation_flow_is_constant():
    _, _, gt = generate_pair(SceneSpec("translate", seed=0, shift=(3, 0)))
    assert gt.shape == (2, 64, 64) and gt.dtype == np.float32
    np.testing.assert_array_equal(gt[0], 3.0)
    np.testing.assert_array_equal(gt[1], 0.0)


def test_rotation_flow_matches_formula_pointwise():
    spec = SceneSpec("rotate", seed=0, size=16, angle=7.0)
    gt = ground_truth_flow(spec)
    c = 7.5
    t = math.radians(7.0)
    for y in range(16):
        for x in range(16):
            dx, dy = x - c, y - c
            u = math.cos(t) * dx - math.sin(t) * dy - dx
            v = math.sin(t) * dx + math.cos(t) * dy - dy
            assert gt[0, y, x] == pytest.approx(u, abs=1e-12)
            assert gt[1, y, x] == pytest.approx(v, abs=1e-12)


@pytest.mark.parametrize(
    "spec",
    [
        SceneSpec("translate", seed=1, shift=(2, 1)),
        SceneSpec("translate", seed=2, shift=(-3.5, 2.25)),
        SceneSpec("rotate", seed=3, angle=5.0),
        SceneSpec("rotate", seed=4, angle=-12.0),
    ],
)
def test_warping_frame2_by_truth_reconstructs_frame1(spec):
    f1, f2, gt = generate_pair(spec)
    back = F.warp(f2[None, None].astype(np.float64), gt[None].astype(np.float64)).value[0, 0]
    m = 8
    assert np.abs(back - f1)[m:-m, m:-m].mean() < 0.02


def test_two_layer_scene_has_two_motions():
    spec = SceneSpec("two-layer", seed=5, shift=(1, 0), fg_shift=(-2, 1))
    f1, f2, gt = generate_pair(spec)
    lo = (64 - spec.fg_size) // 2
    np.testing.assert_array_equal(gt[:, lo + 2, lo + 2], [-2, 1])
    np.testing.assert_array_equal(gt[:, 2, 2], [1, 0])
    assert f1.shape == f2.shape == (64, 64)


def test_same_seed_same_scene_and_different_seed_differs():
    spec = SceneSpec("translate", seed=9, shift=(1.5, -1), noise=0.02, brightness=0.05)
    a, b = generate_pair(spec), generate_pair(spec)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    c = generate_pair(spec.with_seed(10))
    assert a[0].tobytes() != c[0].tobytes()


def test_texture_is_in_unit_range():
    f1, f2, _ = generate_pair(SceneSpec("translate", seed=0, brightness=0.2))
    assert f1.min() >= 0 and f1.max() <= 1 and f2.max() <= 1
    # the canvas spans [0, 1]; a crop of it keeps most of that contrast
    assert f1.max() - f1.min() > 0.5


@pytest.mark.parametrize(
    "kwargs",
    [dict(kind="spin"), dict(shift=(17, 0)), dict(shift=(12, 12)), dict(kind="rotate", angle=16.0)],
)
def test_invalid_specs_rejected(kwargs):
    base = dict(kind="translate", seed=0)
    base.update(kwargs)
    with pytest.raises(ValueError):
        generate_pair(SceneSpec(**base))


def test_epe_examples():
    gt = np.random.default_rng(0).normal(size=(2, 12, 12))
    assert epe(gt, gt) == 0.0
    shifted = gt.copy()
    shifted[0] += 1.0
    assert epe(shifted, gt) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        epe(gt, gt[:, :10])


@settings(max_examples=20, deadline=None)
@given(st.integers(9, 16), st.integers(9, 16), st.integers(0, 4), st.integers(0, 2**31 - 1))
def test_epe_matches_per_pixel_loop(H, W, margin, seed):
    rng = np.random.default_rng(seed)
    flow, gt = rng.normal(size=(2, 2, H, W))
    total, count = 0.0, 0
    for y in range(margin, H - margin):
        for x in range(margin, W - margin):
            total += math.hypot(flow[0, y, x] - gt[0, y, x], flow[1, y, x] - gt[1, y, x])
            count += 1
    assert epe(flow, gt, margin) == pytest.approx(total / count, abs=1e-6)


def test_export_scene_writes_pgm_pair_and_flo(tmp_path):
    spec = SceneSpec("translate", seed=3, size=32, shift=(2, 1))
    p1, p2, pf = export_scene(spec, tmp_path / "out", "s0")
    f1, f2, gt = generate_pair(spec)
    assert np.abs(load_image(p1)[0] - f1).max() <= 0.5 / 255 + 1e-6
    assert np.abs(load_image(p2)[0] - f2).max() <= 0.5 / 255 + 1e-6
    assert read_flo(pf).tobytes() == gt.tobytes()
