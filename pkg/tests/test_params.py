from collections import OrderedDict
from types import SimpleNamespace

import numpy as np
import pytest

from ufflow.autograd import Variable
from ufflow.optim import AdamState, adam_step
from ufflow.params import (
    CheckpointError,
    ModelConfig,
    ModelParams,
    load_checkpoint,
    read_records,
    save_checkpoint,
    write_records,
)

TINY = ModelConfig(levels=2, widths=(3, 4), radius=1, predictor_widths=(4, 3))


def scalar_params(value):
    return SimpleNamespace(tensors=OrderedDict(w=Variable(np.array([value], dtype=np.float64), requires_grad=True)))


def test_param_shapes_follow_config():
    params = ModelParams.initialize(TINY, seed=0)
    assert params["extractor.1.conv1.weight"].shape == (3, 1, 3, 3)
    assert params["extractor.2.conv2.weight"].shape == (4, 4, 3, 3)
    # level 2 predictor sees 4 features + 2 flow + 9 cost channels
    assert params["predictor.2.conv1.weight"].shape == (4, 15, 3, 3)
    assert params["predictor.0.conv3.weight"].shape == (2, 3, 3, 3)
    assert all(name in params.tensors for name in ("predictor.0.conv1.bias", "predictor.2.conv3.bias"))


def test_init_is_bounded_and_biases_zero():
    params = ModelParams.initialize(TINY, seed=1)
    for name, var in params.items():
        if name.endswith(".bias"):
            assert not var.value.any()
        else:
            fan_in = np.prod(var.shape[1:])
            assert np.abs(var.value).max() <= np.sqrt(1 / fan_in)
        assert var.dtype == np.float32 and var.requires_grad


def test_init_is_seeded():
    a = ModelParams.initialize(TINY, seed=5).arrays()
    b = ModelParams.initialize(TINY, seed=5).arrays()
    c = ModelParams.initialize(TINY, seed=6).arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_from_arrays_checks_shapes():
    arrays = ModelParams.zeros(TINY).arrays()
    arrays["predictor.1.conv1.weight"] = np.zeros((1, 1, 3, 3), np.float32)
    with pytest.raises(ValueError):
        ModelParams.from_arrays(TINY, arrays)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    params = ModelParams.initialize(TINY, seed=2)
    extra = {"note.x": np.arange(6, dtype=np.float32).reshape(2, 3)}
    path = tmp_path / "p.uftn"
    save_checkpoint(path, params, extra)
    loaded, back = load_checkpoint(path, expected=TINY)
    assert loaded.config == TINY
    for name, arr in params.arrays().items():
        assert loaded.arrays()[name].tobytes() == arr.tobytes()
    np.testing.assert_array_equal(back["note.x"], extra["note.x"])
    # saving what was loaded reproduces the file
    again = tmp_path / "q.uftn"
    save_checkpoint(again, loaded, back)
    assert again.read_bytes() == path.read_bytes()


def test_checkpoint_starts_with_magic(tmp_path):
    path = tmp_path / "p.uftn"
    save_checkpoint(path, ModelParams.zeros(TINY))
    assert path.read_bytes()[:4] == b"UFTN"


def test_records_preserve_order_and_scalars(tmp_path):
    recs = OrderedDict([("b", np.float32(3.5)), ("a", np.ones((2, 1, 2), np.float32))])
    write_records(tmp_path / "r", recs)
    back = read_records(tmp_path / "r")
    assert list(back) == ["b", "a"]
    assert back["b"].shape == () and back["b"] == 3.5


def test_architecture_mismatch_is_reported(tmp_path):
    path = tmp_path / "p.uftn"
    save_checkpoint(path, ModelParams.zeros(TINY))
    other = ModelConfig(levels=2, widths=(3, 4), radius=2, predictor_widths=(4, 3))
    with pytest.raises(CheckpointError, match="radius"):
        load_checkpoint(path, expected=other)


@pytest.mark.parametrize("mutate", ["magic", "truncate", "missing"])
def test_corrupt_checkpoints_rejected(tmp_path, mutate):
    path = tmp_path / "p.uftn"
    save_checkpoint(path, ModelParams.zeros(TINY))
    data = path.read_bytes()
    if mutate == "magic":
        path.write_bytes(b"XXXX" + data[4:])
    elif mutate == "truncate":
        path.write_bytes(data[:-7])
    else:
        recs = read_records(path)
        del recs["predictor.1.conv2.weight"]
        write_records(path, recs)
    with pytest.raises((CheckpointError, ValueError, KeyError)):
        load_checkpoint(path)


# Adam ---------------------------------------------------------------------------


def test_adam_first_step_moves_by_lr():
    params = ModelParams.initialize(TINY, seed=0)
    before = params.arrays()
    rng = np.random.default_rng(0)
    grads = {k: rng.normal(size=v.shape).astype(np.float32) for k, v in params.items()}
    adam_step(params, grads, AdamState(), lr=1e-3)
    for k, arr in params.arrays().items():
        np.testing.assert_allclose(arr - before[k], -1e-3 * np.sign(grads[k]), atol=1e-6)


def test_adam_zero_gradient_keeps_weights():
    params = ModelParams.initialize(TINY, seed=0)
    before = params.arrays()
    adam_step(params, {k: np.zeros(v.shape) for k, v in params.items()}, AdamState(), lr=1e-2)
    assert all(np.array_equal(before[k], v) for k, v in params.arrays().items())


def test_adam_scalar_quadratic_converges():
    params = scalar_params(0.0)
    state = AdamState()
    for _ in range(100):
        w = params.tensors["w"].value
        adam_step(params, {"w": 2 * (w - 3)}, state, lr=0.1)
    assert state.step == 100
    assert abs(params.tensors["w"].value[0] - 3) < 0.1


def test_adam_rejects_bad_arguments():
    params = scalar_params(1.0)
    with pytest.raises(ValueError):
        adam_step(params, {"w": np.ones(1)}, AdamState(), lr=0.0)
    with pytest.raises(KeyError):
        adam_step(params, {}, AdamState(), lr=0.1)
    with pytest.raises(KeyError):
        adam_step(params, {"w": np.ones(1), "z": np.ones(1)}, AdamState(), lr=0.1)


def test_adam_state_records_round_trip():
    params = ModelParams.initialize(TINY, seed=0)
    state = AdamState()
    grads = {k: np.ones(v.shape, np.float32) for k, v in params.items()}
    adam_step(params, grads, state, lr=1e-3)
    back = AdamState.from_records(state.to_records())
    assert back.step == 1
    assert set(back.m) == set(state.m)
    assert all(np.array_equal(back.v[k], state.v[k]) for k in state.v)
