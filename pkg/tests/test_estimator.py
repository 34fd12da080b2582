import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ufflow.estimator import PyramidFlowEstimator, check_flow_targets, check_image_pairs
from ufflow.params import ModelConfig, ModelParams
from ufflow.synth import SceneSpec, generate_pair

SMALL = dict(steps=3, batch_size=2, levels=2, widths=(3, 4), radius=1, predictor_widths=(4, 3), lr=1e-3)


def pairs(n=3, size=16, seed=0):
    X, Y = [], []
    for i in range(n):
        f1, f2, gt = generate_pair(SceneSpec("translate", seed=seed + i, size=size, shift=(1, 0)))
        X.append([f1, f2])
        Y.append(gt)
    return np.array(X), np.array(Y)


def test_get_params_and_clone():
    est = PyramidFlowEstimator(**SMALL)
    params = est.get_params()
    assert params["radius"] == 1 and params["lambda3"] == 50.0
    twin = clone(est)
    assert twin.get_params() == params
    assert not hasattr(twin, "params_")


def test_default_hyperparameters():
    est = PyramidFlowEstimator()
    assert (est.lambda1, est.lambda2, est.lambda3) == (0.2, 1.0, 50.0)
    assert est.steps == 2000 and est.batch_size == 4 and est.radius == 4


def test_fit_predict_score_shapes():
    X, Y = pairs()
    est = PyramidFlowEstimator(**SMALL).fit(X)
    assert len(est.training_log_) == 3
    flow = est.predict(X)
    assert flow.shape == (3, 2, 16, 16) and np.isfinite(flow).all()
    assert est.transform(X).shape == (3, 2 * 16 * 16)
    assert est.score(X, Y) <= 0.0


def test_fit_pads_odd_sizes_and_predict_crops():
    X, _ = pairs(2, size=20)
    X = X[..., :18, :19]
    est = PyramidFlowEstimator(**SMALL).fit(X)
    assert est.predict(X).shape == (2, 2, 18, 19)


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        PyramidFlowEstimator().predict(np.zeros((1, 2, 16, 16)))


def test_fit_is_seeded():
    X, _ = pairs(2)
    a = PyramidFlowEstimator(**SMALL, random_state=4).fit(X).predict(X)
    b = PyramidFlowEstimator(**SMALL, random_state=4).fit(X).predict(X)
    np.testing.assert_array_equal(a, b)


def test_save_and_reload(tmp_path):
    X, _ = pairs(2)
    est = PyramidFlowEstimator(**SMALL).fit(X)
    est.save(tmp_path / "m.uftn")
    back = PyramidFlowEstimator.from_checkpoint(tmp_path / "m.uftn")
    assert back.radius == 1 and tuple(back.widths) == (3, 4)
    np.testing.assert_array_equal(back.predict(X), est.predict(X))


def test_from_params_wraps_zero_model():
    est = PyramidFlowEstimator.from_params(ModelParams.zeros(ModelConfig()))
    assert not est.predict(np.zeros((1, 2, 16, 16))).any()


@pytest.mark.parametrize(
    "X",
    [np.zeros((2, 3, 8, 8)), np.zeros((0, 2, 8, 8)), np.zeros((1, 2, 3, 8, 8)), np.full((1, 2, 8, 8), np.nan)],
)
def test_check_image_pairs_rejects(X):
    with pytest.raises(ValueError):
        check_image_pairs(X)


def test_check_image_pairs_accepts_grayscale_and_channel_forms():
    assert check_image_pairs(np.zeros((2, 2, 8, 8))).shape == (2, 2, 1, 8, 8)
    assert check_image_pairs(np.zeros((1, 2, 3, 8, 8)), channels=3).dtype == np.float32


def test_check_flow_targets_shape():
    X = check_image_pairs(np.zeros((2, 2, 8, 8)))
    with pytest.raises(ValueError):
        check_flow_targets(np.zeros((2, 2, 8, 7)), X)
