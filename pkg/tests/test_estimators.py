import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fracgreen.drift import DriftField
from fracgreen.errors import ParameterError
from fracgreen.estimators import GreenKernelTransformer, GreenPairEstimator
from fracgreen.geometry import Ball
from fracgreen.kernels import green_ball_values
from fracgreen.perturb import tilde_green


def test_transformer_without_drift(params, unit_ball):
    src = np.array([[0.1, 0.2], [-0.4, 0.0], [0.0, -0.7]])
    pts = np.array([[0.3, 0.3], [-0.2, 0.5]])
    out = GreenKernelTransformer().fit(src).transform(pts)
    assert out.shape == (2, 3)
    for i, x in enumerate(pts):
        assert np.array_equal(out[i], green_ball_values(params, unit_ball, x, src))


def test_pair_estimator_matches_series(params):
    est = GreenPairEstimator(radius=0.125, drift="ou", drift_k=0.5).fit()
    x, y = np.array([0.01, 0.02]), np.array([-0.05, 0.04])
    pred = est.predict(np.concatenate([x, y])[None, :])[0]
    ref = tilde_green(params, Ball((0.0, 0.0), 0.125), DriftField.ornstein_uhlenbeck(0.5, 2), x, y)
    assert pred == pytest.approx(ref.value, abs=ref.remainder_bound + ref.quad_error + 1e-9)


def test_pair_estimator_groups_rows():
    X = np.array([[0.1, 0.0, 0.3, 0.2], [0.0, 0.1, -0.2, 0.2], [0.1, 0.0, -0.5, 0.1]])
    est = GreenPairEstimator().fit(X)
    out = est.predict(X)
    single = [est.predict(row[None, :])[0] for row in X]
    assert np.array_equal(out, single)


def test_clone_and_params():
    est = GreenKernelTransformer(alpha=1.2, radius=2.0)
    c = clone(est)
    assert c.get_params()["alpha"] == 1.2
    assert c.set_params(drift="constant", drift_vector=(1.0, 0.0)).drift == "constant"


def test_errors():
    with pytest.raises(NotFittedError):
        GreenKernelTransformer().transform(np.zeros((1, 2)))
    with pytest.raises(ParameterError):
        GreenKernelTransformer().fit(np.zeros((2, 3)))
    with pytest.raises(ParameterError):
        GreenPairEstimator().fit(np.zeros((2, 3)))
    with pytest.raises(ParameterError):
        GreenPairEstimator(drift="spiral").fit()
