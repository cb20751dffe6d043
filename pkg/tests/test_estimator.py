import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from uno3d import UnoRegressor
from uno3d.validation import check_positive_int, check_targets, check_volumes


def _data(n=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(1e6, 2e7, size=(n, 4, 4, 4))
    y = 1e-3 * rng.normal(size=(n, 3, 4, 4, 8))
    return X, y


def test_params_and_clone():
    est = UnoRegressor(epochs=3, batch_size=2, random_state=5)
    params = est.get_params()
    assert params["epochs"] == 3 and params["random_state"] == 5
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(lr=5e-4)
    assert est.lr == 5e-4


def test_fit_predict_score():
    X, y = _data()
    est = UnoRegressor(epochs=4, batch_size=2, validation=False, random_state=1).fit(X, y)
    assert est.n_features_in_ == 64
    assert est.predict(X).shape == y.shape
    assert est.predict(X[0]).shape == (1,) + y[0].shape
    assert len(est.history_.train_mae) == 4
    assert np.isfinite(est.score(X, y))
    assert np.isclose(est.mae(X, y), np.mean(np.abs(est.predict(X) - y)) * 3)
    again = UnoRegressor(epochs=4, batch_size=2, validation=False, random_state=1).fit(X, y)
    np.testing.assert_array_equal(again.predict(X), est.predict(X))


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        UnoRegressor().predict(_data()[0])


def test_fit_validation_errors():
    X, y = _data()
    with pytest.raises(ValueError):
        UnoRegressor(schedule="huge").fit(X, y)
    with pytest.raises(ValueError):
        UnoRegressor(epochs=0).fit(X, y)
    with pytest.raises(ValueError):
        UnoRegressor().fit(X, y[:2])
    bad = X.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        UnoRegressor().fit(bad, y)


def test_validation_helpers():
    assert check_volumes(np.ones((2, 2, 2))).shape == (1, 2, 2, 2)
    with pytest.raises(ValueError):
        check_volumes(np.ones((2, 2)))
    with pytest.raises(ValueError):
        check_targets(np.ones((1, 3, 2, 3, 4)), np.ones((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        check_positive_int(True, "n")
    assert check_positive_int(np.int64(3), "n") == 3
