"""scikit-learn style wrapper around the operator and its training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_is_fitted

from .operator import UnoModel, desk_schedule, full_scale_schedule
from .training import TrainingConfig, TrainingData, mae_value, train
from .validation import check_positive_int, check_targets, check_volumes

__all__ = ["UnoRegressor"]


class UnoRegressor(RegressorMixin, BaseEstimator):
    """U-shaped neural operator regressor.

    ``X`` holds operator inputs ``a = V_S**2`` of shape ``(n_samples, X, Y, Z)``
    and ``y`` surface velocities of shape ``(n_samples, 3, X, Y, T)`` with
    ``T = 2 Z``.

    Parameters
    ----------
    schedule : {'desk', 'full'}
        Layer plan; 'desk' adapts to the training grid, 'full' needs 64^3.
    epochs, batch_size, lr, lr_factor, patience, split_fraction :
        Training protocol.
    validation : bool
        Hold out ``1 - split_fraction`` of the samples for plateau decay and
        checkpoint selection; otherwise every sample is trained on.
    random_state : int
        Seed for initialization, split and shuffling.

    Attributes
    ----------
    model_ : UnoModel
        Best checkpoint.
    history_ : TrainingHistory
        Per-epoch losses.
    """

    def __init__(self, schedule="desk", epochs=50, batch_size=8, lr=1e-3, lr_factor=0.5,
                 patience=20, split_fraction=0.9, validation=True, random_state=0):
        self.schedule = schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_factor = lr_factor
        self.patience = patience
        self.split_fraction = split_fraction
        self.validation = validation
        self.random_state = random_state

    def _config(self) -> TrainingConfig:
        return TrainingConfig(
            split_fraction=self.split_fraction, lr_initial=self.lr, lr_factor=self.lr_factor,
            plateau_patience_epochs=check_positive_int(self.patience, "patience"),
            epochs=check_positive_int(self.epochs, "epochs"),
            batch_size=check_positive_int(self.batch_size, "batch_size"), seed=int(self.random_state),
        )

    def fit(self, X, y):
        X = check_volumes(X)
        y = check_targets(y, X)
        if self.schedule == "desk":
            sched = desk_schedule(X.shape[1:])
        elif self.schedule == "full":
            sched = full_scale_schedule()
        else:
            raise ValueError(f"schedule must be 'desk' or 'full', got {self.schedule!r}")
        data = TrainingData(X, y)
        model = UnoModel.create(sched, seed=int(self.random_state))
        if self.validation:
            self.model_, self.history_ = train(model, data, self._config())
        else:
            self.model_, self.history_ = train(model, data, self._config(), val_data=data)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_volumes(X)
        return self.model_.predict(X)

    def score(self, X, y, sample_weight=None):
        """Coefficient of determination over all output values."""
        X = check_volumes(X)
        y = check_targets(y, X)
        pred = self.predict(X)
        w = None
        if sample_weight is not None:
            w = np.repeat(np.asarray(sample_weight, dtype=np.float64), y[0].size)
        return r2_score(y.ravel(), pred.ravel(), sample_weight=w)

    def mae(self, X, y) -> float:
        """Training loss value: per-component MAE summed over components."""
        X = check_volumes(X)
        return mae_value(self.predict(X), check_targets(y, X))
