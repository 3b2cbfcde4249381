"""scikit-learn style wrapper around the three training methods."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .engine import Tensor, no_grad, softmax
from .evaluation import predict_classes, synthesize
from .preprocessing import DataSplits, SensorStandardizer, WindowSet
from .training import TrainConfig, train_one


class Pose2IMUClassifier(ClassifierMixin, BaseEstimator):
    """Activity classifier over accelerometer windows ``[n, 3, T]``.

    With ``method='joint'`` or ``'regression-first'`` the matching arm-pose
    windows ``[n, 3, joints, T]`` must be passed to :meth:`fit` as ``pose``;
    the fitted pose-to-accelerometer regressor is then available through
    :meth:`synthesize`.
    """

    def __init__(
        self,
        method: str = "joint",
        alpha: float = 1.0,
        beta: float = 0.0,
        lr: float = 1e-3,
        batch_size: int = 64,
        max_epochs: int = 100,
        patience: int = 25,
        class_weighting: str = "inverse",
        variant: str = "full",
        random_state: int = 0,
    ):
        self.method = method
        self.alpha = alpha
        self.beta = beta
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.class_weighting = class_weighting
        self.variant = variant
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            lr=self.lr,
            max_epochs=self.max_epochs,
            patience=self.patience,
            batch_size=self.batch_size,
            seeds=(self.random_state,),
            alpha=self.alpha,
            beta=self.beta,
            class_weighting=self.class_weighting,
            variant=self.variant,
        )

    def fit(self, X, y, pose=None, eval_set=None):
        """``eval_set=(X_val, y_val, pose_val)`` drives early stopping; defaults to the training data."""
        X = np.asarray(X, dtype=np.float64)
        self.classes_, y_idx = np.unique(np.asarray(y), return_inverse=True)
        needs_pose = self.method != "baseline-real"
        if needs_pose and pose is None:
            raise ValueError(f"method {self.method!r} needs pose windows")
        if pose is None:
            pose = np.zeros((X.shape[0], 3, 3, X.shape[-1]))
        self.scaler_ = SensorStandardizer(channel_axis=1).fit(X)
        train = WindowSet(np.asarray(pose, dtype=np.float64), self.scaler_.transform(X), y_idx)
        if eval_set is not None:
            Xv, yv, pv = eval_set
            Xv = np.asarray(Xv, dtype=np.float64)
            pv = np.zeros((Xv.shape[0], 3, 3, Xv.shape[-1])) if pv is None else np.asarray(pv, dtype=np.float64)
            val = WindowSet(pv, self.scaler_.transform(Xv), np.searchsorted(self.classes_, np.asarray(yv)))
        else:
            val = train
        splits = DataSplits(train, val, val, n_classes=len(self.classes_), stats=self.scaler_.stats_)
        outcome = train_one(splits, self._config(), self.random_state)
        self.bundle_ = outcome.bundle
        self.history_ = outcome.history
        self.best_epoch_ = outcome.result.best_epoch
        self.stopped_epoch_ = outcome.result.stopped_epoch
        return self

    def predict(self, X):
        check_is_fitted(self, "bundle_")
        idx = predict_classes(self.bundle_, self.scaler_.transform(np.asarray(X, dtype=np.float64)))
        return self.classes_[idx]

    def predict_proba(self, X):
        check_is_fitted(self, "bundle_")
        x = self.scaler_.transform(np.asarray(X, dtype=np.float64))
        self.bundle_.eval()
        with no_grad():
            logits = self.bundle_.logits(Tensor(x, dtype=self.bundle_.feature.fc.weight.dtype)).data
        return softmax(logits.astype(np.float64))

    def synthesize(self, pose):
        """Accelerometer windows in the original sensor units."""
        check_is_fitted(self, "bundle_")
        if self.bundle_.regressor is None:
            raise AttributeError("baseline-real models have no regressor")
        out = synthesize(self.bundle_.regressor, np.asarray(pose, dtype=np.float64))
        return self.scaler_.inverse_transform(out)
