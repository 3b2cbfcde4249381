"""Classification metrics and regression error."""

from __future__ import annotations

import numpy as np

from .engine import Tensor
from .engine.tensor import no_grad


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"{y_true.shape[0]} labels vs {y_pred.shape[0]} predictions")
    for y in (y_true, y_pred):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"class index outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if cm.sum() == 0:
        raise ValueError("confusion matrix is empty")
    if (cm < 0).any():
        raise ValueError("confusion matrix has negative counts")
    return cm


def per_class_f1(cm) -> np.ndarray:
    cm = _check(cm).astype(np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(cm) -> float:
    """Unweighted mean of per-class F1; a class with P + R = 0 scores 0."""
    return float(per_class_f1(cm).mean())


def accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def predict_classes(bundle, sensor: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax of C(F(sensor)) in eval mode."""
    bundle.eval()
    preds = []
    dtype = bundle.feature.fc.weight.dtype
    with no_grad():
        for start in range(0, sensor.shape[0], batch_size):
            x = Tensor(sensor[start : start + batch_size], dtype=dtype)
            preds.append(bundle.logits(x).data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def synthesize(regressor, pose: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Run R over pose windows in eval mode."""
    regressor.eval()
    dtype = regressor.fc.weight.dtype
    out = []
    with no_grad():
        for start in range(0, pose.shape[0], batch_size):
            out.append(regressor(Tensor(pose[start : start + batch_size], dtype=dtype)).data)
    return np.concatenate(out)


def test_mse(regressor, pose: np.ndarray, sensor: np.ndarray, batch_size: int = 64) -> float:
    """Mean squared error of synthesized against real windows, over every element."""
    pred = synthesize(regressor, pose, batch_size).astype(np.float64)
    diff = pred - np.asarray(sensor, dtype=np.float64)
    return float(np.mean(diff * diff))


test_mse.__test__ = False  # not a pytest test despite the name


def classification_report(bundle, sensor, labels, n_classes: int) -> dict[str, float]:
    cm = confusion_matrix(labels, predict_classes(bundle, sensor), n_classes)
    return {"f1": macro_f1(cm), "accuracy": accuracy(cm)}
