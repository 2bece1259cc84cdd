"""Evaluation: linear probe on frozen embeddings, label-count variance of
training sets, and the transmission-delay model."""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import embed


@dataclass
class ProbeResult:
    accuracy: float
    iterations: int


def _softmax_sgd(X, y, n_classes, iters, lr, batch_size, rng):
    W = np.zeros((X.shape[1], n_classes))
    b = np.zeros(n_classes)
    batch_size = min(batch_size, len(X))
    for _ in range(iters):
        idx = rng.integers(len(X), size=batch_size)
        xb = X[idx]
        z = xb @ W + b
        z -= z.max(1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(1, keepdims=True)
        p[np.arange(batch_size), y[idx]] -= 1.0
        p /= batch_size
        W -= lr * xb.T @ p
        b -= lr * p.sum(0)
    return W, b


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by mini-batch SGD.

    Features are standardized with training statistics before the linear layer.
    """

    def __init__(self, iters=1000, learning_rate=0.1, batch_size=64, random_state=0):
        self.iters = iters
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        self.classes_ = unique_labels(y)
        yi = np.searchsorted(self.classes_, y)
        self.mean_ = X.mean(0)
        self.scale_ = X.std(0)
        self.scale_[self.scale_ == 0] = 1.0
        rng = np.random.default_rng(self.random_state)
        self.coef_, self.intercept_ = _softmax_sgd(
            (X - self.mean_) / self.scale_, yi, len(self.classes_),
            self.iters, self.learning_rate, self.batch_size, rng)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(1)]


def linear_probe(train_embeddings, train_labels, test_embeddings, test_labels, iters=1000,
                 rng=None, learning_rate=0.1, batch_size=64):
    if len(train_embeddings) != len(train_labels) or len(test_embeddings) != len(test_labels):
        raise ValueError("embedding and label counts differ")
    seed = 0 if rng is None else int(rng.integers(2**31))
    probe = LinearProbe(iters, learning_rate, batch_size, seed).fit(train_embeddings, train_labels)
    return ProbeResult(float(probe.score(test_embeddings, test_labels)), iters)


def label_count_variance(label_sets, class_count):
    """Population variance of per-label counts for each device, and their mean."""
    per_device = []
    for labels in label_sets:
        labels = np.asarray(labels, dtype=int)
        if labels.size == 0:
            raise ValueError("empty training set")
        per_device.append(float(np.bincount(labels, minlength=class_count).var()))
    per_device = np.array(per_device)
    return per_device, float(per_device.mean())


@dataclass
class DelayParams:
    rate: float = 1e6
    model_bits_per_param: int = 32
    data_bits_per_element: int = 8
    param_count: int = 45433
    elements_per_datapoint: int = 28 * 28

    def __post_init__(self):
        if min(self.rate, self.model_bits_per_param, self.data_bits_per_element,
               self.param_count, self.elements_per_datapoint) <= 0:
            raise ValueError("delay parameters must be positive")

    @property
    def model_transfer_s(self):
        return self.param_count * self.model_bits_per_param / self.rate

    @property
    def datapoint_transfer_s(self):
        return self.elements_per_datapoint * self.data_bits_per_element / self.rate


def transmission_delay(params, uplink_models=0, datapoints=0, d2d_models=0):
    return ((uplink_models + d2d_models) * params.model_transfer_s
            + datapoints * params.datapoint_transfer_s)


def delay_of_run(history, params, overhead_per_event=0.0, include_measured=False):
    """Total delay in seconds of a finished run.

    Transmission terms come from the run's transfer counters; computation is a
    fixed cost per exchange event plus, optionally, the measured wall-clock.
    """
    total = transmission_delay(params, history.uplink_transfers,
                               history.points_pushed + history.points_pulled,
                               history.d2d_model_transfers)
    total += overhead_per_event * history.exchange_events
    if include_measured:
        total += history.compute_seconds
    return total


class LabelMonitor:
    """Harness-side observer that holds the labels the protocol never sees."""

    def __init__(self, labels_by_id, class_count, probe_train, probe_test, iters=1000,
                 learning_rate=0.1, batch_size=64, seed=0):
        self.labels_by_id = np.asarray(labels_by_id, dtype=int)
        self.class_count = class_count
        self.probe_train = probe_train
        self.probe_test = probe_test
        self.iters = iters
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def training_sets(self, t, id_sets):
        return label_count_variance([self.labels_by_id[ids] for ids in id_sets], self.class_count)[1]

    def evaluate(self, t, model) -> Optional[float]:
        (Xtr, ytr), (Xte, yte) = self.probe_train, self.probe_test
        rng = np.random.default_rng([self.seed, 6])
        res = linear_probe(embed(model, Xtr), ytr, embed(model, Xte), yte, self.iters, rng,
                           self.learning_rate, self.batch_size)
        return res.accuracy
