"""Scikit-learn estimator fronts for the closed-form constructions.

``fit`` synthesizes exact weights (no iterative training), ``predict``
evaluates the network, so the memorizers drop into pipelines and model
selection like any estimator.  All of them are deterministic given ``seed``
and expose the construction's ``network_`` and ``report_`` after fitting.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .activations import HARD_TANH, RELU_LIKE, Activation
from .construct_fnn import check_capacity, construct_3layer, construct_4layer_classifier
from .data import CLASSIFICATION, REGRESSION, Dataset
from .deep import BlockLayout, construct_deep
from .genpos import construct_2layer_classifier, construct_resnet_classifier, node_budget
from .networks import fnn_forward_batch, resnet_forward_batch


def _activation(name, s_plus, s_minus) -> Activation:
    if name in ("relu", RELU_LIKE):
        return Activation(RELU_LIKE, s_plus, s_minus)
    return Activation(name)


def _regression_dataset(X, y):
    X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
    y = y[:, None] if y.ndim == 1 else y
    return Dataset(X, y, REGRESSION, y.shape[1])


class _ClassifierFront(ClassifierMixin, BaseEstimator):
    """Shared fit/predict plumbing: subclasses implement _construct."""

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        dataset = Dataset(X, encoded, CLASSIFICATION, len(self.classes_))
        self.network_, self.report_ = self._construct(dataset)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X)
        return self._forward(X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def _forward(self, X):
        return fnn_forward_batch(self.network_, X)


class ThreeLayerMemorizer(RegressorMixin, BaseEstimator):
    """Exact interpolation of any regression set with two hidden layers.

    Widths default to the smallest pair allowed for the training set size;
    targets must lie in [-1, 1] per output.
    """

    def __init__(self, d1=None, d2=None, activation=HARD_TANH, s_plus=1.0,
                 s_minus=0.0, seed=0):
        self.d1 = d1
        self.d2 = d2
        self.activation = activation
        self.s_plus = s_plus
        self.s_minus = s_minus
        self.seed = seed

    def _widths(self, act, n, d_y):
        if self.d1 is not None and self.d2 is not None:
            return self.d1, self.d2
        d = 2
        while not check_capacity("3layer", (d, d), act, d_y, n):
            d += 2
        return (self.d1 or d), (self.d2 or d)

    def fit(self, X, y):
        dataset = _regression_dataset(X, y)
        act = _activation(self.activation, self.s_plus, self.s_minus)
        d1, d2 = self._widths(act, dataset.n, dataset.d_y)
        self.network_, self.report_ = construct_3layer(dataset, d1, d2, act, self.seed)
        self.n_features_in_ = dataset.d_x
        self._squeeze = np.asarray(y).ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        out = fnn_forward_batch(self.network_, check_array(X))
        return out[:, 0] if self._squeeze else out


class DeepBlockMemorizer(RegressorMixin, BaseEstimator):
    """Exact interpolation with fitting blocks spread over a deep network."""

    def __init__(self, widths, blocks, activation=HARD_TANH, s_plus=1.0,
                 s_minus=0.0, seed=0, subset_sizes=None):
        self.widths = widths
        self.blocks = blocks
        self.activation = activation
        self.s_plus = s_plus
        self.s_minus = s_minus
        self.seed = seed
        self.subset_sizes = subset_sizes

    def fit(self, X, y):
        dataset = _regression_dataset(X, y)
        act = _activation(self.activation, self.s_plus, self.s_minus)
        layout = BlockLayout(tuple(self.widths), tuple(self.blocks), dataset.d_y,
                             None if self.subset_sizes is None else tuple(self.subset_sizes))
        self.network_, self.report_ = construct_deep(dataset, layout, act, self.seed)
        self.n_features_in_ = dataset.d_x
        self._squeeze = np.asarray(y).ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        out = fnn_forward_batch(self.network_, check_array(X))
        return out[:, 0] if self._squeeze else out


class FourLayerClassifier(_ClassifierFront):
    """Exact one-hot classifier: two memorizing layers plus per-class gates."""

    def __init__(self, d1=None, d2=None, d3=None, activation=HARD_TANH,
                 s_plus=1.0, s_minus=0.0, seed=0):
        self.d1 = d1
        self.d2 = d2
        self.d3 = d3
        self.activation = activation
        self.s_plus = s_plus
        self.s_minus = s_minus
        self.seed = seed

    def _construct(self, dataset):
        act = _activation(self.activation, self.s_plus, self.s_minus)
        mult = 2 if act.kind == HARD_TANH else 4
        d3 = self.d3 if self.d3 is not None else mult * dataset.d_y
        if self.d1 is not None and self.d2 is not None:
            d1, d2 = self.d1, self.d2
        else:
            d = 2
            while not check_capacity("4layer_classifier", (d, d, d3), act, dataset.d_y, dataset.n):
                d += 2
            d1, d2 = (self.d1 or d), (self.d2 or d)
        return construct_4layer_classifier(dataset, d1, d2, d3, act, self.seed)


class GenPosResNetClassifier(_ClassifierFront):
    """Residual one-hot classifier for data in general position; uses exactly
    the minimal node budget."""

    def __init__(self, activation=HARD_TANH, s_plus=1.0, s_minus=0.0, seed=0,
                 block_width=None):
        self.activation = activation
        self.s_plus = s_plus
        self.s_minus = s_minus
        self.seed = seed
        self.block_width = block_width

    def _construct(self, dataset):
        act = _activation(self.activation, self.s_plus, self.s_minus)
        return construct_resnet_classifier(dataset, act, self.seed,
                                           block_width=self.block_width)

    def _forward(self, X):
        return resnet_forward_batch(self.network_, X)


class GenPosTwoLayerClassifier(_ClassifierFront):
    """One-hidden-layer one-hot classifier for data in general position."""

    def __init__(self, activation=HARD_TANH, s_plus=1.0, s_minus=0.0, seed=0):
        self.activation = activation
        self.s_plus = s_plus
        self.s_minus = s_minus
        self.seed = seed

    def _construct(self, dataset):
        act = _activation(self.activation, self.s_plus, self.s_minus)
        return construct_2layer_classifier(dataset, act, self.seed)

    def budget(self, n, d_x, d_y):
        act = _activation(self.activation, self.s_plus, self.s_minus)
        return node_budget(n, d_x, d_y, "fnn2", act)
