"""One-vs-rest linear SVM trained by seeded stochastic subgradient descent.

Per-class binary hinge objectives share one weight matrix; the regularization
strength is the usual 1/(C*N) weight decay. The learning rate follows
lr_t = lr0 / (1 + lr0 * reg * t), and samples are visited in a reshuffled
order every epoch, so a fit is bit-reproducible for a given seed.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .errors import ConfigurationError
from .validation import as_matrix, check_dim


class LinearHingeSVM(BaseEstimator, ClassifierMixin):
    """Multiclass linear SVM (one-vs-rest hinge, SGD).

    Parameters
    ----------
    C : float, inverse regularization strength; weight decay is 1/(C*N).
    epochs : int, passes over the training set.
    learning_rate : float, initial step size lr0.
    random_state : int, shuffle seed.

    Attributes
    ----------
    coef_ : (num_classes, dim) weight rows.
    intercept_ : (num_classes,) biases.
    classes_ : sorted class labels seen at fit.
    """

    def __init__(self, C=1.0, epochs=30, learning_rate=0.5, random_state=0):
        self.C = C
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y):
        X = as_matrix(X, "features")
        y = np.asarray(y, dtype=np.int64)
        if y.shape[0] != X.shape[0]:
            raise ConfigurationError("features and labels disagree in length")
        classes = np.unique(y)
        if classes.shape[0] < 2:
            raise ConfigurationError("need at least 2 classes to train a classifier")

        n, dim = X.shape
        k = classes.shape[0]
        reg = 1.0 / (self.C * n)
        label_index = np.searchsorted(classes, y)
        targets = np.full((n, k), -1.0)
        targets[np.arange(n), label_index] = 1.0

        w = np.zeros((k, dim))
        b = np.zeros(k)
        rng = np.random.default_rng(self.random_state)
        lr0 = float(self.learning_rate)
        t = 0
        for _ in range(int(self.epochs)):
            for i in rng.permutation(n):
                lr = lr0 / (1.0 + lr0 * reg * t)
                x = X[i]
                tgt = targets[i]
                active = (1.0 - (w @ x + b) * tgt) > 0.0
                w *= 1.0 - lr * reg
                if active.any():
                    w[active] += lr * tgt[active, None] * x
                    b[active] += lr * tgt[active]
                t += 1

        self.classes_ = classes
        self.coef_ = w
        self.intercept_ = b
        return self

    def objective(self, X, y):
        """Mean hinge loss plus the quadratic penalty, as minimized by fit."""
        X = as_matrix(X, "features")
        label_index = np.searchsorted(self.classes_, np.asarray(y))
        targets = np.full((X.shape[0], self.classes_.shape[0]), -1.0)
        targets[np.arange(X.shape[0]), label_index] = 1.0
        margins = 1.0 - self.decision_function(X) * targets
        hinge = np.maximum(margins, 0.0).sum(axis=1).mean()
        reg = 1.0 / (self.C * X.shape[0])
        return float(hinge + 0.5 * reg * np.sum(self.coef_ * self.coef_))

    def decision_function(self, X):
        if not hasattr(self, "coef_"):
            raise NotFittedError("LinearHingeSVM is not fitted")
        X = as_matrix(X, "features")
        check_dim(X.shape[1], self.coef_.shape[1], "svm input")
        return X @ self.coef_.T + self.intercept_

    def predict(self, X):
        """Argmax of per-class scores; ties break to the lowest class index."""
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
