"""Diagonal-covariance Gaussian mixture fit by expectation-maximization.

The fitted mixture is the dictionary for Fisher vector encoding; diagonal
covariance is assumed throughout (the encoder's gradient formulas treat the
standard deviation as a per-dimension vector).

All density work happens in log space with max-subtraction, so posteriors
stay normalized for widely separated components.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ConfigurationError, DataError
from .kmeans import kmeans
from .validation import as_matrix, check_dim

_LOG_2PI = np.log(2.0 * np.pi)


class DiagonalGaussianMixture(BaseEstimator):
    """Mixture of K axis-aligned Gaussians trained by EM.

    Initialization is k-means++ seeding followed by a few Lloyd iterations,
    then EM until `max_iter` or until the relative improvement of the mean
    log-likelihood drops below `tol` (tol <= 0 disables early stopping).
    Weight and variance floors are enforced after every M-step; the variance
    floor is `variance_floor_frac` times the mean per-dimension variance of
    the training data.

    Parameters
    ----------
    n_components : int, number of mixtures K.
    max_iter : int, EM iteration cap.
    tol : float, relative mean log-likelihood improvement threshold.
    random_state : int, seed for initialization.
    weight_floor : float, lower bound on mixture weights.
    variance_floor_frac : float, variance floor as a fraction of the mean
        data variance.
    kmeans_iters : int, Lloyd iterations after k-means++ seeding.

    Attributes
    ----------
    weights_ : (K,) positive, sums to 1.
    means_ : (K, M).
    stddevs_ : (K, M) all components > 0.
    variance_floor_ : resolved absolute variance floor.
    log_likelihood_trace_ : mean log-likelihood evaluated at the start of
        every EM iteration (before that iteration's M-step).
    """

    def __init__(
        self,
        n_components=256,
        max_iter=100,
        tol=1e-4,
        random_state=0,
        weight_floor=1e-6,
        variance_floor_frac=1e-4,
        kmeans_iters=10,
    ):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.weight_floor = weight_floor
        self.variance_floor_frac = variance_floor_frac
        self.kmeans_iters = kmeans_iters

    def fit(self, X, y=None):
        X = as_matrix(X)
        n, dim = X.shape
        k = int(self.n_components)
        if k < 1:
            raise ConfigurationError(f"n_components={k} must be positive")
        if n < k:
            raise ConfigurationError(f"need at least {k} descriptors to fit, got {n}")

        mean_var = float(np.var(X, axis=0).mean())
        self.variance_floor_ = max(self.variance_floor_frac * mean_var, 1e-12)

        rng = np.random.default_rng(self.random_state)
        centers, labels = kmeans(X, k, rng, n_iter=self.kmeans_iters)
        weights, means, variances = self._moments_from_labels(X, labels, k, centers)

        trace = []
        prev_ll = None
        for _ in range(int(self.max_iter)):
            log_resp, ll = _e_step(X, weights, means, variances)
            trace.append(ll)
            gamma = np.exp(log_resp)
            weights, means, variances = self._m_step(X, gamma)
            if prev_ll is not None and self.tol > 0:
                if ll - prev_ll < self.tol * (abs(prev_ll) + 1e-12):
                    prev_ll = ll
                    break
            prev_ll = ll

        self.weights_ = weights
        self.means_ = means
        self.stddevs_ = np.sqrt(variances)
        self.log_likelihood_trace_ = np.asarray(trace)
        return self

    def _moments_from_labels(self, X, labels, k, centers):
        n = X.shape[0]
        weights = np.empty(k)
        means = centers.copy()
        variances = np.empty_like(centers)
        for j in range(k):
            members = X[labels == j]
            weights[j] = members.shape[0] / n
            if members.shape[0] > 0:
                means[j] = members.mean(axis=0)
                variances[j] = members.var(axis=0)
            else:
                variances[j] = self.variance_floor_
        return self._apply_floors(weights, means, variances)

    def _m_step(self, X, gamma):
        counts = gamma.sum(axis=0)
        safe = np.maximum(counts, 1e-300)
        weights = counts / X.shape[0]
        means = (gamma.T @ X) / safe[:, None]
        second = (gamma.T @ (X * X)) / safe[:, None]
        variances = second - means * means
        return self._apply_floors(weights, means, variances)

    def _apply_floors(self, weights, means, variances):
        variances = np.maximum(variances, self.variance_floor_)
        if np.any(weights < self.weight_floor):
            weights = np.maximum(weights, self.weight_floor)
            weights = weights / weights.sum()
        return weights, means, variances

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("DiagonalGaussianMixture is not fitted")

    def predict_proba(self, X):
        """Posterior responsibilities, rows summing to 1. Accepts (T, M) or (M,)."""
        self._check_fitted()
        single = np.asarray(X).ndim == 1
        X = as_matrix(X)
        check_dim(X.shape[1], self.means_.shape[1], "mixture posterior input")
        log_resp, _ = _e_step(X, self.weights_, self.means_, self.stddevs_**2)
        resp = np.exp(log_resp)
        return resp[0] if single else resp

    def score(self, X, y=None):
        """Mean per-descriptor log-likelihood under the mixture."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        if X.size == 0:
            raise DataError("cannot score an empty descriptor set")
        X = as_matrix(X)
        check_dim(X.shape[1], self.means_.shape[1], "mixture score input")
        _, ll = _e_step(X, self.weights_, self.means_, self.stddevs_**2)
        return ll


def _log_densities(X, means, variances):
    """(T, K) log N(x; mu_k, diag(var_k))."""
    inv = 1.0 / variances
    const = -0.5 * (means.shape[1] * _LOG_2PI + np.log(variances).sum(axis=1))
    quad = (
        (X * X) @ inv.T
        - 2.0 * (X @ (means * inv).T)
        + np.sum(means * means * inv, axis=1)[None, :]
    )
    return const[None, :] - 0.5 * quad


def _e_step(X, weights, means, variances):
    """Log responsibilities and mean log-likelihood, max-subtracted for stability."""
    weighted = _log_densities(X, means, variances) + np.log(weights)[None, :]
    top = weighted.max(axis=1, keepdims=True)
    log_norm = top[:, 0] + np.log(np.exp(weighted - top).sum(axis=1))
    return weighted - log_norm[:, None], float(log_norm.mean())
