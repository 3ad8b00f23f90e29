"""Principal component reduction of descriptor dimension.

Plain projection, no whitening: the downstream mixture model's per-dimension
variances absorb scale. Covariance uses population (1/T) normalization, which
is irrelevant to the directions but fixed here for reproducibility.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ConfigurationError
from .validation import as_matrix, check_dim

_SIGN_EPS = 1e-12


class PrincipalComponents(BaseEstimator, TransformerMixin):
    """Reduce descriptors from D to n_components dimensions by PCA.

    Parameters
    ----------
    n_components : int or None
        Output dimension M. None selects min(80, D) at fit time.

    Attributes
    ----------
    mean_ : (D,) sample mean of the fit data.
    components_ : (M, D) principal directions, rows orthonormal, ordered by
        decreasing eigenvalue. Sign fixed: the first component of each row
        with magnitude > 1e-12 is positive, so models are bit-reproducible.
    explained_variance_ : (M,) eigenvalues of the population covariance,
        non-increasing, clipped at zero.
    """

    def __init__(self, n_components=None):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = as_matrix(X)
        n, d = X.shape
        m = self.n_components if self.n_components is not None else min(80, d)
        if m < 1 or m > d:
            raise ConfigurationError(f"n_components={m} must be in [1, D={d}]")
        if n < m:
            raise ConfigurationError(f"need at least {m} descriptors, got {n}")

        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / n
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:m]
        basis = eigvecs[:, order].T
        basis = _fix_signs(basis)

        self.input_dim_ = d
        self.components_ = basis
        self.explained_variance_ = np.maximum(eigvals[order], 0.0)
        return self

    def transform(self, X):
        if not hasattr(self, "components_"):
            raise NotFittedError("PrincipalComponents is not fitted")
        X = as_matrix(X)
        check_dim(X.shape[1], self.input_dim_, "pca projection input")
        return (X - self.mean_) @ self.components_.T

    def project_vector(self, d):
        """Project a single length-D descriptor to length M."""
        return self.transform(np.asarray(d, dtype=np.float64)[None, :])[0]


def _fix_signs(basis):
    out = basis.copy()
    for row in out:
        for v in row:
            if abs(v) > _SIGN_EPS:
                if v < 0:
                    row *= -1.0
                break
    return out
