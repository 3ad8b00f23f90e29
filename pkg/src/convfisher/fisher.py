"""Fisher vector encoding of conv feature maps, plus baseline encoders.

The encoding pipeline per map stack: extract channel fibers, max-abs
normalize each, PCA-project to M dims, soft-assign to the K mixtures,
pool the weighted moment statistics, convert to mean/stddev gradient
blocks, then power- and l2-normalize. Output layout is the K mean blocks
followed by the K stddev blocks, each of length M, i.e. 2*M*K values.

Pooling is orderless: any spatial permutation of the fibers leaves the
encoding unchanged (up to float summation order).
"""

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import ConfigurationError
from .kmeans import assign as nearest_center
from .kmeans import kmeans
from .tensors import maps_to_descriptors, max_abs_normalize
from .validation import as_matrix, check_dim


def accumulate_statistics(descriptors, gmm, posterior_floor=0.0):
    """Pool posterior-weighted moment sums over a projected descriptor set.

    Returns (s0, s1, s2): s0[k] is the total soft count for mixture k,
    s1[k] the weighted descriptor sum, s2[k] the weighted sum of squares.
    Posteriors below `posterior_floor` are zeroed and each row renormalized,
    so the soft counts still total T exactly.
    """
    X = as_matrix(descriptors)
    check_dim(X.shape[1], gmm.means_.shape[1], "accumulator input")
    gamma = gmm.predict_proba(X)
    if posterior_floor > 0.0:
        gamma = np.where(gamma < posterior_floor, 0.0, gamma)
        gamma = gamma / gamma.sum(axis=1, keepdims=True)
    s0 = gamma.sum(axis=0)
    s1 = gamma.T @ X
    s2 = gamma.T @ (X * X)
    return s0, s1, s2


def fisher_gradients(s0, s1, s2, gmm):
    """Mean and stddev gradient blocks from pooled statistics, concatenated.

    mean block k:   (s1_k - mu_k * s0_k) / (sqrt(w_k) * sigma_k)
    stddev block k: (s2_k - 2 mu_k s1_k + (mu_k^2 - sigma_k^2) s0_k)
                    / (sqrt(2 w_k) * sigma_k^2)
    """
    mu, sigma, w = gmm.means_, gmm.stddevs_, gmm.weights_
    s0 = np.asarray(s0, dtype=np.float64)[:, None]
    g_mean = (s1 - mu * s0) / (np.sqrt(w)[:, None] * sigma)
    g_std = (s2 - 2.0 * mu * s1 + (mu * mu - sigma * sigma) * s0) / (
        np.sqrt(2.0 * w)[:, None] * sigma * sigma
    )
    return np.concatenate([g_mean.ravel(), g_std.ravel()])


def power_l2_normalize(v, alpha=0.5):
    """Signed power transform sign(x)*|x|^alpha, then scale to unit l2 norm.

    An all-zero vector is returned as-is with a warning; there is nothing to
    normalize.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"power exponent alpha={alpha} must be in (0, 1]")
    v = np.asarray(v, dtype=np.float64)
    out = np.sign(v) * np.abs(v) ** alpha
    norm = np.linalg.norm(out)
    if norm == 0.0:
        warnings.warn("normalizing an all-zero vector; returned unchanged")
        return out
    return out / norm


def encode_fisher(maps, pca, gmm, alpha=0.5, posterior_floor=0.0):
    """Full encoding of one (H, W, D) map stack into a 2*M*K vector."""
    fibers = max_abs_normalize(maps_to_descriptors(maps))
    projected = pca.transform(fibers)
    s0, s1, s2 = accumulate_statistics(projected, gmm, posterior_floor)
    return power_l2_normalize(fisher_gradients(s0, s1, s2, gmm), alpha)


def encode_direct(maps):
    """Max-abs-normalized fibers concatenated in row-major spatial order, l2-scaled."""
    fibers = max_abs_normalize(maps_to_descriptors(maps))
    flat = fibers.ravel()
    norm = np.linalg.norm(flat)
    return flat / norm if norm > 0.0 else flat


class FisherVectorEncoder(BaseEstimator, TransformerMixin):
    """Transformer wrapping encode_fisher with fitted PCA and mixture models.

    Parameters
    ----------
    pca : fitted PrincipalComponents (input dim must match map channels).
    gmm : fitted DiagonalGaussianMixture over the projected descriptors.
    alpha : power-normalization exponent in (0, 1].
    posterior_floor : posteriors below this are zeroed (rows renormalized);
        0 disables the truncation speedup.
    """

    def __init__(self, pca, gmm, alpha=0.5, posterior_floor=0.0):
        self.pca = pca
        self.gmm = gmm
        self.alpha = alpha
        self.posterior_floor = posterior_floor

    def fit(self, X=None, y=None):
        check_dim(
            self.gmm.means_.shape[1],
            self.pca.components_.shape[0],
            "mixture dimension vs pca output",
        )
        return self

    @property
    def output_dim(self):
        return 2 * self.gmm.means_.shape[1] * self.gmm.means_.shape[0]

    def encode(self, maps):
        return encode_fisher(maps, self.pca, self.gmm, self.alpha, self.posterior_floor)

    def transform(self, X):
        """Encode a batch: (N, H, W, D) array or sequence of (H, W, D) stacks."""
        return np.stack([self.encode(m) for m in X])


class DirectEncoder(BaseEstimator, TransformerMixin):
    """Order-sensitive baseline: normalized fibers flattened row-major."""

    def fit(self, X=None, y=None):
        return self

    def encode(self, maps):
        return encode_direct(maps)

    def transform(self, X):
        return np.stack([encode_direct(m) for m in X])


class BagOfWordsEncoder(BaseEstimator, TransformerMixin):
    """Hard-assignment histogram over a k-means codebook of projected fibers.

    fit() expects PCA-projected descriptors; transform() takes raw map stacks
    and projects them with the same PCA used for the Fisher encoder. The
    histogram is l1-normalized then l2-normalized. Assignment ties go to the
    lowest center index.
    """

    def __init__(self, pca, n_words=256, n_iter=15, random_state=0):
        self.pca = pca
        self.n_words = n_words
        self.n_iter = n_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = as_matrix(X)
        check_dim(X.shape[1], self.pca.components_.shape[0], "codebook input")
        rng = np.random.default_rng(self.random_state)
        self.codebook_, _ = kmeans(X, int(self.n_words), rng, n_iter=int(self.n_iter))
        return self

    def encode(self, maps):
        if not hasattr(self, "codebook_"):
            raise NotFittedError("BagOfWordsEncoder is not fitted")
        if self.codebook_.shape[0] < 1:
            raise ConfigurationError("empty codebook")
        fibers = max_abs_normalize(maps_to_descriptors(maps))
        projected = self.pca.transform(fibers)
        words = nearest_center(projected, self.codebook_)
        hist = np.bincount(words, minlength=self.codebook_.shape[0]).astype(np.float64)
        hist /= hist.sum()
        norm = np.linalg.norm(hist)
        return hist / norm

    def transform(self, X):
        return np.stack([self.encode(m) for m in X])
