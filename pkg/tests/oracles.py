"""Independent brute-force reference implementations used as test oracles.

Everything here favors the most literal computation available: explicit
loops, direct (non-log) density ratios, naive matrix products. These stay
deliberately separate from the library code paths they check.
"""

import math

import numpy as np
import scipy.linalg


# -- linear algebra -------------------------------------------------------------


def naive_mean(X):
    n, d = X.shape
    mean = np.zeros(d)
    for row in X:
        for j in range(d):
            mean[j] += row[j]
    return mean / n


def naive_covariance(X):
    """Population covariance by explicit accumulation."""
    n, d = X.shape
    mean = naive_mean(X)
    cov = np.zeros((d, d))
    for row in X:
        c = row - mean
        for i in range(d):
            for j in range(d):
                cov[i, j] += c[i] * c[j]
    return cov / n


def brute_force_pca(X, m):
    """Top-m eigenpairs of the loop-computed covariance via a dense symmetric solver.

    Rows are sign-fixed the same way as the library (first component with
    magnitude > 1e-12 positive) so results are directly comparable.
    """
    cov = naive_covariance(X)
    eigvals, eigvecs = scipy.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:m]
    basis = eigvecs[:, order].T.copy()
    for row in basis:
        for v in row:
            if abs(v) > 1e-12:
                if v < 0:
                    row *= -1.0
                break
    return np.maximum(eigvals[order], 0.0), basis


def naive_matvec(A, x):
    out = np.zeros(A.shape[0])
    for i in range(A.shape[0]):
        acc = 0.0
        for j in range(A.shape[1]):
            acc += A[i, j] * x[j]
        out[i] = acc
    return out


# -- mixture model --------------------------------------------------------------


def gaussian_density(x, mean, stddev):
    """Direct (non-log) diagonal Gaussian density."""
    acc = 1.0
    for j in range(len(x)):
        z = (x[j] - mean[j]) / stddev[j]
        acc *= math.exp(-0.5 * z * z) / (stddev[j] * math.sqrt(2.0 * math.pi))
    return acc


def naive_posteriors(weights, means, stddevs, x):
    dens = np.array(
        [weights[k] * gaussian_density(x, means[k], stddevs[k]) for k in range(len(weights))]
    )
    return dens / dens.sum()


def naive_mean_log_likelihood(weights, means, stddevs, X):
    total = 0.0
    for x in X:
        mix = 0.0
        for k in range(len(weights)):
            mix += weights[k] * gaussian_density(x, means[k], stddevs[k])
        total += math.log(mix)
    return total / X.shape[0]


def reference_em(X, means0, n_iter=200):
    """Plain textbook EM from given initial means (unit variances, equal weights).

    Returns (weights, means, variances, mean log-likelihood) after n_iter
    iterations. Written independently of the library: direct densities, no
    floors, no k-means.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    k = means0.shape[0]
    weights = np.full(k, 1.0 / k)
    means = means0.astype(np.float64).copy()
    variances = np.ones((k, d))
    ll = -np.inf
    for _ in range(n_iter):
        resp = np.zeros((n, k))
        for i in range(n):
            for j in range(k):
                resp[i, j] = weights[j] * gaussian_density(X[i], means[j], np.sqrt(variances[j]))
        row_sums = resp.sum(axis=1)
        ll = float(np.mean(np.log(row_sums)))
        resp /= row_sums[:, None]
        counts = resp.sum(axis=0)
        weights = counts / n
        for j in range(k):
            means[j] = (resp[:, j][:, None] * X).sum(axis=0) / counts[j]
            diff = X - means[j]
            variances[j] = (resp[:, j][:, None] * diff * diff).sum(axis=0) / counts[j]
            variances[j] = np.maximum(variances[j], 1e-10)
    return weights, means, variances, ll


# -- Fisher encoding ------------------------------------------------------------


def fisher_vector_oracle(descriptors, weights, means, stddevs, alpha=0.5):
    """Per-descriptor single-pass Fisher vector, no accumulator factoring.

    mean block: sum_t gamma_t_k (x_t - mu_k) / sigma_k / sqrt(w_k)
    stddev block: sum_t gamma_t_k ((x_t - mu_k)^2 - sigma_k^2) / sigma_k^2 / sqrt(2 w_k)
    followed by signed power alpha and l2 normalization, all computed with
    plain loops.
    """
    k, m = means.shape
    g_mean = np.zeros((k, m))
    g_std = np.zeros((k, m))
    for x in descriptors:
        gamma = naive_posteriors(weights, means, stddevs, x)
        for j in range(k):
            for dim in range(m):
                z = x[dim] - means[j, dim]
                g_mean[j, dim] += gamma[j] * z / stddevs[j, dim] / math.sqrt(weights[j])
                g_std[j, dim] += (
                    gamma[j]
                    * (z * z - stddevs[j, dim] ** 2)
                    / (stddevs[j, dim] ** 2 * math.sqrt(2.0 * weights[j]))
                )
    raw = np.concatenate([g_mean.ravel(), g_std.ravel()])
    powered = np.array([math.copysign(abs(v) ** alpha, v) for v in raw])
    norm = math.sqrt(float((powered * powered).sum()))
    return powered / norm if norm > 0 else powered


def encode_fisher_oracle(maps, pca_mean, pca_basis, weights, means, stddevs, alpha=0.5):
    """Stage-by-stage brute-force version of the full map encoding."""
    h, w, d = maps.shape
    fibers = []
    for i in range(h):
        for j in range(w):
            fiber = np.array([maps[i, j, c] for c in range(d)])
            peak = max(abs(v) for v in fiber)
            if peak > 0:
                fiber = fiber / peak
            fibers.append(naive_matvec(pca_basis, fiber - pca_mean))
    return fisher_vector_oracle(np.array(fibers), weights, means, stddevs, alpha)


# -- network --------------------------------------------------------------------


def naive_conv_relu(x, W, b, stride):
    """Single-image same-padded conv + ReLU with quad loops. x: (H, W, Cin)."""
    h, w, cin = x.shape
    k = W.shape[0]
    cout = W.shape[3]
    pt = (k - 1) // 2
    oh = (h - 1) // stride + 1
    ow = (w - 1) // stride + 1
    out = np.zeros((oh, ow, cout))
    for oi in range(oh):
        for oj in range(ow):
            for co in range(cout):
                acc = b[co]
                for ki in range(k):
                    for kj in range(k):
                        ii = oi * stride + ki - pt
                        jj = oj * stride + kj - pt
                        if 0 <= ii < h and 0 <= jj < w:
                            for ci in range(cin):
                                acc += x[ii, jj, ci] * W[ki, kj, ci, co]
                out[oi, oj, co] = max(acc, 0.0)
    return out


def naive_maxpool(x, kernel, stride):
    h, w, c = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    out = np.zeros((oh, ow, c))
    for oi in range(oh):
        for oj in range(ow):
            for ci in range(c):
                best = -np.inf
                for ki in range(kernel):
                    for kj in range(kernel):
                        best = max(best, x[oi * stride + ki, oj * stride + kj, ci])
                out[oi, oj, ci] = best
    return out


def naive_dense(x_flat, W, b, relu):
    out = naive_matvec(W.T, x_flat) + b
    return np.maximum(out, 0.0) if relu else out


def hinge_oracle(scores, label):
    total = 0.0
    for c, s in enumerate(scores):
        t = 1.0 if c == label else -1.0
        total += max(0.0, 1.0 - s * t)
    return total
