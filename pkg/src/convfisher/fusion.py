"""Hybrid feature fusion: per-block l2 normalization, then concatenation.

Block normalization keeps a long encoding (tens of thousands of dims) from
drowning a short one (dozens) under a linear kernel; each nonzero block
contributes unit energy regardless of its length or scale.
"""

import warnings

import numpy as np

from .errors import ConfigurationError


def block_l2_normalize(v):
    """Scale a vector to unit l2 norm; zero vectors are flagged and left zero."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        warnings.warn("fusion block has zero norm; left as zeros")
        return v.copy()
    return v / norm


def fuse(*blocks):
    """Concatenate independently l2-normalized feature blocks, first block first.

    Typically called as fuse(conv_encoding, fc_features); accepts more blocks
    for multi-layer encodings.
    """
    if len(blocks) < 2:
        raise ConfigurationError("fusion needs at least two blocks")
    parts = []
    for block in blocks:
        arr = np.asarray(block, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ConfigurationError("fusion blocks must be non-empty vectors")
        parts.append(block_l2_normalize(arr))
    return np.concatenate(parts)


def fuse_batches(*matrices):
    """Row-wise fuse of (N, d_i) feature matrices into (N, sum d_i)."""
    n = matrices[0].shape[0]
    for m in matrices:
        if m.shape[0] != n:
            raise ConfigurationError("fusion batches disagree in length")
    return np.stack([fuse(*(m[i] for m in matrices)) for i in range(n)])
