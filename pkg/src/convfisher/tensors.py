"""Dense feature-map utilities: descriptor extraction and normalizations.

Feature-map stacks are (H, W, D) numpy arrays in row-major (h, w, d) order,
so extracting the T = H*W channel fibers is a reshape and reassembly is the
inverse reshape, bit-exactly.
"""

import numpy as np

from .errors import ConfigurationError
from .validation import as_maps, as_matrix


def maps_to_descriptors(maps):
    """Flatten (H, W, D) maps into the (T, D) matrix of channel fibers.

    Row h*W + w holds the fiber at spatial position (h, w).
    """
    maps = as_maps(maps)
    h, w, d = maps.shape
    return maps.reshape(h * w, d)


def descriptor_positions(height, width):
    """(T, 2) array of (h, w) positions matching maps_to_descriptors row order."""
    hh, ww = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([hh.ravel(), ww.ravel()], axis=1)


def descriptors_to_maps(descriptors, height, width):
    """Inverse of maps_to_descriptors; exact round-trip."""
    desc = as_matrix(descriptors)
    if desc.shape[0] != height * width:
        raise ConfigurationError(
            f"descriptor count {desc.shape[0]} does not match {height}x{width} grid"
        )
    return desc.reshape(height, width, desc.shape[1])


def max_abs_normalize(d):
    """Scale each descriptor into [-1, 1] by its own max absolute component.

    Accepts a single vector or a (T, D) matrix (row-wise). All-zero rows carry
    no direction information and are returned unchanged.
    """
    arr = np.asarray(d, dtype=np.float64)
    single = arr.ndim == 1
    mat = as_matrix(arr)
    peak = np.abs(mat).max(axis=1)
    scale = np.where(peak > 0.0, peak, 1.0)
    out = mat / scale[:, None]
    return out[0] if single else out


def occlude(image, rect, fill):
    """Copy `image` with the half-open rectangle (h0, w0, h1, w1) set to `fill`.

    The fill value is written to every channel. An empty rectangle (h0 == h1
    or w0 == w1) returns an identical copy.
    """
    image = as_maps(image, "image")
    h0, w0, h1, w1 = (int(v) for v in rect)
    height, width = image.shape[:2]
    if not (0 <= h0 <= h1 <= height and 0 <= w0 <= w1 <= width):
        raise ConfigurationError(
            f"rectangle {rect} outside {height}x{width} image bounds"
        )
    out = image.copy()
    out[h0:h1, w0:w1, :] = float(fill)
    return out
