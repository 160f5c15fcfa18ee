"""Wavelength grid, array conventions and the elementary metrics.

Cubes are stored band-major as ``(31, H, W)`` float arrays and RGB images as
``(3, H, W)``.  Label maps are ``(H, W)`` integer arrays where
``UNLABELED`` marks pixels without ground truth.  The metric functions accept
plain arrays or autodiff tensors; with plain arrays they return floats.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, as_tensor, is_tensor

N_BANDS = 31
WAVELENGTHS = 400.0 + 10.0 * np.arange(N_BANDS)
WAVELENGTHS.setflags(write=False)
UNLABELED = 255
MRAE_EPS = 1e-6


class ShapeError(ValueError):
    pass


class DegenerateRangeError(ValueError):
    pass


def band_grid():
    """Return a fresh copy of the 400-700 nm grid sampled every 10 nm."""
    return WAVELENGTHS.copy()


def check_grid(wavelengths, where="wavelengths"):
    w = np.asarray(wavelengths, dtype=float)
    if w.shape != (N_BANDS,):
        raise ShapeError(f"{where}: expected {N_BANDS} wavelengths, got {w.size}")
    if not np.all(np.diff(w) > 0):
        raise ValueError(f"{where}: wavelengths must be strictly increasing")
    if not np.allclose(w, WAVELENGTHS, rtol=0, atol=1e-6):
        raise ValueError(f"{where}: wavelengths must be 400..700 nm in 10 nm steps")
    return w


def as_cube(data):
    """Validate a hyperspectral cube and return it as a float64 array."""
    cube = np.asarray(data, dtype=np.float64)
    if cube.ndim != 3 or cube.shape[0] != N_BANDS:
        raise ShapeError(f"cube must have shape (31, H, W), got {cube.shape}")
    if not np.all(np.isfinite(cube)):
        raise ValueError("cube contains non-finite values")
    if np.any(cube < 0):
        raise ValueError("cube contains negative reflectance")
    return cube


def as_rgb(data):
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"RGB image must have shape (3, H, W), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("RGB image contains non-finite values")
    return img


def as_labels(data, n_classes=None):
    labels = np.asarray(data)
    if labels.ndim != 2 or not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError("label map must be a 2-d integer array")
    valid = labels != UNLABELED
    if np.any(labels[valid] < 0):
        raise ValueError("label map has negative class ids")
    if n_classes is not None and np.any(labels[valid] >= n_classes):
        raise ValueError(f"label map has class ids >= {n_classes}")
    return labels


def _same_shape(a, b, what):
    sa, sb = np.shape(a.value if isinstance(a, Tensor) else a), \
        np.shape(b.value if isinstance(b, Tensor) else b)
    if sa != sb:
        raise ShapeError(f"{what}: shape mismatch {sa} vs {sb}")


def mse(a, b):
    """Mean of squared differences over every element."""
    _same_shape(a, b, "mse")
    if is_tensor(a, b):
        d = as_tensor(a) - as_tensor(b)
        return (d * d).mean()
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def mrae(truth, est, epsilon=MRAE_EPS):
    """Mean relative absolute error with the denominator clamped at ``epsilon``.

    ``truth`` is treated as a constant reference.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _same_shape(truth, est, "mrae")
    t = truth.value if isinstance(truth, Tensor) else np.asarray(truth, dtype=np.float64)
    denom = np.maximum(t, epsilon)
    if is_tensor(truth, est):
        return ((as_tensor(truth) - as_tensor(est)).abs() / denom).mean()
    return float(np.mean(np.abs(t - np.asarray(est, dtype=np.float64)) / denom))


def normalize_unit(img):
    """Affinely map all values of ``img`` onto [0, 1]."""
    v = img.value if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("normalize_unit: non-finite input")
    lo, hi = v.min(), v.max()
    if not hi > lo:
        raise DegenerateRangeError("normalize_unit: image has a constant value")
    if isinstance(img, Tensor):
        lo_t, hi_t = img.min(), img.max()
        return (img - lo_t) / (hi_t - lo_t)
    out = (v - lo) / (hi - lo)
    return out
