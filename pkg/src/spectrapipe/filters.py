"""Learned spectral filters with the meaning of response curves.

Each filter is a softmax over the 31 bands, i.e. a non-negative weighting
that sums to one, so its output is a convex combination of the band values
and the exported curves can be read like sensor sensitivities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, einsum
from .core import N_BANDS, WAVELENGTHS, ShapeError, check_grid

DEFAULT_FILTERS = 12
SWEEP = (4, 8, 12, 16)


@dataclass
class FilterBank:
    logits: np.ndarray  # (n_filters, 31); a Tensor while training

    @classmethod
    def zeros(cls, n_filters=DEFAULT_FILTERS):
        return cls(np.zeros((n_filters, N_BANDS)))

    @classmethod
    def init(cls, n_filters=DEFAULT_FILTERS, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((n_filters, N_BANDS)))

    @property
    def n_filters(self):
        return np.shape(self.logits.value if isinstance(self.logits, Tensor) else self.logits)[0]

    def weights(self):
        return softmax_rows(self.logits)

    def copy(self):
        return FilterBank(np.array(self.logits, dtype=np.float64))


def softmax_rows(logits):
    if isinstance(logits, Tensor):
        shifted = logits - logits.value.max(axis=1, keepdims=True)
        e = shifted.exp()
        return e / e.sum(axis=1, keepdims=True)
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def apply_filters(h, fb):
    """Per-pixel filter responses, shape (n_filters, H, W).

    ``fb`` is a :class:`FilterBank` or an explicit (n, 31) weight table.
    """
    weights = fb.weights() if isinstance(fb, FilterBank) else fb
    shape = np.shape(h.value if isinstance(h, Tensor) else h)
    if len(shape) != 3 or shape[0] != N_BANDS:
        raise ShapeError(f"apply_filters: cube must be (31, H, W), got {shape}")
    if isinstance(h, Tensor) or isinstance(weights, Tensor):
        return einsum("kb,bhw->khw", as_tensor(weights), as_tensor(h))
    return np.einsum("kb,bhw->khw", np.asarray(weights, dtype=np.float64),
                     np.asarray(h, dtype=np.float64))


def export_filters(fb):
    """Rows of (wavelength, w_1, ..., w_n) with each filter summing to one."""
    w = fb.weights() if isinstance(fb, FilterBank) else np.asarray(fb)
    return np.column_stack([WAVELENGTHS, w.T])


def write_filters(path, fb):
    """Write the filter CSV; values use round-trip precision so re-import is exact."""
    table = export_filters(fb)
    n = table.shape[1] - 1
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["wavelength"] + [f"f{i + 1}" for i in range(n)])
        for row in table:
            out.writerow([f"{row[0]:.0f}"] + [repr(float(v)) for v in row[1:]])


def read_filters(path):
    """Read a filter CSV back as an (n, 31) weight table."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    n = len(header) - 1
    if header[0] != "wavelength" or header[1:] != [f"f{i + 1}" for i in range(n)] or n < 1:
        raise ValueError(f"{path}: header must be 'wavelength,f1..fN'")
    body = np.array([[float(v) for v in r] for r in rows[1:] if r])
    if body.shape != (N_BANDS, n + 1):
        raise ValueError(f"{path}: expected {N_BANDS} rows of {n + 1} values")
    check_grid(body[:, 0], where=f"{path}: wavelength")
    if np.any(body[:, 1:] < 0):
        raise ValueError(f"{path}: negative filter weight")
    return body[:, 1:].T.copy()
