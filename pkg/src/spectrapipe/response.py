"""RGB spectral response curves with a trainable per-band displacement."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .autodiff import Tensor, as_tensor, value_of
from .core import N_BANDS, WAVELENGTHS, check_grid


class CurveFormatError(ValueError):
    pass


@dataclass
class ResponseMatrix:
    """Standard 3x31 sensitivities plus one displacement shared by R, G and B.

    ``displacement`` may be a plain array or an autodiff ``Tensor`` while
    training.
    """

    base: np.ndarray
    displacement: np.ndarray | Tensor = field(default=None)

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float64)
        if self.base.shape != (3, N_BANDS):
            raise CurveFormatError(f"response base must be 3x{N_BANDS}, got {self.base.shape}")
        if np.any(self.base < 0) or not np.all(np.isfinite(self.base)):
            raise CurveFormatError("response base must be finite and non-negative")
        if np.any(self.base.max(axis=1) <= 0):
            raise CurveFormatError("every response channel needs a positive sensitivity")
        if self.displacement is None:
            self.displacement = np.zeros(N_BANDS)
        elif not isinstance(self.displacement, Tensor):
            self.displacement = np.asarray(self.displacement, dtype=np.float64)
        if np.shape(value_of(self.displacement)) != (N_BANDS,):
            raise CurveFormatError("displacement must have 31 entries")

    def with_displacement(self, displacement):
        return ResponseMatrix(self.base, displacement)


def _parse_curves(text, source):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CurveFormatError(f"{source}: empty curve file") from None
    if header != ["wavelength", "r", "g", "b"]:
        raise CurveFormatError(f"{source}: header must be 'wavelength,r,g,b', got {header}")
    rows = list(reader)
    if len(rows) != N_BANDS:
        raise CurveFormatError(f"{source}: expected {N_BANDS} data rows, got {len(rows)}")
    try:
        table = np.array([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise CurveFormatError(f"{source}: non-numeric value ({exc})") from None
    if table.shape != (N_BANDS, 4):
        raise CurveFormatError(f"{source}: every row needs 4 columns")
    try:
        check_grid(table[:, 0], where=f"{source}: wavelength")
    except ValueError as exc:
        raise CurveFormatError(str(exc)) from None
    if np.any(table[:, 1:] < 0):
        band = WAVELENGTHS[np.argwhere(table[:, 1:] < 0)[0, 0]]
        raise CurveFormatError(f"{source}: negative sensitivity at {band:.0f} nm")
    return table[:, 1:].T.copy()


def load_standard_curves(path=None):
    """Load curves from CSV (``wavelength,r,g,b``); ``None`` loads the bundled set.

    The bundled curves are synthetic Gaussians, not a measured camera.
    """
    if path is None:
        text = resources.files("spectrapipe").joinpath("data").joinpath("standard_curves.csv").read_text()
        source = "standard_curves.csv"
    else:
        with open(path, newline="") as fh:
            text = fh.read()
        source = str(path)
    return ResponseMatrix(_parse_curves(text, source))


def write_curves(path_or_buf, matrix):
    """Write a 3x31 matrix in the curve CSV format."""
    m = np.asarray(matrix, dtype=float)
    out = io.StringIO()
    out.write("wavelength,r,g,b\n")
    for i, w in enumerate(WAVELENGTHS):
        out.write(f"{w:.0f},{m[0, i]:.9g},{m[1, i]:.9g},{m[2, i]:.9g}\n")
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(out.getvalue())
    else:
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(out.getvalue())


def effective_matrix(rm):
    """``max(base + displacement, 0)`` with the displacement broadcast over channels."""
    if isinstance(rm.displacement, Tensor):
        return (as_tensor(rm.base) + rm.displacement.reshape(1, N_BANDS)).clip(lo=0.0)
    return np.maximum(rm.base + rm.displacement[None, :], 0.0)


def band_loss(rm):
    """Sensitivity-weighted L1 penalty on the displacement.

    Bands where the standard curves are sensitive cost more to move.
    """
    weight = rm.base.sum(axis=0)
    if isinstance(rm.displacement, Tensor):
        return (rm.displacement.abs() * weight).sum()
    return float(np.sum(weight * np.abs(rm.displacement)))


def band_loss_grad(rm):
    """Analytic gradient of :func:`band_loss` w.r.t. the displacement (0 at kinks)."""
    return rm.base.sum(axis=0) * np.sign(value_of(rm.displacement))
