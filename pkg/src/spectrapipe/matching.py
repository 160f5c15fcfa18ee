"""Spectra shape matrices and nearest-neighbour lookup in a measurement database.

A shape matrix holds all pairwise absolute band differences of a spectrum,
so a constant offset between two instruments does not change it.  Pixels are
matched to the database entry whose shape matrix is closest in Frobenius
norm and inherit that entry's observations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import N_BANDS, WAVELENGTHS, ShapeError, check_grid

DB_HEADER = (["id", "label", "specularity", "roughness", "photopic", "melanopic"]
             + [f"r{w:.0f}" for w in WAVELENGTHS])
OBSERVATIONS = ("photopic_reflectance", "specularity", "roughness")


class DatabaseFormatError(ValueError):
    pass


@dataclass
class SpectralDbEntry:
    id: str
    spectrum: np.ndarray
    specularity: float
    roughness: float
    photopic_reflectance: float
    melanopic_reflectance: float
    material_label: int

    def __post_init__(self):
        self.spectrum = np.asarray(self.spectrum, dtype=np.float64)
        if self.spectrum.shape != (N_BANDS,):
            raise ShapeError(f"entry {self.id}: spectrum needs {N_BANDS} values")
        if not np.all(np.isfinite(self.spectrum)) or np.any(self.spectrum < 0):
            raise ValueError(f"entry {self.id}: spectrum must be finite and >= 0")
        for name in ("specularity", "roughness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"entry {self.id}: {name} must lie in [0, 1]")
        for name in ("photopic_reflectance", "melanopic_reflectance"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"entry {self.id}: {name} must be finite and >= 0")

    def observations(self):
        return np.array([getattr(self, k) for k in OBSERVATIONS])


def shape_matrix(s):
    """31x31 matrix of pairwise absolute band differences ``|s_a - s_b|``."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (N_BANDS,):
        raise ShapeError(f"shape_matrix expects {N_BANDS} values, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("shape_matrix: non-finite spectrum")
    return np.abs(s[:, None] - s[None, :])


def _shape_matrices(spectra):
    """(n, 31) -> (n, 31, 31) stack of shape matrices."""
    spectra = np.asarray(spectra, dtype=np.float64)
    return np.abs(spectra[:, :, None] - spectra[:, None, :])


class SpectralDb:
    """Immutable database with precomputed shape matrices."""

    def __init__(self, entries):
        self.entries = list(entries)
        if not self.entries:
            raise ValueError("spectral database is empty")
        self.spectra = np.stack([e.spectrum for e in self.entries])
        self.shapes = _shape_matrices(self.spectra)
        self.obs = np.stack([e.observations() for e in self.entries])
        self.labels = np.array([e.material_label for e in self.entries])

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def _as_db(db):
    return db if isinstance(db, SpectralDb) else SpectralDb(db)


def match(query, db):
    """Index and Frobenius distance of the closest database shape matrix.

    Ties go to the lowest index.
    """
    if not isinstance(db, SpectralDb) and len(db) == 0:
        raise ValueError("cannot match against an empty database")
    db = _as_db(db)
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (N_BANDS, N_BANDS):
        raise ShapeError("query must be a 31x31 shape matrix")
    d = np.sqrt(np.sum((db.shapes - q) ** 2, axis=(1, 2)))
    idx = int(np.argmin(d))  # first minimum
    return idx, float(d[idx])


@dataclass
class ObservationMap:
    values: np.ndarray    # (3, H, W): photopic reflectance, specularity, roughness
    index: np.ndarray     # (H, W) matched entry
    distance: np.ndarray  # (H, W)


def attach_observations(h, db, chunk=64):
    """Match every pixel spectrum and gather the winner's observations."""
    db = _as_db(db)
    cube = np.asarray(h, dtype=np.float64)
    if cube.ndim != 3 or cube.shape[0] != N_BANDS:
        raise ShapeError(f"cube must have shape (31, H, W), got {cube.shape}")
    _, hgt, wid = cube.shape
    pixels = cube.reshape(N_BANDS, -1).T
    index = np.empty(len(pixels), dtype=np.int64)
    dist = np.empty(len(pixels))
    for start in range(0, len(pixels), chunk):
        q = _shape_matrices(pixels[start:start + chunk])
        d = np.sqrt(np.sum((q[:, None] - db.shapes[None]) ** 2, axis=(2, 3)))
        index[start:start + chunk] = np.argmin(d, axis=1)
        dist[start:start + chunk] = d[np.arange(len(d)), index[start:start + chunk]]
    values = db.obs[index].T.reshape(3, hgt, wid)
    return ObservationMap(values, index.reshape(hgt, wid), dist.reshape(hgt, wid))


def weighted_reflectance(spectrum, weighting_curve):
    """``sum(w * s) / sum(w)`` for a non-negative weighting curve."""
    s = np.asarray(spectrum, dtype=np.float64)
    w = np.asarray(weighting_curve, dtype=np.float64)
    if s.shape != w.shape:
        raise ShapeError("spectrum and weighting curve differ in length")
    if np.any(w < 0):
        raise ValueError("weighting curve must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("weighting curve is all zero")
    return float(np.dot(w, s) / total)


def load_weighting_curve(name_or_path):
    """Bundled ``photopic``/``melanopic`` curve or a ``wavelength,weight`` CSV."""
    if name_or_path in ("photopic", "melanopic"):
        text = resources.files("spectrapipe").joinpath("data").joinpath(
            f"{name_or_path}.csv").read_text()
    else:
        with open(name_or_path, newline="") as fh:
            text = fh.read()
    rows = [r for r in csv.reader(ln for ln in text.splitlines()
                                  if ln.strip() and not ln.startswith("#"))]
    if [c.strip() for c in rows[0]] != ["wavelength", "weight"]:
        raise ValueError(f"{name_or_path}: header must be 'wavelength,weight'")
    table = np.array([[float(v) for v in r] for r in rows[1:]])
    check_grid(table[:, 0], where=f"{name_or_path}: wavelength")
    if np.any(table[:, 1] < 0):
        raise ValueError(f"{name_or_path}: negative weight")
    return table[:, 1].copy()


# -- CSV database ------------------------------------------------------------

def write_db(path, entries):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(DB_HEADER)
        for e in entries:
            out.writerow([e.id, e.material_label] + [
                f"{v:.9g}" for v in (e.specularity, e.roughness, e.photopic_reflectance,
                                     e.melanopic_reflectance)]
                + [f"{v:.9g}" for v in e.spectrum])


def read_db(path):
    """Load a database CSV; other wavelength grids are rejected, not resampled."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatabaseFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header != DB_HEADER:
        bad = next((i for i, (a, b) in enumerate(zip(header, DB_HEADER)) if a != b),
                   min(len(header), len(DB_HEADER)))
        got = header[bad] if bad < len(header) else "<missing>"
        want = DB_HEADER[bad] if bad < len(DB_HEADER) else "<end of header>"
        raise DatabaseFormatError(f"{path}: header column {bad + 1} is '{got}', expected '{want}'")
    entries = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(DB_HEADER):
            raise DatabaseFormatError(f"{path}:{n}: expected {len(DB_HEADER)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row[2:]]
            label = int(row[1])
        except ValueError as exc:
            raise DatabaseFormatError(f"{path}:{n}: {exc}") from None
        try:
            entries.append(SpectralDbEntry(row[0], values[4:], values[0], values[1],
                                           values[2], values[3], label))
        except ValueError as exc:
            raise DatabaseFormatError(f"{path}:{n}: {exc}") from None
    if not entries:
        raise DatabaseFormatError(f"{path}: no entries")
    return entries
