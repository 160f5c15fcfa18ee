"""Synthetic scenes, cameras and spectral databases.

Spectra are non-negative mixtures of smooth Gaussian basis functions over
the 31-band grid.  A scene is a Voronoi partition into cells; each cell
draws one coefficient vector from its class distribution and pixels add a
small multiplicative jitter.  The class of a cell is a function of its
coefficients (the basis group with the largest summed weight), so labels
follow coefficient-space regions.

``kind="basis"`` uses 8 basis functions with classes tied to groups of
them.  ``kind="linear"`` uses a fixed 31x3 matrix so every spectrum is that
matrix times a non-negative 3-vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraParams, CounterRNG, camera_forward
from .core import N_BANDS, UNLABELED, WAVELENGTHS
from .matching import SpectralDbEntry, weighted_reflectance
from .response import ResponseMatrix, load_standard_curves

N_BASIS = 8
BASIS_OFFSET = 0.05
BASIS_SCALE = 0.35
JITTER = 0.03
BOOST = (0.6, 1.0)
BACKGROUND = (0.0, 0.3)
LINEAR_COEF = (0.1, 1.0)


def gaussian_basis(n=N_BASIS, width=30.0):
    """(31, n) matrix of Gaussians centred evenly across 420-680 nm."""
    centers = np.linspace(420.0, 680.0, n)
    return np.exp(-0.5 * ((WAVELENGTHS[:, None] - centers[None, :]) / width) ** 2)


def linear_matrix():
    """Fixed non-negative 31x3 matrix of the linear dataset."""
    centers = np.array([450.0, 550.0, 650.0])
    return np.exp(-0.5 * ((WAVELENGTHS[:, None] - centers[None, :]) / 40.0) ** 2)


def class_groups(n_classes, n_basis=N_BASIS):
    """Split basis indices into ``n_classes`` contiguous groups."""
    if not 1 <= n_classes <= n_basis:
        raise ValueError(f"n_classes must be in 1..{n_basis}")
    return np.array_split(np.arange(n_basis), n_classes)


@dataclass
class SpectraModel:
    kind: str = "basis"
    n_classes: int = 4

    def __post_init__(self):
        if self.kind not in ("basis", "linear"):
            raise ValueError("kind must be 'basis' or 'linear'")
        if self.kind == "linear":
            self.n_classes = 3
        self.groups = class_groups(self.n_classes) if self.kind == "basis" else None

    @property
    def matrix(self):
        return gaussian_basis() if self.kind == "basis" else linear_matrix()

    def sample_coefficients(self, rng, label):
        if self.kind == "linear":
            lo, hi = LINEAR_COEF
            c = rng.uniform(lo, 0.5 * (lo + hi), 3)
            c[label] = rng.uniform(0.5 * (lo + hi) + 0.05, hi)
            return c
        c = rng.uniform(*BACKGROUND, N_BASIS)
        c[self.groups[label]] += rng.uniform(*BOOST, len(self.groups[label]))
        return c

    def expected_coefficients(self, label):
        """Mean coefficient vector of a class, used as a Monte Carlo oracle."""
        if self.kind == "linear":
            lo, hi = LINEAR_COEF
            c = np.full(3, 0.5 * (lo + 0.5 * (lo + hi)))
            c[label] = 0.5 * (0.5 * (lo + hi) + 0.05 + hi)
            return c
        c = np.full(N_BASIS, np.mean(BACKGROUND))
        c[self.groups[label]] += np.mean(BOOST)
        return c

    def label_of(self, coef):
        if self.kind == "linear":
            return int(np.argmax(coef))
        return int(np.argmax([coef[g].sum() for g in self.groups]))

    def spectra(self, coef):
        """Coefficients (..., k) -> spectra (..., 31)."""
        out = coef @ self.matrix.T
        if self.kind == "basis":
            out = BASIS_OFFSET + BASIS_SCALE * out
        return out


def make_scene(rng, model, size, n_cells=6, unlabeled_prob=0.2):
    """One (cube, label map, cell coefficients) triple."""
    h, w = (size, size) if np.isscalar(size) else size
    seeds = np.column_stack([rng.uniform(0, h, n_cells), rng.uniform(0, w, n_cells)])
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    cell = np.argmin(d, axis=-1)
    labels_of_cells = rng.integers(model.n_classes, size=n_cells)
    coefs = np.array([model.sample_coefficients(rng, c) for c in labels_of_cells])
    unlabeled = rng.random(n_cells) < unlabeled_prob
    present = np.unique(cell)
    if unlabeled[present].all():
        unlabeled[present[0]] = False
    jitter = 1.0 + JITTER * rng.standard_normal((h, w, coefs.shape[1]))
    pix_coef = np.clip(coefs[cell] * jitter, 0.0, None)
    cube = np.moveaxis(model.spectra(pix_coef), -1, 0)
    labels = np.array([model.label_of(c) for c in coefs])[cell]
    labels = np.where(unlabeled[cell], UNLABELED, labels).astype(np.uint8)
    return np.ascontiguousarray(cube), labels, coefs


def default_cameras():
    """Spectral-dataset camera (standard curves) and a different material camera."""
    rm_s = load_standard_curves()
    p_s = CameraParams(sigma=0.01, nu=1e4, jpeg_quality=90)
    shift = 0.06 * np.sin((WAVELENGTHS - 400.0) / 300.0 * 2 * np.pi)
    rm_m = ResponseMatrix(rm_s.base, shift)
    p_m = CameraParams(sigma=0.015, nu=5e3, jpeg_quality=85)
    return (rm_s, p_s), (rm_m, p_m)


@dataclass
class SynthData:
    spectral_cubes: list = field(default_factory=list)
    spectral_rgb: list = field(default_factory=list)
    material_cubes: list = field(default_factory=list)
    material_rgb: list = field(default_factory=list)
    material_labels: list = field(default_factory=list)
    db: list = field(default_factory=list)
    model: SpectraModel = None


def make_db(rng, model, per_class=8, photopic=None, melanopic=None):
    """Spectral database: a few entries per class with class-typical observations."""
    from .matching import load_weighting_curve

    photopic = load_weighting_curve("photopic") if photopic is None else photopic
    melanopic = load_weighting_curve("melanopic") if melanopic is None else melanopic
    spec_levels = np.linspace(0.15, 0.85, model.n_classes)
    rough_levels = spec_levels[::-1]
    entries = []
    for c in range(model.n_classes):
        for _ in range(per_class):
            s = model.spectra(model.sample_coefficients(rng, c))
            s = np.clip(s + rng.uniform(-0.03, 0.03), 0.0, None)
            entries.append(SpectralDbEntry(
                id=f"syn{len(entries):04d}",
                spectrum=s,
                specularity=float(np.clip(spec_levels[c] + 0.03 * rng.standard_normal(), 0, 1)),
                roughness=float(np.clip(rough_levels[c] + 0.03 * rng.standard_normal(), 0, 1)),
                photopic_reflectance=weighted_reflectance(s, photopic),
                melanopic_reflectance=weighted_reflectance(s, melanopic),
                material_label=c,
            ))
    return entries


def generate(seed, count, size, kind="basis", n_classes=4, db_per_class=8, cameras=None):
    """Paired spectral samples, labelled material scenes and a matching database."""
    model = SpectraModel(kind, n_classes)
    (rm_s, p_s), (rm_m, p_m) = cameras or default_cameras()
    data = SynthData(model=model)
    for i in range(count):
        rng = np.random.default_rng([seed, 0, i])
        cube, _, _ = make_scene(rng, model, size)
        data.spectral_cubes.append(cube)
        data.spectral_rgb.append(camera_forward(cube, rm_s, p_s, CounterRNG(seed, 0, i)))
    for i in range(count):
        rng = np.random.default_rng([seed, 1, i])
        cube, labels, _ = make_scene(rng, model, size)
        data.material_cubes.append(cube)
        data.material_labels.append(labels)
        data.material_rgb.append(camera_forward(cube, rm_m, p_m, CounterRNG(seed, 1, i)))
    data.db = make_db(np.random.default_rng([seed, 2]), model, db_per_class)
    return data
