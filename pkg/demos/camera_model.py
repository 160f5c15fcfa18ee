"""Simulating an RGB camera from a hyperspectral cube.

Walks through each stage of the forward model: projection through the
response curves, sensor noise, normalization and gamma, then the block-DCT
compression.  Run with ``python demos/camera_model.py``.
"""

import numpy as np

from spectrapipe import synth
from spectrapipe.camera import (SAMPLE, CameraParams, CounterRNG, apply_noise, camera_forward,
                                gamma_encode, jpeg_approx, project_to_rgb)
from spectrapipe.core import normalize_unit
from spectrapipe.response import band_loss, load_standard_curves

rng = np.random.default_rng(0)
model = synth.SpectraModel("basis", 4)
cube, labels, _ = synth.make_scene(rng, model, 32)
print("cube", cube.shape, "range", cube.min().round(3), cube.max().round(3))

rm = load_standard_curves()
clean = project_to_rgb(cube, rm)
print("projected RGB per-channel mean", clean.mean(axis=(1, 2)).round(4))

# shot noise dominates at low photon counts
for nu in (1e2, 1e4, 1e6):
    p = CameraParams(sigma=0.0, nu=nu, mode=SAMPLE)
    noisy = apply_noise(clean, p, CounterRNG(1))
    print(f"nu={nu:8.0e}  rms noise {np.sqrt(np.mean((noisy - clean) ** 2)):.5f}")

encoded = gamma_encode(normalize_unit(clean))
for q in (100, 90, 50, 10):
    err = np.abs(jpeg_approx(encoded, q) - encoded).max()
    print(f"quality {q:3d}  max compression error {err:.4f}")

# the full model with a shifted set of curves
shifted = rm.with_displacement(0.05 * np.sin(np.linspace(0, np.pi, 31)))
p = CameraParams(sigma=0.01, nu=1e4, jpeg_quality=90)
a = camera_forward(cube, rm, p, CounterRNG(7))
b = camera_forward(cube, shifted, p, CounterRNG(7))
print("band loss of shifted curves", round(band_loss(shifted), 4))
print("mean |difference| between the two cameras", np.abs(a - b).mean().round(4))
