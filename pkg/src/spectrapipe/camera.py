"""Differentiable camera forward model.

The pipeline turns a reflectance cube into the sRGB image a camera would
store::

    project (response curves) -> sensor noise -> [0, 1] normalization
        -> sRGB gamma -> 8x8 DCT quantization

Every stage accepts plain arrays or autodiff tensors.  ``CameraParams.mode``
selects between ``"sample"`` (real Poisson draws, hard rounding) and
``"differentiable"`` (reparameterized Gaussian surrogate, soft rounding).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, as_tensor, einsum, is_tensor, pad_edge, value_of, where
from .core import N_BANDS, DegenerateRangeError, ShapeError, normalize_unit
from .response import effective_matrix

SAMPLE = "sample"
DIFFERENTIABLE = "differentiable"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_POISSON_INVERSION_MAX_RATE = 30.0
_POISSON_INVERSION_KMAX = 120

# standard JPEG luminance quantization table
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


class DomainError(ValueError):
    pass


@dataclass
class CameraParams:
    """Noise, brightness and compression settings of one camera.

    ``sigma``, ``nu`` and ``mu`` may be tensors during training.
    """

    sigma: float = 0.01
    nu: float = 1e4
    mu: float = 1.0
    jpeg_quality: int = 90
    mode: str = SAMPLE
    normalize: bool = True

    def __post_init__(self):
        if self.mode not in (SAMPLE, DIFFERENTIABLE):
            raise ValueError(f"mode must be 'sample' or 'differentiable', got {self.mode!r}")
        if not 1 <= int(self.jpeg_quality) <= 100:
            raise ValueError("jpeg_quality must be in 1..100")
        sigma, nu, mu = (float(np.asarray(value_of(v))) for v in (self.sigma, self.nu, self.mu))
        if not sigma >= 0:
            raise ValueError("sigma must be >= 0")
        if not nu > 0:
            raise ValueError("nu must be > 0")
        if not mu > 0:
            raise ValueError("mu must be > 0")

    def replace(self, **changes):
        return replace(self, **changes)


# -- counter-based random numbers -------------------------------------------

def _mix64(x):
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class CounterRNG:
    """Stateless generator: draw ``d`` for element ``i`` is a hash of (key, i, d).

    Results depend only on the key, the element index and the draw index, so
    they do not change with evaluation order or thread count.
    """

    def __init__(self, seed, *path):
        with np.errstate(over="ignore"):
            key = _mix64(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
            for p in path:
                key = _mix64(key ^ _mix64(np.uint64(int(p) & 0xFFFFFFFFFFFFFFFF) + _GOLDEN))
        self.key = key
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)

    def child(self, *path):
        return CounterRNG(self.seed, *self.path, *path)

    def _bits(self, shape, draw):
        n = int(np.prod(shape))
        idx = np.arange(n, dtype=np.uint64)
        with np.errstate(over="ignore"):
            k = _mix64(self.key ^ _mix64(np.uint64(draw) * _GOLDEN + np.uint64(1)))
            return _mix64(k + idx * _GOLDEN).reshape(shape)

    def uniform(self, shape, draw=0):
        """Uniform values in the open interval (0, 1)."""
        bits = self._bits(shape, draw) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * 2.0 ** -53

    def normal(self, shape, draw=0):
        u1 = self.uniform(shape, 2 * draw)
        u2 = self.uniform(shape, 2 * draw + 1)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def poisson(self, rate, draw=0):
        """Poisson counts: inversion for small rates, rounded Gaussian above."""
        rate = np.asarray(rate, dtype=np.float64)
        u = self.uniform(rate.shape, 2 * draw)
        z = self.normal(rate.shape, 2 * draw + 1)
        small = rate <= _POISSON_INVERSION_MAX_RATE
        r = np.where(small, rate, 0.0)
        k = np.zeros(rate.shape)
        p = np.exp(-r)
        cdf = p.copy()
        for i in range(1, _POISSON_INVERSION_KMAX + 1):
            more = u > cdf
            if not more.any():
                break
            k += more
            p = p * r / i
            cdf = cdf + p
        large = np.maximum(np.round(rate + np.sqrt(np.maximum(rate, 0.0)) * z), 0.0)
        return np.where(small, k, large)


# -- pipeline stages --------------------------------------------------------

def project_to_rgb(h, rm):
    """Apply the effective 3x31 response matrix to every pixel spectrum."""
    shape = np.shape(value_of(h))
    if len(shape) != 3 or shape[0] != N_BANDS:
        raise ShapeError(f"project_to_rgb: cube must be (31, H, W), got {shape}")
    w = effective_matrix(rm)
    if is_tensor(h, w):
        return einsum("cb,bhw->chw", as_tensor(w), as_tensor(h))
    return np.einsum("cb,bhw->chw", w, np.asarray(h, dtype=np.float64))


def apply_noise(rgb_clean, p, rng):
    """Thermal (Gaussian) plus shot (Poisson) noise, scaled by brightness.

    Sample mode draws real Poisson counts.  Differentiable mode replaces the
    Poisson draw by ``rate + sqrt(rate) * eps`` with a fixed standard-normal
    ``eps`` so gradients reach the clean signal and the parameters.
    """
    shape = np.shape(value_of(rgb_clean))
    g = rng.normal(shape, draw=0)
    if p.mode == SAMPLE:
        v = value_of(rgb_clean)
        sigma, nu, mu = (float(value_of(x)) for x in (p.sigma, p.nu, p.mu))
        rate = np.maximum((v + sigma * g) * nu, 0.0)
        return mu * rng.poisson(rate, draw=1) / nu
    eps = rng.normal(shape, draw=1)
    x = as_tensor(rgb_clean)
    rate = ((x + as_tensor(p.sigma) * g) * p.nu).clip(lo=0.0)
    positive = rate.value > 0
    root = where(positive, rate.maximum(1e-300).sqrt(), 0.0)
    out = (rate + root * eps) * p.mu / p.nu
    return out if is_tensor(rgb_clean, p.sigma, p.nu, p.mu) else out.value


_SRGB_KNEE = 0.0031308


def gamma_encode(img):
    """Standard sRGB opto-electronic transfer function on [0, 1]."""
    v = value_of(img)
    if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
        raise DomainError("gamma_encode: input must lie in [0, 1]")
    if isinstance(img, Tensor):
        safe = img.maximum(_SRGB_KNEE)
        return where(v <= _SRGB_KNEE, img * 12.92, 1.055 * safe ** (1 / 2.4) - 0.055)
    return np.where(v <= _SRGB_KNEE, 12.92 * v,
                    1.055 * np.maximum(v, _SRGB_KNEE) ** (1 / 2.4) - 0.055)


def gamma_derivative(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= _SRGB_KNEE, 12.92,
                    1.055 / 2.4 * np.maximum(v, _SRGB_KNEE) ** (1 / 2.4 - 1))


def dct_matrix(n=8):
    """Orthonormal DCT-II matrix ``D`` so that ``D @ x`` transforms a column."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    return d


DCT8 = dct_matrix(8)


def quant_table(quality):
    quality = int(quality)
    if not 1 <= quality <= 100:
        raise ValueError("quality must be in 1..100")
    scale = (100 - quality) / 50.0 if quality >= 50 else 50.0 / quality
    return np.maximum(np.floor(LUMA_TABLE * scale + 0.5), 1.0)


def soft_round(x):
    """``x - sin(2 pi x) / (2 pi)``: exact at integers, smooth everywhere."""
    if isinstance(x, Tensor):
        return x - (x * (2 * np.pi)).sin() / (2 * np.pi)
    x = np.asarray(x, dtype=np.float64)
    return x - np.sin(2 * np.pi * x) / (2 * np.pi)


def _to_blocks(x, hb, wb):
    # (3, 8*hb, 8*wb) -> (3, hb, 8, wb, 8)
    return x.reshape(x.shape[0], hb, 8, wb, 8)


def block_dct(x):
    """2-d orthonormal DCT of every 8x8 block of a (C, 8m, 8n) array."""
    c, h, w = np.shape(value_of(x))
    blocks = _to_blocks(as_tensor(x), h // 8, w // 8)
    coef = einsum("vl,cikjl->cikjv", DCT8, einsum("uk,cikjl->ciujl", DCT8, blocks))
    return coef.reshape(c, h, w) if isinstance(x, Tensor) else coef.value.reshape(c, h, w)


def block_idct(coef):
    c, h, w = np.shape(value_of(coef))
    blocks = _to_blocks(as_tensor(coef), h // 8, w // 8)
    x = einsum("vl,cikjv->cikjl", DCT8, einsum("uk,ciujl->cikjl", DCT8, blocks))
    return x.reshape(c, h, w) if isinstance(coef, Tensor) else x.value.reshape(c, h, w)


def jpeg_approx(img, quality, mode=SAMPLE):
    """Quantize 8x8 DCT blocks like a baseline JPEG encoder and decode again.

    Values are mapped to the 0..255 level scale before the transform so the
    quality-100 table (all divisors 1) rounds to whole grey levels.
    """
    v = value_of(img)
    if np.any(v < 0) or np.any(v > 1):
        raise DomainError("jpeg_approx: input must lie in [0, 1]")
    _, h, w = v.shape
    ph, pw = (-h) % 8, (-w) % 8
    x = pad_edge(as_tensor(img), [(0, 0), (0, ph), (0, pw)])
    hb, wb = (h + ph) // 8, (w + pw) // 8
    levels = x * 255.0 - 128.0
    blocks = _to_blocks(levels, hb, wb)
    coef = einsum("vl,cikjl->cikjv", DCT8, einsum("uk,cikjl->ciujl", DCT8, blocks))
    q = quant_table(quality).reshape(1, 1, 8, 1, 8)
    scaled = coef / q
    if mode == DIFFERENTIABLE:
        rounded = soft_round(scaled)
    else:
        rounded = Tensor(np.round(scaled.value))
    deq = rounded * q
    rec = einsum("vl,cikjv->cikjl", DCT8, einsum("uk,ciujl->cikjl", DCT8, deq))
    out = ((rec.reshape(v.shape[0], h + ph, w + pw) + 128.0) / 255.0)[:, :h, :w].clip(0.0, 1.0)
    return out if isinstance(img, Tensor) else out.value


def camera_forward(h, rm, p, rng):
    """Full camera model: noise, normalization, gamma and compression.

    With ``p.normalize`` the brightness factor cannot change the result and
    is fixed to 1; otherwise the scaled signal is clipped to [0, 1].
    """
    rgb = project_to_rgb(h, rm)
    clean = value_of(rgb)
    if p.normalize and not clean.max() > clean.min():
        # normalization would only rescale noise; e.g. an all-zero cube
        raise DegenerateRangeError("camera_forward: projected image has a constant value")
    if p.normalize:
        noisy = apply_noise(rgb, p.replace(mu=1.0), rng)
        img = normalize_unit(noisy)
    else:
        noisy = apply_noise(rgb, p, rng)
        img = noisy.clip(0.0, 1.0) if isinstance(noisy, Tensor) else np.clip(noisy, 0.0, 1.0)
    return jpeg_approx(gamma_encode(img), p.jpeg_quality, mode=p.mode)
