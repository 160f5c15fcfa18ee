"""Binary and text file formats.

* ``HSC1`` cubes: magic, u32 height, u32 width, u32 bands (31), float32
  band-major planes, little-endian.
* PFM float RGB images and 8-bit PPM previews.
* 8-bit PGM label maps with 255 as the unlabeled sentinel.
* ``MSNM`` checkpoints: magic, u32 version, then slices up to end of file,
  each (u32 name length, utf-8 name, u32 length, float32 values),
  little-endian.
* response-curve CSVs (see :mod:`spectrapipe.response`).
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .core import N_BANDS, UNLABELED, ShapeError
from .camera import gamma_encode

CUBE_MAGIC = b"HSC1"
CKPT_MAGIC = b"MSNM"
CKPT_VERSION = 1


class FileFormatError(ValueError):
    pass


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# -- HSC1 cubes --------------------------------------------------------------

def write_cube(path, cube):
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3 or cube.shape[0] != N_BANDS:
        raise ShapeError(f"cube must be (31, H, W), got {cube.shape}")
    _, h, w = cube.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC + struct.pack("<III", h, w, N_BANDS))
        fh.write(cube.astype("<f4").tobytes())


def read_cube(path):
    raw = _read(path)
    if len(raw) < 16 or raw[:4] != CUBE_MAGIC:
        raise FileFormatError(f"{path}: magic is not HSC1")
    h, w, bands = struct.unpack("<III", raw[4:16])
    if bands != N_BANDS:
        raise FileFormatError(f"{path}: bands is {bands}, expected {N_BANDS}")
    if h == 0 or w == 0:
        raise FileFormatError(f"{path}: height and width must be positive")
    expected = h * w * bands * 4
    if len(raw) - 16 != expected:
        raise FileFormatError(f"{path}: payload is {len(raw) - 16} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float64)
    return data.reshape(bands, h, w)


# -- PFM / PPM ---------------------------------------------------------------

def write_pfm(path, rgb):
    """Colour PFM, little-endian, rows stored bottom-to-top as the format requires."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ShapeError(f"RGB image must be (3, H, W), got {rgb.shape}")
    _, h, w = rgb.shape
    pixels = np.moveaxis(rgb, 0, -1)[::-1]
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).astype("<f4").tobytes())


def _header_tokens(raw, count):
    """Split the first ``count`` whitespace-separated header tokens off ``raw``."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FileFormatError("truncated header")
        tokens.append(raw[start:pos].decode("ascii"))
    return tokens, pos + 1  # one whitespace byte ends the header


def read_pfm(path):
    raw = _read(path)
    try:
        (magic, w, h, scale), pos = _header_tokens(raw, 4)
        w, h, scale = int(w), int(h), float(scale)
    except (ValueError, FileFormatError) as exc:
        raise FileFormatError(f"{path}: bad PFM header ({exc})") from None
    if magic != "PF":
        raise FileFormatError(f"{path}: magic is '{magic}', expected 'PF' (colour PFM)")
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * 3
    if len(raw) - pos != n * 4:
        raise FileFormatError(f"{path}: payload is {len(raw) - pos} bytes, expected {n * 4}")
    pixels = np.frombuffer(raw, dtype=dtype, offset=pos).astype(np.float64)
    return np.ascontiguousarray(np.moveaxis(pixels.reshape(h, w, 3)[::-1], -1, 0))


def write_ppm_preview(path, rgb, gamma=False):
    """8-bit preview; ``gamma=True`` encodes linear input to sRGB first."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    if gamma:
        rgb = gamma_encode(rgb)
    _, h, w = rgb.shape
    data = np.round(np.moveaxis(rgb, 0, -1) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


# -- PGM label maps ----------------------------------------------------------

def write_labels(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"label map must be 2-d, got {labels.shape}")
    if labels.min() < 0 or labels.max() > UNLABELED:
        raise ValueError("labels must be in 0..255")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(labels.astype(np.uint8).tobytes())


def read_labels(path):
    raw = _read(path)
    try:
        (magic, w, h, maxval), pos = _header_tokens(raw, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, FileFormatError) as exc:
        raise FileFormatError(f"{path}: bad PGM header ({exc})") from None
    if magic != "P5":
        raise FileFormatError(f"{path}: magic is '{magic}', expected 'P5'")
    if maxval != 255:
        raise FileFormatError(f"{path}: maxval is {maxval}, expected 255")
    if len(raw) - pos != w * h:
        raise FileFormatError(f"{path}: payload is {len(raw) - pos} bytes, expected {w * h}")
    return np.frombuffer(raw, dtype=np.uint8, offset=pos).reshape(h, w).copy()


# -- MSNM checkpoints --------------------------------------------------------

def write_checkpoint(path, arrays):
    """Write named parameter slices; shapes are not stored, only lengths."""
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    for name, value in arrays.items():
        encoded = name.encode("utf-8")
        flat = np.asarray(value, dtype=np.float64).ravel()
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack("<I", flat.size) + flat.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_checkpoint(path):
    """Ordered ``name -> flat float64 array`` mapping."""
    raw = _read(path)
    if raw[:4] != CKPT_MAGIC:
        raise FileFormatError(f"{path}: magic is not MSNM")
    try:
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != CKPT_VERSION:
            raise FileFormatError(f"{path}: version is {version}, expected {CKPT_VERSION}")
        pos, out = 8, OrderedDict()
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (length,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            if pos + 4 * length > len(raw):
                raise FileFormatError(f"{path}: slice '{name}' is truncated")
            if name in out:
                raise FileFormatError(f"{path}: duplicate slice '{name}'")
            out[name] = np.frombuffer(raw, dtype="<f4", count=length, offset=pos).astype(np.float64)
            pos += 4 * length
    except struct.error:
        raise FileFormatError(f"{path}: truncated checkpoint") from None
    except UnicodeDecodeError:
        raise FileFormatError(f"{path}: slice name is not utf-8") from None
    return out


def fill_arrays(template, flat_arrays, path="checkpoint"):
    """Reshape checkpoint slices into copies of the arrays in ``template``."""
    missing = [k for k in template if k not in flat_arrays]
    if missing:
        raise FileFormatError(f"{path}: missing slice '{missing[0]}'")
    out = OrderedDict()
    for name, like in template.items():
        like = np.asarray(like)
        got = flat_arrays[name]
        if got.size != like.size:
            raise FileFormatError(f"{path}: slice '{name}' has {got.size} values, "
                                  f"expected {like.size}")
        out[name] = got.reshape(like.shape)
    return out
