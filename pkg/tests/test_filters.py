import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff, rel_err
from spectrapipe.autodiff import Tensor
from spectrapipe.core import ShapeError
from spectrapipe.filters import (FilterBank, apply_filters, export_filters, read_filters,
                                 softmax_rows, write_filters)

logit_arrays = arrays(np.float64, (4, 31), elements=st.floats(-8, 8))


def test_uniform_filter_gives_band_mean(rng):
    h = rng.random((31, 3, 3))
    out = apply_filters(h, FilterBank.zeros(2))
    assert np.allclose(out, h.mean(axis=0)[None], rtol=1e-14)


def test_one_hot_limit(rng):
    h = rng.random((31, 2, 2))
    logits = np.zeros((1, 31))
    logits[0, 7] = 60.0
    assert np.allclose(apply_filters(h, FilterBank(logits))[0], h[7], rtol=1e-12)


def test_toy_dot_product():
    spectrum = np.array([0.2, 0.5, 0.3])
    filt = np.array([0.5, 0.25, 0.25])
    assert float(filt @ spectrum) == pytest.approx(0.3, abs=1e-15)
    # the same weights embedded in the 31-band grid
    w = np.zeros((1, 31))
    w[0, :3] = filt
    h = np.zeros((31, 1, 1))
    h[:3, 0, 0] = spectrum
    assert apply_filters(h, w)[0, 0, 0] == pytest.approx(0.3, abs=1e-15)


def test_band_mismatch():
    with pytest.raises(ShapeError):
        apply_filters(np.ones((30, 2, 2)), FilterBank.zeros(3))


def test_export_zero_bank():
    table = export_filters(FilterBank.zeros(12))
    assert table.shape == (31, 13)
    assert np.allclose(table[:, 1:], 1 / 31, rtol=1e-15)


@given(logit_arrays)
def test_weights_are_convex(logits):
    w = FilterBank(logits).weights()
    assert np.all(w >= 0)
    assert np.all(np.abs(w.sum(axis=1) - 1) <= 1e-9)


@given(logit_arrays, st.floats(-50, 50))
def test_shift_invariance(logits, c):
    h = np.random.default_rng(0).random((31, 2, 3))
    a = apply_filters(h, FilterBank(logits))
    b = apply_filters(h, FilterBank(logits + c))
    assert np.allclose(a, b, rtol=1e-12, atol=0)


@given(logit_arrays)
def test_features_within_spectrum_bounds(logits):
    h = np.random.default_rng(1).random((31, 3, 2))
    f = apply_filters(h, FilterBank(logits))
    lo, hi = h.min(axis=0), h.max(axis=0)
    assert np.all(f >= lo - 1e-12) and np.all(f <= hi + 1e-12)


def test_linear_in_cube(rng):
    fb = FilterBank.init(5, seed=2)
    h1, h2 = rng.random((31, 2, 2)), rng.random((31, 2, 2))
    lhs = apply_filters(3 * h1 - h2, fb)
    assert np.allclose(lhs, 3 * apply_filters(h1, fb) - apply_filters(h2, fb), atol=1e-13)


def test_gradient_wrt_logits(rng):
    l0 = rng.standard_normal((3, 31))
    h = rng.random((31, 2, 2))
    w = rng.standard_normal((3, 2, 2))
    t = Tensor(l0, True)
    (apply_filters(h, FilterBank(t)) * w).sum().backward()
    num = central_diff(lambda v: float(np.sum(apply_filters(h, FilterBank(v)) * w)), l0)
    assert rel_err(t.grad, num) < 1e-5


def test_csv_roundtrip_bit_exact(tmp_path, rng):
    fb = FilterBank.init(12, seed=5, scale=2.0)
    path = tmp_path / "filters.csv"
    write_filters(path, fb)
    header = path.read_text().splitlines()[0]
    assert header == "wavelength," + ",".join(f"f{i}" for i in range(1, 13))
    w = read_filters(path)
    assert np.array_equal(w, fb.weights())
    assert np.all(np.abs(w.sum(axis=1) - 1) <= 1e-9)
    h = rng.random((31, 4, 5))
    assert np.array_equal(apply_filters(h, w), apply_filters(h, fb))


@pytest.mark.parametrize("mutate", [
    lambda t: t.replace("wavelength,", "wl,", 1),
    lambda t: "\n".join(t.splitlines()[:-1]),
    lambda t: t.replace("\n400,", "\n405,", 1),
    lambda t: t.replace("\n500,", "\n500,-", 1),
])
def test_csv_rejects_malformed(tmp_path, mutate):
    path = tmp_path / "f.csv"
    write_filters(path, FilterBank.zeros(2))
    path.write_text(mutate(path.read_text()))
    with pytest.raises(ValueError):
        read_filters(path)


def test_softmax_tensor_matches_array(rng):
    l0 = rng.standard_normal((2, 31)) * 5
    assert np.allclose(softmax_rows(Tensor(l0)).value, softmax_rows(l0), rtol=1e-14)
