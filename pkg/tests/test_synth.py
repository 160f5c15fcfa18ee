import numpy as np
import pytest

from spectrapipe import synth
from spectrapipe.core import UNLABELED


@pytest.mark.parametrize("kind", ["basis", "linear"])
def test_scene_contract(kind):
    model = synth.SpectraModel(kind, 4)
    cube, labels, coefs = synth.make_scene(np.random.default_rng(0), model, (12, 10))
    assert cube.shape == (31, 12, 10) and labels.shape == (12, 10)
    assert np.all(cube >= 0)
    valid = labels[labels != UNLABELED]
    assert valid.size > 0 and valid.max() < model.n_classes
    assert np.all(coefs >= 0)


def test_linear_spectra_lie_in_three_dim_span():
    model = synth.SpectraModel("linear")
    assert model.n_classes == 3
    cube, _, _ = synth.make_scene(np.random.default_rng(1), model, 8)
    pix = cube.reshape(31, -1)
    coef, *_ = np.linalg.lstsq(synth.linear_matrix(), pix, rcond=None)
    assert np.allclose(synth.linear_matrix() @ coef, pix, atol=1e-12)


@pytest.mark.parametrize("kind", ["basis", "linear"])
def test_class_mean_spectrum_matches_generator(kind):
    model = synth.SpectraModel(kind, 4)
    rng = np.random.default_rng(3)
    n = 4000
    for label in range(model.n_classes):
        draws = np.array([model.sample_coefficients(rng, label) for _ in range(n)])
        got = model.spectra(draws).mean(axis=0)
        want = model.spectra(model.expected_coefficients(label))
        # Monte Carlo tolerance: 5 standard errors per band
        se = model.spectra(draws).std(axis=0) / np.sqrt(n)
        assert np.all(np.abs(got - want) <= 5 * se + 1e-12)
        assert all(model.label_of(c) == label for c in draws[:200])


def test_generate_is_deterministic():
    a = synth.generate(4, 2, 8, kind="linear")
    b = synth.generate(4, 2, 8, kind="linear")
    for x, y in zip(a.spectral_rgb + a.material_cubes, b.spectral_rgb + b.material_cubes):
        assert np.array_equal(x, y)
    assert [e.id for e in a.db] == [e.id for e in b.db]
    c = synth.generate(5, 2, 8, kind="linear")
    assert not np.array_equal(a.spectral_cubes[0], c.spectral_cubes[0])


def test_database_entries_are_valid():
    model = synth.SpectraModel("basis", 3)
    db = synth.make_db(np.random.default_rng(0), model, 4)
    assert len(db) == 12
    assert sorted({e.material_label for e in db}) == [0, 1, 2]
    assert all(0 <= e.specularity <= 1 and 0 <= e.roughness <= 1 for e in db)
