import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from spectrapipe.core import ShapeError
from spectrapipe.matching import (DB_HEADER, DatabaseFormatError, SpectralDb, SpectralDbEntry,
                                  attach_observations, load_weighting_curve, match, read_db,
                                  shape_matrix, weighted_reflectance, write_db)

spectra = arrays(np.float64, 31, elements=st.floats(0, 10))


def entry(i, s, label=0):
    return SpectralDbEntry(f"e{i}", s, 0.1 * (i % 10), 0.05 * (i % 20), float(np.mean(s)),
                           float(np.median(s)), label)


def random_db(rng, n=50):
    return [entry(i, rng.random(31), i % 3) for i in range(n)]


def brute_force(query, db):
    best, best_d = None, np.inf
    for i, e in enumerate(db):
        s = e.spectrum
        d = 0.0
        for a in range(31):
            for b in range(31):
                d += (query[a, b] - abs(s[a] - s[b])) ** 2
        d = np.sqrt(d)
        if d < best_d:
            best, best_d = i, d
    return best, best_d


def test_toy_shape_matrix():
    s = np.array([0.2, 0.5, 0.3])
    m = np.abs(s[:, None] - s[None, :])
    assert np.allclose(m, [[0, 0.3, 0.1], [0.3, 0, 0.2], [0.1, 0.2, 0]], atol=1e-15)


def test_shape_matrix_basics():
    assert np.all(shape_matrix(np.full(31, 0.4)) == 0)
    with pytest.raises(ShapeError):
        shape_matrix(np.ones(30))
    with pytest.raises(ValueError):
        shape_matrix(np.full(31, np.nan))


@given(spectra, st.floats(-5, 5))
def test_shape_matrix_invariants(s, c):
    m = shape_matrix(s)
    assert np.array_equal(m, m.T)
    assert np.all(np.diag(m) == 0) and np.all(m >= 0)
    assert np.all(m[:, None, :] <= m[:, :, None] + m[None, :, :] + 1e-12)  # triangle
    # exact offset invariance holds when the offset is exactly representable
    c = np.round(c * 4) / 4
    s2 = np.round(s * 256) / 256
    assert np.array_equal(shape_matrix(s2 + c), shape_matrix(s2))
    assert np.array_equal(shape_matrix(2 * s), 2 * m)


def test_match_exact_and_ties(rng):
    db = random_db(rng, 6)
    assert match(shape_matrix(db[2].spectrum), db) == (2, 0.0)
    db[4] = entry(4, db[1].spectrum.copy())
    q = shape_matrix(db[1].spectrum + 0.01 * rng.random(31))
    assert match(q, db)[0] == 1
    with pytest.raises(ValueError):
        match(q, [])


def test_match_brute_force(rng):
    for _ in range(30):
        db = random_db(rng, 50)
        q = shape_matrix(rng.random(31))
        idx, dist = match(q, SpectralDb(db))
        ref_idx, ref_dist = brute_force(q, db)
        assert idx == ref_idx and dist == pytest.approx(ref_dist, rel=1e-12)


def test_match_reorder_preserves_winner(rng):
    db = random_db(rng, 20)
    q = shape_matrix(rng.random(31))
    winner = db[match(q, db)[0]].id
    perm = rng.permutation(20)
    shuffled = [db[i] for i in perm]
    assert shuffled[match(q, shuffled)[0]].id == winner


def test_attach_observations(rng):
    db = SpectralDb(random_db(rng, 12))
    cube = np.repeat(db[0].spectrum[:, None, None], 4, axis=1).repeat(3, axis=2)
    obs = attach_observations(cube, db)
    assert np.all(obs.index == 0) and np.all(obs.distance == 0)
    assert np.allclose(obs.values, db[0].observations()[:, None, None])
    cube = rng.random((31, 5, 6))
    obs = attach_observations(cube, db, chunk=7)
    for i in range(5):
        for j in range(6):
            idx, d = match(shape_matrix(cube[:, i, j]), db)
            assert obs.index[i, j] == idx and obs.distance[i, j] == pytest.approx(d, rel=1e-12)
            assert np.array_equal(obs.values[:, i, j], db[idx].observations())
    shifted = attach_observations(cube + 0.25, db)
    assert np.array_equal(shifted.index, obs.index)


def test_weighted_reflectance():
    assert weighted_reflectance([0.2, 0.4], [1, 3]) == pytest.approx(0.35, abs=1e-15)
    s = np.random.default_rng(0).random(31)
    assert weighted_reflectance(s, np.ones(31)) == pytest.approx(s.mean(), rel=1e-14)
    one_hot = np.zeros(31)
    one_hot[9] = 1
    assert weighted_reflectance(s, one_hot) == s[9]
    with pytest.raises(ValueError):
        weighted_reflectance(s, np.zeros(31))
    with pytest.raises(ValueError):
        weighted_reflectance(s, -np.ones(31))


def test_bundled_weighting_curves():
    for name in ("photopic", "melanopic"):
        w = load_weighting_curve(name)
        assert w.shape == (31,) and np.all(w >= 0) and w.max() > 0
    assert np.argmax(load_weighting_curve("photopic")) > np.argmax(load_weighting_curve("melanopic"))


def test_entry_validation():
    with pytest.raises(ShapeError):
        entry(0, np.ones(30))
    with pytest.raises(ValueError):
        SpectralDbEntry("x", np.ones(31), 1.5, 0.1, 0.1, 0.1, 0)
    with pytest.raises(ValueError):
        SpectralDbEntry("x", -np.ones(31), 0.5, 0.1, 0.1, 0.1, 0)


def test_db_csv_roundtrip(tmp_path, rng):
    db = random_db(rng, 5)
    path = tmp_path / "db.csv"
    write_db(path, db)
    assert path.read_text().splitlines()[0] == ",".join(DB_HEADER)
    assert DB_HEADER[6] == "r400" and DB_HEADER[-1] == "r700"
    back = read_db(path)
    assert [e.id for e in back] == [e.id for e in db]
    assert np.allclose(back[3].spectrum, db[3].spectrum, rtol=1e-8)


def test_db_csv_errors(tmp_path, rng):
    path = tmp_path / "db.csv"
    write_db(path, random_db(rng, 2))
    text = path.read_text()
    path.write_text(text.replace("r410", "r415"))
    with pytest.raises(DatabaseFormatError, match="r415"):
        read_db(path)
    lines = text.splitlines()
    path.write_text("\n".join(lines[:1] + [lines[1].rsplit(",", 1)[0]]))
    with pytest.raises(DatabaseFormatError, match="fields"):
        read_db(path)
    bad = lines[1].split(",")
    bad[2] = "2.0"
    path.write_text("\n".join([lines[0], ",".join(bad)]))
    with pytest.raises(DatabaseFormatError, match="specularity"):
        read_db(path)
