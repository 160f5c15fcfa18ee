import re

import numpy as np
import pytest

from spectrapipe.camera import CameraParams, CounterRNG, gamma_encode
from spectrapipe.cli import fmt, main
from spectrapipe.core import normalize_unit
from spectrapipe.filters import read_filters
from spectrapipe.formats import read_cube, read_pfm, write_cube
from spectrapipe.camera import project_to_rgb
from spectrapipe.response import load_standard_curves


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def value(text, key):
    return float(re.search(rf"{key}=(\S+)", text).group(1))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text("steps=6\nlr=1e-4\neval_every=3\nhidden=16\nseg_steps=40\n"
                   "count=3\nsize=16\n")
    assert main(["gen-synth", "--config", str(cfg), "--seed", "2", "--out",
                 str(root / "data")]) == 0
    return root, cfg


def test_fmt():
    assert fmt(1) == "1.0" and fmt(0.5) == "0.5" and fmt(-3.0) == "-3.0"
    assert fmt(1 / 3) == "0.333333333" and fmt(1e-7) == "1e-07"


def test_gen_synth_deterministic(work, capsys):
    root, cfg = work
    assert run(capsys, "gen-synth", "--config", cfg, "--seed", 2, "--out", root / "again")[0] == 0
    for f in sorted((root / "data").rglob("*.*")):
        twin = root / "again" / f.relative_to(root / "data")
        assert f.read_bytes() == twin.read_bytes(), f.name
    cube = read_cube(root / "data" / "material" / "cube_0000.hsc")
    assert cube.shape == (31, 16, 16) and np.all(cube >= 0)
    names = {p.name for p in (root / "data").rglob("*") if p.is_file()}
    assert {"db.csv", "curves.csv", "rgb_0002.pfm", "label_0002.pgm"} <= names


def test_simulate(work, capsys, tmp_path):
    root, _ = work
    cube = root / "data" / "spectral" / "cube_0000.hsc"
    outs = []
    for name in ("a.pfm", "b.pfm"):
        code, _, _ = run(capsys, "simulate", "--cube", cube, "--seed", 4, "--out",
                         tmp_path / name, "--preview", tmp_path / "p.ppm")
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert (tmp_path / "p.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")

    clean = tmp_path / "clean.cfg"
    clean.write_text("sigma=0\nnu=1e12\njpeg_quality=100\n")
    assert run(capsys, "simulate", "--config", clean, "--cube", cube, "--out",
               tmp_path / "c.pfm")[0] == 0
    h = read_cube(cube)
    ref = gamma_encode(normalize_unit(project_to_rgb(h, load_standard_curves())))
    assert np.max(np.abs(read_pfm(tmp_path / "c.pfm") - ref)) <= 0.02

    write_cube(tmp_path / "zero.hsc", np.zeros((31, 4, 4)))
    code, _, err = run(capsys, "simulate", "--cube", tmp_path / "zero.hsc", "--out",
                       tmp_path / "z.pfm")
    assert code != 0 and "constant" in err


def test_train_recover_simulate_roundtrip(work, capsys, tmp_path):
    root, cfg = work
    data = root / "data"
    code, out, _ = run(capsys, "train", "--config", cfg, "--seed", 5, "--data", data,
                       "--out", tmp_path / "m.ckpt", "--trace", tmp_path / "trace.csv")
    assert code == 0
    printed = value(out, "loss_trans")
    assert "best_step=" in out
    assert run(capsys, "recover", "--model", tmp_path / "m.ckpt", "--rgb",
               data / "material" / "rgb_0000.pfm", "--out", tmp_path / "r.hsc")[0] == 0
    assert run(capsys, "simulate", "--config", tmp_path / "r.camera.cfg", "--seed", 5,
               "--cube", tmp_path / "r.hsc", "--curves", tmp_path / "r.curves.csv",
               "--out", tmp_path / "sim.pfm")[0] == 0
    code, out, _ = run(capsys, "eval", "--rgb", tmp_path / "sim.pfm",
                       data / "material" / "rgb_0000.pfm", "--trace", tmp_path / "trace.csv")
    assert code == 0
    assert abs(value(out, "loss_trans") - printed) <= 1e-9
    assert re.search(r"^total\s", out, re.M) and re.search(r"^domain\s", out, re.M)

    # directory mode and curve export
    assert run(capsys, "recover", "--model", tmp_path / "m.ckpt", "--rgb", data / "material",
               "--out", tmp_path / "rec")[0] == 0
    assert len(list((tmp_path / "rec").glob("cube_*.hsc"))) == 3
    assert run(capsys, "export-curves", "--model", tmp_path / "m.ckpt", "--out",
               tmp_path / "curves")[0] == 0
    assert (tmp_path / "curves" / "response_material.csv").exists()


def test_segment_eval_export(work, capsys, tmp_path):
    root, cfg = work
    data = root / "data"
    code, out, _ = run(capsys, "segment", "--config", cfg, "--seed", 1, "--cubes",
                       data / "material", "--labels", data / "material", "--db",
                       data / "db.csv", "--out", tmp_path / "seg", "--n-filters", 6)
    assert code == 0 and "seg_loss_final" in out
    preds = sorted((tmp_path / "seg").glob("pred_*.pgm"))
    assert len(preds) == 3
    code, out, _ = run(capsys, "eval", "--pred", tmp_path / "seg", "--gt", data / "material")
    assert code == 0 and 0 <= value(out, "pixel_acc") <= 1
    code, out, _ = run(capsys, "eval", "--pred", data / "material" / "label_0001.pgm",
                       "--gt", data / "material" / "label_0001.pgm")
    assert out.strip() == "pixel_acc=1.0 mean_acc=1.0"

    # applying a saved model reproduces the predictions
    assert run(capsys, "segment", "--cubes", data / "material", "--db", data / "db.csv",
               "--model", tmp_path / "seg" / "seg.ckpt", "--out", tmp_path / "seg2")[0] == 0
    for p in preds:
        assert p.read_bytes() == (tmp_path / "seg2" / p.name).read_bytes()

    assert run(capsys, "export-curves", "--seg", tmp_path / "seg" / "seg.ckpt", "--out",
               tmp_path / "fx")[0] == 0
    w = read_filters(tmp_path / "fx" / "filters.csv")
    assert w.shape == (6, 31) and np.all(np.abs(w.sum(axis=1) - 1) <= 1e-9)


def test_errors_exit_nonzero(work, capsys, tmp_path):
    root, _ = work
    bad = tmp_path / "bad.cfg"
    bad.write_text("learning_rate=1\n")
    code, _, err = run(capsys, "gen-synth", "--config", bad, "--out", tmp_path / "x")
    assert code == 1 and "learning_rate" in err
    code, _, err = run(capsys, "recover", "--model", tmp_path / "none.ckpt", "--rgb",
                       root / "data" / "material", "--out", tmp_path / "o")
    assert code == 1 and "none.ckpt" in err
    (tmp_path / "junk.ckpt").write_bytes(b"JUNK")
    code, _, err = run(capsys, "export-curves", "--model", tmp_path / "junk.ckpt", "--out",
                       tmp_path / "o")
    assert code == 1 and "MSNM" in err
    code, _, err = run(capsys, "segment", "--cubes", root / "data" / "material", "--db",
                       root / "data" / "db.csv", "--out", tmp_path / "o")
    assert code == 1 and "--labels" in err
    with pytest.raises(SystemExit):
        main(["frobnicate"])
