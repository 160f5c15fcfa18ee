"""``spectrapipe`` command-line interface.

Every command is deterministic for a given ``--seed``.  The environment
variable ``SPECTRAPIPE_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import re
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import synth
from .camera import DIFFERENTIABLE, CounterRNG, camera_forward
from .config import ConfigError, format_config, load_config, parse_config
from .core import mse
from .domain import DomainDiscriminator
from .filters import FilterBank, read_filters, write_filters
from .formats import (FileFormatError, fill_arrays, read_checkpoint, read_cube, read_labels,
                      read_pfm, write_checkpoint, write_cube, write_labels, write_pfm,
                      write_ppm_preview)
from .matching import SpectralDb, read_db, write_db
from .recovery import (TERMS, CameraState, RecoveryModel, TrainState, forward, recover,
                       train)
from .response import ResponseMatrix, _parse_curves, effective_matrix, load_standard_curves, write_curves
from .segmentation import SegModel, mean_acc, pixel_acc, segment, train_seg

log = logging.getLogger("spectrapipe")

COMMANDS = ("gen-synth", "simulate", "train", "recover", "segment", "eval", "export-curves")


def fmt(v):
    """Nine significant digits, always showing a decimal point for finite values."""
    s = f"{float(v):.9g}"
    if re.fullmatch(r"-?\d+", s):
        s += ".0"
    return s


def _index_of(path):
    m = re.search(r"_(\d+)\.[a-z]+$", Path(path).name)
    return m.group(1) if m else Path(path).stem


def _files(path, pattern):
    p = Path(path)
    if p.is_dir():
        found = sorted(p.glob(pattern))
        if not found:
            raise FileNotFoundError(f"{p}: no files matching '{pattern}'")
        return found
    if not p.exists():
        raise FileNotFoundError(f"{p}: no such file")
    return [p]


# -- synthetic data ----------------------------------------------------------

def cmd_gen_synth(args, cfg):
    out = Path(args.out)
    data = synth.generate(cfg.seed, cfg.count, cfg.size, kind=cfg.kind,
                          n_classes=cfg.n_classes, db_per_class=cfg.db_per_class)
    (out / "spectral").mkdir(parents=True, exist_ok=True)
    (out / "material").mkdir(parents=True, exist_ok=True)
    for i, (cube, rgb) in enumerate(zip(data.spectral_cubes, data.spectral_rgb)):
        write_cube(out / "spectral" / f"cube_{i:04d}.hsc", cube)
        write_pfm(out / "spectral" / f"rgb_{i:04d}.pfm", rgb)
    for i, (cube, rgb, lab) in enumerate(zip(data.material_cubes, data.material_rgb,
                                             data.material_labels)):
        write_cube(out / "material" / f"cube_{i:04d}.hsc", cube)
        write_pfm(out / "material" / f"rgb_{i:04d}.pfm", rgb)
        write_labels(out / "material" / f"label_{i:04d}.pgm", lab)
    write_db(out / "db.csv", data.db)
    (_, _), (rm_m, _) = synth.default_cameras()
    write_curves(out / "curves.csv", load_standard_curves().base)
    write_curves(out / "curves_material.csv", effective_matrix(rm_m))
    print(f"wrote {cfg.count} spectral pairs, {cfg.count} material scenes and "
          f"{len(data.db)} database entries to {out}")


# -- camera simulation -------------------------------------------------------

def _load_curves(path):
    return load_standard_curves(path) if path else load_standard_curves()


def simulate_image(cube, rm, p, seed):
    """Camera output rounded to the float32 precision of a PFM file."""
    rgb = camera_forward(cube, rm, p, CounterRNG(seed))
    return np.asarray(rgb, dtype=np.float32).astype(np.float64)


def cmd_simulate(args, cfg):
    cube = read_cube(args.cube)
    rm = _load_curves(args.curves or cfg.curves)
    rgb = simulate_image(cube, rm, cfg.camera_params(), cfg.seed)
    write_pfm(args.out, rgb)
    if args.preview:
        write_ppm_preview(args.preview, rgb)
    print(f"wrote {args.out}")


# -- recovery checkpoints ----------------------------------------------------

def state_arrays(state):
    """Trainable slices plus the fixed camera settings needed to reload them."""
    arrays = state.arrays()
    for prefix, cam in (("cam_s", state.cam_s), ("cam_m", state.cam_m)):
        arrays[f"{prefix}.base"] = cam.base
        arrays[f"{prefix}.jpeg_quality"] = np.array([cam.jpeg_quality], dtype=np.float64)
        arrays[f"{prefix}.normalize"] = np.array([float(cam.normalize)])
    return arrays


def save_state(path, state):
    write_checkpoint(path, state_arrays(state))


def load_state(path):
    raw = read_checkpoint(path)
    if "trunk.b1" not in raw:
        raise FileFormatError(f"{path}: missing slice 'trunk.b1'")
    width = raw["trunk.b1"].size
    cams = {}
    for prefix in ("cam_s", "cam_m"):
        fixed = fill_arrays(OrderedDict([(f"{prefix}.base", np.zeros((3, 31))),
                                         (f"{prefix}.jpeg_quality", np.zeros(1)),
                                         (f"{prefix}.normalize", np.zeros(1))]), raw, path)
        cams[prefix] = CameraState(fixed[f"{prefix}.base"], np.zeros(31), np.zeros(1),
                                   np.zeros(1), np.zeros(1),
                                   int(fixed[f"{prefix}.jpeg_quality"][0]),
                                   bool(fixed[f"{prefix}.normalize"][0]))
    state = TrainState(RecoveryModel.zeros(width), DomainDiscriminator.zeros(width),
                       cams["cam_s"], cams["cam_m"])
    for name, value in fill_arrays(state.arrays(), raw, path).items():
        state.arrays()[name][...] = value
    return state


def export_material_camera(state, x_m):
    """Curve CSV and camera config text for the material camera seen by ``x_m``.

    Both go through their text form so that a reload reproduces exactly
    what was written.
    """
    aux = forward(state.model, x_m)[1].value
    rm, p = state.cam_m.effective(aux, mode=DIFFERENTIABLE)
    buf = io.StringIO()
    write_curves(buf, effective_matrix(rm))
    camera_text = format_config(OrderedDict(
        sigma=float(p.sigma), nu=float(p.nu), mu=float(p.mu), jpeg_quality=p.jpeg_quality,
        mode=DIFFERENTIABLE, normalize=p.normalize))
    return buf.getvalue(), camera_text


def camera_from_text(curves_text, camera_text):
    rm = ResponseMatrix(_parse_curves(curves_text, "<curves>"))
    cfg = load_config(None, **parse_config(camera_text))
    return rm, cfg.camera_params()


def roundtrip_loss_trans(state, x_m, seed):
    """``L_trans`` along the file path recover -> simulate, as cmd_recover and
    cmd_simulate would compute it."""
    cube = np.asarray(recover(state.model, x_m), dtype=np.float32).astype(np.float64)
    rm, p = camera_from_text(*export_material_camera(state, x_m))
    return mse(x_m, simulate_image(cube, rm, p, seed))


def _pairs(data_dir, sub):
    rgbs = _files(Path(data_dir) / sub, "rgb_*.pfm")
    return rgbs, [Path(data_dir) / sub / f"cube_{_index_of(r)}.hsc" for r in rgbs]


def cmd_train(args, cfg):
    tcfg = cfg.train_config()
    rgb_s, cube_s = _pairs(args.data, "spectral")
    spectral = [(read_pfm(r), read_cube(c)) for r, c in zip(rgb_s, cube_s)]
    material = [read_pfm(r) for r in _files(Path(args.data) / "material", "rgb_*.pfm")]
    p = cfg.camera_params().replace(mode=DIFFERENTIABLE)
    rm_s = _load_curves(args.curves or cfg.curves)
    result = train(spectral, material, tcfg, rm_s, p, rm_s, p)
    save_state(args.out, result.best_state)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            keys = ["step", "total", *TERMS, "trans"]
            out.writerow(keys)
            for row in result.trace:
                out.writerow([row["step"]] + [fmt(row[k]) for k in keys[1:]])
    if result.trace:
        last = result.trace[-1]
        print("term      final")
        for k in ("total", *TERMS, "trans"):
            print(f"{k:<9} {fmt(last[k])}")
    print(f"best_step={result.best_step}")
    saved = load_state(args.out)
    print(f"loss_trans={fmt(roundtrip_loss_trans(saved, material[0], cfg.seed))}")


def cmd_recover(args, cfg):
    state = load_state(args.model)
    inputs = _files(args.rgb, "rgb_*.pfm")
    out = Path(args.out)
    if Path(args.rgb).is_dir():
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / f"cube_{_index_of(r)}.hsc" for r in inputs]
    else:
        targets = [out]
    for src, dst in zip(inputs, targets):
        x = read_pfm(src)
        write_cube(dst, recover(state.model, x))
        curves_text, camera_text = export_material_camera(state, x)
        dst.with_suffix(".curves.csv").write_text(curves_text)
        dst.with_suffix(".camera.cfg").write_text(camera_text)
    print(f"recovered {len(inputs)} image(s)")


# -- segmentation ------------------------------------------------------------

def save_seg(path, model, fb):
    arrays = OrderedDict(model.params)
    arrays["filters.logits"] = fb.logits
    write_checkpoint(path, arrays)


def load_seg(path):
    raw = read_checkpoint(path)
    for name in (*SegModel.SLICES, "filters.logits"):
        if name not in raw:
            raise FileFormatError(f"{path}: missing slice '{name}'")
    n_filters = raw["filters.logits"].size // 31
    hidden, n_classes = raw["seg.b1"].size, raw["seg.b2"].size
    model = SegModel.init(n_filters, n_classes, hidden)
    template = OrderedDict(model.params)
    template["filters.logits"] = np.zeros((n_filters, 31))
    arrays = fill_arrays(template, raw, path)
    fb = FilterBank(arrays.pop("filters.logits"))
    return SegModel(arrays), fb


def cmd_segment(args, cfg):
    db = SpectralDb(read_db(args.db or cfg.db))
    cube_paths = _files(args.cubes, "cube_*.hsc")
    cubes = [read_cube(p) for p in cube_paths]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model:
        model, fb = load_seg(args.model)
    else:
        if not args.labels:
            raise ValueError("segment needs --model or --labels to train on")
        label_dir = Path(args.labels)
        labels = [read_labels(label_dir / f"label_{_index_of(p)}.pgm") for p in cube_paths]
        res = train_seg(cubes, labels, db, cfg.seg_config())
        model, fb = res.model, res.filters
        save_seg(out / "seg.ckpt", model, fb)
        write_filters(out / "filters.csv", fb)
        if res.trace:
            print(f"seg_loss_initial={fmt(res.trace[0])} seg_loss_final={fmt(res.trace[-1])}")
    for path, cube in zip(cube_paths, cubes):
        labels, _ = segment(cube, fb, db, model)
        write_labels(out / f"pred_{_index_of(path)}.pgm", labels)
    print(f"segmented {len(cubes)} cube(s)")


# -- evaluation --------------------------------------------------------------

def cmd_eval(args, cfg):
    if args.rgb:
        a, b = (read_pfm(p) for p in args.rgb)
        print(f"loss_trans={fmt(mse(b, a))}")
    if args.pred or args.gt:
        if not (args.pred and args.gt):
            raise ValueError("eval needs both --pred and --gt")
        preds = _files(args.pred, "pred_*.pgm")
        if Path(args.gt).is_dir():
            gts = [Path(args.gt) / f"label_{_index_of(p)}.pgm" for p in preds]
        else:
            gts = [Path(args.gt)]
        pred = np.concatenate([read_labels(p).ravel() for p in preds])
        gt = np.concatenate([read_labels(g).ravel() for g in gts])
        classes = args.classes if args.classes is not None else cfg.n_classes
        print(f"pixel_acc={fmt(pixel_acc(pred, gt))} mean_acc={fmt(mean_acc(pred, gt, classes))}")
    if args.trace:
        with open(args.trace, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{args.trace}: empty trace")
        print("term      initial          final            min")
        for k in ("total", *TERMS, "trans"):
            if k not in rows[0]:
                raise ValueError(f"{args.trace}: missing column '{k}'")
            col = [float(r[k]) for r in rows]
            print(f"{k:<9} {fmt(col[0]):<16} {fmt(col[-1]):<16} {fmt(min(col))}")
    if not (args.rgb or args.pred or args.trace):
        raise ValueError("eval needs --pred/--gt, --rgb or --trace")


def cmd_export_curves(args, cfg):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not (args.model or args.seg):
        raise ValueError("export-curves needs --model and/or --seg")
    if args.model:
        state = load_state(args.model)
        for prefix, cam in (("spectral", state.cam_s), ("material", state.cam_m)):
            rm, _ = cam.effective()
            write_curves(out / f"response_{prefix}.csv", effective_matrix(rm))
    if args.seg:
        _, fb = load_seg(args.seg)
        write_filters(out / "filters.csv", fb)
    print(f"wrote curves to {out}")


# -- entry point -------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="spectrapipe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int, help="random seed (default from config, else 0)")
        p.set_defaults(func=func)
        return p

    p = command("gen-synth", cmd_gen_synth, "generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--kind", choices=("basis", "linear"))
    p.add_argument("--n-classes", type=int, dest="n_classes")

    p = command("simulate", cmd_simulate, "render a cube through the camera model")
    p.add_argument("--cube", required=True)
    p.add_argument("--curves")
    p.add_argument("--out", required=True)
    p.add_argument("--preview", help="optional 8-bit PPM preview")

    p = command("train", cmd_train, "train the recovery model")
    p.add_argument("--data", required=True, help="directory written by gen-synth")
    p.add_argument("--curves")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="per-step loss CSV")
    p.add_argument("--steps", type=int)

    p = command("recover", cmd_recover, "recover cubes from RGB images")
    p.add_argument("--model", required=True)
    p.add_argument("--rgb", required=True, help="PFM image or directory of rgb_*.pfm")
    p.add_argument("--out", required=True)

    p = command("segment", cmd_segment, "train and/or apply the material classifier")
    p.add_argument("--cubes", required=True, help="HSC1 cube or directory of cube_*.hsc")
    p.add_argument("--db")
    p.add_argument("--labels", help="directory of label_*.pgm for training")
    p.add_argument("--model", help="segmentation checkpoint to apply")
    p.add_argument("--out", required=True)
    p.add_argument("--n-filters", type=int, dest="n_filters")
    p.add_argument("--n-classes", type=int, dest="n_classes")

    p = command("eval", cmd_eval, "segmentation metrics and loss tables")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--classes", type=int)
    p.add_argument("--trace", help="loss CSV written by train")
    p.add_argument("--rgb", nargs=2, metavar=("SIMULATED", "REFERENCE"),
                   help="report the MSE between two PFM images")
    p.add_argument("--out", help="unused; accepted for a uniform interface")

    p = command("export-curves", cmd_export_curves, "write response and filter CSVs")
    p.add_argument("--model")
    p.add_argument("--seg")
    p.add_argument("--out", required=True)
    return parser


OVERRIDES = ("count", "size", "kind", "n_classes", "n_filters", "steps")


def _thread_limit():
    raw = os.environ.get("SPECTRAPIPE_THREADS")
    if raw is None or raw == "":
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("SPECTRAPIPE_THREADS must be a positive integer")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in OVERRIDES}
        cfg = load_config(args.config, seed=args.seed, **overrides)
        threads = _thread_limit()
        if threads is None:
            args.func(args, cfg)
        else:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                args.func(args, cfg)
    except (OSError, ValueError, ConfigError, FileFormatError, FloatingPointError) as exc:
        print(f"spectrapipe {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
