"""The command-line workflow, end to end, in a temporary directory.

Equivalent shell commands are printed before each step so the run can be
repeated by hand.
"""

import tempfile
from pathlib import Path

from spectrapipe.cli import main

work = Path(tempfile.mkdtemp(prefix="spectrapipe-"))
cfg = work / "demo.cfg"
cfg.write_text("count=4\nsize=16\nsteps=100\nlr=1e-4\nhidden=32\neval_every=25\n"
               "seg_steps=200\nn_filters=8\n")
d = str(work)

steps = [
    ["gen-synth", "--config", str(cfg), "--out", f"{d}/data"],
    ["simulate", "--cube", f"{d}/data/spectral/cube_0000.hsc", "--out", f"{d}/sim.pfm",
     "--preview", f"{d}/sim.ppm"],
    ["train", "--config", str(cfg), "--data", f"{d}/data", "--out", f"{d}/model.ckpt",
     "--trace", f"{d}/trace.csv"],
    ["recover", "--model", f"{d}/model.ckpt", "--rgb", f"{d}/data/material", "--out", f"{d}/rec"],
    ["segment", "--config", str(cfg), "--cubes", f"{d}/data/material",
     "--labels", f"{d}/data/material", "--db", f"{d}/data/db.csv", "--out", f"{d}/seg"],
    ["eval", "--pred", f"{d}/seg", "--gt", f"{d}/data/material"],
    ["export-curves", "--model", f"{d}/model.ckpt", "--seg", f"{d}/seg/seg.ckpt",
     "--out", f"{d}/curves"],
]
for argv in steps:
    print("\n$ spectrapipe", " ".join(argv))
    if main(argv + ["--seed", "0"]) != 0:
        raise SystemExit(1)
print("\noutputs in", work)
