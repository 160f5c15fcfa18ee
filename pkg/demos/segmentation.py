"""Material segmentation with learned spectral filters.

A bank of softmax-normalized filters compresses each pixel spectrum into a
few responses.  These are joined with database observations and classified
by a small perceptron.  The filters train together with the classifier, and
the last part sweeps the number of filters.
"""

import numpy as np

from spectrapipe import synth
from spectrapipe.filters import export_filters
from spectrapipe.matching import SpectralDb
from spectrapipe.segmentation import (SegConfig, filter_count_sweep, mean_acc, pixel_acc,
                                      segment, train_seg)

data = synth.generate(seed=4, count=6, size=24)
db = SpectralDb(data.db)
train_cubes, train_labels = data.material_cubes[:4], data.material_labels[:4]
test_cubes, test_labels = data.material_cubes[4:], data.material_labels[4:]

cfg = SegConfig(n_filters=12, steps=300, seed=0)
res = train_seg(train_cubes, train_labels, db, cfg)
print(f"cross-entropy {res.trace[0]:.3f} -> {res.trace[-1]:.3f}")

for cube, gt in zip(test_cubes, test_labels):
    pred, probs = segment(cube, res.filters, db, res.model)
    print(f"test scene  pixel_acc {pixel_acc(pred, gt):.3f}  mean_acc {mean_acc(pred, gt):.3f}")

table = export_filters(res.filters)
peaks = table[np.argmax(table[:, 1:], axis=0), 0]
print("filter peak wavelengths (nm):", peaks.astype(int).tolist())

print("\nn_filters  pixel_acc  mean_acc")
for n, pa, ma in filter_count_sweep(train_cubes, train_labels, test_cubes, test_labels, db, cfg):
    print(f"{n:9d}  {pa:9.3f}  {ma:8.3f}")
