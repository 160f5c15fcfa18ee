"""Per-pixel material classification from filtered spectra and observations.

Every pixel contributes ``n_filters`` filter responses plus three
observations borrowed from its matched database entry (photopic
reflectance, specularity, roughness).  A one-hidden-layer perceptron maps
these to class logits.  Pixels labelled ``UNLABELED`` are ignored by both
training and the metrics.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, fields

import numpy as np

from .autodiff import Tensor, as_tensor, concatenate
from .core import UNLABELED, ShapeError, as_labels
from .filters import FilterBank, apply_filters
from .matching import SpectralDb, attach_observations

log = logging.getLogger(__name__)

N_OBS = 3


class SegModel:
    SLICES = ("seg.W1", "seg.b1", "seg.W2", "seg.b2")

    def __init__(self, params):
        self.params = OrderedDict((k, params[k]) for k in self.SLICES)

    @classmethod
    def init(cls, n_filters, n_classes, hidden=32, seed=0):
        rng = np.random.default_rng(seed)
        n_in = n_filters + N_OBS

        def glorot(a, b):
            lim = np.sqrt(6.0 / (a + b))
            return rng.uniform(-lim, lim, (a, b))

        return cls({"seg.W1": glorot(n_in, hidden), "seg.b1": np.zeros(hidden),
                    "seg.W2": glorot(hidden, n_classes), "seg.b2": np.zeros(n_classes)})

    @property
    def n_inputs(self):
        return np.shape(_val(self.params["seg.W1"]))[0]

    @property
    def n_classes(self):
        return np.shape(_val(self.params["seg.b2"]))[0]

    def copy(self):
        return SegModel({k: np.array(_val(v)) for k, v in self.params.items()})

    def logits(self, x):
        p = self.params
        hidden = (as_tensor(x) @ p["seg.W1"] + p["seg.b1"]).relu()
        return hidden @ p["seg.W2"] + p["seg.b2"]


def _val(v):
    return v.value if isinstance(v, Tensor) else v


def softmax(z, axis=-1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def fused_features(h, fb, obs):
    """(H*W, n_filters + 3) matrix of filter responses and observations."""
    feats = apply_filters(h, fb)
    n = feats.shape[0]
    obs_rows = np.asarray(obs.values if hasattr(obs, "values") else obs).reshape(N_OBS, -1).T
    if isinstance(feats, Tensor):
        return concatenate([feats.reshape(n, -1).T, obs_rows], axis=1)
    return np.concatenate([feats.reshape(n, -1).T, obs_rows], axis=1)


def segment(h, fb, db, model, obs=None):
    """Label map (ties to the lowest class id) and (C, H, W) class probabilities."""
    if model.n_inputs != fb.n_filters + N_OBS:
        raise ShapeError(f"model expects {model.n_inputs} inputs, filters give "
                         f"{fb.n_filters} + {N_OBS}")
    _, hgt, wid = np.shape(h)
    obs = attach_observations(h, db) if obs is None else obs
    z = _val(model.logits(fused_features(h, fb, obs)))
    probs = softmax(z, axis=1)
    labels = np.argmax(z, axis=1).astype(np.uint8).reshape(hgt, wid)
    return labels, probs.T.reshape(-1, hgt, wid)


def pixel_acc(pred, gt):
    """Fraction of labelled ground-truth pixels predicted correctly."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError("prediction and ground truth differ in shape")
    valid = gt != UNLABELED
    n = int(valid.sum())
    if n == 0:
        raise ValueError("ground truth has no labelled pixels")
    return float(np.sum(pred[valid] == gt[valid]) / n)


def mean_acc(pred, gt, n_classes=None):
    """Mean per-class recall over classes present in the ground truth."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError("prediction and ground truth differ in shape")
    valid = gt != UNLABELED
    if not valid.any():
        raise ValueError("ground truth has no labelled pixels")
    classes = np.unique(gt[valid])
    if n_classes is not None:
        classes = classes[classes < n_classes]
    recalls = [np.mean(pred[gt == c] == c) for c in classes]
    return float(np.mean(recalls))


# -- training ----------------------------------------------------------------

@dataclass
class SegConfig:
    n_filters: int = 12
    hidden: int = 32
    n_classes: int = 4
    lr: float = 0.05
    momentum: float = 0.9
    steps: int = 2000
    batch_pixels: int = 512
    seed: int = 0
    final_layer_only: bool = False

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


@dataclass
class SegTrainResult:
    model: SegModel
    filters: FilterBank
    trace: list = field(default_factory=list)


def labelled_pixels(cubes, labels, db):
    """Stack spectra, observations and class ids of every labelled pixel."""
    db = db if isinstance(db, SpectralDb) else SpectralDb(db)
    spectra, obs, ys = [], [], []
    for cube, lab in zip(cubes, labels):
        lab = as_labels(lab)
        if lab.shape != np.shape(cube)[1:]:
            raise ShapeError("label map and cube differ in size")
        mask = (lab != UNLABELED).ravel()
        if not mask.any():
            continue
        pix = np.asarray(cube).reshape(cube.shape[0], -1).T[mask]
        o = attach_observations(pix.T[:, None, :], db).values.reshape(N_OBS, -1).T
        spectra.append(pix)
        obs.append(o)
        ys.append(lab.ravel()[mask].astype(np.int64))
    if not ys:
        raise ValueError("no labelled pixels to train on")
    return np.concatenate(spectra), np.concatenate(obs), np.concatenate(ys)


def cross_entropy(logits, y):
    z = logits - logits.value.max(axis=1, keepdims=True)
    logsum = z.exp().sum(axis=1).log()
    picked = z[np.arange(len(y)), y]
    return (logsum - picked).mean()


def train_seg(cubes, labels, db, cfg, fb=None, model=None, pixels=None):
    """Jointly fit the classifier and the filter logits by cross-entropy.

    Deterministic for a fixed ``cfg.seed``.  ``pixels`` may pass a
    precomputed :func:`labelled_pixels` triple.
    """
    spectra, obs, y = pixels if pixels is not None else labelled_pixels(cubes, labels, db)
    if len(y) == 0:
        raise ValueError("no labelled pixels to train on")
    if np.any(y >= cfg.n_classes):
        raise ValueError(f"labels exceed n_classes={cfg.n_classes}")
    fb = fb.copy() if fb is not None else FilterBank.init(cfg.n_filters, cfg.seed)
    model = model.copy() if model is not None else SegModel.init(
        fb.n_filters, cfg.n_classes, cfg.hidden, cfg.seed)
    arrays = OrderedDict(model.params)
    arrays["filters.logits"] = fb.logits
    trainable = ["seg.W2", "seg.b2"] if cfg.final_layer_only else list(arrays)
    velocity = {k: np.zeros_like(v) for k, v in arrays.items()}
    order = np.random.default_rng(cfg.seed)
    result = SegTrainResult(model, fb)
    full = cfg.batch_pixels is None or cfg.batch_pixels <= 0 or cfg.batch_pixels >= len(y)
    for step in range(cfg.steps):
        idx = np.arange(len(y)) if full else order.integers(len(y), size=cfg.batch_pixels)
        tensors = {k: Tensor(v, requires_grad=k in trainable) for k, v in arrays.items()}
        weights = FilterBank(tensors["filters.logits"]).weights()
        x = concatenate([as_tensor(spectra[idx]) @ weights.T, obs[idx]], axis=1)
        net = SegModel({k: tensors[k] for k in SegModel.SLICES})
        loss = cross_entropy(net.logits(x), y[idx])
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"step {step}: segmentation loss is not finite")
        loss.backward()
        for k in trainable:
            g = tensors[k].grad if tensors[k].grad is not None else 0.0
            velocity[k] = cfg.momentum * velocity[k] + g
            arrays[k] -= cfg.lr * velocity[k]
        result.trace.append(float(loss.value))
    return result


def predict_pixels(spectra, obs, fb, model):
    x = np.concatenate([spectra @ fb.weights().T, obs], axis=1)
    return np.argmax(_val(model.logits(x)), axis=1)


def filter_count_sweep(train_cubes, train_labels, test_cubes, test_labels, db, cfg,
                       counts=(4, 8, 12, 16)):
    """Train and evaluate one classifier per filter count.

    Returns rows ``(n_filters, pixel_acc, mean_acc)`` on the test scenes.
    """
    db = db if isinstance(db, SpectralDb) else SpectralDb(db)
    train_pix = labelled_pixels(train_cubes, train_labels, db)
    test_pix = labelled_pixels(test_cubes, test_labels, db)
    rows = []
    for n in counts:
        run_cfg = SegConfig(**{**{k: getattr(cfg, k) for k in SegConfig.keys()}, "n_filters": n})
        res = train_seg(None, None, db, run_cfg, pixels=train_pix)
        pred = predict_pixels(test_pix[0], test_pix[1], res.filters, res.model)
        gt = test_pix[2]
        rows.append((n, pixel_acc(pred, gt), mean_acc(pred, gt, cfg.n_classes)))
    return rows
