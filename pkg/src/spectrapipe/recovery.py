"""Spectral recovery network and its physically-constrained training objective.

The recovery model maps an RGB image to a 31-band cube with a per-pixel
perceptron over each pixel's 3x3 neighbourhood.  An auxiliary head reads the
globally pooled hidden features and predicts 34 camera adjustments: a 31-band
response displacement followed by log-offsets of the thermal noise level,
the shot noise level and the brightness.

Training couples the model with one trainable camera per dataset (spectral
pairs ``(x_s, h_s)`` and unpaired material images ``x_m``) and minimises

    w_band * band + w_rgb * rgb + w_spectral * spectral + w_domain * domain

where the rgb term asks ``camera(recover(x))`` to reproduce ``x`` and the
spectral term compares recovered cubes with ground truth, both directly and
after a trip through the spectral camera.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, fields

import numpy as np

from .autodiff import Tensor, as_tensor, concatenate, pad_edge, value_of
from .camera import DIFFERENTIABLE, CameraParams, CounterRNG, camera_forward
from .core import MRAE_EPS, N_BANDS, mrae, mse
from .domain import DomainDiscriminator, domain_loss
from .response import ResponseMatrix, band_loss

log = logging.getLogger(__name__)

AUX_WIDTH = N_BANDS + 3
TERMS = ("band", "rgb", "spectral", "domain")

# noise streams: each camera evaluation in a batch gets its own fixed draws
_STREAM_TRANS, _STREAM_RGB_HAT, _STREAM_RGB_TRUE = 1, 2, 3


def _glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def _finish(t):
    if isinstance(t, Tensor) and not t.requires_grad:
        return float(t.value)
    return t


class RecoveryModel:
    """Per-pixel recovery trunk plus the auxiliary camera head.

    ``params`` maps slice names to arrays (or tensors while differentiating).
    """

    SLICES = ("trunk.W1", "trunk.b1", "trunk.W2", "trunk.b2", "trunk.W3", "trunk.b3",
              "aux.W", "aux.b")

    def __init__(self, params):
        self.params = OrderedDict((k, params[k]) for k in self.SLICES)
        w1 = value_of(self.params["trunk.W1"])
        if w1.shape[0] != 27:
            raise ValueError("trunk.W1 must have 27 input rows")
        if value_of(self.params["aux.b"]).shape != (AUX_WIDTH,):
            raise ValueError(f"aux head must output {AUX_WIDTH} values")

    @property
    def width(self):
        return value_of(self.params["trunk.W1"]).shape[1]

    @staticmethod
    def shapes(width=64):
        return OrderedDict([
            ("trunk.W1", (27, width)), ("trunk.b1", (width,)),
            ("trunk.W2", (width, width)), ("trunk.b2", (width,)),
            ("trunk.W3", (width, N_BANDS)), ("trunk.b3", (N_BANDS,)),
            ("aux.W", (width, AUX_WIDTH)), ("aux.b", (AUX_WIDTH,)),
        ])

    @classmethod
    def init(cls, seed=0, width=64):
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.shapes(width).items():
            params[name] = _glorot(rng, *shape) if len(shape) == 2 else np.zeros(shape)
        return cls(params)

    @classmethod
    def zeros(cls, width=64):
        return cls({k: np.zeros(s) for k, s in cls.shapes(width).items()})

    def copy(self):
        return RecoveryModel({k: np.array(value_of(v)) for k, v in self.params.items()})

    def bind(self, tensors):
        return RecoveryModel({k: tensors.get(k, v) for k, v in self.params.items()})

    def flat(self):
        return np.concatenate([np.ravel(value_of(v)) for v in self.params.values()])

    @classmethod
    def from_flat(cls, vec, width=64):
        params, offset = {}, 0
        for name, shape in cls.shapes(width).items():
            n = int(np.prod(shape))
            params[name] = np.asarray(vec[offset:offset + n], dtype=np.float64).reshape(shape)
            offset += n
        if offset != len(vec):
            raise ValueError("flat vector length does not match the model width")
        return cls(params)


def neighborhoods(x):
    """(3, H, W) image -> (H*W, 27) matrix of edge-replicated 3x3 patches."""
    x = as_tensor(x)
    _, h, w = x.shape
    padded = pad_edge(x, [(0, 0), (1, 1), (1, 1)])
    shifts = [padded[:, dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)]
    return concatenate(shifts, axis=0).reshape(27, h * w).T


def forward(model, x):
    """Run the trunk and the auxiliary head.

    Returns ``(cube, aux, pooled)``: the (31, H, W) cube, the 34 camera
    adjustments and the pooled last hidden layer (domain features).
    """
    p = model.params
    _, h, w = np.shape(value_of(x))
    feats = neighborhoods(x)
    h1 = (feats @ p["trunk.W1"] + p["trunk.b1"]).relu()
    h2 = (h1 @ p["trunk.W2"] + p["trunk.b2"]).relu()
    out = (h2 @ p["trunk.W3"] + p["trunk.b3"]).softplus()
    cube = out.T.reshape(N_BANDS, h, w)
    pooled = h2.mean(axis=0)
    aux = (pooled.reshape(1, -1) @ p["aux.W"]).reshape(-1) + p["aux.b"]
    return cube, aux, pooled


def recover(model, x):
    """Recover a non-negative 31-band cube from an RGB image in [0, 1]."""
    v = value_of(x)
    if v.ndim != 3 or v.shape[0] != 3:
        raise ValueError(f"recover expects a (3, H, W) image, got {v.shape}")
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("recover expects values in [0, 1]")
    cube = forward(model, x)[0]
    return cube if cube.requires_grad else cube.value


# -- trainable cameras -------------------------------------------------------

@dataclass
class CameraState:
    """Trainable camera: response displacement and log noise/brightness levels."""

    base: np.ndarray
    displacement: np.ndarray
    log_sigma: np.ndarray
    log_nu: np.ndarray
    log_mu: np.ndarray
    jpeg_quality: int = 90
    normalize: bool = True

    SLICES = ("displacement", "log_sigma", "log_nu", "log_mu")

    @classmethod
    def from_params(cls, rm, p):
        return cls(np.array(rm.base), np.array(value_of(rm.displacement), dtype=np.float64),
                   np.array([np.log(p.sigma) if p.sigma > 0 else -np.inf]), np.array([np.log(p.nu)]),
                   np.array([np.log(p.mu)]), int(p.jpeg_quality), bool(p.normalize))

    def arrays(self, prefix):
        return OrderedDict((f"{prefix}.{k}", getattr(self, k)) for k in self.SLICES)

    def copy(self):
        return CameraState(self.base.copy(), self.displacement.copy(), self.log_sigma.copy(),
                           self.log_nu.copy(), self.log_mu.copy(), self.jpeg_quality,
                           self.normalize)

    def effective(self, aux=None, tensors=None, prefix=None, mode=DIFFERENTIABLE):
        """Camera after the auxiliary-head adjustment ``aux`` (34 values)."""
        get = (lambda k: tensors[f"{prefix}.{k}"]) if tensors else (lambda k: getattr(self, k))
        disp, ls, ln, lm = (get(k) for k in self.SLICES)
        if aux is not None:
            disp = disp + aux[:N_BANDS]
            ls, ln, lm = ls + aux[N_BANDS], ln + aux[N_BANDS + 1], lm + aux[N_BANDS + 2]
        sig, nu, mu = (as_tensor(v).exp().reshape(()) for v in (ls, ln, lm))
        if not any(isinstance(v, Tensor) and v.requires_grad for v in (disp, sig, nu, mu)):
            disp, sig, nu, mu = (value_of(v) for v in (disp, sig, nu, mu))
            sig, nu, mu = float(sig), float(nu), float(mu)
        for name, v in (("sigma", sig), ("nu", nu), ("mu", mu)):
            val = float(value_of(v))
            if not (np.isfinite(val) and (val > 0 or name == "sigma" and val == 0)):
                raise FloatingPointError(f"camera parameter '{name}' left the valid range ({val})")
        rm = ResponseMatrix(self.base, disp)
        p = CameraParams(sigma=sig, nu=nu, mu=mu, jpeg_quality=self.jpeg_quality,
                         mode=mode, normalize=self.normalize)
        return rm, p


# -- losses ------------------------------------------------------------------

def loss_trans(x_m, model, rm, p, rng):
    """MSE between a material image and its re-rendering ``camera(recover(x_m))``."""
    cube = forward(model, x_m)[0]
    return _finish(mse(x_m, camera_forward(cube, rm, p, rng.child(_STREAM_TRANS))))


def loss_rgb(x_s, h_s, x_m, model, rm_s, rm_m, p_s, p_m, rng):
    """RGB cycle loss over both datasets; each dataset has its own camera."""
    terms = rgb_terms(x_s, h_s, x_m, model, rm_s, rm_m, p_s, p_m, rng)
    return _finish(terms[0] + terms[1] + terms[2])


def rgb_terms(x_s, h_s, x_m, model, rm_s, rm_m, p_s, p_m, rng):
    trans = loss_trans(x_m, model, rm_m, p_m, rng)
    h_hat = forward(model, x_s)[0]
    x_hat = camera_forward(h_hat, rm_s, p_s, rng.child(_STREAM_RGB_HAT))
    x_true = camera_forward(h_s, rm_s, p_s, rng.child(_STREAM_RGB_TRUE))
    return trans, _finish(mse(x_s, x_hat)), _finish(mse(x_s, x_true))


def loss_spectral(h_s, x_s, model, rm_s, p_s, rng, eps=MRAE_EPS):
    """MRAE of the direct recovery plus MRAE after re-rendering ``h_s``."""
    direct = mrae(h_s, forward(model, x_s)[0], eps)
    rendered = camera_forward(h_s, rm_s, p_s, rng.child(_STREAM_RGB_TRUE))
    cycled = mrae(h_s, forward(model, rendered)[0], eps)
    return _finish(direct + cycled)


@dataclass
class TrainConfig:
    w_band: float = 10.0
    w_rgb: float = 5.0
    w_spectral: float = 5.0
    w_domain: float = 0.5
    lr: float = 1e-2
    momentum: float = 0.9
    steps: int = 1000
    batch_size: int = 1
    seed: int = 0
    eps: float = MRAE_EPS
    hidden: int = 64
    eval_every: int = 50
    eval_images: int = 4
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("steps >= 0, batch_size >= 1 and hidden >= 1 are required")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.eps <= 0:
            raise ValueError("lr >= 0, 0 <= momentum < 1 and eps > 0 are required")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


def combine_terms(terms, cfg):
    """Weighted total of the four unweighted loss terms."""
    return (cfg.w_band * terms["band"] + cfg.w_rgb * terms["rgb"]
            + cfg.w_spectral * terms["spectral"] + cfg.w_domain * terms["domain"])


class TrainState:
    """Everything optimised jointly: model, discriminator and both cameras."""

    def __init__(self, model, disc, cam_s, cam_m):
        self.model, self.disc, self.cam_s, self.cam_m = model, disc, cam_s, cam_m

    @classmethod
    def create(cls, rm_s, p_s, rm_m, p_m, cfg):
        model = RecoveryModel.init(cfg.seed, cfg.hidden)
        disc = DomainDiscriminator.init(cfg.hidden, cfg.seed + 1)
        return cls(model, disc, CameraState.from_params(rm_s, p_s),
                   CameraState.from_params(rm_m, p_m))

    def arrays(self):
        out = OrderedDict(self.model.params)
        out["disc.weight"] = self.disc.weight
        out["disc.bias"] = self.disc.bias
        out.update(self.cam_s.arrays("cam_s"))
        out.update(self.cam_m.arrays("cam_m"))
        return out

    def flat(self):
        return np.concatenate([np.ravel(v) for v in self.arrays().values()])

    def set_flat(self, vec):
        offset = 0
        for arr in self.arrays().values():
            n = arr.size
            arr[...] = np.asarray(vec[offset:offset + n]).reshape(arr.shape)
            offset += n

    def copy(self):
        return TrainState(self.model.copy(),
                          DomainDiscriminator(self.disc.weight.copy(), self.disc.bias.copy()),
                          self.cam_s.copy(), self.cam_m.copy())

    def slices(self):
        """Name -> (offset, size) into :meth:`flat`."""
        out, offset = OrderedDict(), 0
        for name, arr in self.arrays().items():
            out[name] = (offset, arr.size)
            offset += arr.size
        return out


@dataclass
class Batch:
    spectral: list  # [(x_s, h_s), ...]
    material: list  # [x_m, ...]
    key: tuple = ()


def loss_total(batch, state, cfg, rng=None, tensors=None, reverse=True):
    """Weighted objective and its unweighted breakdown for one batch.

    ``tensors`` maps state slice names to autodiff tensors; without it the
    current arrays are used and plain floats come back.  ``reverse`` puts the
    gradient-reversal junction in front of the discriminator (training);
    without it the backward pass yields the plain gradient of the total.
    """
    if not batch.spectral or not batch.material:
        raise ValueError("a batch needs at least one spectral pair and one material image")
    rng = rng if rng is not None else CounterRNG(cfg.seed, *batch.key)
    params = tensors if tensors is not None else state.arrays()
    model = state.model.bind(params)
    disc = DomainDiscriminator(params["disc.weight"], params["disc.bias"])
    n = max(len(batch.spectral), len(batch.material))
    acc = {k: 0.0 for k in TERMS + ("trans",)}
    feats_s, feats_m = [], []
    for i in range(n):
        x_s, h_s = batch.spectral[i % len(batch.spectral)]
        x_m = batch.material[i % len(batch.material)]
        r = rng.child(i)
        h_hat_s, aux_s, pooled_s = forward(model, x_s)
        h_hat_m, aux_m, pooled_m = forward(model, x_m)
        rm_s, p_s = state.cam_s.effective(aux_s, params, "cam_s")
        rm_m, p_m = state.cam_m.effective(aux_m, params, "cam_m")

        trans = mse(x_m, camera_forward(h_hat_m, rm_m, p_m, r.child(_STREAM_TRANS)))
        x_true = camera_forward(h_s, rm_s, p_s, r.child(_STREAM_RGB_TRUE))
        rgb = (trans + mse(x_s, camera_forward(h_hat_s, rm_s, p_s, r.child(_STREAM_RGB_HAT)))
               + mse(x_s, x_true))
        spectral = mrae(h_s, h_hat_s, cfg.eps) + mrae(h_s, forward(model, x_true)[0], cfg.eps)
        band = band_loss(rm_s) + band_loss(rm_m)
        for k, v in (("trans", trans), ("rgb", rgb), ("spectral", spectral), ("band", band)):
            acc[k] = acc[k] + v
        feats_s.append(pooled_s)
        feats_m.append(pooled_m)
    terms = {k: _finish(v / n) for k, v in acc.items()}
    terms["domain"] = domain_loss(feats_s, feats_m, disc, reverse=reverse)
    total = _finish(combine_terms(terms, cfg))
    return total, terms


def _value(t):
    return float(value_of(t))


@dataclass
class TrainResult:
    state: TrainState
    best_state: TrainState
    best_step: int
    trace: list = field(default_factory=list)        # per-step total and terms
    eval_trace: list = field(default_factory=list)   # (step, L_trans on eval images)

    @property
    def model(self):
        return self.state.model


def evaluate_trans(state, material, cfg, rng_key=(0xE7A1,)):
    """Mean L_trans over material images with fixed differentiable noise draws."""
    vals = []
    for j, x_m in enumerate(material):
        aux = forward(state.model, x_m)[1]
        rm, p = state.cam_m.effective(aux)
        vals.append(loss_trans(x_m, state.model, rm, p, CounterRNG(cfg.seed, *rng_key, j)))
    return float(np.mean(vals))


def _check_finite(terms, total, step):
    for k in TERMS + ("trans",):
        if not np.isfinite(_value(terms[k])):
            raise FloatingPointError(f"step {step}: loss term '{k}' is not finite")
    if not np.isfinite(_value(total)):
        raise FloatingPointError(f"step {step}: total loss is not finite")


def train(spectral_data, material_data, cfg, rm_s, p_s, rm_m=None, p_m=None,
          state=None, callback=None):
    """Joint gradient descent with momentum on every trainable parameter.

    ``spectral_data`` is a list of ``(x_s, h_s)`` pairs and ``material_data``
    a list of material RGB images.  Each step draws ``cfg.batch_size`` pairs
    and images.  The checkpoint with the lowest material-set ``L_trans``
    (evaluated every ``cfg.eval_every`` steps) is returned as ``best_state``.
    """
    if not spectral_data or not material_data:
        raise ValueError("training needs non-empty spectral and material datasets")
    rm_m = rm_m if rm_m is not None else rm_s
    p_m = p_m if p_m is not None else p_s
    state = state.copy() if state is not None else TrainState.create(rm_s, p_s, rm_m, p_m, cfg)
    eval_set = material_data[:max(1, cfg.eval_images)]
    order = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in state.arrays().items()}

    result = TrainResult(state=state, best_state=state.copy(), best_step=0)
    best = evaluate_trans(state, eval_set, cfg)
    result.eval_trace.append((0, best))

    for step in range(cfg.steps):
        si = order.integers(len(spectral_data), size=cfg.batch_size)
        mi = order.integers(len(material_data), size=cfg.batch_size)
        batch = Batch([spectral_data[i] for i in si], [material_data[i] for i in mi],
                      key=(int(si[0]), int(mi[0])))
        arrays = state.arrays()
        tensors = OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in arrays.items())
        total, terms = loss_total(batch, state, cfg, tensors=tensors)
        _check_finite(terms, total, step)
        total.backward()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value))
                 for k, t in tensors.items()}
        if cfg.grad_clip > 0:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > cfg.grad_clip:
                grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
        for k, arr in arrays.items():
            velocity[k] = cfg.momentum * velocity[k] + grads[k]
            arr -= cfg.lr * velocity[k]
            # log_sigma may sit at -inf when thermal noise is off
            if not np.all(np.isfinite(velocity[k])) or np.any(np.isnan(arr)):
                raise FloatingPointError(f"step {step}: update made '{k}' non-finite "
                                         f"(total loss {_value(total):.6g})")
        row = {"step": step, "total": _value(total)}
        row.update({k: _value(v) for k, v in terms.items()})
        result.trace.append(row)
        if callback is not None:
            callback(row)
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
            val = evaluate_trans(state, eval_set, cfg)
            result.eval_trace.append((step + 1, val))
            if val < best:
                best, result.best_state, result.best_step = val, state.copy(), step + 1
    log.debug("trained %d steps, best L_trans %.6g at step %d", cfg.steps, best, result.best_step)
    return result


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    indices: list
    names: list
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    kink_adjacent: list  # indices excluded because f is not smooth within one step
    max_rel_error: float
    step: float
    floor: float

    def passed(self, tolerance):
        return self.max_rel_error < tolerance


def relative_error(a, b, floor=1e-6):
    """``|a - b| / max(|a|, |b|, floor)``; below ``floor`` the error is absolute."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradient(f, grad, x0, indices, step=1e-5, names=None, floor=1e-6,
                   smooth_tol=1e-5):
    """Compare ``grad`` against central differences of ``f`` at ``x0``.

    Relative errors use ``floor * max(1, |f(x0)|)`` as the smallest
    denominator: central differences cannot resolve smaller components of a
    large loss in float64.

    A coordinate counts as kink-adjacent when the central difference with
    step ``h`` disagrees with the one using ``h/2`` by more than
    ``smooth_tol`` (relative) plus the expected rounding noise; such
    coordinates are reported and left out of the maximum.
    """
    x0 = np.array(x0, dtype=np.float64)
    indices = [int(i) for i in indices]
    f0 = f(x0)
    noise = 8 * np.finfo(float).eps * abs(f0) / step
    floor = floor * max(1.0, abs(f0))
    numeric, halves = [], []
    for i in indices:
        vals = []
        for h in (step, step / 2):
            xp, xm = x0.copy(), x0.copy()
            xp[i] += h
            xm[i] -= h
            vals.append((f(xp) - f(xm)) / (2 * h))
        numeric.append(vals[0])
        halves.append(vals[1])
    numeric, halves = np.array(numeric), np.array(halves)
    analytic = np.asarray(grad, dtype=np.float64)[indices]
    rel = relative_error(analytic, numeric, floor)
    scale = np.maximum(np.abs(numeric), floor)
    rough = np.abs(numeric - halves) > smooth_tol * scale + noise
    kinks = [i for i, r in zip(indices, rough) if r]
    kept = ~rough
    max_rel = float(rel[kept].max()) if kept.any() else 0.0
    return GradCheckReport(indices, names or [str(i) for i in indices], analytic, numeric,
                           rel, kinks, max_rel, step, floor)


def grad_check(state, batch, cfg, n_params=100, step=1e-5, seed=0, rng=None):
    """Analytic gradient of ``loss_total`` vs central differences.

    The analytic side is the true gradient (no gradient reversal).  At
    least one coordinate is drawn from every named parameter slice; the rest
    are uniform over the flat parameter vector.
    """
    state = state.copy()
    rng = rng if rng is not None else CounterRNG(cfg.seed, *batch.key)
    x0 = state.flat()
    tensors = OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in state.arrays().items())
    total, _ = loss_total(batch, state, cfg, rng=rng, tensors=tensors, reverse=False)
    total.backward()
    grad = np.concatenate([np.ravel(t.grad if t.grad is not None else np.zeros_like(t.value))
                           for t in tensors.values()])

    pick = np.random.default_rng(seed)
    slices = state.slices()
    chosen = [off + int(pick.integers(size)) for off, size in slices.values()]
    rest = pick.choice(np.setdiff1d(np.arange(x0.size), chosen),
                       size=max(0, n_params - len(chosen)), replace=False)
    indices = sorted(set(chosen) | set(int(i) for i in rest))
    names = []
    for i in indices:
        for name, (off, size) in slices.items():
            if off <= i < off + size:
                names.append(f"{name}[{i - off}]")
                break

    probe = state.copy()

    def f(vec):
        probe.set_flat(vec)
        return float(loss_total(batch, probe, cfg, rng=rng)[0])

    return check_gradient(f, grad, x0, indices, step=step, names=names)
