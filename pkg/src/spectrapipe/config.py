"""Plain ``key=value`` configuration files validated against a fixed schema.

Blank lines and lines starting with ``#`` are ignored.  Unknown keys,
repeated keys and values of the wrong type are rejected with the key name
in the message.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .camera import DIFFERENTIABLE, SAMPLE, CameraParams
from .recovery import TrainConfig
from .segmentation import SegConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _mode(text):
    if text not in (SAMPLE, DIFFERENTIABLE):
        raise ValueError(f"must be '{SAMPLE}' or '{DIFFERENTIABLE}'")
    return text


def _kind(text):
    if text not in ("basis", "linear"):
        raise ValueError("must be 'basis' or 'linear'")
    return text


@dataclass
class Config:
    # recovery training
    w_band: float = 10.0
    w_rgb: float = 5.0
    w_spectral: float = 5.0
    w_domain: float = 0.5
    lr: float = 1e-2
    momentum: float = 0.9
    steps: int = 1000
    batch_size: int = 1
    eps: float = 1e-6
    hidden: int = 64
    eval_every: int = 50
    eval_images: int = 4
    grad_clip: float = 0.0
    seed: int = 0
    # camera
    sigma: float = 0.01
    nu: float = 1e4
    mu: float = 1.0
    jpeg_quality: int = 90
    mode: str = SAMPLE
    normalize: bool = True
    # segmentation
    n_filters: int = 12
    seg_hidden: int = 32
    n_classes: int = 4
    seg_lr: float = 0.05
    seg_momentum: float = 0.9
    seg_steps: int = 2000
    seg_batch_pixels: int = 512
    # synthetic data
    count: int = 8
    size: int = 32
    kind: str = "basis"
    db_per_class: int = 8
    # paths
    curves: str = ""
    db: str = ""

    def train_config(self):
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.keys()})

    def camera_params(self):
        return CameraParams(sigma=self.sigma, nu=self.nu, mu=self.mu,
                            jpeg_quality=self.jpeg_quality, mode=self.mode,
                            normalize=self.normalize)

    def seg_config(self):
        return SegConfig(n_filters=self.n_filters, hidden=self.seg_hidden,
                         n_classes=self.n_classes, lr=self.seg_lr, momentum=self.seg_momentum,
                         steps=self.seg_steps, batch_pixels=self.seg_batch_pixels,
                         seed=self.seed)


_PARSERS = {int: int, float: float, str: str, bool: _bool}
SCHEMA = {f.name: _PARSERS[{"int": int, "float": float, "str": str, "bool": bool}[f.type]]
          for f in fields(Config)}
SCHEMA["mode"] = _mode
SCHEMA["kind"] = _kind


def parse_config(text, source="<config>"):
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{n}: key '{key}' given twice")
        try:
            values[key] = SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{n}: bad value for '{key}': {exc}") from None
    return values


def load_config(path=None, **overrides):
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values = parse_config(fh.read(), str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = Config(**values)
    try:
        cfg.train_config()
        cfg.camera_params()
    except ValueError as exc:
        raise ConfigError(f"{path or '<config>'}: {exc}") from None
    return cfg


def format_config(values):
    """``key=value`` lines; floats keep round-trip precision."""
    lines = []
    for key, value in values.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"
