"""Flat ``section.key = value`` configuration.

Every tunable lives in :class:`TrainConfig`. A field ``model_K`` is spelled
``model.K`` in config files: the first underscore becomes the dot.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

LOOPS = ("vgan", "vcd", "gan")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # training loop
    train_loop: str = "vgan"
    train_k: int = 1
    train_N: int = 64
    train_epochs: int = 1
    train_max_iters: int = 0
    train_seed: int = 0
    # optimizer (Adadelta)
    opt_lr: float = 0.1
    opt_decay: float = 0.95
    opt_eps: float = 1e-6
    # energy / discriminator features
    model_K: int = 100
    model_phi: str = "auto"
    model_hidden: str = "128,128"
    model_channels: str = "16,32"
    model_d_phi: int = 256
    # direct generator
    gen_dz: int = 32
    gen_hidden: str = "128,128"
    gen_channels: str = "32,16"
    gen_batchnorm: bool = True
    # transition generator
    vcd_d: int = 256
    vcd_rho: float = 0.01
    vcd_entropy: bool = True
    vcd_hidden: int = 512
    # data
    data_kind: str = "ring"
    data_images: str = ""
    data_labels: str = ""
    data_limit: int = 0
    data_modes: int = 8
    data_sigma: float = 0.05
    data_n: int = 10000
    data_seed: int = 1234
    # semi-supervised classifier
    clf_labeled: int = 1000
    clf_val: int = 500
    clf_test: int = 1500
    clf_epochs: int = 20
    clf_N: int = 50
    clf_lr: float = 1.0
    clf_channels: str = "8,16"
    clf_hidden: int = 128
    clf_dropout: float = 0.5
    clf_noise: float = 0.1
    clf_clean_weight: float = 0.5
    clf_aug_weight: float = 0.5
    # sampling / chains / evaluation
    sample_checkpoint: str = ""
    sample_n: int = 100
    sample_rows: int = 10
    chain_steps: int = 9
    chain_n: int = 10
    eval_points: int = 256
    eval_range: float = 3.0
    eval_samples: int = 100000

    def validate(self):
        if self.train_loop not in LOOPS:
            raise ConfigError(f"train.loop must be one of {LOOPS}, got {self.train_loop!r}")
        if self.train_k < 1:
            raise ConfigError("train.k must be >= 1")
        if self.train_N < 1:
            raise ConfigError("train.N must be >= 1")
        if not 0.0 <= self.vcd_rho <= 1.0:
            raise ConfigError("vcd.rho must lie in [0, 1]")
        if self.data_kind not in ("ring", "grid", "idx"):
            raise ConfigError(f"data.kind must be ring, grid or idx, got {self.data_kind!r}")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()


def field_key(name):
    section, _, rest = name.partition("_")
    return f"{section}.{rest}"


_KEYS = {field_key(f.name): f for f in fields(TrainConfig)}


def _coerce(f, text):
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{field_key(f.name)}: cannot parse {text!r} as {kind}") from None
    return text.strip()


def parse_config(text, base=None):
    """Parse ``key = value`` lines (``#`` starts a comment). Unknown keys fail."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        f = _KEYS[key]
        values[f.name] = _coerce(f, value)
    cfg = base if base is not None else TrainConfig()
    return dataclasses.replace(cfg, **values).validate()


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg):
    """Every key with its resolved value, one per line."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{field_key(f.name)} = {v}")
    return "\n".join(lines) + "\n"
