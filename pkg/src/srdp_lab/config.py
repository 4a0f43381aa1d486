"""Flat key=value experiment configuration with typed parsing.

The resolved configuration is echoed next to the results so every run is
reproducible from its output directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    variant: str = "srdp"               # srdp | bc_diffusion
    lam: float = 0.75
    preset: str = "unit008"             # unit005 | unit008 | unit_full | ur10
    dataset_n: int = 10000
    dataset_box: str = "train"
    dataset_path: str = ""              # optional pre-generated CSV
    schedule_kind: str = "vp"
    schedule_T: int = 200
    beta_min: float = 0.1
    beta_max: float = 10.0
    shared_hidden: tuple = (24, 24)
    head_hidden: int = 24
    time_dim: int = 4
    lr: float = 3e-3
    lr_decay_at: int = 12000            # iteration after which lr drops (0=off)
    lr_decay_to: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 512
    iterations: int = 20000
    eval_interval: int = 4000
    seeds: tuple = (0, 1, 2, 3, 4)
    critic: bool = False
    critic_hidden: tuple = (256, 256, 256)
    eta: float = 1.0
    gamma: float = 0.99
    rho: float = 0.005
    n_eval: int = 1000
    m_ref: int = 10
    clip_actions: bool = True
    clip_each_step: bool = False
    workers: int = 1
    out_dir: str = "runs/out"

    def validate(self):
        if self.variant not in ("srdp", "bc_diffusion"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if self.iterations and self.iterations % self.eval_interval != 0:
            raise ConfigError(
                f"eval_interval {self.eval_interval} must divide "
                f"iterations {self.iterations}"
            )
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be non-empty and distinct")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_decay_at < 0:
            raise ConfigError("lr_decay_at must be >= 0")
        if self.lr_decay_to <= 0:
            raise ConfigError("lr_decay_to must be > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_value(raw, ftype, sample):
    raw = raw.strip()
    if ftype is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {raw!r}")
    if ftype is int:
        return int(raw)
    if ftype is float:
        return float(raw)
    if ftype is tuple:
        if not raw:
            return ()
        elem = int if all(isinstance(x, int) for x in sample) else float
        return tuple(elem(x) for x in raw.split(","))
    return raw


def config_to_text(cfg):
    lines = [f"{f.name}={_format_value(getattr(cfg, f.name))}"
             for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def config_from_text(text, base=None):
    cfg = base if base is not None else ExperimentConfig()
    by_name = {f.name: f for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in by_name:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        f = by_name[key]
        setattr(cfg, key, _parse_value(raw, f.type if isinstance(f.type, type)
                                       else type(getattr(cfg, key)),
                                       getattr(cfg, key)))
    return cfg.validate()


def load_config(path, overrides=None):
    with open(path) as fh:
        cfg = config_from_text(fh.read())
    if overrides:
        cfg = config_from_text("\n".join(overrides), base=cfg)
    return cfg
