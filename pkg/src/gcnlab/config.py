"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _words(s: str) -> tuple[str, ...]:
    return tuple(x.strip().lower() for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_bool(s: str) -> Optional[bool]:
    return None if s.strip().lower() == "auto" else _bool(s)


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() == "none" else float(s)


@dataclass(frozen=True)
class ExperimentConfig:
    # data and output
    dataset: str = "karate"  # "karate" or a bundle directory
    out: str = "runs"
    # model
    family: str = "gcn"  # gcn | sgc | mlp
    depth: int = 2
    hidden: int = 16
    operator: str = "sym_renorm"  # sym_renorm | rw_renorm | sym_plain | eta
    eta_weight: Optional[float] = None
    trick: str = "none"  # none | mean_sub | pair_norm | batch_norm
    pair_norm_scale: float = 1.0
    skip: Optional[bool] = None  # auto: on for depth > 3
    # training
    epochs: int = 400
    lr: float = 0.01
    optimizer: str = "adam"  # adam | sgd
    weight_decay: float = 5e-4
    gamma: float = 0.0
    dropout: float = 0.0
    eval_every: int = 1
    seed: int = 0
    smoothing: bool = True
    smoothing_sample: int = 1000
    # multi-run commands
    seeds: int = 5
    jobs: int = 1
    log_every: int = 0  # 0: no per-run epoch logs in sweeps
    depths: tuple[int, ...] = (2, 4, 8, 16, 32)
    families: tuple[str, ...] = ("gcn", "sgc")  # add "dnn" for an MLP trained on L0 + dnn_gamma * L_reg
    dnn_gamma: float = 1.0
    eta_weights: tuple[float, ...] = (0, 0.1, 0.2, 0.5, 1, 2, 5, 10, 20, 50, 100)
    eta_depths: tuple[int, ...] = (2, 32)
    tricks: tuple[str, ...] = ("none", "mean_sub", "pair_norm", "batch_norm")
    smoothing_steps: tuple[int, ...] = (0, 5, 20, 100)


_PARSERS = {
    "dataset": str,
    "out": str,
    "family": str.lower,
    "depth": int,
    "hidden": int,
    "operator": str.lower,
    "eta_weight": _opt_float,
    "trick": str.lower,
    "pair_norm_scale": float,
    "skip": _opt_bool,
    "epochs": int,
    "lr": float,
    "optimizer": str.lower,
    "weight_decay": float,
    "gamma": float,
    "dropout": float,
    "eval_every": int,
    "seed": int,
    "smoothing": _bool,
    "smoothing_sample": int,
    "seeds": int,
    "jobs": int,
    "log_every": int,
    "depths": _ints,
    "families": _words,
    "dnn_gamma": float,
    "eta_weights": _floats,
    "eta_depths": _ints,
    "tricks": _words,
    "smoothing_steps": _ints,
}
KEYS = tuple(f.name for f in fields(ExperimentConfig))
assert set(KEYS) == set(_PARSERS)

# Command-specific defaults; explicit config keys take precedence.
COMMAND_DEFAULTS = {
    "train": {},
    "sweep-depth": {},
    "sweep-eta": {"operator": "eta"},
    "tricks": {"depth": 64, "epochs": 400},
    "karate-demo": {"dataset": "karate", "depth": 32, "epochs": 500, "seeds": 1},
}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse config text into ``{key: typed value}`` for the keys present."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path, command: str = "train", overrides: Optional[dict] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    values = dict(COMMAND_DEFAULTS.get(command, {}))
    values.update(parse_config(text, str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = ExperimentConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    checks = [
        (cfg.depth >= 1, "depth must be >= 1"),
        (cfg.hidden >= 1, "hidden must be >= 1"),
        (cfg.epochs >= 0, "epochs must be >= 0"),
        (cfg.seeds >= 1, "seeds must be >= 1"),
        (cfg.jobs >= 1, "jobs must be >= 1"),
        (cfg.log_every >= 0, "log_every must be >= 0"),
        (cfg.family in ("gcn", "sgc", "mlp"), f"unknown family {cfg.family!r}"),
        (set(cfg.families) <= {"gcn", "sgc", "mlp", "dnn"}, f"unknown entry in families {cfg.families}"),
        (set(cfg.tricks) <= {"none", "mean_sub", "pair_norm", "batch_norm"}, f"unknown entry in tricks {cfg.tricks}"),
        (all(w >= 0 for w in cfg.eta_weights), "eta_weights must be >= 0"),
        (all(d >= 1 for d in cfg.depths + cfg.eta_depths), "depths must be >= 1"),
        (all(k >= 0 for k in cfg.smoothing_steps), "smoothing_steps must be >= 0"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
