"""Experiment configuration: defaults, validation and ``key = value`` files."""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..core_field import C0
from ..errors import ConfigInvalidError

__all__ = [
    "EXPERIMENTS",
    "REFERENCE",
    "MAX_FULL_FIELD_DEPTH",
    "CACHE_ENV",
    "ExperimentConfig",
    "load_config",
    "default_cache_dir",
]

EXPERIMENTS = (
    "profile", "tails", "covariance", "minimum", "maximum", "martingale", "mean",
    "coupling", "fixation", "local_limit", "singularity", "tables_selftest",
)

# reference settings (depth, replicas) per experiment
REFERENCE = {
    "profile": (16, 2000),
    "covariance": (16, 2000),
    "mean": (16, 2000),
    "singularity": (16, 2000),
    "minimum": (20, 2000),
    "maximum": (20, 2000),
    "local_limit": (20, 2000),
    "martingale": (18, 100),
    "coupling": (14, 1000),
    "fixation": (14, 1000),
    "tails": (4, 10000),
    "tables_selftest": (0, 1),
}

MAX_FULL_FIELD_DEPTH = 24
CACHE_ENV = "HARDWALL_CACHE_DIR"


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "hardwall"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n: int | None = None
    replicas: int | None = None
    seed: int = 20240501
    dx: float = 0.01
    n_ref: int = 512
    k_plus_delta: int = 10
    alphas: tuple = ()
    output_dir: str = "results"
    cache_dir: str | None = None
    threads: int = 1
    budget_seconds: float = 600.0
    extras: dict = field(default_factory=dict, compare=False)

    def resolved(self) -> "ExperimentConfig":
        """Fill reference defaults and validate."""
        if self.experiment not in EXPERIMENTS:
            raise ConfigInvalidError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        n_def, r_def = REFERENCE[self.experiment]
        cfg = replace(
            self,
            n=n_def if self.n is None else int(self.n),
            replicas=r_def if self.replicas is None else int(self.replicas),
            alphas=tuple(self.alphas) if self.alphas else ((C0 / 2,) if self.experiment == "martingale" else ()),
            cache_dir=str(default_cache_dir()) if self.cache_dir is None else str(self.cache_dir),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.replicas is not None and self.replicas < 1:
            raise ConfigInvalidError("replicas must be >= 1")
        if self.n is not None and self.n < 0:
            raise ConfigInvalidError("n must be >= 0")
        if self.n is not None and self.n > MAX_FULL_FIELD_DEPTH and self.experiment not in ("tails", "tables_selftest"):
            raise ConfigInvalidError(
                f"n={self.n} exceeds the full-field memory guard ({MAX_FULL_FIELD_DEPTH})")
        if not 0 < self.dx <= 0.02:
            raise ConfigInvalidError("dx must lie in (0, 0.02]")
        if self.n_ref < 16:
            raise ConfigInvalidError("n_ref must be >= 16")
        if self.k_plus_delta < 6:
            raise ConfigInvalidError("k_plus_delta must be >= 6")
        if self.threads < 1:
            raise ConfigInvalidError("threads must be >= 1")
        for a in self.alphas:
            if not 0 <= a <= C0 + 1e-12:
                raise ConfigInvalidError(f"alpha {a} outside [0, c0]")
        if not self.seed == int(self.seed) or not 0 <= self.seed < 2 ** 64:
            raise ConfigInvalidError("seed must be a 64-bit unsigned integer")

    def echo(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        d.pop("extras")
        return d


_INT_KEYS = {"n", "replicas", "seed", "n_ref", "k_plus_delta", "threads"}
_FLOAT_KEYS = {"dx", "budget_seconds"}
_ALIASES = {"nref": "n_ref", "k": "k_plus_delta", "alpha": "alphas", "out": "output_dir", "output": "output_dir"}


def _parse_alpha(text: str) -> tuple:
    vals = []
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        tok = tok.replace("c0", repr(C0))
        try:
            # allow forms like 0.5*c0
            num = 1.0
            for part in tok.split("*"):
                num *= float(part)
        except ValueError as exc:
            raise ConfigInvalidError(f"bad alpha value {tok!r}") from exc
        if not math.isfinite(num):
            raise ConfigInvalidError(f"bad alpha value {tok!r}")
        vals.append(num)
    return tuple(vals)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a ``key = value`` file (an optional ``[experiment]`` header is allowed)."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text if text.lstrip().startswith("[") else "[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigInvalidError(f"cannot parse {path}: {exc}") from exc
    values: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = _ALIASES.get(key, key)
            try:
                if key in _INT_KEYS:
                    values[key] = int(raw, 0)
                elif key in _FLOAT_KEYS:
                    values[key] = float(raw)
                elif key == "alphas":
                    values[key] = _parse_alpha(raw)
                elif key in ("experiment", "output_dir", "cache_dir"):
                    values[key] = raw.strip()
                else:
                    raise ConfigInvalidError(f"unknown key {key!r}")
            except ValueError as exc:
                raise ConfigInvalidError(f"bad value for {key}: {raw!r}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "experiment" not in values:
        raise ConfigInvalidError("config has no experiment")
    return ExperimentConfig(**values)
