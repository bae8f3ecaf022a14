"""Flat ``key = value`` experiment configuration."""
from __future__ import annotations

import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    """Every setting an experiment can read; lists are comma-separated in the file.

    ``radius``, ``gap_bound`` and ``threads`` accept 0 for "choose automatically".
    """

    seed: int | None = None
    base: str = "cycle"
    n: list[int] = field(default_factory=lambda: [256])
    alpha: float = 1.0
    beta: float = 1.0
    eps: list[float] = field(default_factory=lambda: [0.25, 0.75])
    horizons: list[int] = field(default_factory=lambda: [200, 400])
    samples: int = 1000
    seeds: int = 3
    radius: int = 0
    backtrack: int = 2
    gap_bound: int = 0
    budget: int = 512
    cert: int = 10
    entropy: float = 0.0
    t_max: int = 10_000
    escape_envs: int = 100
    escape_horizon: int = 100
    escape_samples: int = 1000
    escape_floor: float = 0.05
    regen_samples: int = 100
    regen_ticks: int = 400
    ticks: list[int] = field(default_factory=lambda: [100])
    coupling_runs: int = 200
    perm_samples: int = 100_000
    perm_n: list[int] = field(default_factory=lambda: [50, 100])
    polys: int = 20
    multipliers: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0, 8.0])
    path_degree: int = 2
    path_n: int = 20
    toys: list[str] = field(default_factory=lambda: ["deterministic-gap", "geometric-gap", "three-state"])
    renewal_t: int = 200
    mineka_runs: int = 20_000
    mineka_ks: list[int] = field(default_factory=lambda: [64, 256, 1024])
    threads: int = 0

    # keys that do not change results and stay out of the hash
    NON_RESULT_KEYS = ("threads",)

    def canonical(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name in self.NON_RESULT_KEYS:
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def validate(self) -> "ExperimentConfig":
        if self.seed is None:
            raise ConfigError("a seed is required (config key 'seed' or --seed)")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        positive = ("samples", "seeds", "backtrack", "budget", "cert", "t_max", "escape_envs", "escape_horizon",
                    "escape_samples", "regen_samples", "regen_ticks", "coupling_runs", "perm_samples", "polys",
                    "path_degree", "path_n", "renewal_t", "mineka_runs")
        for key in positive:
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        for key in ("radius", "gap_bound", "threads"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be nonnegative")
        for key in ("n", "horizons", "perm_n", "mineka_ks"):
            values = getattr(self, key)
            if not values or any(v <= 0 for v in values):
                raise ConfigError(f"{key} needs positive entries")
        if any(t < 0 for t in self.ticks) or any(m < 0 for m in self.multipliers):
            raise ConfigError("ticks and multipliers must be nonnegative")
        if len(self.eps) != 2 or not all(0 < e < 1 for e in self.eps):
            raise ConfigError("eps needs two values in (0, 1)")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        self._check_base()
        return self

    def _check_base(self) -> None:
        kind = self.base.strip().lower()
        if kind in ("cycle", "complete") or re.fullmatch(r"random-regular(\(\d+\))?", kind):
            return
        if kind == "triangles":
            if any(n != 3 for n in self.n):
                raise ConfigError("the triangles base needs n = 3")
            return
        if not Path(self.base.strip()).is_file():
            raise ConfigError(f"base {self.base!r} is neither a builtin kind nor a readable network file")


def _format(value) -> str:
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def _convert(name: str, kind, text: str):
    text = text.strip()
    origin = getattr(kind, "__origin__", None)
    try:
        if origin is list:
            (inner,) = kind.__args__
            return [_convert(name, inner, part) for part in text.split(",") if part.strip()]
        if kind is int:
            return int(text, 0)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {text!r}") from exc


_TYPES = {
    "seed": int, "base": str, "n": list[int], "alpha": float, "beta": float, "eps": list[float],
    "horizons": list[int], "ticks": list[int], "perm_n": list[int], "multipliers": list[float],
    "toys": list[str], "mineka_ks": list[int],
}


def _kind(name: str):
    if name in _TYPES:
        return _TYPES[name]
    default = getattr(ExperimentConfig(), name)
    return type(default)


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    cfg = ExperimentConfig()
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {number}: unknown key {key!r}")
        setattr(cfg, key, _convert(key, _kind(key), value))
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
