"""Run configuration: a plain ``key = value`` file overridden by command-line flags."""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .lattice import MAX_DIM

# desk-scale envelope: deepest level per dimension
MAX_LEVELS = {1: 3, 2: 3, 3: 2, 4: 1}
TOL_FLOOR = 1e-12
_SECTION = "run"


def _floats(text) -> tuple:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    dim: int = 2
    L: int = 2
    levels: int = 2
    mass: tuple = (1.0,)
    alpha: float | None = None
    tol: float = 1e-8
    seed: int = 0
    samples: int = 10_000
    threads: int = 1
    radius: float = 2.0
    p: tuple | None = None
    out: str = "frdecomp-out"
    cache_dir: str | None = None

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ConfigError(f"dim must be in 1..{MAX_DIM}")
        if self.L < 2 or self.L & (self.L - 1):
            raise ConfigError("L must be a power of two >= 2")
        top = MAX_LEVELS[self.dim]
        if not 0 <= self.levels <= top:
            raise ConfigError(f"levels must be in 0..{top} for dim={self.dim}")
        if not self.mass or any(not math.isfinite(a) or a < 0 for a in self.mass):
            raise ConfigError("masses must be finite and >= 0")
        if self.alpha is not None and not 0 < self.alpha < 2:
            raise ConfigError("alpha must lie in (0, 2)")
        if not TOL_FLOOR <= self.tol < 1:
            raise ConfigError(f"tol must lie in [{TOL_FLOOR:g}, 1)")
        if self.samples < 1 or self.threads < 1:
            raise ConfigError("samples and threads must be >= 1")
        if self.radius <= 0:
            raise ConfigError("radius must be > 0")
        if self.p is not None and len(self.p) not in (1, self.dim):
            raise ConfigError("momentum must have 1 or dim components")

    @property
    def p_exp(self) -> int:
        return self.L.bit_length() - 1

    def momentum(self):
        if self.p is None:
            return None
        return self.p * self.dim if len(self.p) == 1 else self.p

    def as_dict(self) -> dict:
        return asdict(self)


_CONVERT = {
    "dim": int, "L": int, "levels": int, "mass": _floats, "alpha": float, "tol": float,
    "seed": int, "samples": int, "threads": int, "radius": float, "p": _floats,
    "out": str, "cache_dir": str,
}
_ALIASES = {"d": "dim", "a": "mass", "n": "levels", "n_max": "levels", "cache-dir": "cache_dir"}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into raw strings."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return dict(parser[_SECTION])


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file values with flag overrides (flags win) and validate."""
    merged = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            key = _ALIASES.get(key, key)
            if key not in _CONVERT:
                raise ConfigError(f"unknown configuration key {key!r}")
            try:
                merged[key] = _CONVERT[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
    names = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in merged.items() if k in names})
