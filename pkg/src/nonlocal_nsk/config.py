"""Run configuration: flat TOML ``key = value`` text with strict validation."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .dynamics import System

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    system: str
    n: int
    dim: int = 2
    length: float = 2 * math.pi
    kappa: float = 1.0
    alpha: float = 16.0
    rho_bar: float = 1.0
    amplitude: float = 0.2
    init: str = "default"
    rho_file: str = ""
    u_files: list = field(default_factory=list)
    t_end: float = 0.25
    dt_policy: str = "cfl"
    dt: float = 0.0
    safety: float = 0.5
    n_frames: int = 32
    output_dir: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


_REQUIRED = ("system", "n")
_TYPES = {f.name: f.type for f in fields(RunConfig)}
_PY_TYPES = {"str": str, "int": int, "float": float, "list": list}


def _coerce(key: str, value):
    want = _PY_TYPES[_TYPES[key]]
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, bool) or not isinstance(value, want):
        raise ConfigError(
            f"key {key!r}: expected {want.__name__}, got {type(value).__name__} ({value!r})"
        )
    return value


def _validate(cfg: RunConfig):
    def bad(name, msg):
        raise ConfigError(f"constraint {name}: {msg}")

    try:
        System(cfg.system)
    except ValueError:
        bad("system", f"must be one of {[s.value for s in System]}, got {cfg.system!r}")
    if cfg.dim not in (2, 3):
        bad("dim", f"must be 2 or 3, got {cfg.dim}")
    if cfg.n < 8 or cfg.n % 2:
        bad("n", f"must be even and >= 8, got {cfg.n}")
    if not cfg.length > 0:
        bad("length", f"must be positive, got {cfg.length}")
    if not cfg.kappa >= 0:
        bad("kappa", f"must be >= 0, got {cfg.kappa}")
    if not (cfg.alpha > 0 and math.isfinite(cfg.alpha)):
        bad("alpha", f"must be finite and > 0, got {cfg.alpha}")
    if not cfg.rho_bar > 0:
        bad("rho_bar", f"must be > 0, got {cfg.rho_bar}")
    if not abs(cfg.amplitude) < cfg.rho_bar:
        bad("amplitude", "must satisfy |amplitude| < rho_bar so the density stays positive")
    if cfg.init not in ("default", "files"):
        bad("init", f"must be 'default' or 'files', got {cfg.init!r}")
    if cfg.init == "files" and (not cfg.rho_file or len(cfg.u_files) != cfg.dim):
        bad("init", "init='files' needs rho_file and one u_files entry per dimension")
    if not cfg.t_end >= 0:
        bad("t_end", f"must be >= 0, got {cfg.t_end}")
    if cfg.dt_policy not in ("cfl", "fixed"):
        bad("dt_policy", f"must be 'cfl' or 'fixed', got {cfg.dt_policy!r}")
    if cfg.dt_policy == "fixed" and not cfg.dt > 0:
        bad("dt", "a fixed dt policy needs dt > 0")
    if not 0 < cfg.safety <= 1:
        bad("safety", f"must lie in (0, 1], got {cfg.safety}")
    if cfg.n_frames < 1:
        bad("n_frames", f"must be >= 1, got {cfg.n_frames}")


def parse_config(text: str) -> RunConfig:
    """Parse flat TOML text; unknown keys, wrong types and bad values are errors."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = sorted(set(raw) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    values = {k: _coerce(k, v) for k, v in raw.items()}
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
