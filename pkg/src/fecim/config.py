"""Run configuration: an INI-style file with sections, plus CLI overrides."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .device import FeFetParams, VariationSpec
from .errors import ConfigError

CONFIG_ENV = "FECIM_CONFIG"


def _floats(text: str) -> tuple:
    return tuple(_float(t) for t in text.replace(",", " ").split())


def _float(text) -> float:
    t = str(text).strip().lower()
    if t in ("inf", "infinite", "infinity"):
        return math.inf
    return float(t)


@dataclass(frozen=True)
class RunConfig:
    # device
    v_write: float = 1.5
    v_dd: float = 0.45
    r_on: float = 10e3
    r_off: float = 10e9
    disturb_margin: float | None = None
    c_m: float = 1.2e-15
    c_parasitic: float = 0.0
    # array
    rows: int = 128
    cols: int = 128
    # variation
    sigma_c: float = 0.05
    sigma_r: float = 0.15
    on_off_ratio: float | None = None
    sigma_c_grid: tuple = (0.01, 0.02, 0.03, 0.04, 0.05)
    on_off_ratios: tuple = (1e2, 1e3, 1e4, 1e5, 1e6)
    p_grid: tuple = tuple(round(0.1 * k, 1) for k in range(11))
    trials: int = 100_000
    # bnn
    bnn_sigma_c_grid: tuple = (0.0, 0.05, 0.1, 0.2, 0.3)
    bnn_trials: int = 30
    model: str | None = None
    images: str | None = None
    labels: str | None = None
    # run
    seed: int = 0
    threads: int = 1
    out: str = "out"

    def params(self) -> FeFetParams:
        return FeFetParams(self.v_write, self.v_dd, self.r_on, self.r_off, self.disturb_margin)

    def variation(self, **changes) -> VariationSpec:
        spec = VariationSpec(self.sigma_c, self.sigma_r, self.on_off_ratio, self.seed)
        return replace(spec, **changes) if changes else spec

    def validate(self) -> "RunConfig":
        try:
            self.params()
            self.variation()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("array rows and cols must be >= 1")
        if self.c_m <= 0 or self.c_parasitic < 0:
            raise ConfigError("c_m must be positive and c_parasitic non-negative")
        if self.trials < 2 or self.bnn_trials < 1:
            raise ConfigError("trial counts too small")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for p in self.p_grid:
            if not 0 <= p <= 1:
                raise ConfigError(f"p_grid value {p} outside [0, 1]")
        for s in (self.sigma_c,) + self.sigma_c_grid + self.bnn_sigma_c_grid:
            if not 0 <= s < 0.5:
                raise ConfigError(f"sigma_c grid value {s} outside [0, 0.5)")
        for r in self.on_off_ratios:
            if not r > 1:
                raise ConfigError(f"on/off ratio {r} must exceed 1")
        return self

    def echo(self) -> dict:
        """Everything that determines results (thread count and output path excluded)."""
        d = asdict(self)
        d.pop("threads")
        d.pop("out")
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    def digest(self) -> str:
        text = json.dumps(self.echo(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()


_SECTIONS = {
    "device": {"v_write": _float, "v_dd": _float, "r_on": _float, "r_off": _float,
               "disturb_margin": _float, "c_m": _float, "c_parasitic": _float},
    "array": {"rows": int, "cols": int},
    "variation": {"sigma_c": _float, "sigma_r": _float, "on_off_ratio": _float,
                  "sigma_c_grid": _floats, "on_off_ratios": _floats, "p_grid": _floats, "trials": int},
    "bnn": {"sigma_c_grid": _floats, "trials": int, "model": str, "images": str, "labels": str},
    "run": {"seed": int, "threads": int, "out": str},
}


def load_config(path=None, **overrides) -> RunConfig:
    """Read ``path`` (or ``$FECIM_CONFIG``), apply non-None overrides, validate."""
    values = {}
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in parser.items(section):
                conv = _SECTIONS[section].get(key)
                if conv is None:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                name = f"bnn_{key}" if section == "bnn" and key in ("sigma_c_grid", "trials") else key
                if raw.strip() == "":
                    continue
                try:
                    values[name] = conv(raw)
                except ValueError:
                    raise ConfigError(f"{path}: [{section}] {key} = {raw!r} is not a valid value") from None
            if section == "bnn":
                base = path.parent
                for key in ("model", "images", "labels"):
                    if key in values and not Path(values[key]).is_absolute():
                        values[key] = str(base / values[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**values)
    return cfg.validate()
