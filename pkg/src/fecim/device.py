"""Behavioral FeFET and cell-capacitor models with variation sampling.

The FeFET is a two-state nonvolatile switch: a gate pulse at or beyond
``+v_write`` sets the low-V_TH (on) state, one at or beyond ``-v_write``
sets the high-V_TH (off) state, and anything within ``disturb_margin``
leaves the state alone. The band in between is refused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DisturbRisk
from .rng import CounterStream, TAG_CAP, TAG_R_OFF, TAG_R_ON, normal

INF = math.inf

# Above this the resample-on-nonpositive truncation visibly biases the mean.
MAX_SIGMA_C = 0.5
_MAX_RESAMPLE = 64


@dataclass(frozen=True)
class FeFetParams:
    v_write: float = 1.5
    v_dd: float = 0.45
    r_on_nominal: float = 10e3
    r_off_nominal: float = 10e9
    disturb_margin: float | None = None

    def __post_init__(self):
        if self.disturb_margin is None:
            object.__setattr__(self, "disturb_margin", self.v_write / 2)
        if not 0 < self.v_dd < self.v_write:
            raise ConfigError(
                f"v_dd must satisfy 0 < v_dd < v_write (got v_dd={self.v_dd}, "
                f"v_write={self.v_write}); a compute rail at or above the write "
                "threshold would disturb stored states"
            )
        if not 0 < self.r_on_nominal < self.r_off_nominal:
            raise ConfigError("need 0 < r_on_nominal < r_off_nominal")
        if not 0 < self.disturb_margin < self.v_write:
            raise ConfigError("need 0 < disturb_margin < v_write")

    @property
    def on_off_ratio(self) -> float:
        return self.r_off_nominal / self.r_on_nominal


@dataclass(frozen=True)
class VariationSpec:
    """Monte Carlo variation parameters.

    ``on_off_ratio=None`` keeps the device's nominal ``r_off``; ``math.inf``
    makes the off state a perfect open.
    """

    sigma_c: float = 0.0
    sigma_r: float = 0.0
    on_off_ratio: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma_c < 0 or self.sigma_r < 0:
            raise ConfigError("variation sigmas must be non-negative")
        if self.on_off_ratio is not None and not self.on_off_ratio > 1:
            raise ConfigError(f"on_off_ratio must be > 1 or inf (got {self.on_off_ratio})")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def r_off_nominal(self, params: FeFetParams) -> float:
        if self.on_off_ratio is None:
            return params.r_off_nominal
        if math.isinf(self.on_off_ratio):
            return INF
        return self.on_off_ratio * params.r_on_nominal

    def to_dict(self) -> dict:
        ratio = self.on_off_ratio
        return {
            "sigma_c": self.sigma_c,
            "sigma_r": self.sigma_r,
            "on_off_ratio": "inf" if ratio is not None and math.isinf(ratio) else ratio,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class FeFetInstance:
    stored_bit: int
    r_on: float
    r_off: float

    def __post_init__(self):
        if self.stored_bit not in (0, 1):
            raise ValueError("stored_bit must be 0 or 1")
        if not 0 < self.r_on < self.r_off:
            raise ValueError("need 0 < r_on < r_off")

    @property
    def resistance(self) -> float:
        return self.r_on if self.stored_bit else self.r_off

    @property
    def conductance(self) -> float:
        return 1.0 / self.resistance


@dataclass(frozen=True)
class CapacitorInstance:
    c_nominal: float
    c_sampled: float = field(default=None)

    def __post_init__(self):
        if self.c_sampled is None:
            object.__setattr__(self, "c_sampled", self.c_nominal)
        if not self.c_sampled > 0:
            raise ValueError("c_sampled must be positive")

    @property
    def relative(self) -> float:
        return self.c_sampled / self.c_nominal


def lognormal_scale(sigma_r: float) -> float:
    """Log-space sigma giving a multiplicative factor with coefficient of variation ``sigma_r``."""
    return math.sqrt(math.log1p(sigma_r * sigma_r))


def _check_sigma_c(sigma_c: float) -> None:
    if sigma_c >= MAX_SIGMA_C:
        raise ConfigError(
            f"sigma_c={sigma_c} too large: truncation at zero would bias the "
            f"capacitor mean (limit {MAX_SIGMA_C})"
        )


def capacitor_factors(sigma_c: float, stream: CounterStream, *indices) -> np.ndarray:
    """Relative capacitances ``1 + sigma_c * g`` drawn per element, resampled while ``<= 0``.

    Returns exactly 1.0 everywhere when ``sigma_c == 0``.
    """
    _check_sigma_c(sigma_c)
    key = stream.key(*indices)
    factors = 1.0 + sigma_c * normal(key, 0)
    if sigma_c == 0:
        return np.broadcast_to(factors, np.shape(key)).copy()
    draw = 1
    bad = factors <= 0
    while np.any(bad):
        if draw > _MAX_RESAMPLE:
            raise RuntimeError("capacitor resampling did not terminate")
        factors = np.where(bad, 1.0 + sigma_c * normal(key, draw), factors)
        bad = factors <= 0
        draw += 1
    return factors


def sample_capacitor(c_nominal: float, spec: VariationSpec, stream: CounterStream | None = None,
                     *indices) -> CapacitorInstance:
    """One capacitor drawn from Normal(c_nominal, sigma_c * c_nominal), truncated at zero."""
    if stream is None:
        stream = CounterStream(spec.seed, TAG_CAP)
    factor = float(capacitor_factors(spec.sigma_c, stream, *indices))
    return CapacitorInstance(c_nominal, c_nominal * factor)


def resistance_factors(sigma_r: float, stream: CounterStream, *indices) -> np.ndarray:
    s = lognormal_scale(sigma_r)
    key = stream.key(*indices)
    if s == 0:
        return np.ones(np.shape(key))
    return np.exp(s * normal(key, 0))


def sample_fefet(params: FeFetParams, spec: VariationSpec, stream: CounterStream | None = None,
                 initial_bit: int = 0, *indices) -> FeFetInstance:
    """One FeFET with independently sampled log-normal on and off resistances."""
    if stream is None:
        stream = CounterStream(spec.seed, TAG_R_ON)
    on_stream = CounterStream(stream.seed, TAG_R_ON, *stream.prefix)
    off_stream = CounterStream(stream.seed, TAG_R_OFF, *stream.prefix)
    r_on = params.r_on_nominal * float(resistance_factors(spec.sigma_r, on_stream, *indices))
    r_off_nom = spec.r_off_nominal(params)
    if math.isinf(r_off_nom):
        r_off = INF
    else:
        r_off = r_off_nom * float(resistance_factors(spec.sigma_r, off_stream, *indices))
    return FeFetInstance(int(initial_bit), r_on, r_off)


def forbidden_bias(v_gs, params: FeFetParams) -> np.ndarray:
    """Mask of gate biases inside the refused band ``(disturb_margin, v_write)``."""
    mag = np.abs(np.asarray(v_gs, dtype=float))
    return (mag > params.disturb_margin) & (mag < params.v_write)


def pulse_outcome(bits, v_gs, params: FeFetParams) -> np.ndarray:
    """Vectorized :func:`apply_gate_pulse` over bit arrays."""
    v_gs = np.asarray(v_gs, dtype=float)
    bad = forbidden_bias(v_gs, params)
    if np.any(bad):
        raise DisturbRisk(v_gs[bad].flat[0])
    out = np.where(v_gs >= params.v_write, 1, bits)
    return np.where(v_gs <= -params.v_write, 0, out).astype(np.int8)


def apply_gate_pulse(fefet: FeFetInstance, v_gs: float, params: FeFetParams) -> FeFetInstance:
    if v_gs >= params.v_write:
        bit = 1
    elif v_gs <= -params.v_write:
        bit = 0
    elif abs(v_gs) <= params.disturb_margin:
        return fefet
    else:
        raise DisturbRisk(v_gs)
    if bit == fefet.stored_bit:
        return fefet
    return FeFetInstance(bit, fefet.r_on, fefet.r_off)
