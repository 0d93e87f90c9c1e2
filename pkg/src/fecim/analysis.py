"""Capacitance/energy comparison, variation Monte Carlo, and area counts.

Monte Carlo trials run in fixed blocks of :data:`BLOCK` trials. Every
sample is keyed by ``(seed, match count, trial, row)``, so the statistics
are bit-identical for any thread count. The keys do not depend on the
on/off ratio or on ``sigma_c``, which makes sweeps over either use common
random numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .device import VariationSpec, lognormal_scale, MAX_SIGMA_C
from .errors import ConfigError
from .macroarray import equivalent_capacitance, high_fraction, share_voltage
from .report import write_csv, write_json
from .rng import TAG_MC_CAP, TAG_MC_R_ON, normal, stream_key

BLOCK = 4096
DEFAULT_P_GRID = tuple(round(0.1 * k, 1) for k in range(11))

# draw offsets within one element key; capacitor resamples use 1.._RESAMPLE
_DRAW_R_ON = 1000
_DRAW_R_OFF = 1001
_RESAMPLE = 64


# ------------------------------------------------------------ energy


def sram_equivalent_capacitance(m: int, c_m: float) -> float:
    """Charging load of the SRAM charge-domain baseline: only '1' cells charge."""
    if m < 0:
        raise ValueError("M must be non-negative")
    return m * c_m


def average_ceq_ratio(n: int) -> float:
    """Ratio of the M-averaged loads, proposed over SRAM, for M uniform on 0..n."""
    if n < 1:
        raise ValueError("N must be >= 1")
    proposed = sum(Fraction(m * (n - m), n) for m in range(n + 1))
    sram = sum(range(n + 1))
    return float(proposed / sram)


def mac_energy(c_eq: float, v_dd: float) -> float:
    """Supply energy to charge ``c_eq`` to ``v_dd`` through a switch."""
    if c_eq < 0:
        raise ValueError("c_eq must be non-negative")
    return c_eq * v_dd * v_dd


@dataclass(frozen=True)
class EnergyReport:
    c_eq_proposed: float
    c_eq_sram: float
    energy_proposed: float
    energy_sram: float
    ratio: float

    @classmethod
    def at(cls, m: int, n: int, c_m: float, v_dd: float) -> "EnergyReport":
        prop = equivalent_capacitance(m, n, c_m)
        sram = sram_equivalent_capacitance(m, c_m)
        ratio = prop / sram if sram > 0 else math.nan
        return cls(prop, sram, mac_energy(prop, v_dd), mac_energy(sram, v_dd), ratio)


def energy_curves(n: int, c_m: float, v_dd: float) -> list[tuple]:
    """Rows ``(M, p, C_EQ proposed, C_EQ SRAM, E proposed, E SRAM, ratio)`` for M = 0..n."""
    rows = []
    for m in range(n + 1):
        r = EnergyReport.at(m, n, c_m, v_dd)
        rows.append((m, m / n, r.c_eq_proposed, r.c_eq_sram, r.energy_proposed, r.energy_sram, r.ratio))
    return rows


def area_report() -> dict:
    proposed = {"transistors": 2, "capacitors": 1, "capacitor_stacked": True}
    sram = {"transistors": 9, "capacitors": 1, "capacitor_stacked": False,
            "breakdown": {"xnor_cell": 8, "scl_access": 1}}
    return {
        "proposed": proposed,
        "sram_cd": sram,
        "transistor_ratio": Fraction(2, 9),
    }


# ------------------------------------------------------------ Monte Carlo


def sigma_mac_theory(p: float, sigma_c: float, n: int) -> float:
    """First-order std of the normalized MAC output under capacitor mismatch."""
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    return sigma_c * math.sqrt(p * (1 - p) / n)


def match_count(p: float, n: int) -> int:
    return int(math.floor(p * n + 0.5))


def _cap_weights(sigma_c: float, key: np.ndarray) -> np.ndarray:
    w = 1.0 + sigma_c * normal(key, 0)
    if sigma_c == 0:
        return w
    bad = w <= 0
    draw = 1
    while bad.any():
        if draw > _RESAMPLE:
            raise RuntimeError("capacitor resampling did not terminate")
        w = np.where(bad, 1.0 + sigma_c * normal(key, draw), w)
        bad = w <= 0
        draw += 1
    return w


def _block_keys(seed: int, tag: int, m: int, n: int, t0: int, t1: int) -> np.ndarray:
    trials = np.arange(t0, t1)[:, None]
    rows = np.arange(n)[None, :]
    return stream_key(seed, tag, m, trials, rows)


def _blocks(trials: int):
    return [(t0, min(t0 + BLOCK, trials)) for t0 in range(0, trials, BLOCK)]


def _run_blocks(fn, trials: int, threads: int) -> list:
    spans = _blocks(trials)
    if threads <= 1 or len(spans) == 1:
        return [fn(*s) for s in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: fn(*s), spans))


def _validate_mc(spec: VariationSpec, n: int, p_grid, trials: int):
    if spec.sigma_c >= MAX_SIGMA_C:
        raise ConfigError(f"sigma_c must be < {MAX_SIGMA_C}")
    if n < 1 or trials < 2:
        raise ConfigError("need N >= 1 and at least 2 trials")
    for p in p_grid:
        if not 0 <= p <= 1:
            raise ConfigError(f"p={p} outside [0, 1]")


@dataclass
class VariationReport:
    p_grid: list
    sigma_mac: np.ndarray
    trials: int
    spec: VariationSpec
    n: int = 128
    match_counts: list = field(default_factory=list)

    @property
    def theory(self) -> np.ndarray:
        return np.array([sigma_mac_theory(m / self.n, self.spec.sigma_c, self.n) for m in self.match_counts])

    def rows(self):
        for p, m, s, th in zip(self.p_grid, self.match_counts, self.sigma_mac, self.theory):
            yield (p, m, self.spec.sigma_c, s, th, self.trials, self.spec.seed)

    header = ("p", "M", "sigma_c", "sigma_mac", "sigma_mac_theory", "trials", "seed")

    def to_dict(self) -> dict:
        return {
            "kind": "sigma_mac",
            "n": self.n,
            "trials": self.trials,
            "spec": self.spec.to_dict(),
            "p_grid": list(self.p_grid),
            "match_counts": list(self.match_counts),
            "sigma_mac": self.sigma_mac,
            "sigma_mac_theory": self.theory,
        }


def sigma_mac_samples(spec: VariationSpec, n: int, m: int, trials: int, threads: int = 1) -> np.ndarray:
    """Normalized V_MAC for ``trials`` independent capacitor draws with ``m`` of ``n`` cells at VDD."""
    frac = (np.arange(n) < m).astype(float)

    def block(t0, t1):
        w = _cap_weights(spec.sigma_c, _block_keys(spec.seed, TAG_MC_CAP, m, n, t0, t1))
        return share_voltage(frac[None, :], w, 1.0, axis=1)

    return np.concatenate(_run_blocks(block, trials, threads))


def run_sigma_mac_mc(spec: VariationSpec, n: int = 128, p_grid: Sequence[float] = DEFAULT_P_GRID,
                     trials: int = 100_000, threads: int = 1) -> VariationReport:
    """Std of the normalized MAC output under capacitor mismatch, ideal switches."""
    _validate_mc(spec, n, p_grid, trials)
    sig, ms = [], []
    for p in p_grid:
        m = match_count(p, n)
        v = sigma_mac_samples(spec, n, m, trials, threads)
        sig.append(float(np.std(v, ddof=1)))
        ms.append(m)
    return VariationReport(list(p_grid), np.array(sig), trials, spec, n, ms)


@dataclass
class ErrorReport:
    p_grid: list
    mean_abs_error: np.ndarray
    q_below_one_flip: np.ndarray
    trials: int
    spec: VariationSpec
    n: int = 128
    match_counts: list = field(default_factory=list)

    @property
    def q_pooled(self) -> float:
        """Fraction of all trials over the grid below the one-flip threshold."""
        return float(np.mean(self.q_below_one_flip))

    @property
    def mean_abs_error_pooled(self) -> float:
        return float(np.mean(self.mean_abs_error))

    header = ("p", "M", "on_off_ratio", "mean_abs_error", "q_below_one_flip", "trials", "seed")

    def rows(self):
        ratio = self.spec.on_off_ratio
        for p, m, e, q in zip(self.p_grid, self.match_counts, self.mean_abs_error, self.q_below_one_flip):
            yield (p, m, ratio, e, q, self.trials, self.spec.seed)

    def to_dict(self) -> dict:
        return {
            "kind": "onoff_error",
            "n": self.n,
            "trials": self.trials,
            "spec": self.spec.to_dict(),
            "p_grid": list(self.p_grid),
            "match_counts": list(self.match_counts),
            "mean_abs_error": self.mean_abs_error,
            "q_below_one_flip": self.q_below_one_flip,
            "q_pooled": self.q_pooled,
        }


def onoff_error_samples(spec: VariationSpec, ratios: Sequence[float], n: int, m: int,
                        trials: int, threads: int = 1) -> np.ndarray:
    """Normalized MAC error ``V/VDD - m/n`` per trial for each on/off ratio (shape ``(len(ratios), trials)``).

    Each cell draws its capacitor, the on-resistance of its conducting
    FeFET, and the off-resistance of its blocking FeFET. Draws are shared
    across ratios.
    """
    s = lognormal_scale(spec.sigma_r)
    match = np.arange(n) < m

    def block(t0, t1):
        key = _block_keys(spec.seed, TAG_MC_R_ON, m, n, t0, t1)
        w = _cap_weights(spec.sigma_c, key)
        if s > 0:
            f_on = np.exp(s * normal(key, _DRAW_R_ON))
            f_off = np.exp(s * normal(key, _DRAW_R_OFF))
        else:
            f_on = f_off = np.ones_like(w)
        out = np.empty((len(ratios), t1 - t0))
        for i, ratio in enumerate(ratios):
            g_on = 1.0 / f_on
            g_off = np.zeros_like(w) if math.isinf(ratio) else 1.0 / (ratio * f_off)
            h = high_fraction(g_on, g_off)
            frac = np.where(match[None, :], h, 1.0 - h)
            out[i] = share_voltage(frac, w, 1.0, axis=1) - m / n
        return out

    return np.concatenate(_run_blocks(block, trials, threads), axis=1)


def run_onoff_error_sweep(spec: VariationSpec, ratios: Sequence[float], n: int = 128,
                          p_grid: Sequence[float] = DEFAULT_P_GRID, trials: int = 100_000,
                          threads: int = 1) -> list[ErrorReport]:
    """One :class:`ErrorReport` per ratio; equal to separate :func:`run_onoff_error_mc` calls."""
    _validate_mc(spec, n, p_grid, trials)
    for r in ratios:
        if not r > 1:
            raise ConfigError(f"on/off ratio must exceed 1 (got {r})")
    errs = np.zeros((len(ratios), len(p_grid)))
    qs = np.zeros_like(errs)
    ms = []
    for j, p in enumerate(p_grid):
        m = match_count(p, n)
        ms.append(m)
        e = onoff_error_samples(spec, ratios, n, m, trials, threads)
        errs[:, j] = np.mean(np.abs(e), axis=1)
        qs[:, j] = np.mean(np.abs(e) < 1.0 / n, axis=1)
    reports = []
    for i, r in enumerate(ratios):
        sub = VariationSpec(spec.sigma_c, spec.sigma_r, r, spec.seed)
        reports.append(ErrorReport(list(p_grid), errs[i], qs[i], trials, sub, n, list(ms)))
    return reports


def run_onoff_error_mc(spec: VariationSpec, n: int = 128, p_grid: Sequence[float] = DEFAULT_P_GRID,
                       trials: int = 100_000, threads: int = 1) -> ErrorReport:
    if spec.on_off_ratio is None:
        raise ConfigError("on/off error study needs an explicit on_off_ratio")
    return run_onoff_error_sweep(spec, [spec.on_off_ratio], n, p_grid, trials, threads)[0]


def write_report(report, csv_path, json_path=None):
    write_csv(csv_path, report.header, report.rows())
    if json_path is not None:
        write_json(json_path, report.to_dict())
