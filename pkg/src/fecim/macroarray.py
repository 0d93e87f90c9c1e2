"""R x C charge-domain MAC macro.

Inputs bind to rows, each column accumulates onto its own floating ScL.
Cell state is held as dense arrays rather than per-cell objects; use
:meth:`MacroArray.cell` for a :class:`~fecim.cell.Cell2T1C` view.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cell import GND, Cell2T1C, InputBitPair, assert_read_safe
from .device import (
    CapacitorInstance,
    FeFetInstance,
    FeFetParams,
    VariationSpec,
    capacitor_factors,
    forbidden_bias,
    resistance_factors,
)
from .errors import ComplementarityViolation, DisturbRisk
from .rng import CounterStream, TAG_CAP, TAG_R_OFF, TAG_R_ON

C_M_DEFAULT = 1.2e-15
MODELS = ("ideal", "divider")


@dataclass(frozen=True, eq=False)
class MacroArray:
    params: FeFetParams
    m1_bits: np.ndarray
    m2_bits: np.ndarray
    m1_r_on: np.ndarray
    m1_r_off: np.ndarray
    m2_r_on: np.ndarray
    m2_r_off: np.ndarray
    caps: np.ndarray
    c_nominal: float = C_M_DEFAULT
    c_parasitic: float = 0.0
    row_active: np.ndarray = None
    col_active: np.ndarray = None

    def __post_init__(self):
        shape = self.m1_bits.shape
        if len(shape) != 2:
            raise ValueError("cell arrays must be 2-D")
        for name in ("m2_bits", "m1_r_on", "m1_r_off", "m2_r_on", "m2_r_off", "caps"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {shape}")
        if self.row_active is None:
            object.__setattr__(self, "row_active", np.ones(shape[0], dtype=bool))
        if self.col_active is None:
            object.__setattr__(self, "col_active", np.ones(shape[1], dtype=bool))
        for arr in (self.m1_bits, self.m2_bits, self.caps, self.row_active, self.col_active):
            arr.flags.writeable = False

    @classmethod
    def blank(cls, rows: int = 128, cols: int = 128, params: FeFetParams | None = None,
              c_nominal: float = C_M_DEFAULT, c_parasitic: float = 0.0) -> "MacroArray":
        """Nominal devices, every cell storing weight 0."""
        params = params or FeFetParams()
        shape = (rows, cols)
        r_on = np.full(shape, params.r_on_nominal)
        r_off = np.full(shape, params.r_off_nominal)
        return cls(
            params,
            np.zeros(shape, dtype=np.int8),
            np.ones(shape, dtype=np.int8),
            r_on, r_off, r_on.copy(), r_off.copy(),
            np.full(shape, c_nominal),
            c_nominal,
            c_parasitic,
        )

    @classmethod
    def sample(cls, rows: int, cols: int, params: FeFetParams, spec: VariationSpec,
               c_nominal: float = C_M_DEFAULT, c_parasitic: float = 0.0,
               trial: int = 0) -> "MacroArray":
        """Variation-sampled array; element (r, c) of trial t is keyed by (seed, t, r, c)."""
        r = np.arange(rows)[:, None]
        c = np.arange(cols)[None, :]
        cap_f = capacitor_factors(spec.sigma_c, CounterStream(spec.seed, TAG_CAP), trial, r, c)
        r_off_nom = spec.r_off_nominal(params)
        devices = []
        for dev in (0, 1):
            on = params.r_on_nominal * resistance_factors(
                spec.sigma_r, CounterStream(spec.seed, TAG_R_ON), trial, r, c, dev)
            if math.isinf(r_off_nom):
                off = np.full((rows, cols), math.inf)
            else:
                off = r_off_nom * resistance_factors(
                    spec.sigma_r, CounterStream(spec.seed, TAG_R_OFF), trial, r, c, dev)
            devices += [on, off]
        shape = (rows, cols)
        return cls(
            params,
            np.zeros(shape, dtype=np.int8),
            np.ones(shape, dtype=np.int8),
            *devices,
            c_nominal * cap_f,
            c_nominal,
            c_parasitic,
        )

    @property
    def rows(self) -> int:
        return self.m1_bits.shape[0]

    @property
    def cols(self) -> int:
        return self.m1_bits.shape[1]

    @property
    def complementary(self) -> np.ndarray:
        return self.m1_bits != self.m2_bits

    @property
    def weights(self) -> np.ndarray:
        """Stored weight bits (the M1 state)."""
        return self.m1_bits.copy()

    def cell(self, r: int, c: int) -> Cell2T1C:
        return Cell2T1C(
            FeFetInstance(int(self.m1_bits[r, c]), float(self.m1_r_on[r, c]), float(self.m1_r_off[r, c])),
            FeFetInstance(int(self.m2_bits[r, c]), float(self.m2_r_on[r, c]), float(self.m2_r_off[r, c])),
            CapacitorInstance(self.c_nominal, float(self.caps[r, c])),
        )

    def with_caps(self, caps: np.ndarray) -> "MacroArray":
        return replace(self, caps=np.asarray(caps, dtype=float))

    def to_json(self) -> str:
        p = self.params
        doc = {
            "rows": self.rows,
            "cols": self.cols,
            "weights": self.m1_bits.ravel().astype(int).tolist(),
            "params": {
                "v_write": p.v_write,
                "v_dd": p.v_dd,
                "r_on_nominal": p.r_on_nominal,
                "r_off_nominal": p.r_off_nominal,
                "disturb_margin": p.disturb_margin,
                "c_nominal": self.c_nominal,
                "c_parasitic": self.c_parasitic,
            },
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "MacroArray":
        doc = json.loads(text)
        p = dict(doc["params"])
        c_nominal = p.pop("c_nominal", C_M_DEFAULT)
        c_parasitic = p.pop("c_parasitic", 0.0)
        arr = cls.blank(doc["rows"], doc["cols"], FeFetParams(**p), c_nominal, c_parasitic)
        w = np.asarray(doc["weights"], dtype=np.int8).reshape(doc["rows"], doc["cols"])
        return program_array(arr, w)


# ---------------------------------------------------------------- writes


@dataclass(frozen=True)
class ArrayWritePhase:
    """Rail voltages for one write phase: per-row wordlines, per-column bitlines."""

    v_wl: np.ndarray
    v_wlb: np.ndarray
    v_bl: np.ndarray
    v_blb: np.ndarray
    v_scl: float = GND

    def gate_biases(self) -> tuple[np.ndarray, np.ndarray]:
        vgs1 = self.v_bl[None, :] - self.v_wl[:, None]
        vgs2 = self.v_blb[None, :] - self.v_wlb[:, None]
        return vgs1, vgs2


def plan_row_write(row_weights: np.ndarray, row: int, rows: int,
                   params: FeFetParams) -> tuple[ArrayWritePhase, ArrayWritePhase]:
    """Two-phase schedule writing one row while half-selecting all others at V_write/2."""
    vw = params.v_write
    bits = np.asarray(row_weights).astype(bool)
    v_bl = np.where(bits, vw, GND)
    v_blb = np.where(bits, GND, vw)
    half = np.full(rows, vw / 2)
    wl1 = half.copy()
    wl1[row] = GND
    wl2 = half.copy()
    wl2[row] = vw
    return (
        ArrayWritePhase(wl1, wl1.copy(), v_bl, v_blb),
        ArrayWritePhase(wl2, wl2.copy(), v_bl.copy(), v_blb.copy()),
    )


@dataclass
class WriteAudit:
    """|V_GS| histogram over every FeFET and phase of a programming run."""

    magnitudes: Counter = field(default_factory=Counter)
    trace: list = field(default_factory=list)
    forbidden: int = 0

    def record(self, row: int, phase: int, vgs1: np.ndarray, vgs2: np.ndarray, params: FeFetParams):
        mags = np.round(np.abs(np.concatenate([vgs1.ravel(), vgs2.ravel()])), 12)
        values, counts = np.unique(mags, return_counts=True)
        entry = {float(v): int(n) for v, n in zip(values, counts)}
        self.trace.append((row, phase, entry))
        self.magnitudes.update(entry)
        self.forbidden += int(forbidden_bias(vgs1, params).sum() + forbidden_bias(vgs2, params).sum())


PhaseHook = Callable[[int, int, ArrayWritePhase], ArrayWritePhase]


def _apply_phase(bits, vgs, params):
    out = np.where(vgs >= params.v_write, 1, bits)
    return np.where(vgs <= -params.v_write, 0, out).astype(np.int8)


def program_array(array: MacroArray, weights, audit: WriteAudit | None = None,
                  phase_hook: PhaseHook | None = None) -> MacroArray:
    """Write ``weights`` row by row with half-select protection.

    ``phase_hook(row, phase_no, phase)`` may replace a phase before it is
    applied; it exists so tests can inject faulty schedules.
    """
    w = np.asarray(weights)
    if w.shape != (array.rows, array.cols):
        raise ValueError(f"weight matrix {w.shape} does not match array {(array.rows, array.cols)}")
    if not np.isin(w, (0, 1)).all():
        raise ValueError("weights must be bits")
    p = array.params
    m1 = np.array(array.m1_bits, dtype=np.int8)
    m2 = np.array(array.m2_bits, dtype=np.int8)
    for r in range(array.rows):
        for phase_no, phase in enumerate(plan_row_write(w[r], r, array.rows, p), start=1):
            if phase_hook is not None:
                phase = phase_hook(r, phase_no, phase)
            vgs1, vgs2 = phase.gate_biases()
            if audit is not None:
                audit.record(r, phase_no, vgs1, vgs2, p)
            for name, vgs in (("M1", vgs1), ("M2", vgs2)):
                bad = forbidden_bias(vgs, p)
                if bad.any():
                    rr, cc = (int(i) for i in np.argwhere(bad)[0])
                    raise DisturbRisk(vgs[rr, cc], row=rr, col=cc, phase=phase_no, device=name)
            m1 = _apply_phase(m1, vgs1, p)
            m2 = _apply_phase(m2, vgs2, p)
    if np.any(m1 == m2):
        rr, cc = np.argwhere(m1 == m2)[0]
        raise ComplementarityViolation(f"cell ({rr}, {cc}) not complementary after programming")
    return replace(array, m1_bits=m1, m2_bits=m2)


# ---------------------------------------------------------------- compute


@dataclass(frozen=True)
class MacStimulus:
    inputs: tuple

    @classmethod
    def from_bits(cls, bits, v_dd: float) -> "MacStimulus":
        return cls(tuple(InputBitPair.from_bit(int(b), v_dd) for b in np.asarray(bits).ravel()))

    @property
    def bits(self) -> np.ndarray:
        return np.array([i.value for i in self.inputs], dtype=np.int8)

    def __len__(self):
        return len(self.inputs)


@dataclass(frozen=True)
class MacResult:
    v_scl: np.ndarray
    match_counts: np.ndarray
    p_one: np.ndarray
    columns: np.ndarray


def high_fraction(g_drive: np.ndarray, g_other: np.ndarray) -> np.ndarray:
    """Share of the driven rail reaching node X through a two-conductance divider."""
    return g_drive / (g_drive + g_other)


def share_voltage(frac: np.ndarray, cap_weights: np.ndarray, v_dd: float, axis: int = 0,
                  extra: float = 0.0) -> np.ndarray:
    """Floating-node voltage after charge sharing: ``v_dd * sum(frac*C) / (sum(C) + extra)``.

    ``frac`` is each bottom plate's voltage in units of ``v_dd``; capacitances are
    in units of the nominal cell capacitor so equal caps sum exactly.
    """
    num = np.sum(frac * cap_weights, axis=axis)
    den = np.sum(cap_weights, axis=axis) + extra
    return v_dd * num / den


def node_fractions(array: MacroArray, bits: np.ndarray, model: str) -> np.ndarray:
    """Per-cell V_X / VDD for input ``bits`` bound to rows."""
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    m1 = array.m1_bits.astype(bool)
    if model == "ideal":
        h1 = m1.astype(float)
    else:
        g1 = 1.0 / np.where(m1, array.m1_r_on, array.m1_r_off)
        g2 = 1.0 / np.where(array.m2_bits.astype(bool), array.m2_r_on, array.m2_r_off)
        h1 = high_fraction(g1, g2)
    f_true = bits.astype(float)[:, None]
    f_comp = 1.0 - f_true
    frac = f_comp + (f_true - f_comp) * h1
    return np.where(array.row_active[:, None], frac, 0.0)


def mac_evaluate(array: MacroArray, stimulus, model: str = "ideal",
                 caps: np.ndarray | None = None) -> MacResult:
    """Discharge-then-evaluate MAC over every active column.

    ``caps`` overrides the array's own capacitors (farads, R x C).
    """
    if isinstance(stimulus, MacStimulus):
        bits = stimulus.bits
    else:
        bits = np.asarray(stimulus, dtype=np.int8).ravel()
    if bits.shape[0] != array.rows:
        raise ValueError(f"stimulus length {bits.shape[0]} != rows {array.rows}")
    if not array.complementary.all():
        raise ComplementarityViolation("array holds non-complementary cells")
    assert_read_safe(array.params)
    c = array.caps if caps is None else np.asarray(caps, dtype=float)
    if c.shape != (array.rows, array.cols):
        raise ValueError("capacitor matrix shape mismatch")
    frac = node_fractions(array, bits, model)
    w = c / array.c_nominal
    v = share_voltage(frac, w, array.params.v_dd, axis=0, extra=array.c_parasitic / array.c_nominal)
    match = (array.m1_bits == bits[:, None]) & array.row_active[:, None]
    counts = match.sum(axis=0)
    cols = np.flatnonzero(array.col_active)
    return MacResult(v[cols], counts[cols], counts[cols] / array.rows, cols)


def deactivate(array: MacroArray, rows: Sequence[int] = (), cols: Sequence[int] = ()) -> MacroArray:
    """Ground the inputs of ``rows`` and drop ``cols`` from results.

    Grounded rows keep their capacitors on ScL.
    """
    ra = np.array(array.row_active)
    ca = np.array(array.col_active)
    ra[list(rows)] = False
    ca[list(cols)] = False
    return replace(array, row_active=ra, col_active=ca)


def equivalent_capacitance(m: int, n: int, c_m: float) -> float:
    """Load charged from the supply when ``m`` of ``n`` plates rise to VDD."""
    if n <= 0 or not 0 <= m <= n:
        raise ValueError(f"need 0 <= M <= N and N > 0 (got M={m}, N={n})")
    return m * (n - m) * c_m / n


def quantize(v_scl: float, v_ref: float, flipped: bool = False) -> int:
    """Sense-amplifier decision; exact ties resolve to +1 in both polarities."""
    if v_scl == v_ref:
        return 1
    if flipped:
        return 1 if v_scl < v_ref else -1
    return 1 if v_scl > v_ref else -1


def threshold_to_vref(alpha: float, n: int, v_dd: float, n_total: int | None = None) -> float:
    """ScL reference equivalent to ``2M - n > alpha`` on a column of ``n_total`` caps.

    ``n`` counts the active rows; ``n_total`` (default ``n``) counts every
    capacitor loading ScL.
    """
    if not -n <= alpha <= n:
        raise ValueError(f"alpha={alpha} outside [-{n}, {n}]")
    n_total = n if n_total is None else n_total
    return v_dd * (n + alpha) / (2 * n_total)
