"""The 2T1C cell: complementary storage, two-phase writes, and XNOR.

Terminal convention. The bitlines BL/BLB act as the gates of M1/M2 and
the wordlines WL/WLB drive their channels into the shared node X. This is
the only assignment for which the write rails of the reference write table
land M1 on '1' and M2 on '0' and for which the half-selected rows see
exactly half the write voltage. During compute the wordlines carry the
input pair and the on-state device connects its wordline to X.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import (
    CapacitorInstance,
    FeFetInstance,
    FeFetParams,
    apply_gate_pulse,
)
from .errors import ComplementarityViolation, DisturbRisk, InvalidCell

GND = 0.0


@dataclass(frozen=True)
class WritePhaseVoltages:
    v_scl: float
    v_bl: float
    v_blb: float
    v_wl: float
    v_wlb: float

    def gate_biases(self) -> tuple[float, float]:
        """Effective V_GS of (M1, M2) during this phase."""
        return self.v_bl - self.v_wl, self.v_blb - self.v_wlb


@dataclass(frozen=True)
class InputBitPair:
    value: int
    v_true: float
    v_comp: float

    def __post_init__(self):
        if self.value not in (0, 1):
            raise ValueError("input value must be 0 or 1")
        expected = (self.v_true > self.v_comp) if self.value else (self.v_true < self.v_comp)
        if not expected or GND not in (self.v_true, self.v_comp):
            raise ValueError("input rails must be (VDD, GND) for 1 and (GND, VDD) for 0")

    @classmethod
    def from_bit(cls, bit: int, v_dd: float) -> "InputBitPair":
        return cls(int(bit), v_dd, GND) if bit else cls(int(bit), GND, v_dd)


@dataclass(frozen=True)
class Cell2T1C:
    m1: FeFetInstance
    m2: FeFetInstance
    cap: CapacitorInstance

    @property
    def complementary(self) -> bool:
        return self.m1.stored_bit != self.m2.stored_bit

    @property
    def weight(self) -> int:
        return self.m1.stored_bit


def plan_write(target_weight: int, params: FeFetParams) -> tuple[WritePhaseVoltages, WritePhaseVoltages]:
    """Two-phase rail schedule storing ``target_weight`` (M1 holds the weight, M2 its complement).

    Phase 1 grounds both wordlines so the bitline at V_write sets its
    device to '1'; phase 2 lifts both wordlines to V_write so the grounded
    bitline's device sees -V_write and is reset to '0'.
    """
    vw = params.v_write
    v_bl, v_blb = (vw, GND) if target_weight else (GND, vw)
    phase1 = WritePhaseVoltages(GND, v_bl, v_blb, GND, GND)
    phase2 = WritePhaseVoltages(GND, v_bl, v_blb, vw, vw)
    return phase1, phase2


def execute_write(cell: Cell2T1C, schedule, params: FeFetParams) -> Cell2T1C:
    m1, m2 = cell.m1, cell.m2
    for phase_no, phase in enumerate(schedule, start=1):
        vgs1, vgs2 = phase.gate_biases()
        try:
            m1 = apply_gate_pulse(m1, vgs1, params)
        except DisturbRisk as exc:
            raise DisturbRisk(exc.v_gs, phase=phase_no, device="M1") from None
        try:
            m2 = apply_gate_pulse(m2, vgs2, params)
        except DisturbRisk as exc:
            raise DisturbRisk(exc.v_gs, phase=phase_no, device="M2") from None
    if m1.stored_bit == m2.stored_bit:
        raise ComplementarityViolation(f"both FeFETs store {m1.stored_bit} after write")
    return Cell2T1C(m1, m2, cell.cap)


def assert_read_safe(params: FeFetParams) -> None:
    if params.v_dd > params.disturb_margin:
        raise DisturbRisk(params.v_dd)


def cell_xnor(cell: Cell2T1C, inp: InputBitPair, params: FeFetParams, model: str = "ideal") -> float:
    """Node-X voltage after the compute phase."""
    if not cell.complementary:
        raise InvalidCell("cell does not hold complementary bits")
    assert_read_safe(params)
    if model == "ideal":
        return inp.v_true if cell.m1.stored_bit else inp.v_comp
    if model != "divider":
        raise ValueError(f"unknown model {model!r}")
    g1 = cell.m1.conductance
    g2 = cell.m2.conductance
    return inp.v_comp + (inp.v_true - inp.v_comp) * (g1 / (g1 + g2))
