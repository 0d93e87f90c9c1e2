"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid device, array, or run configuration."""


class DisturbRisk(RuntimeError):
    """A FeFET would see a gate bias in the undefined partial-switching band."""

    def __init__(self, v_gs: float, row: int | None = None, col: int | None = None,
                 phase: int | None = None, device: str | None = None):
        self.v_gs = float(v_gs)
        self.row = row
        self.col = col
        self.phase = phase
        self.device = device
        where = ""
        if row is not None:
            where = f" at row {row}, col {col}, phase {phase}"
            if device:
                where += f" ({device})"
        super().__init__(f"disturb risk: |V_GS| = {abs(self.v_gs):.6g} V{where}")


class ComplementarityViolation(RuntimeError):
    """Both FeFETs of a cell hold the same bit after a write."""


class InvalidCell(ValueError):
    """A cell that does not hold one '0' and one '1'."""
