from __future__ import annotations

import numpy as np
import pytest

from vamsim.scenario import MobilityTrace

US = 1_000_000


class Gate:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self):
        self.lines: dict[int, str] = {}

    def record(self, n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        self.lines[n] = line
        print(line)


_GATE = Gate()


@pytest.fixture(scope="session")
def gate() -> Gate:
    return _GATE


def pytest_terminal_summary(terminalreporter):
    if not _GATE.lines:
        return
    terminalreporter.section("acceptance gate")
    for n in sorted(_GATE.lines):
        terminalreporter.write_line(_GATE.lines[n])


def stationary_trace(positions, duration_s: float = 50.0, heading: float = 90.0) -> MobilityTrace:
    end = int(duration_s * US)
    return MobilityTrace({i + 1: [(0, x, y, 0.0, heading), (end, x, y, 0.0, heading)]
                          for i, (x, y) in enumerate(positions)})


def linear_trace(starts, velocities, duration_s: float = 50.0) -> MobilityTrace:
    """Constant-velocity VRUs; velocity given as (vx, vy)."""
    end = int(duration_s * US)
    out = {}
    for i, ((x, y), (vx, vy)) in enumerate(zip(starts, velocities)):
        speed = float(np.hypot(vx, vy))
        heading = float(np.degrees(np.arctan2(vx, vy)) % 360.0)
        out[i + 1] = [(0, x, y, speed, heading),
                      (end, x + vx * duration_s, y + vy * duration_s, speed, heading)]
    return MobilityTrace(out)


@pytest.fixture
def make_stationary():
    return stationary_trace


@pytest.fixture
def make_linear():
    return linear_trace
