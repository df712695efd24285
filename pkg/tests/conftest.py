import datetime as dt

import numpy as np
import pytest

from vwapx.market import N_SLOTS, OPEN_MS, SLOT_MS, DayTape
from vwapx.synth import GeneratorConfig, synth_generate


def make_tape(volume=None, vwap=None, mid=100.0, date=dt.date(2021, 3, 2), premarket=None):
    """Hand-built tape: a 5-level book one tick wide around ``mid``."""
    volume = np.full(N_SLOTS, 10, dtype=np.int64) if volume is None else np.asarray(volume)
    vwap = np.full(N_SLOTS, mid) if vwap is None else np.asarray(vwap, dtype=float)
    mids = np.full(N_SLOTS, mid, dtype=float) if np.isscalar(mid) else np.asarray(mid, float)
    lv = np.arange(5)
    bp = mids[:, None] - 0.5 - lv
    ap = mids[:, None] + 0.5 + lv
    bv = np.tile(np.arange(1, 6) * 10, (N_SLOTS, 1))
    av = bv + 1
    pre = np.arange(1.0, 11.0) if premarket is None else premarket
    return DayTape(date, OPEN_MS + SLOT_MS * np.arange(N_SLOTS), bp, bv, ap, av,
                   volume, vwap, pre)


@pytest.fixture(scope="session")
def synth_tape():
    return synth_generate(GeneratorConfig(), 11)


# acceptance criterion -> (passed, detail); printed once at the end of the run
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
