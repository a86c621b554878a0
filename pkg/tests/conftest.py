"""Shared builders for the test suite.

Traces built here are tiny and fully hand-specified so expected values
stay checkable by hand. The bandit factory produces constant frames and
two stations whose capacities sit in an exact-enough 2:1 ratio, which the
learner tests rely on.
"""

import numpy as np

from camho.channel import LinkBudget, mw_to_dbm
from camho.trace import Trace

WIDE = LinkBudget(bandwidth_hz=40e6, noise_psd_dbm_hz=-173.0)

# one verdict line per acceptance criterion, echoed after the run summary
ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def power_for_snr(snr: float, budget: LinkBudget = WIDE) -> float:
    """Received power (dBm) that hits the requested linear SNR."""
    return mw_to_dbm(snr * budget.noise_power_mw)


def make_trace(powers_dbm, frames=None, frame_hw=(8, 8), num_cameras=1,
               budgets=None, epoch_interval_ms=30, seed=None):
    powers = np.asarray(powers_dbm, dtype=np.float64)
    num_bs, epochs = powers.shape
    if budgets is None:
        budgets = (WIDE,) * num_bs
    if frames is None:
        h, w = frame_hw
        frames = np.zeros((num_cameras, epochs, h, w), dtype=np.float32)
    return Trace(frames, powers, budgets, epoch_interval_ms, seed=seed)


def bandit_trace(num_epochs: int = 260, frame_hw=(20, 20), num_cameras: int = 1,
                 fill: float = 0.5) -> Trace:
    """Constant frames, constant powers, BS2 capacity = 2x BS1.

    SNR 3 gives capacity W*log2(4) = 2W and SNR 15 gives W*log2(16) = 4W,
    up to the dBm round trip (relative error well under 1e-12).
    """
    p1 = power_for_snr(3.0)
    p2 = power_for_snr(15.0)
    powers = np.empty((2, num_epochs))
    powers[0] = p1
    powers[1] = p2
    h, w = frame_hw
    frames = np.full((num_cameras, num_epochs, h, w), fill, dtype=np.float32)
    return make_trace(powers, frames=frames)
