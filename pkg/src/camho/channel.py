"""Link-budget arithmetic: dBm/mW conversions and Shannon capacity.

All internal power arithmetic happens in linear milliwatts at double
precision. -inf dBm is the no-signal convention and maps to exactly 0 mW.
"""

import math
from dataclasses import dataclass

import numpy as np


def dbm_to_mw(p_dbm):
    """Convert dBm to milliwatts. Accepts scalars or arrays; -inf -> 0.0."""
    arr = np.asarray(p_dbm, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError("NaN is not a valid dBm value")
    out = np.power(10.0, arr / 10.0)
    if arr.ndim == 0:
        return float(out)
    return out


def mw_to_dbm(p_mw):
    """Convert milliwatts to dBm. 0 mW -> -inf; negative power is an error."""
    arr = np.asarray(p_mw, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError("NaN is not a valid mW value")
    if (arr < 0).any():
        raise ValueError("negative power has no dBm representation")
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(arr)
    if arr.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class LinkBudget:
    """Per-BS measurement bandwidth and noise power spectral density."""

    bandwidth_hz: float
    noise_psd_dbm_hz: float

    def __post_init__(self):
        if not math.isfinite(self.bandwidth_hz) or self.bandwidth_hz <= 0:
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth_hz}")
        if not math.isfinite(self.noise_psd_dbm_hz):
            raise ValueError(f"noise PSD must be finite, got {self.noise_psd_dbm_hz}")

    @property
    def noise_power_mw(self) -> float:
        """Total noise power over the measurement bandwidth, in mW."""
        return dbm_to_mw(self.noise_psd_dbm_hz) * self.bandwidth_hz


def capacity_bps(p_rx_dbm, budget: LinkBudget):
    """Shannon capacity W*log2(1 + P/(sigma2*W)) in bit/s.

    p_rx_dbm may be a scalar or an ndarray of received powers; -inf gives
    exactly 0 bit/s.
    """
    p_mw = dbm_to_mw(p_rx_dbm)
    snr = np.asarray(p_mw, dtype=np.float64) / budget.noise_power_mw
    out = budget.bandwidth_hz * np.log2(1.0 + snr)
    if out.ndim == 0:
        return float(out)
    return out
