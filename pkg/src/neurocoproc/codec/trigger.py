"""Band-power drop detector for field-potential signals."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

POWER_FLOOR = 1e-12
MU_BAND = (8.0, 12.0)


class TriggerResult(NamedTuple):
    triggers: np.ndarray  # window indices that fired
    power: np.ndarray  # band power per window
    window_starts: np.ndarray  # first sample of each window


def band_power(window: np.ndarray, fs: float, band: tuple) -> float:
    """Mean-square amplitude contained in DFT bins with lo <= f <= hi."""
    n = window.size
    spec = np.fft.rfft(window)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    p = np.abs(spec[sel]) ** 2
    # One-sided spectrum: double everything except DC and Nyquist.
    doubled = ~((freqs[sel] == 0) | ((n % 2 == 0) & (freqs[sel] == fs / 2)))
    return float(np.sum(p * np.where(doubled, 2.0, 1.0)) / n**2)


def band_power_trigger(
    signal,
    fs: float,
    band: tuple = MU_BAND,
    window_ms: float = 250.0,
    drop_ratio: float = 0.5,
    baseline_windows: int = 8,
) -> TriggerResult:
    """Fire on non-overlapping windows whose band power drops below
    ``drop_ratio`` times the median of the preceding ``baseline_windows``.

    Windows with a baseline under an absolute floor never fire.
    """
    x = np.asarray(signal, dtype=np.float64)
    lo, hi = band
    if not 0 < lo < hi < fs / 2:
        raise ValueError(f"band {band} must satisfy 0 < lo < hi < fs/2 = {fs / 2}")
    if not 0 < drop_ratio < 1:
        raise ValueError("drop_ratio must lie in (0, 1)")
    if baseline_windows < 1:
        raise ValueError("baseline_windows must be >= 1")
    n = int(round(window_ms * fs / 1000.0))
    if n < 2 or window_ms < 2000.0 / lo - 1e-9:
        raise ValueError(f"window of {window_ms} ms is degenerate; need >= 2 cycles of {lo} Hz")
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    if not np.any((freqs >= lo) & (freqs <= hi)):
        raise ValueError(f"no DFT bin of a {n}-sample window falls in band {band}")
    n_win = x.size // n
    starts = np.arange(n_win) * n
    power = np.array([band_power(x[s : s + n], fs, band) for s in starts])
    fired = []
    for i in range(1, n_win):
        base = float(np.median(power[max(0, i - baseline_windows) : i]))
        if base > POWER_FLOOR and power[i] < drop_ratio * base:
            fired.append(i)
    return TriggerResult(np.array(fired, dtype=int), power, starts)
