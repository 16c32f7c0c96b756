"""Event-triggered conditioning protocols and output-shift measurement.

A "spike" at the source site is an upward crossing of its observed rate over
``detect_threshold_hz``. Each crossing schedules a stimulation bin at the
target units ``delay_bins`` later. The shuffled-timing control delivers the
same number of stimulation bins at seeded random times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .brainsim import (
    BrainConfig,
    BrainState,
    PlasticityParams,
    brain_step,
    hebbian_update,
    probe_site,
)
from .rng import make_rng

CONTROL_MODES = ("none", "shuffled_timing")
ZERO_RESPONSE = 1e-9
# Hebbian setting for conditioning sessions on the default desk-scale brain.
CONDITIONING_PLASTICITY = PlasticityParams(eta=4e-7, lambda_decay=0.0, w_clip=1.0, enabled=True)


@dataclass(frozen=True)
class ConditioningProtocol:
    source_unit: int
    target_units: tuple
    delay_ms: float = 7.5
    detect_threshold_hz: Optional[float] = None  # None -> 0.5 * rate_max
    stim_amplitude: float = 20.0
    session_bins: int = 12000
    control_mode: str = "none"
    stim_bins: int = 3  # bins of stimulation per event (a short pulse train)

    def __post_init__(self):
        object.__setattr__(self, "target_units", tuple(int(u) for u in np.atleast_1d(self.target_units)))
        if self.delay_ms < 0:
            raise ValueError("delay_ms must be >= 0")
        if self.detect_threshold_hz is not None and not self.detect_threshold_hz > 0:
            raise ValueError("detect_threshold_hz must be > 0")
        if self.stim_amplitude < 0:
            raise ValueError("stim_amplitude must be >= 0")
        if self.session_bins <= 0:
            raise ValueError("session_bins must be > 0")
        if self.stim_bins < 1:
            raise ValueError("stim_bins must be >= 1")
        if self.control_mode not in CONTROL_MODES:
            raise ValueError(f"control_mode must be one of {CONTROL_MODES}")
        if not self.target_units:
            raise ValueError("at least one target unit is required")

    def delay_bins(self, dt_ms: float) -> int:
        """Delay quantized up to whole bins, never below one bin."""
        return max(int(math.ceil(self.delay_ms / dt_ms - 1e-9)), 1)

    def threshold(self, cfg: BrainConfig) -> float:
        return 0.5 * cfg.rate_max if self.detect_threshold_hz is None else float(self.detect_threshold_hz)


@dataclass(frozen=True)
class BackgroundDrive:
    """Spontaneous region-A activity during conditioning.

    ``offset_a`` / ``offset_b`` are added to every unit each bin (None cancels
    the region's bias so it idles near zero). Each A unit independently starts
    bursts of ``burst_amplitude`` Hz lasting ``burst_bins`` at ``burst_rate_hz``.
    """

    seed: int = 0
    offset_a: Optional[float] = None
    offset_b: Optional[float] = None
    burst_rate_hz: float = 0.25
    burst_bins: int = 5
    burst_amplitude: float = 120.0

    def __post_init__(self):
        if self.burst_rate_hz < 0 or self.burst_amplitude < 0 or self.burst_bins < 1:
            raise ValueError("burst rate/amplitude must be >= 0 and burst_bins >= 1")

    def drives(self, cfg: BrainConfig, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
        """(n_bins, n_a) drive to A and (n_b,) constant drive to B."""
        offset = -cfg.bias_a if self.offset_a is None else np.full(cfg.n_a, float(self.offset_a))
        p = min(self.burst_rate_hz * cfg.dt_ms / 1000.0, 1.0)
        onsets = make_rng(self.seed, "background").random((n_bins, cfg.n_a)) < p
        active = np.zeros((n_bins, cfg.n_a))
        for k in range(self.burst_bins):
            active[k:] += onsets[: n_bins - k]
        drive_a = offset + self.burst_amplitude * np.minimum(active, 1.0)
        drive_b = -cfg.bias_b if self.offset_b is None else np.full(cfg.n_b, float(self.offset_b))
        return drive_a, drive_b


class ConditioningResult(NamedTuple):
    state: BrainState
    stim_count: int
    stim_bins: np.ndarray


def _check_units(cfg: BrainConfig, protocol: ConditioningProtocol) -> None:
    if not 0 <= protocol.source_unit < cfg.n_a:
        raise IndexError(f"source_unit {protocol.source_unit} outside region A (n_a={cfg.n_a})")
    bad = [u for u in protocol.target_units if not 0 <= u < cfg.n_b]
    if bad:
        raise IndexError(f"target_units {bad} outside region B (n_b={cfg.n_b})")


def detect_crossings(observed_source: np.ndarray, threshold: float, initial: float = 0.0) -> np.ndarray:
    """Bins where the trace moves from below to at-or-above ``threshold``."""
    prev = np.concatenate([[initial], observed_source[:-1]])
    return np.flatnonzero((prev < threshold) & (observed_source >= threshold))


def _triggered_bins(cfg, state, protocol, drive_a, drive_b) -> np.ndarray:
    """Stimulation bins a triggered run would use. Region A never sees B, so
    a stimulation-free pass reproduces the source trace exactly."""
    zero_intent, zero_stim = np.zeros(2), np.zeros(cfg.n_b)
    trace = np.empty(protocol.session_bins)
    s = state
    initial = float(s.observed[protocol.source_unit]) if s.observed is not None else float(s.r_a[protocol.source_unit])
    for t in range(protocol.session_bins):
        s, obs = brain_step(cfg, s, zero_intent, zero_stim, drive_a=drive_a[t], drive_b=drive_b)
        trace[t] = obs[protocol.source_unit]
    stim = detect_crossings(trace, protocol.threshold(cfg), initial) + protocol.delay_bins(cfg.dt_ms)
    return stim[stim < protocol.session_bins]


def run_conditioning(
    cfg: BrainConfig,
    state: BrainState,
    protocol: ConditioningProtocol,
    plasticity: PlasticityParams,
    background: BackgroundDrive = BackgroundDrive(),
) -> ConditioningResult:
    """Run one conditioning session with Hebbian updates every bin."""
    _check_units(cfg, protocol)
    n = protocol.session_bins
    drive_a, drive_b = background.drives(cfg, n)
    triggered = _triggered_bins(cfg, state, protocol, drive_a, drive_b)
    if protocol.control_mode == "shuffled_timing":
        rng = make_rng(background.seed, "shuffled-timing")
        stim_bins = np.sort(rng.choice(n, size=triggered.size, replace=False))
    else:
        stim_bins = triggered
    on = np.zeros(n, dtype=bool)
    for k in range(protocol.stim_bins):
        on[stim_bins[stim_bins + k < n] + k] = True
    pulse = np.zeros(cfg.n_b)
    pulse[list(protocol.target_units)] = protocol.stim_amplitude
    zero_intent, zero_stim = np.zeros(2), np.zeros(cfg.n_b)
    for t in range(n):
        r_a_prev = state.r_a
        state, _ = brain_step(
            cfg, state, zero_intent, pulse if on[t] else zero_stim, drive_a=drive_a[t], drive_b=drive_b
        )
        state = hebbian_update(state, plasticity, r_a_prev, state.r_b)
    return ConditioningResult(state, int(stim_bins.size), stim_bins)


class ShiftReport(NamedTuple):
    pre_direction: np.ndarray
    post_direction: np.ndarray
    target_direction: np.ndarray
    cosine_gain: float
    stim_count: int
    zero_response: bool


def _unit(v: np.ndarray) -> tuple[np.ndarray, bool]:
    n = float(np.linalg.norm(v))
    if n < ZERO_RESPONSE:
        return np.zeros_like(v), True
    return v / n, False


def measure_shift(
    cfg: BrainConfig,
    state_pre: BrainState,
    state_post: BrainState,
    protocol: ConditioningProtocol,
    stim_count: int = 0,
    probe_amplitude: float = 20.0,
) -> ShiftReport:
    """Change in how closely the source site's output points along the targets' output."""
    _check_units(cfg, protocol)
    for s in (state_pre, state_post):
        if s.r_a.shape != (cfg.n_a,) or s.w_ba_current.shape != cfg.w_ba.shape:
            raise ValueError("state dimensions do not match cfg")
    pre, z_pre = _unit(probe_site(cfg, state_pre, "A", protocol.source_unit, probe_amplitude))
    post, z_post = _unit(probe_site(cfg, state_post, "A", protocol.source_unit, probe_amplitude))
    target, z_t = _unit(probe_site(cfg, state_pre, "B", list(protocol.target_units), probe_amplitude))
    gain = float(post @ target - pre @ target)
    return ShiftReport(pre, post, target, gain, int(stim_count), z_pre or z_post or z_t)


def opposite_targets(n_a: int, n_b: int, source_unit: int, offset_deg: float = 90.0, width: int = 1) -> tuple:
    """B units whose preferred direction sits ``offset_deg`` away from the source's."""
    theta = 2 * np.pi * source_unit / n_a + np.deg2rad(offset_deg)
    centre = int(round(theta / (2 * np.pi) * n_b)) % n_b
    return tuple(sorted({(centre + k) % n_b for k in range(-width, width + 1)}))


def conditioning_pair(
    cfg: BrainConfig,
    state: BrainState,
    protocol: ConditioningProtocol,
    plasticity: PlasticityParams,
    background: BackgroundDrive,
) -> tuple[ShiftReport, ShiftReport]:
    """Triggered run and its dose-matched shuffled control from the same start state."""
    reports = []
    for mode in ("none", "shuffled_timing"):
        p = replace(protocol, control_mode=mode)
        res = run_conditioning(cfg, state, p, plasticity, background)
        reports.append(measure_shift(cfg, state, res.state, p, res.stim_count))
    return reports[0], reports[1]


def mean_gain(reports: Sequence[ShiftReport]) -> float:
    return float(np.mean([r.cosine_gain for r in reports]))
