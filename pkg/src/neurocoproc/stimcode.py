"""Stimulation encoders and record/stimulate timing.

Pulses live on a 1 ms grid. A pulse is an event with attributes (time,
channel, amplitude, width, shape); waveforms are never synthesised. Every
generator places its first pulse or packet at t = 0 and converts exact phase
to grid times by rounding half up, so a 400 Hz train becomes alternating
3/2 ms intervals whose long-run rate is exact.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

SHAPES = ("biphasic", "monophasic")


class Pulse(NamedTuple):
    t_ms: int
    channel: int
    amplitude_ma: float
    width_us: float
    shape: str


@dataclass(frozen=True)
class PulseTrain:
    pulses: tuple[Pulse, ...]
    horizon_ms: float

    def __len__(self) -> int:
        return len(self.pulses)

    def times(self, channel: Optional[int] = None) -> np.ndarray:
        return np.array(
            [p.t_ms for p in self.pulses if channel is None or p.channel == channel], dtype=int
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t_ms", "channel", "amplitude_ma", "width_us", "shape"])
        for p in self.pulses:
            writer.writerow([p.t_ms, p.channel, repr(float(p.amplitude_ma)), repr(float(p.width_us)), p.shape])
        return buf.getvalue()


@dataclass(frozen=True)
class PulseTrainSpec:
    intra_packet_hz: float
    packet_hz: float
    packet_ms: float = 50.0
    amplitude_ma: float = 0.05
    pulse_width_us: float = 200.0
    shape: str = "biphasic"
    channels: tuple = (0,)

    def __post_init__(self):
        if not self.intra_packet_hz > 0:
            raise ValueError("intra_packet_hz must be > 0")
        if self.packet_hz < 0:
            raise ValueError("packet_hz must be >= 0")
        if not self.packet_ms > 0:
            raise ValueError("packet_ms must be > 0")
        if self.amplitude_ma < 0:
            raise ValueError("amplitude must be >= 0")
        if not self.pulse_width_us > 0:
            raise ValueError("pulse_width_us must be > 0")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")


# Tactile codes for the object-exploration task; packets sized to one 50 ms stimulation window.
REWARDED = PulseTrainSpec(intra_packet_hz=200.0, packet_hz=10.0, packet_ms=50.0)
UNREWARDED = PulseTrainSpec(intra_packet_hz=400.0, packet_hz=5.0, packet_ms=50.0)


@dataclass(frozen=True)
class FesParams:
    flexor_gain: float = 0.8
    flexor_threshold_hz: float = 24.0
    extensor_gain: float = 0.6
    extensor_threshold_hz: float = 12.0
    max_ma: float = 10.0

    def __post_init__(self):
        if self.flexor_gain < 0 or self.extensor_gain < 0:
            raise ValueError("gains must be >= 0")
        if not self.max_ma > 0:
            raise ValueError("max_ma must be > 0")


class Window(NamedTuple):
    start_ms: float
    end_ms: float
    kind: str  # "record" | "stimulate"


@dataclass(frozen=True)
class Schedule:
    windows: tuple[Window, ...]
    blanking: tuple[tuple[float, float], ...] = ()

    def kind_at(self, t_ms: float) -> Optional[str]:
        for w in self.windows:
            if w.start_ms <= t_ms < w.end_ms:
                return w.kind
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["start_ms", "end_ms", "kind"])
        for w in self.windows:
            writer.writerow([repr(float(w.start_ms)), repr(float(w.end_ms)), w.kind])
        return buf.getvalue()


class ChannelCalib(NamedTuple):
    gain: float
    offset: float
    amp_max: float


def _grid(phase_ms: float) -> int:
    return int(math.floor(phase_ms + 0.5))


def _restrict(pulses: Iterable[Pulse], schedule: Optional[Schedule]) -> list[Pulse]:
    if schedule is None:
        return list(pulses)
    return [p for p in pulses if schedule.kind_at(p.t_ms) == "stimulate"]


def packeted_pulse_train(
    spec: PulseTrainSpec, duration_ms: float, schedule: Optional[Schedule] = None
) -> PulseTrain:
    """Packets every 1000/packet_hz ms, pulses every 1000/intra_packet_hz ms inside.

    A ``packet_hz`` of 0 means a single packet at t = 0. With ``schedule``,
    the packet phase starts at the first stimulate window and pulses outside
    stimulate windows are dropped.
    """
    if duration_ms < 0:
        raise ValueError("duration must be >= 0")
    period = 1000.0 / spec.intra_packet_hz
    if period < 1.0:
        raise ValueError(
            f"{spec.intra_packet_hz} Hz needs {period:.3f} ms spacing; the 1 ms grid cannot resolve it"
        )
    n_inner = math.ceil(spec.packet_ms / period - 1e-9)
    if spec.packet_hz > 0:
        packet_period = 1000.0 / spec.packet_hz
        n_packets = math.ceil(duration_ms / packet_period - 1e-9)
    else:
        packet_period, n_packets = 0.0, (1 if duration_ms > 0 else 0)
    phase = 0.0
    if schedule is not None:
        starts = [w.start_ms for w in schedule.windows if w.kind == "stimulate"]
        phase = starts[0] if starts else 0.0
    pulses = []
    for k in range(n_packets):
        start = phase + k * packet_period
        for m in range(n_inner):
            t = _grid(start + m * period)
            if t >= duration_ms:
                break
            for ch in spec.channels:
                pulses.append(Pulse(t, int(ch), spec.amplitude_ma, spec.pulse_width_us, spec.shape))
    return PulseTrain(tuple(_restrict(pulses, schedule)), float(duration_ms))


def continuous_pulse_train(
    rate_hz: float,
    duration_ms: float,
    amplitude_ma: float,
    width_us: float,
    shape: str = "biphasic",
    channel: int = 0,
    schedule: Optional[Schedule] = None,
) -> PulseTrain:
    """Evenly spaced pulses from t = 0, rounded onto the 1 ms grid."""
    if not rate_hz > 0:
        raise ValueError("rate must be > 0")
    if shape not in SHAPES:
        raise ValueError(f"shape must be one of {SHAPES}")
    period = 1000.0 / rate_hz
    pulses = []
    k = 0
    while k * period < duration_ms:
        t = _grid(k * period)
        if t >= duration_ms:
            break
        pulses.append(Pulse(t, int(channel), float(amplitude_ma), float(width_us), shape))
        k += 1
    return PulseTrain(tuple(_restrict(pulses, schedule)), float(duration_ms))


def fes_currents(rate_hz: float, params: FesParams = FesParams()) -> tuple[float, float]:
    """Flexor and extensor currents (mA) for a firing rate."""
    if rate_hz < 0:
        raise ValueError("rate must be >= 0")
    flexor = min(params.max_ma, params.flexor_gain * max(0.0, rate_hz - params.flexor_threshold_hz))
    extensor = min(
        params.max_ma, params.extensor_gain * max(0.0, params.extensor_threshold_hz - rate_hz)
    )
    return flexor, extensor


def torque_to_amplitude(torque: float, calib: Sequence[ChannelCalib]) -> np.ndarray:
    """Linear torque-to-amplitude map per channel, clamped to [0, amp_max]."""
    if torque < 0:
        raise ValueError("torque must be >= 0")
    out = np.empty(len(calib))
    for i, c in enumerate(calib):
        if c.gain < 0:
            raise ValueError("calibration gains must be >= 0")
        out[i] = min(max(c.offset + c.gain * torque, 0.0), c.amp_max)
    return out


def interleave_schedule(duration_ms: float, record_ms: float = 50.0, stim_ms: float = 50.0) -> Schedule:
    """Alternating record/stimulate windows starting with record."""
    if not (record_ms > 0 and stim_ms > 0):
        raise ValueError("window lengths must be > 0")
    windows = []
    t, kind = 0.0, "record"
    while t < duration_ms:
        length = record_ms if kind == "record" else stim_ms
        end = min(t + length, duration_ms)
        windows.append(Window(t, end, kind))
        t, kind = end, ("stimulate" if kind == "record" else "record")
    return Schedule(tuple(windows))


def blanking_intervals(train: PulseTrain, blank_ms: float) -> tuple[tuple[float, float], ...]:
    """Union of the half-open intervals (t, t + blank_ms] after every pulse."""
    merged: list[list[float]] = []
    for t in sorted({p.t_ms for p in train.pulses}):
        lo, hi = float(t), float(t) + blank_ms
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


class BlankedSamples(NamedTuple):
    t_ms: np.ndarray
    valid: np.ndarray
    intervals: tuple


def apply_blanking(sample_times, train: PulseTrain, blank_ms: float = 10.0) -> BlankedSamples:
    """Mark samples with pulse < t <= pulse + blank_ms invalid."""
    if not 5.0 <= blank_ms <= 10.0:
        raise ValueError("blank_ms must lie in [5, 10] ms")
    t = np.asarray(sample_times, dtype=np.float64)
    intervals = blanking_intervals(train, blank_ms)
    valid = np.ones(t.shape, dtype=bool)
    for lo, hi in intervals:
        valid &= ~((t > lo) & (t <= hi))
    return BlankedSamples(t, valid, intervals)


def train_to_drive(train: PulseTrain, n_channels: int, dt_ms: float, n_bins: int) -> np.ndarray:
    """Per-bin drive (pulse count x amplitude) for the rate simulator."""
    drive = np.zeros((n_bins, n_channels))
    for p in train.pulses:
        b = int(p.t_ms // dt_ms)
        if 0 <= b < n_bins and 0 <= p.channel < n_channels:
            drive[b, p.channel] += p.amplitude_ma
    return drive


def movement_stimulation(
    scores, patterns: np.ndarray, calib: Sequence[ChannelCalib]
) -> tuple[int, np.ndarray]:
    """Activate the movement with the highest decoder output.

    ``patterns[k]`` is the calibrated electrode pattern (0..1 per channel) of
    movement k; ``calib[k]`` maps that class's decoder score to an intensity
    through a clamped linear function. Returns the class and channel amplitudes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    patterns = np.asarray(patterns, dtype=np.float64)
    if patterns.shape[0] != scores.size or len(calib) != scores.size:
        raise ValueError("one pattern and one calibration entry per class required")
    k = int(np.argmax(scores))
    c = calib[k]
    intensity = min(max(c.offset + c.gain * scores[k], 0.0), c.amp_max)
    return k, intensity * patterns[k]


# Surface FES for forearm movements: 50 Hz monophasic, 500 us pulses.
def fes_surface_train(duration_ms: float, amplitude_ma: float, channel: int = 0) -> PulseTrain:
    return continuous_pulse_train(50.0, duration_ms, amplitude_ma, 500.0, "monophasic", channel)


# Somatosensory feedback while holding an object: 300 Hz biphasic for up to 1 s.
def feedback_train(duration_ms: float, amplitude_ma: float, channel: int = 0) -> PulseTrain:
    return continuous_pulse_train(300.0, min(duration_ms, 1000.0), amplitude_ma, 200.0, "biphasic", channel)
