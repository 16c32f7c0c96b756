import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocoproc.stimcode import (
    REWARDED,
    UNREWARDED,
    ChannelCalib,
    FesParams,
    PulseTrain,
    PulseTrainSpec,
    apply_blanking,
    continuous_pulse_train,
    fes_currents,
    fes_surface_train,
    feedback_train,
    interleave_schedule,
    movement_stimulation,
    packeted_pulse_train,
    torque_to_amplitude,
    train_to_drive,
    Pulse,
)


def packets(times, gap=20):
    """Split sorted pulse times into packets separated by more than ``gap`` ms."""
    groups = [[times[0]]]
    for t in times[1:]:
        if t - groups[-1][-1] > gap:
            groups.append([t])
        else:
            groups[-1].append(t)
    return groups


# --- pulse trains ----------------------------------------------------------------


def test_rewarded_train_structure():
    train = packeted_pulse_train(REWARDED, 1000.0)
    groups = packets(list(train.times()))
    assert len(groups) == 10
    assert [g[0] for g in groups] == list(range(0, 1000, 100))
    for g in groups:
        assert len(g) == 10
        assert set(np.diff(g)) == {5}


def test_unrewarded_train_structure():
    train = packeted_pulse_train(UNREWARDED, 1000.0)
    groups = packets(list(train.times()))
    assert len(groups) == 5
    assert [g[0] for g in groups] == [0, 200, 400, 600, 800]
    for g in groups:
        gaps = np.diff(g)
        assert len(g) == 20  # 400 Hz over a 50 ms packet
        assert set(gaps) == {2, 3}
        assert all(a != b for a, b in zip(gaps, gaps[1:]))  # strictly alternating
        assert UNREWARDED.packet_ms / len(g) == 2.5
        assert abs(gaps.mean() - 2.5) <= 0.5 / len(gaps)


def test_zero_duration_is_empty():
    assert len(packeted_pulse_train(REWARDED, 0.0)) == 0
    assert len(continuous_pulse_train(50.0, 0.0, 1.0, 500.0)) == 0


def test_unresolvable_grid_rejected():
    with pytest.raises(ValueError):
        packeted_pulse_train(PulseTrainSpec(intra_packet_hz=2000.0, packet_hz=10.0), 100.0)


def test_multi_channel_packets():
    spec = PulseTrainSpec(200.0, 10.0, channels=(1, 4, 7))
    train = packeted_pulse_train(spec, 200.0)
    for ch in (1, 4, 7):
        assert len(train.times(ch)) == 20


def test_continuous_50hz():
    train = fes_surface_train(1000.0, 20.0)
    t = train.times()
    assert len(t) == 50
    assert set(np.diff(t)) == {20}
    assert all(p.shape == "monophasic" and p.width_us == 500.0 for p in train.pulses)


def test_continuous_300hz():
    train = feedback_train(1000.0, 0.06)
    assert len(train) == 300
    assert set(np.diff(train.times())) <= {3, 4}
    assert feedback_train(5000.0, 0.06).horizon_ms == 1000.0


def test_continuous_phase_origin():
    train = continuous_pulse_train(1.0, 500.0, 1.0, 100.0)
    assert list(train.times()) == [0]


@settings(max_examples=60, deadline=None)
@given(rate=st.floats(1.0, 1000.0), duration=st.integers(1000, 5000))
def test_long_run_rate_accuracy(rate, duration):
    train = continuous_pulse_train(rate, float(duration), 1.0, 100.0)
    assert abs(len(train) - rate * duration / 1000.0) <= 1.0
    t = train.times()
    assert np.all(np.diff(t) >= 1) and np.all(t < duration) and np.all(t >= 0)


# --- FES ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "rate, flexor, extensor",
    [
        (0.0, 0.0, 0.6 * 12.0),
        (12.0, 0.0, 0.0),
        (24.0, 0.0, 0.0),
        (30.0, 0.8 * 6.0, 0.0),
        (40.0, 10.0, 0.0),
        (100.0, 10.0, 0.0),
    ],
)
def test_fes_closed_form(rate, flexor, extensor):
    assert fes_currents(rate) == (flexor, extensor)


@settings(max_examples=200, deadline=None)
@given(rate=st.floats(0.0, 500.0))
def test_fes_bounds_and_exclusivity(rate):
    p = FesParams()
    f, e = fes_currents(rate, p)
    assert 0.0 <= f <= p.max_ma and 0.0 <= e <= p.max_ma
    assert f == 0.0 or e == 0.0


def test_fes_rejects_negative_rate():
    with pytest.raises(ValueError):
        fes_currents(-1.0)


# --- torque feedback ---------------------------------------------------------------


def test_torque_mapping():
    calib = [ChannelCalib(0.0, 0.0, 10.0), ChannelCalib(2.0, 1.0, 10.0)]
    assert np.array_equal(torque_to_amplitude(0.0, calib[:1]), [0.0])
    assert np.array_equal(torque_to_amplitude(3.0, calib[1:]), [7.0])
    assert np.array_equal(torque_to_amplitude(1e6, calib), [0.0, 10.0])


# --- schedule and blanking -------------------------------------------------------------


def test_schedule_200ms():
    sched = interleave_schedule(200.0)
    assert [tuple(w) for w in sched.windows] == [
        (0.0, 50.0, "record"),
        (50.0, 100.0, "stimulate"),
        (100.0, 150.0, "record"),
        (150.0, 200.0, "stimulate"),
    ]


def test_schedule_single_and_truncated():
    assert [tuple(w) for w in interleave_schedule(50.0).windows] == [(0.0, 50.0, "record")]
    last = interleave_schedule(130.0).windows[-1]
    assert tuple(last) == (100.0, 130.0, "record")


def test_blanking_single_pulse():
    train = PulseTrain((Pulse(60, 0, 1.0, 200.0, "biphasic"),), 200.0)
    t = np.arange(0, 100)
    res = apply_blanking(t, train, 10.0)
    assert set(t[~res.valid]) == set(range(61, 71))


def test_blanking_no_pulses():
    res = apply_blanking(np.arange(50), PulseTrain((), 50.0), 10.0)
    assert res.valid.all()


def test_blanking_merges_overlaps():
    train = PulseTrain(
        (Pulse(60, 0, 1.0, 200.0, "biphasic"), Pulse(65, 0, 1.0, 200.0, "biphasic")), 200.0
    )
    res = apply_blanking(np.arange(0, 100, 0.5), train, 10.0)
    assert res.intervals == ((60.0, 75.0),)
    invalid = res.t_ms[~res.valid]
    assert invalid.min() == 60.5 and invalid.max() == 75.0


@pytest.mark.parametrize("blank", [4.9, 10.5])
def test_blanking_range_enforced(blank):
    with pytest.raises(ValueError):
        apply_blanking([0.0], PulseTrain((), 1.0), blank)


def test_schedule_filtered_generators_stay_in_stim_windows():
    sched = interleave_schedule(2000.0)
    for train in (
        packeted_pulse_train(REWARDED, 2000.0, schedule=sched),
        packeted_pulse_train(UNREWARDED, 2000.0, schedule=sched),
        continuous_pulse_train(300.0, 2000.0, 1.0, 200.0, schedule=sched),
    ):
        assert len(train) > 0
        for p in train.pulses:
            assert sched.kind_at(p.t_ms) == "stimulate"


# --- misc ---------------------------------------------------------------------------------


def test_train_csv_header_and_rows():
    text = packeted_pulse_train(REWARDED, 100.0).to_csv().splitlines()
    assert text[0] == "t_ms,channel,amplitude_ma,width_us,shape"
    assert text[1] == "0,0,0.05,200.0,biphasic"
    assert len(text) == 11


def test_train_to_drive_aggregates_per_bin():
    train = packeted_pulse_train(PulseTrainSpec(300.0, 0.0, packet_ms=10.0, amplitude_ma=2.0), 10.0)
    drive = train_to_drive(train, 2, 10.0, 1)
    assert np.allclose(drive, [[6.0, 0.0]])  # three pulses x 2 mA


def test_movement_stimulation_argmax_and_intensity():
    patterns = np.eye(3)
    calib = [ChannelCalib(10.0, -1.0, 5.0)] * 3
    k, amps = movement_stimulation([0.1, 0.4, 0.2], patterns, calib)
    assert k == 1
    assert np.allclose(amps, [0.0, 3.0, 0.0])


def test_generators_deterministic():
    a = packeted_pulse_train(UNREWARDED, 1000.0)
    b = packeted_pulse_train(UNREWARDED, 1000.0)
    assert a == b
