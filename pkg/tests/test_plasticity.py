from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocoproc.brainsim import (
    DISABLED,
    BrainConfig,
    PlasticityParams,
    apply_lesion,
    default_brain_config,
    init_state,
)
from neurocoproc.plasticity import (
    CONDITIONING_PLASTICITY,
    BackgroundDrive,
    ConditioningProtocol,
    detect_crossings,
    measure_shift,
    opposite_targets,
    run_conditioning,
)


class FixedDrive:
    """Deterministic drive used for hand traces."""

    def __init__(self, drive_a, drive_b, seed=0):
        self.a = np.asarray(drive_a, dtype=float)
        self.b = np.asarray(drive_b, dtype=float)
        self.seed = seed

    def drives(self, cfg, n_bins):
        return self.a[:n_bins], self.b


def tiny_config(**kw):
    base = dict(
        n_a=2,
        n_b=2,
        w_aa=np.zeros((2, 2)),
        w_bb=np.zeros((2, 2)),
        w_ba=np.zeros((2, 2)),
        intent_proj=np.zeros((2, 2)),
        readout_g=np.eye(2),
        bias_a=np.zeros(2),
        bias_b=np.zeros(2),
        noise_std=0.0,
        obs_noise_std=0.0,
    )
    base.update(kw)
    return BrainConfig(**base)


def short_session(**kw):
    cfg = default_brain_config()
    proto = ConditioningProtocol(0, opposite_targets(16, 16, 0), session_bins=kw.pop("bins", 600), **kw)
    return cfg, proto


@pytest.mark.parametrize("delay_ms, bins", [(0.0, 1), (7.5, 1), (10.0, 1), (10.5, 2), (15.0, 2), (20.0, 2)])
def test_delay_quantization(delay_ms, bins):
    assert ConditioningProtocol(0, (1,), delay_ms=delay_ms).delay_bins(10.0) == bins


def test_detect_crossings():
    trace = np.array([0.0, 60.0, 70.0, 40.0, 50.0, 49.0, 80.0])
    assert detect_crossings(trace, 50.0).tolist() == [1, 4, 6]
    assert detect_crossings(trace[1:], 50.0, initial=55.0).tolist() == [3, 5]
    assert detect_crossings(trace[1:], 50.0, initial=0.0).tolist() == [0, 3, 5]


def test_two_bin_hand_trace():
    cfg = tiny_config()
    state = init_state(cfg, 0)
    eta = 1e-3
    plast = PlasticityParams(eta=eta, lambda_decay=0.0, w_clip=10.0, enabled=True)
    drive = FixedDrive([[300.0, 0.0], [0.0, 0.0]], np.zeros(2))
    proto = ConditioningProtocol(0, (1,), detect_threshold_hz=15.0, stim_amplitude=4.0, session_bins=2, stim_bins=1)
    res = run_conditioning(cfg, state, proto, plast, drive)
    # bin 0: r_a = 0.2 * min(300, 100) = 20 crosses 15; r_b = 0, no change.
    # bin 1: stim 4 * coupling 5 = 20 Hz input to B1 -> r_b1 = 4; pre(t-1) = 20.
    assert res.stim_bins.tolist() == [1]
    assert res.stim_count == 1
    expected = np.zeros((2, 2))
    expected[1, 0] = eta * 4.0 * 20.0
    assert np.allclose(res.state.w_ba_current, expected, atol=1e-15)


def test_unreachable_threshold_changes_weights_only_by_decay():
    cfg = default_brain_config(noise_std=0.0, obs_noise_std=0.0)
    state = init_state(cfg, 0)
    state = replace(state, r_a=np.zeros(16), r_b=np.zeros(16), observed=np.zeros(16))
    lam = 1e-3
    plast = PlasticityParams(eta=1e-4, lambda_decay=lam, w_clip=1.0, enabled=True)
    proto = ConditioningProtocol(0, (4,), detect_threshold_hz=2 * cfg.rate_max, session_bins=50)
    res = run_conditioning(cfg, state, proto, plast, BackgroundDrive(burst_amplitude=0.0))
    assert res.stim_count == 0
    expected = cfg.w_ba.copy()
    for _ in range(50):
        expected = expected - lam * expected
    assert np.allclose(res.state.w_ba_current, expected, rtol=0, atol=1e-15)


def test_disabled_plasticity_leaves_weights():
    cfg, proto = short_session(bins=300)
    state = init_state(cfg, 1)
    res = run_conditioning(cfg, state, proto, DISABLED, BackgroundDrive(seed=1))
    assert np.array_equal(res.state.w_ba_current, state.w_ba_current)


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 1000))
def test_shuffled_control_is_dose_matched(seed):
    cfg, proto = short_session(bins=400)
    state = init_state(cfg, seed)
    bg = BackgroundDrive(seed=seed, burst_rate_hz=2.0)
    a = run_conditioning(cfg, state, proto, CONDITIONING_PLASTICITY, bg)
    b = run_conditioning(cfg, state, replace(proto, control_mode="shuffled_timing"), CONDITIONING_PLASTICITY, bg)
    assert a.stim_count == b.stim_count
    assert a.stim_count > 0


def test_triggered_stims_follow_crossings():
    cfg, proto = short_session(bins=400)
    bg = BackgroundDrive(seed=3, burst_rate_hz=2.0)
    res = run_conditioning(cfg, init_state(cfg, 3), proto, CONDITIONING_PLASTICITY, bg)
    assert res.stim_count > 0
    assert np.all(np.diff(res.stim_bins) > 0)
    assert np.all(res.stim_bins >= 1)


def test_run_is_deterministic():
    cfg, proto = short_session(bins=200)
    bg = BackgroundDrive(seed=2, burst_rate_hz=2.0)
    a = run_conditioning(cfg, init_state(cfg, 2), proto, CONDITIONING_PLASTICITY, bg)
    b = run_conditioning(cfg, init_state(cfg, 2), proto, CONDITIONING_PLASTICITY, bg)
    assert np.array_equal(a.state.w_ba_current, b.state.w_ba_current)
    assert np.array_equal(a.stim_bins, b.stim_bins)


@pytest.mark.parametrize("src, tgt", [(16, (1,)), (0, (16,)), (-1, (1,))])
def test_invalid_indices(src, tgt):
    cfg = default_brain_config()
    proto = ConditioningProtocol(src, tgt, session_bins=10)
    with pytest.raises(IndexError):
        run_conditioning(cfg, init_state(cfg, 0), proto, CONDITIONING_PLASTICITY)


def test_protocol_validation():
    with pytest.raises(ValueError):
        ConditioningProtocol(0, (1,), delay_ms=-1.0)
    with pytest.raises(ValueError):
        ConditioningProtocol(0, (1,), detect_threshold_hz=0.0)
    with pytest.raises(ValueError):
        ConditioningProtocol(0, (1,), session_bins=0)
    with pytest.raises(ValueError):
        ConditioningProtocol(0, (1,), control_mode="sham")


# --- measure_shift --------------------------------------------------------------------


def test_shift_identity_is_zero():
    cfg = default_brain_config()
    state = init_state(cfg, 0)
    proto = ConditioningProtocol(0, opposite_targets(16, 16, 0))
    rep = measure_shift(cfg, state, state, proto)
    assert rep.cosine_gain == 0.0
    assert not rep.zero_response
    assert np.isclose(np.linalg.norm(rep.pre_direction), 1.0)


def test_shift_boosted_target_rows():
    cfg = default_brain_config()
    state = init_state(cfg, 0)
    targets = opposite_targets(16, 16, 0)
    w = state.w_ba_current.copy()
    w[list(targets), 0] += 0.1
    post = replace(state, w_ba_current=w)
    rep = measure_shift(cfg, state, post, ConditioningProtocol(0, targets))
    assert rep.cosine_gain > 0
    assert -2.0 <= rep.cosine_gain <= 2.0


def test_shift_full_lesion_flags_zero_response():
    cfg = apply_lesion(default_brain_config(), 1.0, 0)
    state = init_state(cfg, 0)
    rep = measure_shift(cfg, state, state, ConditioningProtocol(0, (4,)))
    assert rep.zero_response
    assert np.array_equal(rep.pre_direction, np.zeros(2))


def test_opposite_targets_wraps():
    assert opposite_targets(16, 16, 0) == (3, 4, 5)
    assert opposite_targets(16, 16, 14, width=1) == (1, 2, 3)
