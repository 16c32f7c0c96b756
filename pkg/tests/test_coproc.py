from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurocoproc.brainsim import (
    DISABLED,
    PlasticityParams,
    TaskSpec,
    apply_lesion,
    default_brain_config,
    init_state,
)
from neurocoproc.coproc import (
    COADAPT_PLASTICITY,
    CoprocConfig,
    CoprocModel,
    FrozenEmulatorError,
    NcpBatch,
    StimSamplerSpec,
    TaskDistribution,
    behaviour_loss,
    build_model,
    closed_loop_eval,
    coadaptation_session,
    emulator_r2,
    en_digest,
    fit_ncp_offline,
    init_emulator,
    init_ncp,
    ncp_forward,
    ncp_path_grad_check,
    radial_tasks,
    sample_stim_dataset,
    train_emulator,
    train_ncp,
)
from neurocoproc.diffnet import Layer, NetParams, NonFiniteError, init_opt, numeric_gradient
from neurocoproc.rng import make_rng


def small_model(seed=0, hidden=8, n_obs=16, n_stim=16, config=None):
    config = config or CoprocConfig(hidden=hidden)
    en = init_emulator(n_stim, n_obs, 0.01, seed, hidden=hidden)
    return build_model(en, init_ncp(n_obs, n_stim, seed, config), n_stim, config)


def constant_ncp(n_obs, n_stim, out_bias, s_max=5.0):
    """NCP whose output ignores its input: s_max * sigmoid(out_bias) per channel."""
    core = Layer("ncp_core", "recurrent", np.zeros((2, n_obs)), np.zeros(2), "tanh", np.zeros((2, 2)))
    out = Layer("ncp_out", "dense", np.zeros((n_stim, 2)), np.asarray(out_bias, float), "bounded_sigmoid", scale=s_max)
    return NetParams((core, out))


# --- dataset --------------------------------------------------------------------------


def test_dataset_shapes_and_bounds():
    cfg = default_brain_config()
    ds = sample_stim_dataset(cfg, 0, 3, 20)
    assert len(ds) == 3
    assert ds.stim.shape == (3, 20, 16) and ds.pos.shape == (3, 20, 2) and ds.context.shape == (3, 16)
    assert np.all((ds.stim >= 0) & (ds.stim <= 5.0))


def test_dataset_channel_variance_and_determinism():
    cfg = default_brain_config()
    ds = sample_stim_dataset(cfg, 1, 60, 20)
    assert np.all(ds.stim.reshape(-1, 16).var(axis=0) > 0)
    again = sample_stim_dataset(cfg, 1, 60, 20)
    assert np.array_equal(ds.pos, again.pos) and np.array_equal(ds.stim, again.stim)
    assert 0 < ds.validation.sum() <= 30


def test_dataset_validation():
    cfg = default_brain_config()
    with pytest.raises(ValueError):
        sample_stim_dataset(cfg, 0, 0, 10)
    with pytest.raises(ValueError):
        sample_stim_dataset(cfg, 0, 5, 10, validation_fraction=0.6)
    with pytest.raises(ValueError):
        StimSamplerSpec(p_zero=0.7, p_sweep=0.5)


# --- emulator ---------------------------------------------------------------------------


def test_zero_epochs_returns_initial_emulator():
    cfg = default_brain_config()
    ds = sample_stim_dataset(cfg, 0, 10, 10)
    en0 = init_emulator(16, 16, 0.01, 0, hidden=8)
    en, hist, _ = train_emulator(ds, en0, 0, init_opt(en0, "adam", 1e-3))
    assert en is en0 and len(hist) == 1
    assert en_digest(en) == en_digest(en0)


def test_linear_brain_linear_emulator_fits():
    cfg = default_brain_config(activation="identity", noise_std=0.0, obs_noise_std=0.0)
    ds = sample_stim_dataset(cfg, 3, 200, 30)
    en0 = init_emulator(16, 16, 0.01, 3, hidden=16, activation="identity")
    en, hist, _ = train_emulator(ds, en0, 40, init_opt(en0, "adam", 3e-3))
    assert hist[-1].train_loss < hist[0].train_loss
    assert emulator_r2(en, ds.split(True)) > 0.95


def test_default_brain_training_reduces_loss():
    cfg = apply_lesion(default_brain_config(), 0.8, 0)
    ds = sample_stim_dataset(cfg, 0, 60, 20)
    en0 = init_emulator(16, 16, 0.01, 0, hidden=8)
    en, hist, _ = train_emulator(ds, en0, 5, init_opt(en0, "adam", 3e-3))
    assert hist[-1].train_loss < hist[0].train_loss
    # The integrator is frozen and must survive training untouched.
    assert np.array_equal(en.layers[-1].weights, en0.layers[-1].weights)


def test_non_finite_emulator_loss_names_epoch():
    cfg = default_brain_config()
    ds = sample_stim_dataset(cfg, 0, 10, 10)
    bad = replace(ds, pos=np.full_like(ds.pos, np.nan))
    en0 = init_emulator(16, 16, 0.01, 0, hidden=4)
    with pytest.raises(NonFiniteError, match="epoch 1"):
        train_emulator(bad, en0, 3, init_opt(en0, "adam", 1e-3))


# --- loss and gradient path ----------------------------------------------------------


def test_behaviour_loss_terms_and_gradients():
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(4, 3, 2))
    stim = rng.random((4, 3, 5))
    tgt = rng.normal(size=(3, 2))
    loss, d_pos, d_stim = behaviour_loss(pos, stim, tgt, 1.0, 0.1, 1e-3)
    assert np.isclose(loss.total, loss.terminal_term + loss.path_term + loss.stim_energy_term)
    assert min(loss) >= 0
    num = numeric_gradient(
        lambda a: behaviour_loss(a["p"], a["s"], tgt, 1.0, 0.1, 1e-3)[0].total, {"p": pos, "s": stim}, 1e-6
    )
    assert np.allclose(num["p"], d_pos, atol=1e-8)
    assert np.allclose(num["s"], d_stim, atol=1e-8)


def test_ncp_path_gradient_matches_finite_differences():
    cfg = CoprocConfig(hidden=5, ncp_out_bias=0.0)
    en = init_emulator(3, 4, 0.01, 1, hidden=6)
    ncp = init_ncp(4, 3, 2, cfg)
    model = build_model(en, ncp, 3, cfg)
    rng = np.random.default_rng(0)
    batch = NcpBatch(rng.uniform(0, 40, (6, 2, 4)), rng.uniform(0, 40, (2, 4)), rng.normal(size=(2, 2)))
    assert ncp_path_grad_check(model, batch) < 1e-4


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), scale=st.floats(0.0, 1e4))
def test_stimulation_bounded(seed, scale):
    model = small_model(seed)
    w = model.ncp.named_arrays()
    rng = make_rng(seed, "test")
    ncp = model.ncp.with_arrays({k: v * rng.uniform(0, 100) for k, v in w.items()})
    obs = rng.normal(size=(5, 3, 16)) * scale
    stim = ncp_forward(replace(model, ncp=ncp), obs)
    assert np.all((stim >= 0) & (stim <= model.config.s_max))


def test_linear_ncp_matches_closed_form():
    alpha, beta, gamma = 1.0, 0.1, 0.5
    cfg = CoprocConfig(s_max=1.0, obs_scale=1.0, ctx_scale=1.0, alpha=alpha, beta=beta, gamma=gamma)
    en = NetParams((Layer("en_id", "dense", np.eye(2), np.zeros(2), "identity", trainable=False),))
    ncp = NetParams((Layer("lin", "dense", np.zeros((2, 3)), np.zeros(2), "identity"),))
    model = CoprocModel(ncp, en, en_digest(en), 2, 0, cfg)
    rng = np.random.default_rng(0)
    b = 40
    x = rng.normal(size=(b, 3))
    z = x @ rng.normal(size=(3, 2)) + 0.3 + 0.05 * rng.normal(size=(b, 2))
    batch = NcpBatch(x[None], np.zeros((b, 0)), z)
    # Oracle: per-sample loss (a+b)||Wx+c-z||^2 + g||Wx+c||^2; normal equations.
    u = np.c_[x, np.ones(b)]
    theta = np.linalg.solve((alpha + beta + gamma) * u.T @ u, (alpha + beta) * u.T @ z).T
    trained, _, losses = fit_ncp_offline(model, batch, 3000, init_opt(ncp, "adam", 1e-2))
    layer = trained.ncp.layers[0]
    got = np.c_[layer.weights, layer.bias]
    assert np.max(np.abs(got - theta)) < 1e-2
    assert losses[-1].total < losses[0].total


# --- NCP training ------------------------------------------------------------------------


def test_train_ncp_zero_sessions_identity():
    model = small_model()
    out, hist, _ = train_ncp(model, default_brain_config(), TaskDistribution(), 0, init_opt(model.ncp), 0)
    assert out is model and hist == []


def test_train_ncp_keeps_emulator_frozen():
    cfg = apply_lesion(default_brain_config(), 0.8, 0)
    model = small_model()
    before = en_digest(model.en)
    out, hist, _ = train_ncp(
        model, cfg, TaskDistribution(duration_ms=100.0), 2, init_opt(model.ncp, "adam", 1e-2), 0, trials_per_session=4
    )
    assert en_digest(out.en) == before == out.en_digest
    assert len(hist) == 2
    assert not np.array_equal(out.ncp.layers[-1].bias, model.ncp.layers[-1].bias)


def test_tampered_emulator_detected():
    model = small_model()
    en = model.en.with_arrays({"en_vel.bias": np.ones(2)})
    with pytest.raises(FrozenEmulatorError):
        replace(model, en=en).check_frozen()


def test_model_dimension_validation():
    model = small_model()
    with pytest.raises(ValueError):
        CoprocModel(model.ncp, model.en, model.en_digest, 15, 17)


# --- evaluation ------------------------------------------------------------------------


def test_full_lesion_zero_stim_stays_home():
    cfg = apply_lesion(default_brain_config(), 1.0, 0)
    m = closed_loop_eval(None, cfg, 0, radial_tasks(), "zero_stim")
    assert abs(m.mean_terminal_distance - 1.0) < 0.05
    assert m.mean_stim_energy == 0.0


def test_silent_ncp_equals_zero_stim():
    cfg = apply_lesion(default_brain_config(), 0.8, 0)
    model = small_model()
    silent = replace(model, ncp=constant_ncp(16, 16, np.full(16, -1000.0)))
    a = closed_loop_eval(silent, cfg, 4, radial_tasks(), "ncp")
    b = closed_loop_eval(None, cfg, 4, radial_tasks(), "zero_stim")
    assert np.array_equal(a.terminal_distances, b.terminal_distances)
    assert np.array_equal(a.final_positions, b.final_positions)
    assert a.mean_stim_energy == b.mean_stim_energy == 0.0


def test_reflected_targets_mirror_trajectories():
    cfg = default_brain_config(noise_std=0.0, obs_noise_std=0.0)
    tasks = radial_tasks(6)
    mirrored = [TaskSpec(-np.asarray(t.target_pos), t.duration_ms, t.success_radius) for t in tasks]
    a = closed_loop_eval(None, cfg, 0, tasks, "zero_stim")
    b = closed_loop_eval(None, cfg, 1, mirrored, "zero_stim")
    assert np.allclose(a.final_positions, -b.final_positions, atol=1e-9)
    assert np.isclose(a.mean_terminal_distance, b.mean_terminal_distance, atol=1e-9)


def test_evaluation_never_uses_emulator():
    cfg = apply_lesion(default_brain_config(), 0.8, 0)
    model = small_model(hidden=8)
    other = init_emulator(16, 16, 0.01, 99, hidden=3)
    swapped = CoprocModel(model.ncp, other, en_digest(other), 16, 16, model.config)
    a = closed_loop_eval(model, cfg, 2, radial_tasks(4), "ncp")
    b = closed_loop_eval(swapped, cfg, 2, radial_tasks(4), "ncp")
    assert np.array_equal(a.final_positions, b.final_positions)


def test_random_stim_energy_matched():
    cfg = default_brain_config()
    m = closed_loop_eval(None, cfg, 0, radial_tasks(), "random_stim", target_energy=3.0)
    assert np.isclose(m.mean_stim_energy, 3.0, rtol=1e-9)
    again = closed_loop_eval(None, cfg, 0, radial_tasks(), "random_stim", target_energy=3.0)
    assert np.array_equal(m.final_positions, again.final_positions)
    with pytest.raises(ValueError):
        closed_loop_eval(None, cfg, 0, radial_tasks(), "random_stim")
    with pytest.raises(ValueError):
        closed_loop_eval(None, cfg, 0, [], "zero_stim")


# --- co-adaptation ---------------------------------------------------------------------


def test_coadapt_zero_sessions_unchanged():
    cfg = apply_lesion(default_brain_config(), 0.8, 0)
    model = small_model()
    state = init_state(cfg, 0)
    out, rep = coadaptation_session(model, cfg, state, COADAPT_PLASTICITY, radial_tasks(2), 0)
    assert out is state
    assert rep.weight_change_norm == 0.0
    assert rep.pre_zero_stim_distance == rep.post_zero_stim_distance


def test_coadapt_disabled_plasticity_keeps_weights():
    cfg = apply_lesion(default_brain_config(), 0.8, 0)
    model = small_model()
    state = init_state(cfg, 0)
    out, rep = coadaptation_session(model, cfg, state, DISABLED, radial_tasks(2), 1)
    assert np.array_equal(out.w_ba_current, state.w_ba_current)
    assert rep.weight_change_norm == 0.0
    model.check_frozen()


def test_coadapt_weight_change_support():
    # Silent region B (no bias, no recurrence, no noise) and no A->B pathway:
    # only stimulated B units fire, so only their rows can potentiate.
    cfg = apply_lesion(
        default_brain_config(bias_b=0.0, recurrent_gain=0.0, noise_std=0.0, obs_noise_std=0.0), 1.0, 0
    )
    cfg = replace(cfg, w_bb=np.zeros((16, 16)))
    stim_on = np.full(16, -1000.0)
    stim_on[[2, 7, 11]] = 2.0
    model = replace(small_model(), ncp=constant_ncp(16, 16, stim_on))
    state = init_state(cfg, 0)
    plast = PlasticityParams(eta=1e-6, lambda_decay=0.0, w_clip=1.0, enabled=True)
    out, rep = coadaptation_session(model, cfg, state, plast, radial_tasks(2), 1)
    assert rep.stim_rows.tolist() == [2, 7, 11]
    assert np.flatnonzero(rep.row_change_norms > 0).tolist() == [2, 7, 11]
    model.check_frozen()
