"""Experiment stages shared by the scenario runner, the CLI and the acceptance suite.

Each stage takes plain parameter blocks (see :mod:`.config`) and an experiment
seed. Sub-tasks get independent seeds through :func:`derive_seed`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from ..brainsim import BrainConfig, PlasticityParams, apply_lesion, default_brain_config, init_state
from ..codec import (
    KalmanBelief,
    KalmanModel,
    TriggerResult,
    band_power_trigger,
    kalman_step,
    lda_fit,
    lda_predict,
    multiclass_fit,
    multiclass_predict_batch,
)
from ..coproc import (
    CoadaptReport,
    CoprocConfig,
    CoprocModel,
    EvalMetrics,
    NcpBatch,
    TaskDistribution,
    build_model,
    closed_loop_eval,
    coadaptation_session,
    emulator_r2,
    en_digest,
    init_emulator,
    init_ncp,
    ncp_path_grad_check,
    radial_tasks,
    sample_stim_dataset,
    train_emulator,
    train_ncp,
)
from ..coproc.dataset import StimSamplerSpec
from ..coproc.training import EpochRecord, SessionRecord
from ..diffnet import LayerSpec, NetParams, SquaredError, grad_check, init_net, init_opt
from ..plasticity import (
    BackgroundDrive,
    ConditioningProtocol,
    ShiftReport,
    conditioning_pair,
    opposite_targets,
)
from ..rng import derive_seed, make_rng
from ..stimcode import (
    REWARDED,
    UNREWARDED,
    FesParams,
    PulseTrain,
    Schedule,
    apply_blanking,
    continuous_pulse_train,
    fes_currents,
    interleave_schedule,
    packeted_pulse_train,
)
from .config import SCHEMA

GRAD_TOLERANCE = 1e-4
FES_RATES = (0.0, 12.0, 24.0, 30.0, 40.0, 100.0)

_BRAIN_ARGS = ("n_a", "n_b", "intent_gain", "pathway_gain", "recurrent_gain", "readout_gain", "bias_a", "bias_b")


def defaults(block: str) -> dict:
    """Copy of a block's default values."""
    return {k: (list(v) if isinstance(v, list) else v) for k, v in SCHEMA[block].items()}


# --------------------------------------------------------------------------
# brain and model construction
# --------------------------------------------------------------------------


def brain_config(block: dict, seed: Optional[int] = None) -> BrainConfig:
    """Brain described by a [brain] block; with ``seed`` the A->B pathway is lesioned."""
    args = {k: block[k] for k in _BRAIN_ARGS}
    overrides = {k: v for k, v in block.items() if k not in _BRAIN_ARGS and k != "lesion_fraction"}
    cfg = default_brain_config(**args, **overrides)
    if seed is not None:
        cfg = apply_lesion(cfg, block["lesion_fraction"], derive_seed(seed, "lesion"))
    return cfg


def coproc_config(emulator: dict, ncp: dict) -> CoprocConfig:
    return CoprocConfig(
        s_max=emulator["s_max"],
        hidden=ncp["hidden"],
        hold_bins=emulator["hold_bins"],
        alpha=ncp["alpha"],
        beta=ncp["beta"],
        gamma=ncp["gamma"],
    )


def eval_tasks(ncp: dict) -> list:
    return radial_tasks(ncp["eval_directions"], ncp["target_radius"], ncp["task_duration_ms"], ncp["success_radius"])


# --------------------------------------------------------------------------
# decoders
# --------------------------------------------------------------------------


def random_kalman_system(rng: np.random.Generator, n: int, m: int) -> tuple[KalmanModel, KalmanBelief]:
    """Stable random linear-Gaussian system and a random prior."""
    a = rng.normal(size=(n, n))
    a *= 0.9 / max(1.0, float(np.max(np.abs(np.linalg.eigvals(a)))))
    b = rng.normal(size=(m, n))
    lq = rng.normal(size=(n, n))
    lr = rng.normal(size=(m, m))
    q = 0.1 * lq @ lq.T + 0.05 * np.eye(n)
    r = 0.2 * lr @ lr.T + 0.05 * np.eye(m)
    lp = rng.normal(size=(n, n))
    belief = KalmanBelief(rng.normal(size=n), lp @ lp.T + 0.1 * np.eye(n))
    return KalmanModel(a, b, q, r), belief


def joint_gaussian_posterior(model: KalmanModel, belief: KalmanBelief, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior of the last state given all observations, by conditioning
    the joint Gaussian of (x_0, w_1..w_T, v_1..v_T) in one solve."""
    n, m, t = model.state_dim, model.obs_dim, len(ys)
    dim = n + t * n + t * m
    mu = np.zeros(dim)
    mu[:n] = belief.mean
    sigma = np.zeros((dim, dim))
    sigma[:n, :n] = belief.cov
    for k in range(t):
        i = n + k * n
        sigma[i : i + n, i : i + n] = model.q_cov
        j = n + t * n + k * m
        sigma[j : j + m, j : j + m] = model.r_cov
    # x_k = A^k x_0 + sum_{i<=k} A^{k-i} w_i; y_k = B x_k + v_k; all linear in the latent vector.
    lx = np.zeros((t, n, dim))
    x_map = np.zeros((n, dim))
    x_map[:, :n] = np.eye(n)
    for k in range(t):
        x_map = model.dyn_a @ x_map
        x_map[:, n + k * n : n + (k + 1) * n] += np.eye(n)
        lx[k] = x_map
    h = np.zeros((t * m, dim))
    for k in range(t):
        h[k * m : (k + 1) * m] = model.meas_b @ lx[k]
        h[k * m : (k + 1) * m, n + t * n + k * m : n + t * n + (k + 1) * m] = np.eye(m)
    lt = lx[-1]
    s = h @ sigma @ h.T
    cross = lt @ sigma @ h.T
    resid = np.concatenate(ys) - h @ mu
    mean = lt @ mu + cross @ np.linalg.solve(s, resid)
    cov = lt @ sigma @ lt.T - cross @ np.linalg.solve(s, cross.T)
    return mean, cov


def kalman_oracle_error(seed: int, n_systems: int = 20, steps: int = 5) -> float:
    """Worst absolute gap between recursive filtering and batch conditioning
    over random systems with 2-4 state and 2-5 observation dimensions."""
    rng = make_rng(seed, "kalman-oracle")
    worst = 0.0
    for _ in range(n_systems):
        n, m = int(rng.integers(2, 5)), int(rng.integers(2, 6))
        model, prior = random_kalman_system(rng, n, m)
        x = rng.multivariate_normal(prior.mean, prior.cov)
        ys = []
        for _ in range(steps):
            x = model.dyn_a @ x + rng.multivariate_normal(np.zeros(n), model.q_cov)
            ys.append(model.meas_b @ x + rng.multivariate_normal(np.zeros(m), model.r_cov))
        belief = prior
        for y in ys:
            belief = kalman_step(model, belief, y)
        mean, cov = joint_gaussian_posterior(model, prior, ys)
        worst = max(worst, float(np.max(np.abs(belief.mean - mean))), float(np.max(np.abs(belief.cov - cov))))
    return worst


def polygon_classes(rng: np.random.Generator, n: int, n_classes: int, separation: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance 2D Gaussians on a regular polygon, adjacent centres ``separation`` apart.

    ``separation`` 0 gives identical class means.
    """
    y = rng.integers(n_classes, size=n)
    radius = separation / (2.0 * np.sin(np.pi / n_classes))
    ang = 2 * np.pi * y / n_classes
    x = radius * np.c_[np.cos(ang), np.sin(ang)] + rng.normal(size=(n, 2))
    return x, y


def decoder_accuracies(seed: int, block: dict) -> dict:
    """Held-out accuracy of LDA (two classes) and the multiclass decoder,
    on separated and on identical-mean classes."""
    out = {}
    sep = block["separation_sigma"]
    for label, separation in (("separated", sep), ("identical", 0.0)):
        rng = make_rng(seed, f"lda-{label}")
        x, y = polygon_classes(rng, block["n_train"], 2, separation)
        xt, yt = polygon_classes(rng, block["n_test"], 2, separation)
        out[f"lda_{label}"] = float(np.mean(lda_predict(lda_fit(x, y), xt) == yt))
        rng = make_rng(seed, f"multiclass-{label}")
        k = block["n_classes"]
        x, y = polygon_classes(rng, block["n_train"], k, separation)
        xt, yt = polygon_classes(rng, block["n_test"], k, separation)
        model = multiclass_fit(x, y, n_classes=k)
        out[f"multiclass_{label}"] = float(np.mean(multiclass_predict_batch(model, xt) == yt))
    return out


class TriggerDemo(NamedTuple):
    drop_ms: float
    first_trigger_ms: float  # nan when nothing fired
    n_triggers: int
    result: TriggerResult


def trigger_demo(seed: int, block: dict) -> TriggerDemo:
    """10 Hz rhythm in noise whose amplitude halves three quarters of the way in."""
    fs = block["fs_hz"]
    n = int(round(block["signal_seconds"] * fs))
    t = np.arange(n) / fs
    drop_s = 0.75 * block["signal_seconds"]
    amp = np.where(t < drop_s, 1.0, 0.25)
    x = amp * np.sin(2 * np.pi * 10.0 * t) + 0.05 * make_rng(seed, "trigger-noise").standard_normal(n)
    res = band_power_trigger(x, fs, window_ms=block["window_ms"], drop_ratio=block["drop_ratio"])
    first = float(res.window_starts[res.triggers[0]] * 1000.0 / fs) if res.triggers.size else float("nan")
    return TriggerDemo(drop_s * 1000.0, first, int(res.triggers.size), res)


# --------------------------------------------------------------------------
# encoders
# --------------------------------------------------------------------------


def packet_structure(train: PulseTrain) -> tuple[int, float]:
    """Packet count and mean intra-packet spacing (ms) of a single-channel train."""
    t = np.unique(train.times())
    if t.size == 0:
        return 0, float("nan")
    gaps = np.diff(t)
    inner = gaps[gaps <= 10] if gaps.size else gaps
    n_packets = 1 + int(np.sum(gaps > 10))
    return n_packets, float(np.mean(inner)) if inner.size else float("nan")


def schedule_errors(schedule: Schedule, record_ms: float, stim_ms: float) -> int:
    """Windows that break strict record/stimulate alternation or their length."""
    errors = 0
    for i, w in enumerate(schedule.windows):
        kind = "record" if i % 2 == 0 else "stimulate"
        length = record_ms if kind == "record" else stim_ms
        last = i == len(schedule.windows) - 1
        if w.kind != kind or (w.end_ms - w.start_ms != length and not last):
            errors += 1
        if i and w.start_ms != schedule.windows[i - 1].end_ms:
            errors += 1
    return errors


def blanking_violations(train: PulseTrain, session_ms: float, blank_ms: float, step_ms: float = 0.1) -> int:
    """Valid samples on a fine grid that fall within ``blank_ms`` after a pulse."""
    samples = np.arange(int(round(session_ms / step_ms))) * step_ms
    valid = apply_blanking(samples, train, blank_ms).valid
    pulses = np.unique(train.times()).astype(float)
    if pulses.size == 0:
        return 0
    idx = np.searchsorted(pulses, samples, side="left") - 1  # last pulse strictly before each sample
    has = idx >= 0
    since = np.full(samples.shape, np.inf)
    since[has] = samples[has] - pulses[idx[has]]
    return int(np.sum(valid & (since <= blank_ms)))


@dataclass(frozen=True)
class EncodeDemo:
    rewarded: PulseTrain
    unrewarded: PulseTrain
    continuous: PulseTrain
    schedule: Schedule
    session_train: PulseTrain
    fes: tuple  # (rate, flexor mA, extensor mA)
    schedule_errors: int
    blanking_violations: int


def encode_demo(block: dict) -> EncodeDemo:
    d, session = block["duration_ms"], block["session_ms"]
    schedule = interleave_schedule(session, block["record_ms"], block["stim_ms"])
    session_train = packeted_pulse_train(REWARDED, session, schedule)
    fes = tuple((r,) + fes_currents(r, FesParams()) for r in FES_RATES)
    return EncodeDemo(
        rewarded=packeted_pulse_train(REWARDED, d),
        unrewarded=packeted_pulse_train(UNREWARDED, d),
        continuous=continuous_pulse_train(50.0, d, 1.0, 200.0),
        schedule=schedule,
        session_train=session_train,
        fes=fes,
        schedule_errors=schedule_errors(schedule, block["record_ms"], block["stim_ms"]),
        blanking_violations=blanking_violations(session_train, session, block["blank_ms"]),
    )


# --------------------------------------------------------------------------
# plasticity
# --------------------------------------------------------------------------


def conditioning_demo(seed: int, brain: dict, block: dict) -> tuple[ShiftReport, ShiftReport]:
    """Triggered conditioning and its shuffled-timing control on the intact brain."""
    cfg = brain_config(brain)
    targets = opposite_targets(cfg.n_a, cfg.n_b, block["source_unit"], block["target_offset_deg"], block["target_width"])
    protocol = ConditioningProtocol(
        block["source_unit"],
        targets,
        delay_ms=block["delay_ms"],
        stim_amplitude=block["stim_amplitude"],
        session_bins=block["session_bins"],
        stim_bins=block["stim_bins"],
    )
    plasticity = PlasticityParams(block["eta"], block["lambda_decay"], block["w_clip"], True)
    background = BackgroundDrive(
        seed=derive_seed(seed, "background"),
        burst_rate_hz=block["burst_rate_hz"],
        burst_bins=block["burst_bins"],
        burst_amplitude=block["burst_amplitude"],
    )
    state = init_state(cfg, derive_seed(seed, "conditioning"))
    return conditioning_pair(cfg, state, protocol, plasticity, background)


# --------------------------------------------------------------------------
# emulator, co-processor, co-adaptation
# --------------------------------------------------------------------------


class EmulatorResult(NamedTuple):
    cfg: BrainConfig
    en: NetParams
    history: list  # EpochRecord
    r2_validation: float
    r2_train: float


def emulator_stage(seed: int, brain: dict, block: dict) -> EmulatorResult:
    cfg = brain_config(brain, seed)
    data = sample_stim_dataset(
        cfg,
        derive_seed(seed, "emulator-data"),
        block["n_trials"],
        block["trial_bins"],
        sampler=StimSamplerSpec(s_max=block["s_max"]),
        hold_bins=block["hold_bins"],
        validation_fraction=block["validation_fraction"],
    )
    en = init_emulator(cfg.n_b, cfg.n_a, cfg.dt_ms / 1000.0, derive_seed(seed, "emulator-init"), block["hidden"])
    en, history, _ = train_emulator(
        data,
        en,
        block["epochs"],
        init_opt(en, "adam", block["step_size"]),
        s_max=block["s_max"],
        batch_size=block["batch_size"],
        seed=derive_seed(seed, "emulator-batches"),
    )
    return EmulatorResult(
        cfg, en, history, emulator_r2(en, data.split(True), block["s_max"]), emulator_r2(en, data.split(False), block["s_max"])
    )


class NcpResult(NamedTuple):
    model: CoprocModel
    history: list  # SessionRecord
    digest_before: str
    digest_after: str


def ncp_stage(seed: int, cfg: BrainConfig, en: NetParams, emulator: dict, block: dict) -> NcpResult:
    c = coproc_config(emulator, block)
    ncp = init_ncp(cfg.n_a, cfg.n_b, derive_seed(seed, "ncp-init"), c)
    model = build_model(en, ncp, cfg.n_b, c)
    before = en_digest(model.en)
    tasks = TaskDistribution(block["target_radius"], block["task_duration_ms"], block["success_radius"])
    model, history, _ = train_ncp(
        model,
        cfg,
        tasks,
        block["sessions"],
        init_opt(model.ncp, "adam", block["step_size"]),
        brain_seed=derive_seed(seed, "ncp-train"),
        trials_per_session=block["trials_per_session"],
        steps_per_session=block["steps_per_session"],
    )
    return NcpResult(model, history, before, en_digest(model.en))


class EvalResult(NamedTuple):
    ncp: EvalMetrics
    zero_stim: EvalMetrics
    random_stim: EvalMetrics


def evaluate(seed: int, cfg: BrainConfig, model: CoprocModel, block: dict) -> EvalResult:
    """NCP, zero-stim and energy-matched random-stim runs on one evaluation brain."""
    tasks = eval_tasks(block)
    brain_seed = derive_seed(seed, "eval")
    ncp = closed_loop_eval(model, cfg, brain_seed, tasks, "ncp")
    zero = closed_loop_eval(model, cfg, brain_seed, tasks, "zero_stim")
    rand = closed_loop_eval(model, cfg, brain_seed, tasks, "random_stim", target_energy=ncp.mean_stim_energy)
    return EvalResult(ncp, zero, rand)


class CoadaptResult(NamedTuple):
    report: CoadaptReport
    w_ba: np.ndarray
    digest_before: str
    digest_after: str


def coadapt_stage(seed: int, cfg: BrainConfig, model: CoprocModel, ncp: dict, block: dict) -> CoadaptResult:
    before = en_digest(model.en)
    plasticity = PlasticityParams(block["eta"], block["lambda_decay"], block["w_clip"], True)
    state = init_state(cfg, derive_seed(seed, "coadapt"))
    state, report = coadaptation_session(
        model, cfg, state, plasticity, eval_tasks(ncp), block["sessions"], eval_seed=derive_seed(seed, "eval")
    )
    return CoadaptResult(report, state.w_ba_current, before, en_digest(model.en))


# --------------------------------------------------------------------------
# gradient checks
# --------------------------------------------------------------------------

_GRAD_NETS = (
    ("dense-tanh", [("dense", 3, 8, "tanh"), ("dense", 8, 2, "identity")]),
    ("dense-relu", [("dense", 4, 16, "relu"), ("dense", 16, 3, "identity")]),
    ("dense-sigmoid", [("dense", 5, 10, "tanh"), ("dense", 10, 4, "bounded_sigmoid")]),
    ("dense-deep", [("dense", 3, 12, "tanh"), ("dense", 12, 12, "tanh"), ("dense", 12, 2, "identity")]),
    ("dense-wide", [("dense", 20, 60, "tanh"), ("dense", 60, 20, "identity")]),
    ("recurrent-tanh", [("recurrent", 3, 8, "tanh"), ("dense", 8, 2, "identity")]),
    ("recurrent-identity", [("recurrent", 4, 6, "identity"), ("dense", 6, 2, "tanh")]),
    ("recurrent-sigmoid", [("recurrent", 3, 5, "tanh"), ("dense", 5, 3, "bounded_sigmoid")]),
    ("recurrent-stacked", [("recurrent", 3, 8, "tanh"), ("recurrent", 8, 6, "tanh"), ("dense", 6, 2, "identity")]),
    ("recurrent-wide", [("recurrent", 16, 48, "tanh"), ("dense", 48, 16, "identity")]),
)


def grad_check_suite(seed: int = 0) -> list[tuple[str, int, float]]:
    """(name, parameter count, max relative error) for ten seeded networks
    and the co-processor path through a frozen emulator."""
    out = []
    for i, (name, layers) in enumerate(_GRAD_NETS):
        specs = [LayerSpec(f"l{j}", kind, a, b, act, scale=2.0) for j, (kind, a, b, act) in enumerate(layers)]
        net = init_net(specs, derive_seed(seed, f"grad-net-{i}"))
        rng = make_rng(seed, f"grad-data-{i}")
        x = rng.normal(size=(6, 3, net.input_dim))
        loss = SquaredError(rng.normal(size=(6, 3, net.output_dim)))
        out.append((name, net.n_params, grad_check(net, x, loss)))
    # Full-scale NCP outputs and a coarse integrator keep the loss sensitive to
    # every NCP parameter, so central differences are not swamped by roundoff.
    c = CoprocConfig(hidden=8, ncp_out_bias=0.0)
    en = init_emulator(4, 5, 0.1, derive_seed(seed, "grad-en"), hidden=8)
    ncp = init_ncp(5, 4, derive_seed(seed, "grad-ncp"), c)
    head = ncp.layers[-1]
    ncp = NetParams(ncp.layers[:-1] + (replace(head, weights=10.0 * head.weights),))
    model = build_model(en, ncp, 4, c)
    rng = make_rng(seed, "grad-ncp-data")
    batch = NcpBatch(rng.uniform(0, 40, (8, 3, 5)), rng.uniform(0, 40, (3, 5)), rng.normal(size=(3, 2)))
    out.append(("ncp-through-frozen-en", model.ncp.n_params, ncp_path_grad_check(model, batch)))
    return out


__all__ = [
    "CoadaptResult",
    "EmulatorResult",
    "EncodeDemo",
    "EpochRecord",
    "EvalResult",
    "GRAD_TOLERANCE",
    "NcpResult",
    "SessionRecord",
    "TriggerDemo",
    "blanking_violations",
    "brain_config",
    "coadapt_stage",
    "conditioning_demo",
    "coproc_config",
    "decoder_accuracies",
    "defaults",
    "emulator_stage",
    "encode_demo",
    "eval_tasks",
    "evaluate",
    "grad_check_suite",
    "joint_gaussian_posterior",
    "kalman_oracle_error",
    "ncp_stage",
    "packet_structure",
    "polygon_classes",
    "random_kalman_system",
    "schedule_errors",
    "trigger_demo",
]
