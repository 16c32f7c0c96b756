"""Emulator fitting and co-processor training through the frozen emulator."""

from __future__ import annotations

from dataclasses import replace
from typing import NamedTuple, Optional

import numpy as np

from ..brainsim import DISABLED, BrainConfig, BrainState, PlasticityParams, TaskSpec, hold, init_state, run_trial
from ..diffnet import (
    GradSet,
    NetParams,
    NonFiniteError,
    OptState,
    clip_gradients,
    max_relative_error,
    net_backward,
    net_forward,
    numeric_gradient,
    opt_step,
)
from ..rng import make_rng
from .dataset import EmulatorDataset, TaskDistribution
from .model import CoprocModel, LossValue, behaviour_loss, en_digest, en_inputs


# --------------------------------------------------------------------------
# emulator
# --------------------------------------------------------------------------


class EpochRecord(NamedTuple):
    epoch: int
    train_loss: float
    validation_loss: float


def _en_io(ds: EmulatorDataset, s_max: float, ctx_scale: float) -> tuple[np.ndarray, np.ndarray]:
    stim = np.transpose(ds.stim, (1, 0, 2))
    return en_inputs(stim, ds.context, s_max, ctx_scale), np.transpose(ds.pos, (1, 0, 2))


def _mse(en: NetParams, x: np.ndarray, y: np.ndarray) -> float:
    if x.shape[1] == 0:
        return float("nan")
    pred, _ = net_forward(en, x)
    return float(np.mean((pred - y) ** 2))


def train_emulator(
    dataset: EmulatorDataset,
    en_init: NetParams,
    epochs: int,
    opt: OptState,
    s_max: float = 5.0,
    ctx_scale: float = 1.0 / 20.0,
    batch_size: int = 64,
    seed: int = 0,
    max_grad_norm: float = 10.0,
) -> tuple[NetParams, list[EpochRecord], OptState]:
    """Minimise mean squared trajectory error on the training split.

    History row ``e`` holds losses of the parameters after ``e`` epochs
    (row 0 is the initial network).
    """
    train, val = dataset.split(False), dataset.split(True)
    if len(train) == 0:
        raise ValueError("training split is empty")
    x_tr, y_tr = _en_io(train, s_max, ctx_scale)
    x_va, y_va = _en_io(val, s_max, ctx_scale)
    en = en_init
    history = [EpochRecord(0, _mse(en, x_tr, y_tr), _mse(en, x_va, y_va))]
    n = x_tr.shape[1]
    for epoch in range(1, epochs + 1):
        order = make_rng(seed, f"en-epoch-{epoch}").permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x_tr[:, idx], y_tr[:, idx]
            pred, _ = net_forward(en, xb)
            diff = pred - yb
            grads = net_backward(en, xb, None, 2.0 * diff / diff.size)
            if not np.isfinite(grads.norm()):
                raise NonFiniteError(f"non-finite emulator gradient in epoch {epoch}")
            en, opt = opt_step(en, clip_gradients(grads, max_grad_norm), opt)
        rec = EpochRecord(epoch, _mse(en, x_tr, y_tr), _mse(en, x_va, y_va))
        if not np.isfinite(rec.train_loss):
            raise NonFiniteError(f"non-finite emulator loss in epoch {epoch}")
        history.append(rec)
    return en, history, opt


def emulator_r2(en: NetParams, dataset: EmulatorDataset, s_max: float = 5.0, ctx_scale: float = 1.0 / 20.0) -> float:
    """1 - SSE / SST of predicted hand positions over every bin and axis."""
    x, y = _en_io(dataset, s_max, ctx_scale)
    pred, _ = net_forward(en, x)
    sst = float(np.sum((y - y.mean(axis=(0, 1))) ** 2))
    return 1.0 - float(np.sum((pred - y) ** 2)) / sst


# --------------------------------------------------------------------------
# co-processor
# --------------------------------------------------------------------------


class NcpBatch(NamedTuple):
    """Replayed closed-loop data: NCP inputs (T, B, n_obs), context (B, n_ctx), targets (B, 2)."""

    obs: np.ndarray
    context: np.ndarray
    targets: np.ndarray


def ncp_forward(model: CoprocModel, obs: np.ndarray) -> np.ndarray:
    stim, _ = net_forward(model.ncp, obs * model.config.obs_scale)
    return stim


def ncp_loss_and_grad(model: CoprocModel, batch: NcpBatch) -> tuple[LossValue, GradSet, np.ndarray]:
    """Loss of the emulator-predicted behaviour and its gradient w.r.t. NCP parameters.

    The error flows back through the emulator to its stimulation inputs and on
    into the NCP; emulator gradients are computed but never applied.
    """
    c = model.config
    x = batch.obs * c.obs_scale
    stim, _ = net_forward(model.ncp, x)
    en_in = en_inputs(stim, batch.context, c.s_max, c.ctx_scale)
    pos, _ = net_forward(model.en, en_in)
    loss, d_pos, d_stim = behaviour_loss(pos, stim, batch.targets, c.alpha, c.beta, c.gamma)
    g_en = net_backward(model.en, en_in, None, d_pos)
    d_stim = d_stim + g_en.inputs[..., : model.n_stim] / c.s_max
    return loss, net_backward(model.ncp, x, None, d_stim), stim


def ncp_path_grad_check(model: CoprocModel, batch: NcpBatch, eps: float = 1e-5) -> float:
    """Max relative error of NCP gradients through the NCP -> EN stack vs central differences."""
    if model.ncp.n_params > 5000:
        raise ValueError(f"NCP has {model.ncp.n_params} parameters; the check allows 5000")
    _, grads, _ = ncp_loss_and_grad(model, batch)

    def total(arrays):
        m = replace(model, ncp=model.ncp.with_arrays(arrays))
        return ncp_loss_and_grad(m, batch)[0].total

    numeric = numeric_gradient(total, model.ncp.named_arrays(), eps)
    return max_relative_error(grads.grads, numeric)


def fit_ncp_offline(
    model: CoprocModel, batch: NcpBatch, steps: int, opt: OptState, max_grad_norm: float = 10.0
) -> tuple[CoprocModel, OptState, list[LossValue]]:
    """Gradient steps on a fixed batch; only NCP parameters move."""
    model.check_frozen()
    losses = []
    ncp = model.ncp
    for _ in range(steps):
        loss, grads, _ = ncp_loss_and_grad(replace(model, ncp=ncp), batch)
        if not np.isfinite(loss.total):
            raise NonFiniteError("non-finite co-processor loss")
        losses.append(loss)
        ncp, opt = opt_step(ncp, clip_gradients(grads, max_grad_norm), opt)
    out = replace(model, ncp=ncp)
    out.check_frozen()
    return out, opt, losses


class NcpPolicy:
    """Stateful closed-loop policy: one NCP step per bin, hidden state carried over."""

    def __init__(self, model: CoprocModel):
        self.ncp = model.ncp
        self.scale = model.config.obs_scale
        self.hidden = None
        self.inputs: list[np.ndarray] = []

    def __call__(self, observed: np.ndarray) -> np.ndarray:
        x = np.asarray(observed, dtype=np.float64)
        self.inputs.append(x)
        out, self.hidden = net_forward(self.ncp, x[None] * self.scale, self.hidden)
        return out[0]


class Rollout(NamedTuple):
    batch: NcpBatch
    terminal_distance: np.ndarray
    stim_energy: np.ndarray
    state: BrainState


def rollout_ncp(
    model: CoprocModel,
    cfg: BrainConfig,
    state: BrainState,
    tasks: list[TaskSpec],
    plasticity: PlasticityParams = DISABLED,
) -> Rollout:
    """Run the NCP closed loop on the simulated brain, recording what it observed."""
    obs, ctx, dist, energy = [], [], [], []
    for task in tasks:
        state = hold(cfg, state, task, model.config.hold_bins)
        ctx.append(state.observed.copy())
        policy = NcpPolicy(model)
        traj, state = run_trial(cfg, state, task, policy, plasticity)
        obs.append(np.array(policy.inputs))
        dist.append(float(np.linalg.norm(traj.hand_pos[-1] - task.target_pos)))
        energy.append(float(np.mean(np.sum(traj.stim**2, axis=1))))
    lengths = {o.shape[0] for o in obs}
    if len(lengths) != 1:
        raise ValueError("tasks in one rollout must share a duration")
    batch = NcpBatch(np.stack(obs, axis=1), np.array(ctx), np.array([t.target_pos for t in tasks]))
    return Rollout(batch, np.array(dist), np.array(energy), state)


class SessionRecord(NamedTuple):
    session: int
    emulator_loss: float
    terminal_distance: float
    stim_energy: float


def train_ncp(
    model: CoprocModel,
    cfg: BrainConfig,
    tasks: TaskDistribution,
    sessions: int,
    opt: OptState,
    brain_seed: int,
    trials_per_session: int = 16,
    steps_per_session: int = 5,
) -> tuple[CoprocModel, list[SessionRecord], OptState]:
    """On-policy training: each session rolls the current NCP out on the brain,
    then takes gradient steps through the frozen emulator on the replayed data."""
    model.check_frozen()
    recorded = model.en_digest
    if sessions <= 0:
        return model, [], opt
    state = init_state(cfg, brain_seed)
    rng = make_rng(brain_seed, "ncp-tasks")
    history = []
    for s in range(sessions):
        roll = rollout_ncp(model, cfg, state, tasks.sample(rng, trials_per_session))
        state = roll.state
        model, opt, losses = fit_ncp_offline(model, roll.batch, steps_per_session, opt)
        history.append(
            SessionRecord(s, losses[0].total, float(roll.terminal_distance.mean()), float(roll.stim_energy.mean()))
        )
    if en_digest(model.en) != recorded:
        model.check_frozen()
    return model, history, opt
