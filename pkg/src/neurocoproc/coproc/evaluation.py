"""Closed-loop evaluation on the simulated brain and co-adaptation sessions."""

from __future__ import annotations

from dataclasses import replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ..brainsim import (
    DISABLED,
    BrainConfig,
    BrainState,
    PlasticityParams,
    TaskSpec,
    hold,
    init_state,
    run_trial,
    zero_policy,
)
from ..rng import make_rng
from .model import CoprocConfig, CoprocModel
from .training import NcpPolicy

POLICY_MODES = ("ncp", "zero_stim", "random_stim")
# Hebbian setting for co-adaptation on the default desk-scale brain: slow enough
# that the uniform part of raw-rate potentiation stays well below saturation.
COADAPT_PLASTICITY = PlasticityParams(eta=5e-8, lambda_decay=1e-5, w_clip=1.0, enabled=True)


class EvalMetrics(NamedTuple):
    mean_terminal_distance: float
    success_rate: float
    mean_stim_energy: float
    terminal_distances: np.ndarray
    final_positions: np.ndarray


class _Frames:
    def __init__(self, frames: np.ndarray):
        self.frames = frames
        self.t = 0

    def __call__(self, observed):
        f = self.frames[self.t]
        self.t += 1
        return f


def _random_frames(seed: int, n_bins: int, n_ch: int, energy: float, s_max: float) -> np.ndarray:
    """Uniform random frames rescaled so mean ||frame||^2 equals ``energy``."""
    u = make_rng(seed, "random-stim").random((n_bins, n_ch))
    base = float(np.mean(np.sum(u**2, axis=1)))
    frames = u * np.sqrt(energy / base) if base > 0 else u * 0.0
    return np.clip(frames, 0.0, s_max)


def closed_loop_eval(
    model: Optional[CoprocModel],
    cfg: BrainConfig,
    brain_seed: int,
    tasks: Sequence[TaskSpec],
    policy_mode: str,
    target_energy: Optional[float] = None,
    config: Optional[CoprocConfig] = None,
    state: Optional[BrainState] = None,
) -> EvalMetrics:
    """Run every task on the simulated brain (never the emulator).

    Tasks run back to back on one brain; each starts with a hold period and
    the hand at the origin. ``random_stim`` needs ``target_energy`` and
    delivers i.i.d. uniform frames scaled to exactly that mean energy
    (before clipping to ``s_max``).
    """
    if not tasks:
        raise ValueError("tasks must be non-empty")
    if policy_mode not in POLICY_MODES:
        raise ValueError(f"policy_mode must be one of {POLICY_MODES}")
    c = config or (model.config if model is not None else CoprocConfig())
    if policy_mode == "ncp" and model is None:
        raise ValueError("ncp mode needs a model")
    if policy_mode == "random_stim":
        if target_energy is None or target_energy < 0:
            raise ValueError("random_stim needs a target_energy >= 0")
        total_bins = sum(t.n_bins(cfg.dt_ms) for t in tasks)
        frames = _random_frames(brain_seed, total_bins, cfg.n_b, target_energy, c.s_max)
    state = init_state(cfg, brain_seed) if state is None else state
    dist, energy, finals, success = [], [], [], []
    offset = 0
    for task in tasks:
        state = hold(cfg, state, task, c.hold_bins)
        if policy_mode == "ncp":
            policy = NcpPolicy(model)
        elif policy_mode == "zero_stim":
            policy = zero_policy(cfg.n_b)
        else:
            n = task.n_bins(cfg.dt_ms)
            policy = _Frames(frames[offset : offset + n])
            offset += n
        traj, state = run_trial(cfg, state, task, policy, DISABLED)
        d = float(np.linalg.norm(traj.hand_pos[-1] - np.asarray(task.target_pos)))
        dist.append(d)
        success.append(d <= task.success_radius)
        finals.append(traj.hand_pos[-1])
        energy.append(np.sum(traj.stim**2, axis=1))
    dist_arr = np.array(dist)
    return EvalMetrics(
        float(dist_arr.mean()),
        float(np.mean(success)),
        float(np.mean(np.concatenate(energy))),
        dist_arr,
        np.array(finals),
    )


class CoadaptReport(NamedTuple):
    pre_zero_stim_distance: float
    post_zero_stim_distance: float
    weight_change_norm: float
    row_change_norms: np.ndarray
    stim_rows: np.ndarray  # B units that received stimulation at any bin
    sessions: int


def coadaptation_session(
    model: CoprocModel,
    cfg: BrainConfig,
    state: BrainState,
    plasticity: PlasticityParams,
    tasks: Sequence[TaskSpec],
    sessions: int,
    eval_seed: int = 10_000,
    eval_tasks: Optional[Sequence[TaskSpec]] = None,
) -> tuple[BrainState, CoadaptReport]:
    """Closed-loop NCP use with Hebbian plasticity in the brain.

    The NCP is held fixed; only the brain's A->B weights learn. Zero-stim
    performance (NCP removed) is measured before and after on a fresh brain
    carrying the current weights.
    """
    model.check_frozen()
    eval_tasks = list(tasks) if eval_tasks is None else list(eval_tasks)

    def zero_stim(weights):
        return closed_loop_eval(None, replace(cfg, w_ba=weights), eval_seed, eval_tasks, "zero_stim", config=model.config)

    w0 = state.w_ba_current.copy()
    pre = zero_stim(w0).mean_terminal_distance
    stimulated = np.zeros(cfg.n_b, dtype=bool)
    for _ in range(sessions):
        for task in tasks:
            state = hold(cfg, state, task, model.config.hold_bins)
            traj, state = run_trial(cfg, state, task, NcpPolicy(model), plasticity)
            stimulated |= np.any(traj.stim > 0, axis=0)
    model.check_frozen()
    post = zero_stim(state.w_ba_current).mean_terminal_distance if sessions > 0 else pre
    delta = state.w_ba_current - w0
    report = CoadaptReport(
        pre, post, float(np.linalg.norm(delta)), np.linalg.norm(delta, axis=1), np.flatnonzero(stimulated), sessions
    )
    return state, report
