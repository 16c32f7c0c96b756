"""Open-loop stimulation datasets for emulator training."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..brainsim import BrainConfig, TaskSpec, hold, init_state, run_trial
from ..rng import make_rng


@dataclass(frozen=True)
class StimSamplerSpec:
    """Mixture of random stimulation sequences.

    Each trial is silent with probability ``p_zero``, a single-channel
    amplitude sweep with probability ``p_sweep``, and otherwise smoothed noise
    on a random subset of channels (each active with ``p_active``).
    """

    s_max: float = 5.0
    p_zero: float = 0.1
    p_sweep: float = 0.2
    p_active: float = 0.5
    smooth: float = 0.7  # AR(1) coefficient of the noise

    def __post_init__(self):
        if not self.s_max > 0:
            raise ValueError("s_max must be > 0")
        if not (0 <= self.p_zero and 0 <= self.p_sweep and self.p_zero + self.p_sweep <= 1):
            raise ValueError("p_zero and p_sweep must be probabilities summing to <= 1")
        if not 0 < self.p_active <= 1 or not 0 <= self.smooth < 1:
            raise ValueError("p_active in (0, 1], smooth in [0, 1)")

    def sample(self, rng: np.random.Generator, n_bins: int, n_ch: int) -> np.ndarray:
        u = rng.random()
        out = np.zeros((n_bins, n_ch))
        if u < self.p_zero:
            return out
        if u < self.p_zero + self.p_sweep:
            ch = rng.integers(n_ch)
            lo, hi = rng.uniform(0, self.s_max, 2)
            out[:, ch] = np.linspace(lo, hi, n_bins)
            return out
        active = rng.random(n_ch) < self.p_active
        level = rng.uniform(0, self.s_max, n_ch)
        spread = rng.uniform(0, 0.5 * self.s_max, n_ch)
        eps = rng.standard_normal((n_bins, n_ch))
        noise = np.empty_like(eps)
        noise[0] = eps[0]
        gain = np.sqrt(1 - self.smooth**2)
        for t in range(1, n_bins):
            noise[t] = self.smooth * noise[t - 1] + gain * eps[t]
        out = np.clip(level + spread * noise, 0.0, self.s_max)
        return out * active


@dataclass(frozen=True)
class TaskDistribution:
    """Reach targets on a circle; ``n_directions`` None draws continuous angles."""

    radius: float = 1.0
    duration_ms: float = 500.0
    success_radius: float = 0.2
    n_directions: Optional[int] = None

    def sample(self, rng: np.random.Generator, n: int) -> list[TaskSpec]:
        if self.n_directions is None:
            angles = rng.uniform(0, 2 * np.pi, n)
        else:
            angles = 2 * np.pi * rng.integers(self.n_directions, size=n) / self.n_directions
        return [self.task(a) for a in angles]

    def task(self, angle: float) -> TaskSpec:
        target = self.radius * np.array([np.cos(angle), np.sin(angle)])
        return TaskSpec(target, self.duration_ms, self.success_radius)


def radial_tasks(n: int = 8, radius: float = 1.0, duration_ms: float = 500.0, success_radius: float = 0.2) -> list[TaskSpec]:
    dist = TaskDistribution(radius, duration_ms, success_radius)
    return [dist.task(2 * np.pi * k / n) for k in range(n)]


@dataclass(frozen=True, eq=False)
class EmulatorDataset:
    """Per-trial context (N, n_a), stimulation (N, T, n_b), positions (N, T, 2)."""

    context: np.ndarray
    stim: np.ndarray
    pos: np.ndarray
    targets: np.ndarray
    validation: np.ndarray  # bool (N,)

    def __post_init__(self):
        n = self.context.shape[0]
        if not (self.stim.shape[0] == self.pos.shape[0] == self.targets.shape[0] == self.validation.shape[0] == n):
            raise ValueError("dataset fields disagree on trial count")
        if self.stim.shape[1] != self.pos.shape[1]:
            raise ValueError("stimulation and trajectory lengths differ")

    def __len__(self) -> int:
        return self.context.shape[0]

    def split(self, validation: bool) -> "EmulatorDataset":
        m = self.validation == validation
        return EmulatorDataset(self.context[m], self.stim[m], self.pos[m], self.targets[m], self.validation[m])


class _Replay:
    """Policy that plays back a fixed stimulation sequence."""

    def __init__(self, seq: np.ndarray):
        self.seq = seq
        self.t = 0

    def __call__(self, observed):
        s = self.seq[self.t]
        self.t += 1
        return s


def sample_stim_dataset(
    cfg: BrainConfig,
    brain_seed: int,
    n_trials: int,
    trial_bins: int,
    sampler: StimSamplerSpec = StimSamplerSpec(),
    tasks: TaskDistribution = TaskDistribution(),
    hold_bins: int = 10,
    validation_fraction: float = 0.2,
) -> EmulatorDataset:
    """Run random stimulation open loop (no plasticity) and record behaviour.

    Trials run back to back on one simulated brain; each is preceded by a
    hold period whose final observation is the trial's context.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if not 0 < validation_fraction <= 0.5:
        raise ValueError("validation_fraction must lie in (0, 0.5]")
    rng = make_rng(brain_seed, "stim-dataset")
    task_list = tasks.sample(rng, n_trials)
    task_list = [TaskSpec(t.target_pos, trial_bins * cfg.dt_ms, t.success_radius) for t in task_list]
    state = init_state(cfg, brain_seed)
    ctx = np.empty((n_trials, cfg.n_a))
    stim = np.empty((n_trials, trial_bins, cfg.n_b))
    pos = np.empty((n_trials, trial_bins, 2))
    for i, task in enumerate(task_list):
        seq = sampler.sample(rng, trial_bins, cfg.n_b)
        state = hold(cfg, state, task, hold_bins)
        ctx[i] = state.observed
        traj, state = run_trial(cfg, state, task, _Replay(seq))
        stim[i], pos[i] = traj.stim, traj.hand_pos
    n_val = max(1, int(round(validation_fraction * n_trials))) if n_trials > 1 else 0
    validation = np.zeros(n_trials, dtype=bool)
    validation[make_rng(brain_seed, "stim-dataset-split").permutation(n_trials)[:n_val]] = True
    targets = np.array([t.target_pos for t in task_list])
    return EmulatorDataset(ctx, stim, pos, targets, validation)
