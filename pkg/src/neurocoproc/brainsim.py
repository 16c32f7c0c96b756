"""Two-region rate network driving a 2D effector.

Region A carries movement intent (cosine-tuned to the direction of the
remaining reach error); region B drives hand velocity through a fixed
readout. The A->B pathway ``w_ba`` is the connection a lesion removes and
Hebbian plasticity can rebuild. Stimulation enters region B.

Rates follow a leaky update towards a rectified-saturating nonlinearity:

    r <- (1 - dt/tau) r + (dt/tau) * phi(W r + inputs + noise)

All functions are pure: they return new states and never modify their
arguments. Process and observation noise come from a counter-based stream
indexed by the state's step counter, so a state snapshot fully determines
what happens next.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import indexed_rng, make_rng


@dataclass(frozen=True, eq=False)
class BrainConfig:
    n_a: int
    n_b: int
    w_aa: np.ndarray
    w_bb: np.ndarray
    w_ba: np.ndarray  # (n_b, n_a)
    intent_proj: np.ndarray  # (n_a, 2)
    readout_g: np.ndarray  # (2, n_b), velocity per Hz
    bias_a: np.ndarray
    bias_b: np.ndarray
    dt_ms: float = 10.0
    tau_ms: float = 50.0
    noise_std: float = 2.0
    obs_noise_std: float = 0.5
    stim_coupling: float = 5.0  # Hz of region-B input per unit of stimulation drive
    rate_max: float = 100.0
    activation: str = "rectify"  # or "identity" for a fully linear substrate
    intent_max: float = 1.0

    def __post_init__(self):
        if not self.dt_ms > 0:
            raise ValueError("dt_ms must be > 0")
        if self.tau_ms < self.dt_ms:
            raise ValueError("tau_ms must be >= dt_ms")
        if self.noise_std < 0 or self.obs_noise_std < 0:
            raise ValueError("noise std must be >= 0")
        if not self.rate_max > 0:
            raise ValueError("rate_max must be > 0")
        if self.activation not in ("rectify", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        shapes = {
            "w_aa": (self.n_a, self.n_a),
            "w_bb": (self.n_b, self.n_b),
            "w_ba": (self.n_b, self.n_a),
            "intent_proj": (self.n_a, 2),
            "readout_g": (2, self.n_b),
            "bias_a": (self.n_a,),
            "bias_b": (self.n_b,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    @property
    def leak(self) -> float:
        return self.dt_ms / self.tau_ms

    def noiseless(self) -> "BrainConfig":
        return replace(self, noise_std=0.0, obs_noise_std=0.0)


@dataclass(frozen=True, eq=False)
class BrainState:
    r_a: np.ndarray
    r_b: np.ndarray
    w_ba_current: np.ndarray
    seed: int
    step_index: int = 0
    hand_pos: np.ndarray = field(default_factory=lambda: np.zeros(2))
    hand_vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    observed: Optional[np.ndarray] = None  # last recorded region-A rates


@dataclass(frozen=True)
class PlasticityParams:
    eta: float = 0.0
    lambda_decay: float = 0.0
    w_clip: float = 1.0
    enabled: bool = False

    def __post_init__(self):
        if self.eta < 0 or self.lambda_decay < 0:
            raise ValueError("eta and lambda_decay must be >= 0")
        if not self.w_clip > 0:
            raise ValueError("w_clip must be > 0")


DISABLED = PlasticityParams()


@dataclass(frozen=True)
class TaskSpec:
    target_pos: tuple
    duration_ms: float = 500.0
    success_radius: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "target_pos", tuple(float(v) for v in self.target_pos))
        if len(self.target_pos) != 2:
            raise ValueError("target_pos must be 2D")
        if not self.duration_ms > 0:
            raise ValueError("duration_ms must be > 0")
        if not self.success_radius > 0:
            raise ValueError("success_radius must be > 0")

    def n_bins(self, dt_ms: float) -> int:
        n = self.duration_ms / dt_ms
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"duration {self.duration_ms} ms is not a multiple of dt {dt_ms} ms")
        return int(round(n))


@dataclass(frozen=True, eq=False)
class Trajectory:
    t_ms: np.ndarray  # (T,)
    hand_pos: np.ndarray  # (T, 2)
    hand_vel: np.ndarray  # (T, 2)
    observed: np.ndarray  # (T, n_a) rates recorded after each bin
    stim: np.ndarray  # (T, n_b) drive delivered in each bin

    def __len__(self) -> int:
        return len(self.t_ms)


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------


def _circulant_cosine(n: int, gain: float) -> np.ndarray:
    angles = 2 * np.pi * np.arange(n) / n
    return gain * (2.0 / n) * np.cos(angles[:, None] - angles[None, :])


def default_brain_config(
    n_a: int = 16,
    n_b: int = 16,
    intent_gain: float = 15.0,
    pathway_gain: float = 1.0,
    recurrent_gain: float = 0.3,
    readout_gain: float = 0.3,
    bias_a: float = 10.0,
    bias_b: float = 10.0,
    **overrides,
) -> BrainConfig:
    """Desk-scale intact brain with evenly spaced preferred directions.

    A unit j prefers direction 2*pi*j/n_a, B unit i drives the hand along
    2*pi*i/n_b, and w_ba connects units with matching directions. Because the
    directions are evenly spaced, uniform B activity produces no net velocity.
    """
    theta_a = 2 * np.pi * np.arange(n_a) / n_a
    theta_b = 2 * np.pi * np.arange(n_b) / n_b
    cfg = dict(
        n_a=n_a,
        n_b=n_b,
        w_aa=_circulant_cosine(n_a, recurrent_gain),
        w_bb=_circulant_cosine(n_b, recurrent_gain),
        w_ba=pathway_gain * (2.0 / n_a) * np.cos(theta_b[:, None] - theta_a[None, :]),
        intent_proj=intent_gain * np.stack([np.cos(theta_a), np.sin(theta_a)], axis=1),
        readout_g=readout_gain * (2.0 / n_b) * np.stack([np.cos(theta_b), np.sin(theta_b)]),
        bias_a=np.full(n_a, float(bias_a)),
        bias_b=np.full(n_b, float(bias_b)),
    )
    cfg.update(overrides)
    return BrainConfig(**cfg)


def init_state(cfg: BrainConfig, seed: int) -> BrainState:
    """Resting state: rates at the noiseless fixed point of zero input."""
    r_a = np.zeros(cfg.n_a)
    r_b = np.zeros(cfg.n_b)
    state = BrainState(r_a, r_b, cfg.w_ba.copy(), int(seed), observed=r_a)
    quiet = cfg.noiseless()
    for _ in range(int(10 * cfg.tau_ms / cfg.dt_ms)):
        state, _ = brain_step(quiet, state, np.zeros(2), np.zeros(cfg.n_b))
    return replace(state, step_index=0, hand_pos=np.zeros(2), hand_vel=np.zeros(2), observed=state.r_a)


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------


def _phi(cfg: BrainConfig, x: np.ndarray) -> np.ndarray:
    if cfg.activation == "identity":
        return x
    return np.clip(x, 0.0, cfg.rate_max)


def brain_step(
    cfg: BrainConfig,
    state: BrainState,
    intent,
    stim_drive,
    drive_a=None,
    drive_b=None,
) -> tuple[BrainState, np.ndarray]:
    """Advance one bin. Returns the new state and the observed A rates.

    ``drive_a`` / ``drive_b`` are optional direct input currents (Hz) used by
    probes and background-activity protocols.
    """
    intent = np.asarray(intent, dtype=np.float64)
    stim = np.asarray(stim_drive, dtype=np.float64)
    if intent.shape != (2,):
        raise ValueError(f"intent must be a 2D vector, got shape {intent.shape}")
    if stim.shape != (cfg.n_b,):
        raise ValueError(f"stim_drive has shape {stim.shape}, expected ({cfg.n_b},)")
    if np.any(stim < 0):
        raise ValueError("stim_drive entries must be >= 0")

    input_a = cfg.w_aa @ state.r_a + cfg.intent_proj @ intent + cfg.bias_a
    input_b = (
        cfg.w_bb @ state.r_b
        + state.w_ba_current @ state.r_a
        + cfg.stim_coupling * stim
        + cfg.bias_b
    )
    if drive_a is not None:
        input_a = input_a + np.asarray(drive_a, dtype=np.float64)
    if drive_b is not None:
        input_b = input_b + np.asarray(drive_b, dtype=np.float64)
    if input_a.shape != (cfg.n_a,) or input_b.shape != (cfg.n_b,):
        raise ValueError("direct drive dimension mismatch")

    obs_noise = None
    if cfg.noise_std > 0 or cfg.obs_noise_std > 0:
        eps = indexed_rng(state.seed, "brain", state.step_index).standard_normal(
            2 * cfg.n_a + cfg.n_b
        )
        input_a = input_a + cfg.noise_std * eps[: cfg.n_a]
        input_b = input_b + cfg.noise_std * eps[cfg.n_a : cfg.n_a + cfg.n_b]
        obs_noise = cfg.obs_noise_std * eps[cfg.n_a + cfg.n_b :]

    k = cfg.leak
    r_a = (1.0 - k) * state.r_a + k * _phi(cfg, input_a)
    r_b = (1.0 - k) * state.r_b + k * _phi(cfg, input_b)
    hand_vel = cfg.readout_g @ r_b
    hand_pos = state.hand_pos + hand_vel * (cfg.dt_ms / 1000.0)
    observed = r_a if obs_noise is None else r_a + obs_noise
    new = replace(
        state,
        r_a=r_a,
        r_b=r_b,
        step_index=state.step_index + 1,
        hand_pos=hand_pos,
        hand_vel=hand_vel,
        observed=observed,
    )
    return new, observed


def apply_lesion(cfg: BrainConfig, fraction: float, seed: int) -> BrainConfig:
    """Zero ``round(fraction * w_ba.size)`` entries of w_ba, chosen by seeded shuffle."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    size = cfg.w_ba.size
    n_cut = int(np.floor(fraction * size + 0.5))
    flat = cfg.w_ba.reshape(-1).copy()
    flat[make_rng(seed, "lesion").permutation(size)[:n_cut]] = 0.0
    return replace(cfg, w_ba=flat.reshape(cfg.w_ba.shape))


def hebbian_update(
    state: BrainState, params: PlasticityParams, r_a_prev, r_b_now
) -> BrainState:
    """Pre(t-1) x post(t) potentiation with decay, clipped to +-w_clip.

    Returns ``state`` untouched when plasticity is disabled.
    """
    if not params.enabled:
        return state
    w = state.w_ba_current
    delta = params.eta * np.outer(r_b_now, r_a_prev) - params.lambda_decay * w
    return replace(state, w_ba_current=np.clip(w + delta, -params.w_clip, params.w_clip))


# --------------------------------------------------------------------------
# trials
# --------------------------------------------------------------------------


def task_intent(cfg: BrainConfig, state: BrainState, task: TaskSpec) -> np.ndarray:
    """Remaining reach error, clipped to ``intent_max`` in norm."""
    err = np.asarray(task.target_pos) - state.hand_pos
    norm = float(np.hypot(err[0], err[1]))
    if norm > cfg.intent_max:
        err = err * (cfg.intent_max / norm)
    return err


def hold(cfg: BrainConfig, state: BrainState, task: TaskSpec, n_bins: int) -> BrainState:
    """Instructed-delay period: the subject sees the target, the hand is held at the origin."""
    zero = np.zeros(cfg.n_b)
    state = replace(state, hand_pos=np.zeros(2), hand_vel=np.zeros(2))
    for _ in range(n_bins):
        state, _ = brain_step(cfg, state, task_intent(cfg, state, task), zero)
        state = replace(state, hand_pos=np.zeros(2), hand_vel=np.zeros(2))
    return state


StimPolicy = Callable[[np.ndarray], np.ndarray]


def zero_policy(n_b: int) -> StimPolicy:
    zero = np.zeros(n_b)
    return lambda observed: zero


def run_trial(
    cfg: BrainConfig,
    state: BrainState,
    task: TaskSpec,
    stim_policy: StimPolicy,
    plasticity: PlasticityParams = DISABLED,
) -> tuple[Trajectory, BrainState]:
    """Closed-loop trial: the policy maps the latest observation to stimulation each bin."""
    n = task.n_bins(cfg.dt_ms)
    pos = np.empty((n, 2))
    vel = np.empty((n, 2))
    obs = np.empty((n, cfg.n_a))
    stims = np.empty((n, cfg.n_b))
    observed = state.observed if state.observed is not None else state.r_a
    for t in range(n):
        stim = np.asarray(stim_policy(observed), dtype=np.float64)
        if stim.shape != (cfg.n_b,):
            raise ValueError(f"policy returned shape {stim.shape}, expected ({cfg.n_b},)")
        r_a_prev = state.r_a
        state, observed = brain_step(cfg, state, task_intent(cfg, state, task), stim)
        state = hebbian_update(state, plasticity, r_a_prev, state.r_b)
        pos[t], vel[t], obs[t], stims[t] = state.hand_pos, state.hand_vel, observed, stim
    t_ms = cfg.dt_ms * np.arange(1, n + 1)
    return Trajectory(t_ms, pos, vel, obs, stims), state


def probe_site(
    cfg: BrainConfig,
    state: BrainState,
    region: str,
    unit_index,
    probe_amplitude: float,
    n_bins: int = 20,
    settle_bins: int = 30,
) -> np.ndarray:
    """Net hand displacement evoked by driving one site, relative to sham.

    Noise is disabled. The brain first settles with no intent or stimulation;
    then the run is repeated with ``probe_amplitude`` Hz of extra input to the
    chosen unit(s) and the sham displacement is subtracted. ``unit_index`` may
    be a single index or a sequence (driven together).
    """
    if region not in ("A", "B"):
        raise ValueError("region must be 'A' or 'B'")
    if not probe_amplitude > 0:
        raise ValueError("probe_amplitude must be > 0")
    n_units = cfg.n_a if region == "A" else cfg.n_b
    units = np.atleast_1d(np.asarray(unit_index, dtype=int))
    if np.any(units < 0) or np.any(units >= n_units):
        raise IndexError(f"unit index out of range for region {region}")

    quiet = cfg.noiseless()
    zero_intent, zero_stim = np.zeros(2), np.zeros(cfg.n_b)
    base = state
    for _ in range(settle_bins):
        base, _ = brain_step(quiet, base, zero_intent, zero_stim)
    base = replace(base, hand_pos=np.zeros(2), hand_vel=np.zeros(2))

    drive = np.zeros(n_units)
    drive[units] = probe_amplitude
    kwargs = {"drive_a": drive} if region == "A" else {"drive_b": drive}
    sham, probed = base, base
    for _ in range(n_bins):
        sham, _ = brain_step(quiet, sham, zero_intent, zero_stim)
        probed, _ = brain_step(quiet, probed, zero_intent, zero_stim, **kwargs)
    return probed.hand_pos - sham.hand_pos
