"""Co-processor and emulator networks and the behavioural loss."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .. import checkpoint
from ..diffnet import Layer, LayerSpec, NetParams, init_net, net_to_arrays


class FrozenEmulatorError(RuntimeError):
    """The emulator changed while it was supposed to be frozen."""


@dataclass(frozen=True)
class CoprocConfig:
    s_max: float = 5.0
    hidden: int = 32
    obs_scale: float = 1.0 / 20.0
    ctx_scale: float = 1.0 / 20.0
    hold_bins: int = 10
    alpha: float = 1.0  # terminal error
    beta: float = 0.1  # path error
    gamma: float = 1e-3  # stimulation energy
    ncp_out_bias: float = -4.0  # initial stimulation near zero

    def __post_init__(self):
        if not self.s_max > 0:
            raise ValueError("s_max must be > 0")
        if self.hidden < 1 or self.hold_bins < 0:
            raise ValueError("hidden must be >= 1 and hold_bins >= 0")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True, eq=False)
class CoprocModel:
    ncp: NetParams
    en: NetParams
    en_digest: str
    n_stim: int
    n_context: int
    config: CoprocConfig = CoprocConfig()

    def __post_init__(self):
        if self.ncp.output_dim != self.n_stim:
            raise ValueError(f"NCP emits {self.ncp.output_dim} channels, emulator expects {self.n_stim}")
        if self.en.input_dim != self.n_stim + self.n_context:
            raise ValueError("emulator input must be stimulation channels plus context")
        if self.en.output_dim != 2:
            raise ValueError("emulator must output 2D hand position")

    def check_frozen(self) -> None:
        actual = en_digest(self.en)
        if actual != self.en_digest:
            raise FrozenEmulatorError(f"emulator digest {actual} != recorded {self.en_digest}")

    def to_arrays(self) -> dict:
        out = net_to_arrays(self.ncp, "ncp/")
        out.update(net_to_arrays(self.en, "en/"))
        return out


def en_digest(en: NetParams) -> str:
    return checkpoint.digest(net_to_arrays(en, "en/"))


def integrator_layer(dt_s: float, name: str = "integrate") -> Layer:
    """Frozen layer turning velocity into position: p_t = p_{t-1} + dt * v_t."""
    return Layer(
        name=name,
        kind="recurrent",
        weights=dt_s * np.eye(2),
        bias=np.zeros(2),
        activation="identity",
        recurrent_weights=np.eye(2),
        trainable=False,
    )


def init_emulator(
    n_stim: int, n_context: int, dt_s: float, seed: int, hidden: int = 32, activation: str = "tanh"
) -> NetParams:
    """Recurrent core -> 2D velocity -> frozen integrator -> position."""
    core = init_net(
        [
            LayerSpec("en_core", "recurrent", n_stim + n_context, hidden, activation),
            LayerSpec("en_vel", "dense", hidden, 2, "identity"),
        ],
        seed,
        "en-init",
    )
    return NetParams(core.layers + (integrator_layer(dt_s),))


def init_ncp(n_obs: int, n_stim: int, seed: int, config: CoprocConfig = CoprocConfig(), n_sensor: int = 0) -> NetParams:
    """Recurrent tanh core -> bounded stimulation in [0, s_max].

    ``n_sensor`` extra input channels carry external sensor readings.
    """
    net = init_net(
        [
            LayerSpec("ncp_core", "recurrent", n_obs + n_sensor, config.hidden, "tanh"),
            LayerSpec("ncp_out", "dense", config.hidden, n_stim, "bounded_sigmoid", scale=config.s_max),
        ],
        seed,
        "ncp-init",
    )
    out = net.layers[-1]
    out = replace(out, weights=0.1 * out.weights, bias=np.full(n_stim, config.ncp_out_bias))
    return NetParams(net.layers[:-1] + (out,))


def build_model(en: NetParams, ncp: NetParams, n_stim: int, config: CoprocConfig = CoprocConfig()) -> CoprocModel:
    return CoprocModel(ncp, en, en_digest(en), n_stim, en.input_dim - n_stim, config)


def en_inputs(stim: np.ndarray, context: np.ndarray, s_max: float, ctx_scale: float) -> np.ndarray:
    """(T, B, n_stim) stimulation and (B, n_ctx) context -> (T, B, n_stim + n_ctx)."""
    t = stim.shape[0]
    ctx = np.broadcast_to(context[None] * ctx_scale, (t,) + context.shape)
    return np.concatenate([stim / s_max, ctx], axis=-1)


class LossValue(NamedTuple):
    total: float
    terminal_term: float
    path_term: float
    stim_energy_term: float


def behaviour_loss(
    pos: np.ndarray, stim: np.ndarray, targets: np.ndarray, alpha: float, beta: float, gamma: float
) -> tuple[LossValue, np.ndarray, np.ndarray]:
    """Batch-mean loss with gradients w.r.t. ``pos`` (T, B, 2) and ``stim`` (T, B, n).

    total = alpha ||p_T - z||^2 + beta mean_t ||p_t - z||^2 + gamma mean_t ||s_t||^2,
    averaged over the batch.
    """
    t, b = pos.shape[:2]
    err = pos - targets[None]
    terminal = alpha * float(np.sum(err[-1] ** 2)) / b
    path = beta * float(np.sum(err**2)) / (t * b)
    energy = gamma * float(np.sum(stim**2)) / (t * b)
    d_pos = (2.0 * beta / (t * b)) * err
    d_pos[-1] += (2.0 * alpha / b) * err[-1]
    d_stim = (2.0 * gamma / (t * b)) * stim
    return LossValue(terminal + path + energy, terminal, path, energy), d_pos, d_stim
