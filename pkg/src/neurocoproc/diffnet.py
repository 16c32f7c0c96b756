"""Minimal differentiable networks: dense and Elman recurrent layers.

Networks are immutable :class:`NetParams` values. ``net_forward`` runs a
sequence through the stack, ``net_backward`` returns gradients of a summed
per-step loss by backpropagation through time, and ``opt_step`` applies an
SGD-momentum or Adam update and returns fresh parameters.

Sequences are arrays of shape ``(T, d)`` or, for a batch of independent
sequences, ``(T, B, d)``. Gradients are summed over time and batch; callers
scale ``loss_grad`` if they want means.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .rng import make_rng

ACTIVATIONS = ("tanh", "relu", "identity", "bounded_sigmoid")
KINDS = ("dense", "recurrent")


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


class NonFiniteError(FloatingPointError):
    """Raised when a value that must be finite is not."""


@dataclass(frozen=True, eq=False)
class Layer:
    name: str
    kind: str
    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: str = "tanh"
    recurrent_weights: Optional[np.ndarray] = None  # (n_out, n_out)
    scale: float = 1.0  # upper bound of bounded_sigmoid
    trainable: bool = True

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"weights": self.weights}
        if self.recurrent_weights is not None:
            out["recurrent_weights"] = self.recurrent_weights
        out["bias"] = self.bias
        return out

    def _validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"layer {self.name!r}: unknown activation {self.activation!r}")
        if self.weights.ndim != 2:
            raise ShapeError(f"layer {self.name!r}: weights must be a matrix")
        if self.bias.shape != (self.n_out,):
            raise ShapeError(
                f"layer {self.name!r}: bias shape {self.bias.shape} != ({self.n_out},)"
            )
        if self.kind == "recurrent":
            if self.recurrent_weights is None:
                raise ShapeError(f"layer {self.name!r}: recurrent layer needs recurrent_weights")
            if self.recurrent_weights.shape != (self.n_out, self.n_out):
                raise ShapeError(
                    f"layer {self.name!r}: recurrent_weights shape "
                    f"{self.recurrent_weights.shape} != ({self.n_out}, {self.n_out})"
                )
        elif self.recurrent_weights is not None:
            raise ShapeError(f"layer {self.name!r}: dense layer cannot carry recurrent_weights")
        for key, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"layer {self.name!r}: non-finite values in {key}")
        if self.activation == "bounded_sigmoid" and not self.scale > 0:
            raise ValueError(f"layer {self.name!r}: bounded_sigmoid scale must be > 0")


@dataclass(frozen=True, eq=False)
class NetParams:
    """An ordered stack of layers with consistent dimensions."""

    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")
        for layer in self.layers:
            layer._validate()
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeError(
                    f"layer {nxt.name!r} expects input dim {nxt.n_in}, "
                    f"but layer {prev.name!r} outputs {prev.n_out}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in if self.layers else 0

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out if self.layers else 0

    @property
    def n_params(self) -> int:
        return sum(arr.size for arr in self.named_arrays().values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {
            f"{layer.name}.{key}": arr
            for layer in self.layers
            for key, arr in layer.arrays().items()
        }

    def trainable_names(self) -> list[str]:
        return [
            f"{layer.name}.{key}"
            for layer in self.layers
            if layer.trainable
            for key in layer.arrays()
        ]

    def with_arrays(self, updates: Mapping[str, np.ndarray]) -> "NetParams":
        """Copy of the network with the named arrays replaced."""
        known = self.named_arrays()
        for key, arr in updates.items():
            if key not in known:
                raise KeyError(f"unknown parameter {key!r}")
            if np.shape(arr) != known[key].shape:
                raise ShapeError(
                    f"parameter {key!r}: shape {np.shape(arr)} != {known[key].shape}"
                )
        layers = []
        for layer in self.layers:
            changes = {}
            for key in layer.arrays():
                full = f"{layer.name}.{key}"
                if full in updates:
                    changes[key] = np.array(updates[full], dtype=np.float64)
            layers.append(replace(layer, **changes) if changes else layer)
        return NetParams(tuple(layers))


@dataclass(frozen=True, eq=False)
class GradSet:
    """Gradients keyed like ``NetParams.named_arrays()``.

    ``inputs`` holds the gradient with respect to the input sequence and
    ``initial_state`` the gradient with respect to each layer's initial
    hidden state (``None`` for dense layers).
    """

    grads: dict[str, np.ndarray]
    inputs: Optional[np.ndarray] = None
    initial_state: tuple = ()

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.grads.values())))

    def scaled(self, factor: float) -> "GradSet":
        return GradSet({k: g * factor for k, g in self.grads.items()}, self.inputs, self.initial_state)


class LayerSpec(NamedTuple):
    name: str
    kind: str
    n_in: int
    n_out: int
    activation: str = "tanh"
    scale: float = 1.0
    trainable: bool = True


def init_net(specs: Sequence[LayerSpec], seed: int, stream: str = "init") -> NetParams:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""
    rng = make_rng(seed, stream)
    layers = []
    for spec in specs:
        bound = 1.0 / np.sqrt(spec.n_in) if spec.n_in else 0.0
        weights = rng.uniform(-bound, bound, size=(spec.n_out, spec.n_in))
        recurrent = None
        if spec.kind == "recurrent":
            rbound = 1.0 / np.sqrt(spec.n_out)
            recurrent = rng.uniform(-rbound, rbound, size=(spec.n_out, spec.n_out))
        layers.append(
            Layer(
                name=spec.name,
                kind=spec.kind,
                weights=weights,
                bias=np.zeros(spec.n_out),
                activation=spec.activation,
                recurrent_weights=recurrent,
                scale=spec.scale,
                trainable=spec.trainable,
            )
        )
    return NetParams(tuple(layers))


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


def _activate(layer: Layer, z: np.ndarray) -> np.ndarray:
    act = layer.activation
    if act == "tanh":
        return np.tanh(z)
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "identity":
        return z
    # bounded_sigmoid; tanh form avoids overflow in exp
    return layer.scale * 0.5 * (1.0 + np.tanh(0.5 * z))


def _activation_slope(layer: Layer, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    act = layer.activation
    if act == "tanh":
        return 1.0 - y * y
    if act == "relu":
        return (z > 0.0).astype(np.float64)
    if act == "identity":
        return np.ones_like(z)
    return y * (1.0 - y / layer.scale)


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


def _as_batched(x, dim: int, what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, dim)
    if arr.ndim == 2:
        arr, squeeze = arr[:, None, :], True
    elif arr.ndim == 3:
        squeeze = False
    else:
        raise ShapeError(f"{what} must have shape (T, d) or (T, B, d), got {arr.shape}")
    if arr.shape[-1] != dim:
        raise ShapeError(f"{what} last dim {arr.shape[-1]} != expected {dim}")
    return arr, squeeze


def _initial_states(params: NetParams, initial_state, batch: int) -> list[Optional[np.ndarray]]:
    if initial_state is None:
        initial_state = [None] * len(params.layers)
    if len(initial_state) != len(params.layers):
        raise ShapeError(
            f"initial_state has {len(initial_state)} entries for {len(params.layers)} layers"
        )
    states = []
    for layer, h0 in zip(params.layers, initial_state):
        if layer.kind == "dense":
            states.append(None)
            continue
        if h0 is None:
            states.append(np.zeros((batch, layer.n_out)))
            continue
        h0 = np.asarray(h0, dtype=np.float64)
        if h0.shape[-1] != layer.n_out:
            raise ShapeError(
                f"layer {layer.name!r}: initial state dim {h0.shape[-1]} != {layer.n_out}"
            )
        states.append(np.broadcast_to(h0, (batch, layer.n_out)).copy())
    return states


def _run(params: NetParams, x: np.ndarray, h0s: list):
    caches = []
    finals = []
    for layer, h0 in zip(params.layers, h0s):
        drive = x @ layer.weights.T + layer.bias
        if layer.kind == "dense":
            z = drive
            y = _activate(layer, z)
            finals.append(None)
        else:
            z = np.empty_like(drive)
            y = np.empty_like(drive)
            h = h0
            u_t = layer.recurrent_weights.T
            for t in range(drive.shape[0]):
                z[t] = drive[t] + h @ u_t
                h = _activate(layer, z[t])
                y[t] = h
            finals.append(h)
        caches.append((x, z, y, h0))
        x = y
    return x, finals, caches


def _unbatch_state(finals, squeeze: bool) -> tuple:
    if not squeeze:
        return tuple(finals)
    return tuple(None if h is None else h[0] for h in finals)


def net_forward(params: NetParams, inputs, initial_state=None) -> tuple[np.ndarray, tuple]:
    """Run ``inputs`` through the network.

    Returns ``(outputs, final_state)``; ``final_state`` has one entry per
    layer (the last hidden vector of recurrent layers, ``None`` for dense).
    """
    x, squeeze = _as_batched(inputs, params.input_dim, "inputs")
    h0s = _initial_states(params, initial_state, x.shape[1])
    out, finals, _ = _run(params, x, h0s)
    return (out[:, 0, :] if squeeze else out), _unbatch_state(finals, squeeze)


def net_backward(params: NetParams, inputs, initial_state, loss_grad) -> GradSet:
    """Gradient of ``sum_t loss_t`` given ``d loss_t / d output_t`` per step."""
    x, squeeze = _as_batched(inputs, params.input_dim, "inputs")
    g, _ = _as_batched(loss_grad, params.output_dim, "loss_grad")
    if g.shape[:2] != x.shape[:2]:
        raise ShapeError(
            f"loss_grad covers {g.shape[0]} steps x {g.shape[1]} sequences, "
            f"inputs have {x.shape[0]} x {x.shape[1]}"
        )
    h0s = _initial_states(params, initial_state, x.shape[1])
    _, _, caches = _run(params, x, h0s)

    grads: dict[str, np.ndarray] = {}
    dh0s: list = [None] * len(params.layers)
    dy = g
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        xin, z, y, h0 = caches[idx]
        slope = _activation_slope(layer, z, y)
        if layer.kind == "dense":
            dz = dy * slope
        else:
            dz = np.empty_like(z)
            carry = np.zeros_like(h0)
            u = layer.recurrent_weights
            for t in range(z.shape[0] - 1, -1, -1):
                dz[t] = (dy[t] + carry) * slope[t]
                carry = dz[t] @ u
            h_prev = np.concatenate([h0[None], y[:-1]], axis=0)
            grads[f"{layer.name}.recurrent_weights"] = np.einsum("tbo,tbi->oi", dz, h_prev)
            dh0s[idx] = carry[0] if squeeze else carry
        grads[f"{layer.name}.weights"] = np.einsum("tbo,tbi->oi", dz, xin)
        grads[f"{layer.name}.bias"] = dz.sum(axis=(0, 1))
        dy = dz @ layer.weights

    ordered = {key: grads[key] for key in params.named_arrays()}
    return GradSet(ordered, dy[:, 0, :] if squeeze else dy, tuple(dh0s))


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------


class SquaredError:
    """Loss ``sum (y - target)^2`` over every step and output."""

    def __init__(self, targets):
        self.targets = np.asarray(targets, dtype=np.float64)

    def __call__(self, outputs: np.ndarray) -> tuple[float, np.ndarray]:
        diff = outputs - self.targets
        return float(np.sum(diff * diff)), 2.0 * diff


def numeric_gradient(
    loss: Callable[[dict[str, np.ndarray]], float],
    arrays: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central differences of ``loss`` with respect to each named array."""
    base = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    out = {}
    for key, arr in base.items():
        grad = np.zeros_like(arr)
        for pos in np.ndindex(arr.shape):
            orig = arr[pos]
            arr[pos] = orig + eps
            up = loss(base)
            arr[pos] = orig - eps
            down = loss(base)
            arr[pos] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss while perturbing {key}{list(pos)}")
            grad[pos] = (up - down) / (2.0 * eps)
        out[key] = grad
    return out


def max_relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray]) -> float:
    worst = 0.0
    for key, num in numeric.items():
        ana = np.asarray(analytic[key])
        if not np.all(np.isfinite(ana)):
            raise NonFiniteError(f"non-finite analytic gradient for {key}")
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-8)
        if ana.size:
            worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    return worst


def grad_check(
    params: NetParams,
    inputs,
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    initial_state=None,
    eps: float = 1e-5,
    analytic: Optional[GradSet] = None,
) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``loss_fn(outputs)`` returns ``(value, d value / d outputs)``. Pass
    ``analytic`` to check a precomputed GradSet instead of ``net_backward``.
    """
    if params.n_params > 5000:
        raise ValueError(f"network has {params.n_params} parameters; grad_check allows 5000")
    if params.n_params == 0:
        return 0.0
    if analytic is None:
        outputs, _ = net_forward(params, inputs, initial_state)
        _, dout = loss_fn(outputs)
        analytic = net_backward(params, inputs, initial_state, dout)

    def loss(arrays):
        out, _ = net_forward(params.with_arrays(arrays), inputs, initial_state)
        return loss_fn(out)[0]

    numeric = numeric_gradient(loss, params.named_arrays(), eps)
    return max_relative_error(analytic.grads, numeric)


# --------------------------------------------------------------------------
# optimisers
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OptState:
    method: str
    step_size: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step_count: int = 0


def init_opt(params: NetParams, method: str = "adam", step_size: float = 1e-3, **kwargs) -> OptState:
    if method not in ("sgd_momentum", "adam"):
        raise ValueError(f"unknown optimiser {method!r}")
    zeros = {k: np.zeros_like(v) for k, v in params.named_arrays().items()}
    second = {k: np.zeros_like(v) for k, v in zeros.items()} if method == "adam" else {}
    return OptState(method=method, step_size=step_size, first=zeros, second=second, **kwargs)


def opt_step(params: NetParams, grads: GradSet, state: OptState) -> tuple[NetParams, OptState]:
    """One update of every trainable array; frozen layers keep their values."""
    current = params.named_arrays()
    for key, arr in current.items():
        if key not in grads.grads:
            raise ShapeError(f"missing gradient for {key}")
        if grads.grads[key].shape != arr.shape:
            raise ShapeError(f"gradient {key}: shape {grads.grads[key].shape} != {arr.shape}")
        if key not in state.first or state.first[key].shape != arr.shape:
            raise ShapeError(f"optimiser state does not match parameter {key}")

    step = state.step_count + 1
    first, second, updates = {}, {}, {}
    trainable = set(params.trainable_names())
    for key, arr in current.items():
        g = grads.grads[key]
        if state.method == "adam":
            m = state.beta1 * state.first[key] + (1.0 - state.beta1) * g
            v = state.beta2 * state.second[key] + (1.0 - state.beta2) * g * g
            first[key], second[key] = m, v
            m_hat = m / (1.0 - state.beta1**step)
            v_hat = v / (1.0 - state.beta2**step)
            delta = state.step_size * m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            vel = state.momentum * state.first[key] + g
            first[key] = vel
            delta = state.step_size * vel
        if key in trainable:
            updates[key] = arr - delta
    new_state = replace(state, first=first, second=second, step_count=step)
    return params.with_arrays(updates), new_state


def clip_gradients(grads: GradSet, max_norm: float) -> GradSet:
    norm = grads.norm()
    if not np.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    if norm <= max_norm or norm == 0.0:
        return grads
    return grads.scaled(max_norm / norm)


# --------------------------------------------------------------------------
# named-array conversion for checkpoints
# --------------------------------------------------------------------------


def net_to_arrays(params: NetParams, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a network into checkpoint-ready named arrays.

    Layer metadata rides in the name of a per-layer scalar holding the
    bounded_sigmoid scale: ``<prefix><layer>/meta:<kind>:<activation>:<trainable>``.
    """
    out = {}
    for layer in params.layers:
        meta = f"{prefix}{layer.name}/meta:{layer.kind}:{layer.activation}:{int(layer.trainable)}"
        out[meta] = np.array(float(layer.scale))
        for key, arr in layer.arrays().items():
            out[f"{prefix}{layer.name}/{key}"] = arr
    return out


def net_from_arrays(arrays: Mapping[str, np.ndarray], prefix: str = "") -> NetParams:
    layers = []
    for key, value in arrays.items():
        if not key.startswith(prefix) or "/meta:" not in key:
            continue
        layer_name, meta = key[len(prefix):].split("/meta:")
        kind, activation, trainable = meta.split(":")
        base = f"{prefix}{layer_name}/"
        layers.append(
            Layer(
                name=layer_name,
                kind=kind,
                weights=np.array(arrays[base + "weights"], dtype=np.float64),
                bias=np.array(arrays[base + "bias"], dtype=np.float64).reshape(-1),
                activation=activation,
                recurrent_weights=(
                    np.array(arrays[base + "recurrent_weights"], dtype=np.float64)
                    if kind == "recurrent"
                    else None
                ),
                scale=float(value),
                trainable=bool(int(trainable)),
            )
        )
    return NetParams(tuple(layers))
