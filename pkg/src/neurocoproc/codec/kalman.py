"""Linear-Gaussian kinematic decoder.

The hidden kinematic vector evolves as ``x_t = A x_{t-1} + n_t`` and neural
observations follow ``y_t = B x_t + m_t`` with ``n_t ~ N(0, Q)`` and
``m_t ~ N(0, R)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

PSD_TOL = 1e-10
COND_MAX = 1e12


def _check_psd(name: str, m: np.ndarray) -> None:
    if not np.allclose(m, m.T, atol=1e-10, rtol=0):
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(m).min() < -PSD_TOL * max(1.0, np.abs(m).max()):
        raise ValueError(f"{name} is not positive semi-definite")


@dataclass(frozen=True)
class KalmanModel:
    dyn_a: np.ndarray
    meas_b: np.ndarray
    q_cov: np.ndarray
    r_cov: np.ndarray

    def __post_init__(self):
        for f in ("dyn_a", "meas_b", "q_cov", "r_cov"):
            object.__setattr__(self, f, np.array(getattr(self, f), dtype=np.float64))
        n, m = self.state_dim, self.obs_dim
        expected = {"dyn_a": (n, n), "meas_b": (m, n), "q_cov": (n, n), "r_cov": (m, m)}
        for f, shape in expected.items():
            arr = getattr(self, f)
            if arr.shape != shape:
                raise ValueError(f"{f} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{f} contains non-finite values")
        _check_psd("q_cov", self.q_cov)
        _check_psd("r_cov", self.r_cov)

    @property
    def state_dim(self) -> int:
        return self.dyn_a.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.meas_b.shape[0]

    def to_arrays(self, prefix: str = "kalman/") -> dict:
        return {prefix + f: getattr(self, f) for f in ("dyn_a", "meas_b", "q_cov", "r_cov")}

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "kalman/") -> "KalmanModel":
        return cls(*(arrays[prefix + f] for f in ("dyn_a", "meas_b", "q_cov", "r_cov")))


@dataclass(frozen=True)
class KalmanBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.array(self.mean, dtype=np.float64))
        object.__setattr__(self, "cov", np.array(self.cov, dtype=np.float64))
        n = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            raise ValueError("belief mean must be (n,) and cov (n, n)")


def _lstsq(design: np.ndarray, target: np.ndarray, what: str) -> np.ndarray:
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        raise np.linalg.LinAlgError(
            f"{what}: regressor matrix has rank {rank} < {design.shape[1]} (rank-deficient states)"
        )
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return coef.T


def kalman_fit(states, observations) -> KalmanModel:
    """Least-squares fit of A, B and the residual covariances Q, R."""
    x = np.asarray(states, dtype=np.float64)
    y = np.asarray(observations, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("states and observations must be paired (T, n) and (T, m) arrays")
    n, m = x.shape[1], y.shape[1]
    if x.shape[0] < n + m:
        raise ValueError(f"need at least {n + m} samples, got {x.shape[0]}")
    a = _lstsq(x[:-1], x[1:], "dynamics fit")
    b = _lstsq(x, y, "measurement fit")
    res_x = x[1:] - x[:-1] @ a.T
    res_y = y - x @ b.T
    q = res_x.T @ res_x / res_x.shape[0]
    r = res_y.T @ res_y / res_y.shape[0]
    return KalmanModel(a, b, 0.5 * (q + q.T), 0.5 * (r + r.T))


def kalman_step(model: KalmanModel, belief: KalmanBelief, y_t) -> KalmanBelief:
    """One predict/update cycle. Returns the posterior belief."""
    y = np.asarray(y_t, dtype=np.float64)
    if y.shape != (model.obs_dim,):
        raise ValueError(f"observation has shape {y.shape}, expected ({model.obs_dim},)")
    a, b = model.dyn_a, model.meas_b
    mean = a @ belief.mean
    cov = a @ belief.cov @ a.T + model.q_cov
    s = b @ cov @ b.T + model.r_cov
    s = 0.5 * (s + s.T)
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > COND_MAX:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    gain = np.linalg.solve(s, b @ cov).T
    mean = mean + gain @ (y - b @ mean)
    ikb = np.eye(model.state_dim) - gain @ b
    # Joseph form keeps the covariance PSD under round-off.
    cov = ikb @ cov @ ikb.T + gain @ model.r_cov @ gain.T
    return KalmanBelief(mean, 0.5 * (cov + cov.T))


def kalman_filter(model: KalmanModel, belief: KalmanBelief, observations) -> tuple[np.ndarray, KalmanBelief]:
    """Run ``kalman_step`` over a sequence; returns (T, n) posterior means and the final belief."""
    means = []
    for y in np.asarray(observations, dtype=np.float64):
        belief = kalman_step(model, belief, y)
        means.append(belief.mean)
    return np.array(means).reshape(-1, model.state_dim), belief


def kinematic_state(positions, dt_s: float, include_acceleration: bool = False) -> np.ndarray:
    """Stack positions with backward-difference velocity (and optionally acceleration).

    The default state is position and velocity; the first sample uses zero
    derivatives.
    """
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("positions must be (T, d)")
    if not dt_s > 0:
        raise ValueError("dt_s must be > 0")
    v = np.zeros_like(p)
    v[1:] = np.diff(p, axis=0) / dt_s
    parts = [p, v]
    if include_acceleration:
        acc = np.zeros_like(p)
        acc[1:] = np.diff(v, axis=0) / dt_s
        parts.append(acc)
    return np.concatenate(parts, axis=1)


def initial_belief(state_dim: int, variance: float = 1.0, mean: Optional[np.ndarray] = None) -> KalmanBelief:
    m = np.zeros(state_dim) if mean is None else np.asarray(mean, dtype=np.float64)
    return KalmanBelief(m, variance * np.eye(state_dim))
