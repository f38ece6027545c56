"""Control-affine system models and numerical integration.

Systems are dx/dt = f(x) + g(x) u with a norm-ball input set. `f` and `g`
accept batched states (shape (..., d_x)) and are pure functions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """Raised when an integration step produces a non-finite state."""


@dataclass(frozen=True)
class InputSet:
    """Norm ball {u : ||u|| <= u_max}, with norm 'inf' or 'two'."""

    norm: str
    u_max: float

    def __post_init__(self):
        if self.norm not in ("inf", "two"):
            raise ValueError(f"unknown input-set norm {self.norm!r}")
        if self.u_max <= 0:
            raise ValueError("u_max must be positive")

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=float)
        if self.norm == "inf":
            return bool(np.all(np.abs(u) <= self.u_max + tol))
        return bool(np.linalg.norm(u) <= self.u_max + tol)

    def dual_norm(self, w) -> np.ndarray:
        """Dual norm of w: 1-norm for the inf ball, 2-norm for the 2 ball."""
        w = np.asarray(w, dtype=float)
        if self.norm == "inf":
            return np.sum(np.abs(w), axis=-1)
        return np.linalg.norm(w, axis=-1)

    def support_maximizer(self, w) -> np.ndarray:
        """argmax_{u in set} <w, u>; returns 0 where w = 0."""
        w = np.asarray(w, dtype=float)
        if self.norm == "inf":
            return self.u_max * np.sign(w)
        nrm = np.linalg.norm(w, axis=-1, keepdims=True)
        return np.where(nrm > 0, self.u_max * w / np.where(nrm > 0, nrm, 1.0), 0.0)


@dataclass(frozen=True)
class ControlAffineSystem:
    name: str
    state_dim: int
    input_dim: int
    observable_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    input_set: InputSet
    angular_dims: tuple = ()      # state indices living on [-pi, pi)

    def drift_plus_input(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.f(x) + np.einsum("...ij,...j->...i", self.g(x), u)


def make_dubins(v: float = 0.1, u_max: float = 0.4) -> ControlAffineSystem:
    """Fixed-speed Dubins car: (dq1, dq2, dtheta) = (v cos th, v sin th, u)."""
    if v <= 0 or u_max <= 0:
        raise ValueError("v and u_max must be positive")

    def f(x):
        x = np.asarray(x, dtype=float)
        th = x[..., 2]
        return np.stack([v * np.cos(th), v * np.sin(th), np.zeros_like(th)], axis=-1)

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (3, 1))
        out[..., 2, 0] = 1.0
        return out

    return ControlAffineSystem(
        name="dubins", state_dim=3, input_dim=1, observable_dim=2,
        f=f, g=g, input_set=InputSet("inf", u_max), angular_dims=(2,))


def make_planar(delta: float = 0.33, u_max: float = 1.0) -> ControlAffineSystem:
    """Planar system: dx_i = x_i + (x_i^2 + delta) u_i, per-component |u_i| <= u_max."""
    if delta <= 0:
        raise ValueError("delta must be positive")

    def f(x):
        return np.asarray(x, dtype=float).copy()

    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = x[..., 0] ** 2 + delta
        out[..., 1, 1] = x[..., 1] ** 2 + delta
        return out

    return ControlAffineSystem(
        name="planar", state_dim=2, input_dim=2, observable_dim=2,
        f=f, g=g, input_set=InputSet("inf", u_max))


def clamp_to_input_set(sys: ControlAffineSystem, u) -> np.ndarray:
    """Project u onto the input norm ball; identity if already inside."""
    u = np.asarray(u, dtype=float)
    if sys.input_set.norm == "inf":
        return np.clip(u, -sys.input_set.u_max, sys.input_set.u_max)
    nrm = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.where(nrm > sys.input_set.u_max, sys.input_set.u_max / np.where(nrm > 0, nrm, 1.0), 1.0)
    return u * scale


def rk4_step(sys: ControlAffineSystem, x, u, dt: float) -> np.ndarray:
    """Classical RK4 step with zero-order-hold input."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not sys.input_set.contains(u):
        log.warning("control %s outside input set (u_max=%g)", u, sys.input_set.u_max)

    def xdot(state):
        return sys.drift_plus_input(state, u)

    k1 = xdot(x)
    k2 = xdot(x + 0.5 * dt * k1)
    k3 = xdot(x + 0.5 * dt * k2)
    k4 = xdot(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after RK4 step from {x}")
    return out


@dataclass
class Trajectory:
    """Simulated rollout with per-step safety-filter annotations.

    `states` has one more row than `controls`; step k applied `controls[k]`
    at `states[k]`.  `h_values`, `active_index`, `status` align with controls.
    """

    dt: float
    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    h_values: list = field(default_factory=list)
    active_index: list = field(default_factory=list)
    status: list = field(default_factory=list)

    def append_step(self, x, u, h, active, status):
        self.states.append(np.asarray(x, dtype=float))
        self.controls.append(np.asarray(u, dtype=float))
        self.h_values.append(float(h))
        self.active_index.append(int(active))
        self.status.append(str(status))

    def close(self, x_final):
        self.states.append(np.asarray(x_final, dtype=float))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    def state_array(self) -> np.ndarray:
        return np.asarray(self.states, dtype=float)

    def control_array(self) -> np.ndarray:
        return np.asarray(self.controls, dtype=float)

    def __len__(self):
        return len(self.states)
