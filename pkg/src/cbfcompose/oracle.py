"""Safety oracle: local avoid-set value function from one LiDAR scan.

Pipeline: a scan defines a terminal cost l(q) (positive inside observed free
space, negative outside), then the variational inequality

    V(x) = min( l(x),  V(x) + dt * max_{u in U} <grad V, f(x) + g(x) u> )

is time-marched on a regular grid with a Lax-Friedrichs numerical
Hamiltonian until the sup-norm update drops below tolerance or the horizon
cap is reached.  V(x) > 0 certifies (numerically) that a control exists
keeping the observable projection inside the scanned free region, so
superlevel grid nodes paired with the gradient-greedy policy give safe
state-action pairs for barrier learning.

Sweeps update every node from the previous iterate (Jacobi style), so node
evaluations inside one sweep are independent; queries on a finished grid are
read-only and thread-safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .basis import wrap_angle
from .dynamics import ControlAffineSystem
from .environment import Measurement

VALUE_GRID_MAGIC = b"VGRID01\n"


class DegenerateScanError(ValueError):
    """Scan has too few safe points to define a free region."""


class OutOfGridError(ValueError):
    """Query point lies outside the value grid."""


class EmptyHarvestError(RuntimeError):
    """No grid state clears the requested value margin."""


@dataclass(frozen=True)
class GridAxis:
    lo: float
    hi: float
    n: int
    periodic: bool = False

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid axes need at least 3 points")
        if self.hi <= self.lo:
            raise ValueError("axis upper bound must exceed lower bound")

    @property
    def points(self) -> np.ndarray:
        if self.periodic:
            # hi is the period end, not sampled (wraps onto lo)
            return self.lo + (self.hi - self.lo) * np.arange(self.n) / self.n
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def dx(self) -> float:
        if self.periodic:
            return (self.hi - self.lo) / self.n
        return (self.hi - self.lo) / (self.n - 1)


@dataclass
class TerminalCost:
    """l(q): distance into the observed free region, negative outside it.

    Evaluates min(distance to the scan rim, distance to unsafe evidence),
    optionally also clipped by prior unsafe knowledge (`belief`).  Constant
    along unobserved state dimensions: it only ever reads q.
    """

    measurement: Measurement
    belief: object = None

    def __post_init__(self):
        if len(self.measurement.safe_points) < 3:
            raise DegenerateScanError("need at least 3 safe points in scan")
        self._tree = cKDTree(self.measurement.unsafe_points)

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        rim = self.measurement.scan_radius - np.linalg.norm(
            q - self.measurement.scan_center, axis=-1)
        d, _ = self._tree.query(q.reshape(-1, 2))
        out = np.minimum(rim, d.reshape(rim.shape))
        if self.belief is not None:
            out = np.minimum(out, self.belief.unsafe_distance(q))
        return out


def build_terminal_cost(measurement: Measurement, env_belief=None) -> TerminalCost:
    """Terminal cost for the avoid problem.

    `env_belief` (accumulated prior scans) can only tighten the cost: the
    oracle must never certify states outside the *current* scan, so prior
    free-space knowledge is ignored and prior unsafe evidence is folded in
    by pointwise minimum.
    """
    return TerminalCost(measurement, belief=env_belief)


@dataclass
class ValueGrid:
    """Gridded avoid-value function with interpolation and gradients."""

    axes: list
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    _interp: object = field(default=None, repr=False)
    _grad_arrays: object = field(default=None, repr=False)
    _grad_interp: object = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def _wrap_point(self, x):
        x = np.array(x, dtype=float)
        for k, ax in enumerate(self.axes):
            if ax.periodic:
                period = ax.hi - ax.lo
                x[..., k] = ax.lo + np.mod(x[..., k] - ax.lo, period)
            else:
                lo, hi = ax.lo, ax.hi
                xc = np.clip(x[..., k], lo, hi)
                if np.any(np.abs(xc - x[..., k]) > 1e-9 * max(1.0, hi - lo)):
                    raise OutOfGridError(f"query outside grid along axis {k}")
                x[..., k] = xc
        return x

    def _augmented(self, arr):
        """Append the wrap-around sample on periodic axes."""
        pts = []
        for k, ax in enumerate(self.axes):
            p = ax.points
            if ax.periodic:
                p = np.append(p, ax.hi)
                arr = np.concatenate([arr, arr.take([0], axis=k)], axis=k)
            pts.append(p)
        return pts, arr

    def value_at(self, x) -> np.ndarray:
        if self._interp is None:
            pts, arr = self._augmented(self.values)
            self._interp = RegularGridInterpolator(pts, arr, method="linear",
                                                   bounds_error=True)
        return self._interp(self._wrap_point(x))

    def gradient_arrays(self) -> np.ndarray:
        """Central-difference gradient, shape grid + (d,); periodic wraps."""
        if self._grad_arrays is None:
            grads = np.empty(self.values.shape + (self.dim,))
            for k, ax in enumerate(self.axes):
                v = np.moveaxis(self.values, k, 0)
                out = np.empty_like(v)
                if ax.periodic:
                    out[:] = (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2 * ax.dx)
                else:
                    out[1:-1] = (v[2:] - v[:-2]) / (2 * ax.dx)
                    out[0] = (v[1] - v[0]) / ax.dx
                    out[-1] = (v[-1] - v[-2]) / ax.dx
                grads[..., k] = np.moveaxis(out, 0, k)
            self._grad_arrays = grads
        return self._grad_arrays

    def grad_at(self, x) -> np.ndarray:
        if self._grad_interp is None:
            pts, arr = self._augmented(self.gradient_arrays())
            self._grad_interp = RegularGridInterpolator(pts, arr, method="linear",
                                                        bounds_error=True)
        return self._grad_interp(self._wrap_point(x))

    def node_states(self) -> np.ndarray:
        mesh = np.meshgrid(*[ax.points for ax in self.axes], indexing="ij")
        return np.stack(mesh, axis=-1)

    def save(self, path):
        header = {
            "axes": [[ax.lo, ax.hi, ax.n, bool(ax.periodic)] for ax in self.axes],
            "metadata": self.metadata,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(VALUE_GRID_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.values, dtype=np.float64).tobytes())

    @classmethod
    def load(cls, path) -> "ValueGrid":
        with open(path, "rb") as fh:
            magic = fh.read(len(VALUE_GRID_MAGIC))
            if magic != VALUE_GRID_MAGIC:
                raise ValueError(f"{path}: not a value-grid cache file")
            size = int.from_bytes(fh.read(8), "little")
            header = json.loads(fh.read(size).decode())
            axes = [GridAxis(lo, hi, n, periodic) for lo, hi, n, periodic in header["axes"]]
            shape = tuple(ax.n for ax in axes)
            values = np.frombuffer(fh.read(), dtype=np.float64).reshape(shape).copy()
        return cls(axes=axes, values=values, metadata=header["metadata"])


def _one_sided_diffs(V, axis_index, ax: GridAxis):
    """Backward and forward differences along one axis."""
    v = np.moveaxis(V, axis_index, 0)
    dm = np.empty_like(v)
    dp = np.empty_like(v)
    if ax.periodic:
        dm[:] = (v - np.roll(v, 1, axis=0)) / ax.dx
        dp[:] = (np.roll(v, -1, axis=0) - v) / ax.dx
    else:
        dm[1:] = (v[1:] - v[:-1]) / ax.dx
        dp[:-1] = dm[1:]
        # linear extrapolation at the boundary: ghost slope equals interior slope
        dm[0] = dm[1]
        dp[-1] = dm[-1]
    return np.moveaxis(dm, 0, axis_index), np.moveaxis(dp, 0, axis_index)


def solve_avoid_value(terminal_cost, sys: ControlAffineSystem, axes,
                      horizon: float = 20.0, *, tol: float = 1e-4,
                      cfl: float = 0.8, metadata: dict | None = None) -> ValueGrid:
    """Time-march the avoid-value variational inequality on a regular grid.

    Returns a ValueGrid whose metadata records convergence (`converged`),
    the marched time (`time_marched`), the per-axis Lax-Friedrichs
    dissipation coefficients, and the worst monotonicity violation (exactly
    0.0 for a correct monotone scheme).
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    axes = list(axes)
    vg = ValueGrid(axes=axes, values=np.empty(tuple(ax.n for ax in axes)))
    X = vg.node_states()
    q = X[..., :sys.observable_dim]
    l_grid = np.broadcast_to(np.asarray(terminal_cost(q), dtype=float), X.shape[:-1]).copy()

    f_grid = sys.f(X)
    g_grid = sys.g(X)
    u_max = sys.input_set.u_max
    # per-axis bound on |dH/dp_i| = |f_i + (g u)_i| over the grid and input set
    if sys.input_set.norm == "inf":
        gu_bound = np.sum(np.abs(g_grid), axis=-1) * u_max
    else:
        gu_bound = np.linalg.norm(g_grid, axis=-1) * u_max
    alphas = np.array([float(np.max(np.abs(f_grid[..., k]) + gu_bound[..., k]))
                       for k in range(len(axes))])
    alphas = np.maximum(alphas, 1e-12)
    dt = cfl / float(np.sum(alphas / [ax.dx for ax in axes]))

    V = l_grid.copy()
    sup_update = np.inf
    worst_monotone = 0.0
    t = 0.0
    sweeps = 0
    max_sweeps = int(np.ceil(horizon / dt))
    while sweeps < max_sweeps:
        diffs = [_one_sided_diffs(V, k, ax) for k, ax in enumerate(axes)]
        p_bar = np.stack([(dm + dp) * 0.5 for dm, dp in diffs], axis=-1)
        gT_p = np.einsum("...ij,...i->...j", g_grid, p_bar)
        ham = np.einsum("...i,...i->...", f_grid, p_bar) + u_max * sys.input_set.dual_norm(gT_p)
        diss = sum(alphas[k] * (dp - dm) * 0.5 for k, (dm, dp) in enumerate(diffs))
        V_new = np.minimum(l_grid, V + dt * (ham - diss))
        sup_update = float(np.max(np.abs(V_new - V)))
        worst_monotone = max(worst_monotone, float(np.max(V_new - V)))
        V = V_new
        t += dt
        sweeps += 1
        if sup_update < tol:
            break
    converged = sup_update < tol

    md = dict(metadata or {})
    md.update({
        "dynamics": sys.name,
        "horizon_requested": float(horizon),
        "time_marched": float(t),
        "dt": float(dt),
        "sweeps": sweeps,
        "converged": bool(converged),
        "sup_update": sup_update,
        "tol": float(tol),
        "cfl": float(cfl),
        "alphas": [float(a) for a in alphas],
        "dissipation_bound": float(sum(a * ax.dx for a, ax in zip(alphas, axes)) / 2.0),
        "monotonicity_violation": worst_monotone,
    })
    if not converged:
        import logging
        logging.getLogger(__name__).warning(
            "value iteration hit horizon %.3gs with update %.3g > tol %.3g "
            "(value is conservative, still usable)", horizon, sup_update, tol)
    return ValueGrid(axes=axes, values=V, metadata=md)


def extract_policy(vg: ValueGrid, sys: ControlAffineSystem, x) -> np.ndarray:
    """Gradient-greedy control u* = argmax_{u in U} <grad V, f + g u>."""
    x = np.asarray(x, dtype=float)
    grad = vg.grad_at(x)
    gT = np.einsum("...ij,...i->...j", sys.g(x), grad)
    return sys.input_set.support_maximizer(gT)


@dataclass
class OracleOutput:
    """Safe state-action pairs harvested from a value grid."""

    states: np.ndarray          # (N, d_x)
    controls: np.ndarray        # (N, d_u)
    margins: np.ndarray         # (N,) value at each state, all >= margin
    grid_indices: np.ndarray    # (N, d) provenance
    scan_hash: str = ""

    def __len__(self):
        return len(self.states)


def harvest_pairs(vg: ValueGrid, sys: ControlAffineSystem, margin: float,
                  theta_samples: int = 0, q_stride: int = 1,
                  scan_hash: str = "") -> OracleOutput:
    """Emit (state, policy control) for grid nodes with V >= margin.

    For systems with unobserved dimensions (Dubins heading) the trailing
    axes are subsampled to `theta_samples` slices; fully observable systems
    ignore `theta_samples`.  Controls come from the nodal value gradient.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    d = vg.dim
    sel = []
    for k, ax in enumerate(vg.axes):
        if k < sys.observable_dim:
            sel.append(np.arange(0, ax.n, max(q_stride, 1)))
        else:
            m = theta_samples if theta_samples > 0 else ax.n
            sel.append(np.unique((np.arange(m) * ax.n // m) % ax.n))
    idx_mesh = np.meshgrid(*sel, indexing="ij")
    flat_idx = tuple(m.ravel() for m in idx_mesh)
    vals = vg.values[flat_idx]
    keep = vals >= margin
    if not np.any(keep):
        raise EmptyHarvestError(
            f"no grid state clears margin {margin} (max value {vg.values.max():.4g})")
    indices = np.stack([fi[keep] for fi in flat_idx], axis=1)
    states = np.stack([vg.axes[k].points[indices[:, k]] for k in range(d)], axis=1)
    grads = vg.gradient_arrays()[tuple(indices.T)]
    gT = np.einsum("...ij,...i->...j", sys.g(states), grads)
    controls = sys.input_set.support_maximizer(gT)
    return OracleOutput(states=states, controls=controls, margins=vals[keep],
                        grid_indices=indices, scan_hash=scan_hash)
