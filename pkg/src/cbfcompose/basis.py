"""Compactly-supported radial basis functions (Wendland family) and centers.

The basis function is phi(r) = max(0, 1 - r/s)^4 (1 + 4 r/s) / 20, which is
C^2 on [0, inf) and identically zero for r >= s.  Zero end-behavior is what
makes learned barrier functions strictly negative away from their data, so
they can be composed by pointwise maximum.

Angular state dimensions (vehicle heading) use the wrapped difference on
[-pi, pi) inside the radial distance, so the basis respects the circle
topology instead of tearing at +-pi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyCenterSetError(ValueError):
    """Raised when a center lattice has no points inside its domain."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box domain (per-dimension bounds)."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.lo.shape != self.hi.shape or np.any(self.hi < self.lo):
            raise ValueError("invalid box bounds")

    @property
    def dim(self):
        return len(self.lo)


@dataclass(frozen=True)
class Ball:
    """Euclidean ball domain."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self):
        return len(self.center)


def wendland_eval(r, s: float):
    """Wendland value at radial distance r with support radius s (d_x <= 3)."""
    if s <= 0:
        raise ValueError("support radius must be positive")
    t = np.asarray(r, dtype=float) / s
    base = np.maximum(0.0, 1.0 - t)
    return base ** 4 * (1.0 + 4.0 * t) / 20.0


def wendland_slope(r, s: float):
    """d/dr of the Wendland function; zero at r=0 and for r >= s."""
    t = np.asarray(r, dtype=float) / s
    base = np.maximum(0.0, 1.0 - t)
    return -t * base ** 3 / s


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class CsRbfBasis:
    """A fixed set of Wendland CS-RBF centers with a common support radius."""

    centers: np.ndarray             # (J, d)
    support_radius: float
    angular_dims: tuple = ()

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", c)
        if self.support_radius <= 0:
            raise ValueError("support radius must be positive")
        if len(c) < 1 or not np.all(np.isfinite(c)):
            raise ValueError("need at least one finite center")

    @property
    def n_features(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def differences(self, x) -> np.ndarray:
        """x - z_j with angular dims wrapped; shape (..., J, d)."""
        x = np.asarray(x, dtype=float)
        diff = x[..., None, :] - self.centers
        for k in self.angular_dims:
            diff[..., k] = wrap_angle(diff[..., k])
        return diff

    def phi(self, x) -> np.ndarray:
        return phi_vec(x, self)

    def jacobian(self, x) -> np.ndarray:
        return phi_jacobian(x, self)


def phi_vec(x, basis: CsRbfBasis) -> np.ndarray:
    """Feature vector (phi(x, z_1), ..., phi(x, z_J)); shape (..., J)."""
    diff = basis.differences(x)
    r = np.linalg.norm(diff, axis=-1)
    return wendland_eval(r, basis.support_radius)


def phi_jacobian(x, basis: CsRbfBasis) -> np.ndarray:
    """Analytic Jacobian of the feature vector; shape (..., J, d).

    Row j is -(1 - r_j/s)_+^3 (x - z_j) / s^2, which is the closed form of
    phi'(r) * (x - z_j)/r and stays well-defined at r = 0.
    """
    diff = basis.differences(x)
    r = np.linalg.norm(diff, axis=-1)
    s = basis.support_radius
    coef = -np.maximum(0.0, 1.0 - r / s) ** 3 / (s * s)
    return coef[..., None] * diff


def grid_centers(domain, spacing, angular: tuple = ()) -> np.ndarray:
    """Regular lattice of centers clipped to a box or ball domain.

    `domain` covers the non-angular dimensions; dimensions listed in
    `angular` are filled with evenly spaced wrapped samples on [-pi, pi)
    (count chosen so the spacing divides 2*pi, no duplicate at the seam).
    `spacing` is a scalar or one step per output dimension.
    """
    d_spatial = domain.dim
    d_total = d_spatial + len(angular)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (d_total,))
    if np.any(spacing <= 0):
        raise ValueError("spacing must be positive")
    angular = tuple(sorted(angular))
    spatial_idx = [k for k in range(d_total) if k not in angular]

    axes = [None] * d_total
    if isinstance(domain, Box):
        for j, k in enumerate(spatial_idx):
            n = int(np.floor((domain.hi[j] - domain.lo[j]) / spacing[k] + 1e-9)) + 1
            if n < 1:
                raise EmptyCenterSetError("domain smaller than spacing")
            axes[k] = domain.lo[j] + spacing[k] * np.arange(n)
    elif isinstance(domain, Ball):
        # lattice anchored at the ball center, symmetric
        for j, k in enumerate(spatial_idx):
            m = int(np.floor(domain.radius / spacing[k] + 1e-9))
            axes[k] = domain.center[j] + spacing[k] * np.arange(-m, m + 1)
    else:
        raise TypeError(f"unsupported domain type {type(domain).__name__}")
    for k in angular:
        n = max(int(round(2.0 * np.pi / spacing[k])), 1)
        axes[k] = -np.pi + (2.0 * np.pi / n) * np.arange(n)

    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    if isinstance(domain, Ball):
        keep = np.linalg.norm(pts[:, spatial_idx] - domain.center, axis=1) <= domain.radius + 1e-12
        pts = pts[keep]
    if len(pts) == 0:
        raise EmptyCenterSetError("no lattice points inside domain")
    return pts
