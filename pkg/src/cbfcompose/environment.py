"""2D obstacle worlds, exact signed distances, and an idealized LiDAR scanner.

The environment is the ground truth the agent is *not* allowed to read
directly during exploration; it is only accessed through `lidar_scan` and,
for auditing, `signed_distance` / `is_trajectory_safe`.

All geometric queries are pure functions of their inputs and accept batched
points, so they are safe to call from multiple threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class ScanFromUnsafeStateError(RuntimeError):
    """Raised when a LiDAR scan is requested from inside an obstacle."""


# ---------------------------------------------------------------------------
# Obstacle shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Circle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("circle radius must be positive")

    def signed_distance(self, q):
        # positive outside the obstacle
        return np.linalg.norm(q - self.center, axis=-1) - self.radius

    def ray_hit(self, origin, direction):
        """Distance along the ray to the first intersection, inf if missed."""
        oc = self.center - origin
        proj = float(np.dot(oc, direction))
        d2 = float(np.dot(oc, oc)) - proj * proj
        r2 = self.radius * self.radius
        if d2 > r2:
            return np.inf
        half = np.sqrt(max(r2 - d2, 0.0))
        t0, t1 = proj - half, proj + half
        if t1 < 0:
            return np.inf
        return max(t0, 0.0)


@dataclass(frozen=True)
class AxisBox:
    """Axis-aligned rectangular obstacle."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if not np.all(self.hi > self.lo):
            raise ValueError("box extents must be positive")

    def signed_distance(self, q):
        center = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo)
        d = np.abs(q - center) - half
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.max(d, axis=-1), 0.0)
        return outside + inside

    def ray_hit(self, origin, direction):
        # slab test
        with np.errstate(divide="ignore"):
            inv = np.where(direction != 0.0, 1.0 / direction, np.inf)
        t1 = (self.lo - origin) * inv
        t2 = (self.hi - origin) * inv
        tmin = float(np.max(np.minimum(t1, t2)))
        tmax = float(np.min(np.maximum(t1, t2)))
        if tmax < max(tmin, 0.0):
            return np.inf
        return max(tmin, 0.0)


@dataclass(frozen=True)
class HalfPlane:
    """Wall: the unsafe side is {q : normal . q >= offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        nrm = np.linalg.norm(n)
        if nrm == 0:
            raise ValueError("half-plane normal must be nonzero")
        object.__setattr__(self, "normal", n / nrm)
        object.__setattr__(self, "offset", float(self.offset) / nrm)

    def signed_distance(self, q):
        return self.offset - q @ self.normal

    def ray_hit(self, origin, direction):
        denom = float(np.dot(self.normal, direction))
        num = self.offset - float(np.dot(self.normal, origin))
        if num <= 0:
            return 0.0  # origin already on the unsafe side
        if denom <= 0:
            return np.inf
        return num / denom


Shape = Circle | AxisBox | HalfPlane


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


@dataclass
class Environment:
    """Unknown geometric world: obstacles plus rectangular workspace walls.

    The safe set is the obstacle-free interior of the workspace box.
    """

    obstacles: list
    workspace_lo: np.ndarray
    workspace_hi: np.ndarray

    def __post_init__(self):
        self.workspace_lo = np.asarray(self.workspace_lo, dtype=float)
        self.workspace_hi = np.asarray(self.workspace_hi, dtype=float)
        if not np.all(self.workspace_hi > self.workspace_lo):
            raise ValueError("workspace bounds must have positive extent")

    def workspace_signed_distance(self, q):
        """Distance to the nearest workspace wall, positive inside."""
        q = np.asarray(q, dtype=float)
        lo = q - self.workspace_lo
        hi = self.workspace_hi - q
        return np.minimum(lo.min(axis=-1), hi.min(axis=-1))

    def _workspace_exit(self, origin, direction):
        """Ray distance to leaving the workspace box from inside."""
        ts = []
        for k in range(2):
            if direction[k] > 0:
                ts.append((self.workspace_hi[k] - origin[k]) / direction[k])
            elif direction[k] < 0:
                ts.append((self.workspace_lo[k] - origin[k]) / direction[k])
        return min(ts) if ts else np.inf


def signed_distance(env: Environment, q) -> np.ndarray:
    """Signed distance (meters) from q to the unsafe set; positive = free.

    Exact for circles and boxes. Accepts q of shape (..., 2).
    """
    q = np.asarray(q, dtype=float)
    sd = env.workspace_signed_distance(q)
    for shape in env.obstacles:
        sd = np.minimum(sd, shape.signed_distance(q))
    return sd


def first_hit(env: Environment, origin, direction) -> float:
    """Distance along a unit ray to the first obstacle or workspace wall."""
    t = env._workspace_exit(origin, direction)
    for shape in env.obstacles:
        t = min(t, shape.ray_hit(origin, direction))
    return t


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


@dataclass
class Measurement:
    """One LiDAR scan: safe/unsafe point clouds in observable coordinates.

    `ray_angles`/`ray_hits` retain the per-ray first-hit ranges (capped at the
    scan radius) so that membership in the observed free region can be decided
    without the environment.
    """

    scan_state: np.ndarray          # full state the scan was taken at
    scan_center: np.ndarray         # projection onto observable coordinates
    scan_radius: float
    safe_points: np.ndarray         # (Ns, 2)
    unsafe_points: np.ndarray       # (Nu, 2), includes the scan-radius ring
    ray_angles: np.ndarray          # (R,)
    ray_hits: np.ndarray            # (R,) first-hit range along each ray, <= radius
    _hash: str = field(default="", repr=False)

    @property
    def scan_hash(self) -> str:
        if not self._hash:
            m = hashlib.sha256()
            for arr in (self.scan_state, self.scan_center,
                        np.atleast_1d(self.scan_radius),
                        self.safe_points, self.unsafe_points,
                        self.ray_angles, self.ray_hits):
                m.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
            self._hash = m.hexdigest()
        return self._hash

    def hit_range(self, angles) -> np.ndarray:
        """First-hit range at arbitrary angles, linear between adjacent rays."""
        angles = np.mod(np.asarray(angles, dtype=float), 2.0 * np.pi)
        spacing = 2.0 * np.pi / len(self.ray_angles)
        idx = np.floor(angles / spacing).astype(int) % len(self.ray_angles)
        nxt = (idx + 1) % len(self.ray_angles)
        frac = angles / spacing - np.floor(angles / spacing)
        return (1.0 - frac) * self.ray_hits[idx] + frac * self.ray_hits[nxt]

    def contains_q(self, q, tol: float = 0.0) -> np.ndarray:
        """True where q lies in the observed free region of this scan.

        The free region is star-shaped around the scan center; between rays
        the boundary is interpolated linearly in angle.
        """
        q = np.asarray(q, dtype=float)
        rel = q - self.scan_center
        dist = np.linalg.norm(rel, axis=-1)
        ang = np.arctan2(rel[..., 1], rel[..., 0])
        limit = np.minimum(self.hit_range(ang), self.scan_radius)
        return dist <= limit - tol

    def free_space_distance(self, q) -> np.ndarray:
        """Approximate signed distance to the boundary of the observed free
        region: min(distance to unsafe evidence, distance to the scan rim).
        Positive inside observed free space."""
        q = np.asarray(q, dtype=float)
        rim = self.scan_radius - np.linalg.norm(q - self.scan_center, axis=-1)
        if len(self.unsafe_points) == 0:
            return rim
        from scipy.spatial import cKDTree

        tree = getattr(self, "_unsafe_tree", None)
        if tree is None:
            tree = cKDTree(self.unsafe_points)
            object.__setattr__(self, "_unsafe_tree", tree)
        d, _ = tree.query(q.reshape(-1, 2))
        return np.minimum(rim, d.reshape(rim.shape))


def lidar_scan(env: Environment, x, scan_radius: float, n_rays: int = 72,
               sample_step: float = 0.05) -> Measurement:
    """Idealized LiDAR: reports everything within `scan_radius` of the agent.

    Casts `n_rays` rays at uniform absolute angles from the projected
    position.  Along each ray, points are sampled at a fixed arclength step:
    strictly before the first hit they are safe, from the hit outward (still
    within the scan radius) they are unsafe.  The full scan-radius ring is
    appended to the unsafe cloud since everything beyond the scan could be an
    obstacle.  Deterministic given inputs.
    """
    x = np.asarray(x, dtype=float)
    q0 = x[:2]
    if signed_distance(env, q0) <= 0:
        raise ScanFromUnsafeStateError(
            f"scan requested from unsafe position {q0.tolist()}")
    angles = 2.0 * np.pi * np.arange(n_rays) / n_rays
    safe = [q0[None, :]]
    unsafe = []
    hits = np.empty(n_rays)
    for i, ang in enumerate(angles):
        d = np.array([np.cos(ang), np.sin(ang)])
        hit = min(first_hit(env, q0, d), scan_radius)
        hits[i] = hit
        ts = np.arange(sample_step, scan_radius + 1e-12, sample_step)
        pts = q0[None, :] + ts[:, None] * d[None, :]
        safe.append(pts[ts < hit])
        if hit < scan_radius:
            beyond = pts[ts >= hit]
            unsafe.append(q0[None, :] + hit * d[None, :])
            unsafe.append(beyond)
    # scan-radius ring, treated as unsafe by design
    ring = q0[None, :] + scan_radius * np.stack(
        [np.cos(angles), np.sin(angles)], axis=1)
    unsafe.append(ring)
    return Measurement(
        scan_state=x.copy(),
        scan_center=q0.copy(),
        scan_radius=float(scan_radius),
        safe_points=np.concatenate(safe, axis=0),
        unsafe_points=np.concatenate(unsafe, axis=0),
        ray_angles=angles,
        ray_hits=hits,
    )


def is_trajectory_safe(env: Environment, states) -> tuple[bool, int]:
    """Ground-truth audit: True iff every logged position is strictly free.

    Returns (safe, first_violation_index); the index is -1 when safe.
    """
    states = np.asarray(states, dtype=float)
    if states.size == 0:
        return True, -1
    sd = signed_distance(env, states[..., :2])
    bad = np.nonzero(sd <= 0.0)[0]
    if bad.size:
        return False, int(bad[0])
    return True, -1
