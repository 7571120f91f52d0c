"""Ground-truth stimulus simulator.

A particle moves freely on a surface patch (cylinder wall or plane) in
intermittent thermal equilibrium: each short segment draws its start
uniformly over the patch and its velocity from the equilibrium Gaussian at
temperature ``kT``, runs in a straight line in the isometric chart, and is
truncated where it exits the patch.  Laboratory positions place the patch
rigidly in 3-space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, InvalidSegmentError

__all__ = [
    "AnalyticEquilibrium",
    "BoltzmannSpec",
    "SurfacePatch",
    "WorldSegment",
    "WorldTrajectory",
    "analytic_covariance",
    "lab_position",
    "lab_positions",
    "sample_constant_speed_trajectory",
    "sample_segment",
    "sample_trajectory",
]


@dataclass(frozen=True)
class SurfacePatch:
    """A rectangular patch in isometric intrinsic coordinates (u, w).

    ``u`` runs along the cylinder axis (or the plane's first axis) and
    ``w`` is arc length around the wall (or the plane's second axis), so
    the induced metric is the identity.  ``rotation`` and ``translation``
    place the surface rigidly in the laboratory frame.
    """

    kind: str
    radius: float = 1.0
    u_range: tuple = (0.0, 1.0)
    w_range: tuple = (0.0, 1.0)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in ("cylinder", "plane"):
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.kind == "cylinder":
            if self.radius <= 0:
                raise ValueError("cylinder radius must be positive")
            if (self.w_range[1] - self.w_range[0]) > 2 * math.pi * self.radius + 1e-12:
                raise ValueError("patch wraps farther than the full circumference")
        rot = np.asarray(self.rotation, dtype=float)
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9:
            raise ValueError("placement rotation is not orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "u_range", (float(self.u_range[0]), float(self.u_range[1])))
        object.__setattr__(self, "w_range", (float(self.w_range[0]), float(self.w_range[1])))

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.u_range[0], self.w_range[0]])

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.u_range[1], self.w_range[1]])

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    @classmethod
    def with_random_pose(cls, kind: str, rng: np.random.Generator,
                         radius: float = 1.0) -> "SurfacePatch":
        """Unit patch at an arbitrary rigid placement drawn from ``rng``."""
        a = rng.normal(size=(3, 3))
        q, r = np.linalg.qr(a)
        q *= np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        t = rng.uniform(-0.5, 0.5, size=3)
        return cls(kind=kind, radius=radius, rotation=q, translation=t)


@dataclass(frozen=True)
class BoltzmannSpec:
    """Equilibrium parameters; only the zero potential is supported."""

    kT: float
    mass: float = 1.0
    potential: float = 0.0

    def __post_init__(self):
        if self.kT <= 0:
            raise ValueError("kT must be positive")
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.potential != 0.0:
            raise ValueError("only the zero potential is supported")


@dataclass(frozen=True)
class WorldSegment:
    segment_id: int
    dt: float
    intrinsic: np.ndarray
    lab: np.ndarray

    @property
    def n_points(self) -> int:
        return self.intrinsic.shape[0]


@dataclass(frozen=True)
class WorldTrajectory:
    segments: tuple
    resampled: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def n_points(self) -> int:
        return sum(s.n_points for s in self.segments)

    @property
    def dt(self) -> float:
        return self.segments[0].dt if self.segments else 0.0


def _surface_point(surface: SurfacePatch, u, w):
    if surface.kind == "cylinder":
        r = surface.radius
        local = np.stack([r * np.cos(w / r), r * np.sin(w / r), u], axis=-1)
    else:
        local = np.stack([u, w, np.zeros_like(u)], axis=-1)
    return local @ surface.rotation.T + surface.translation


def lab_position(surface: SurfacePatch, p) -> np.ndarray:
    """Laboratory 3-vector of the intrinsic point ``p``; the point must lie
    on the patch."""
    p = np.asarray(p, dtype=float)
    if not surface.contains(p):
        raise DomainError(f"intrinsic point {p.tolist()} is off the patch")
    return _surface_point(surface, p[0], p[1])


def lab_positions(surface: SurfacePatch, pts) -> np.ndarray:
    """Vectorized `lab_position` over an (n, 2) array."""
    pts = np.asarray(pts, dtype=float)
    if np.any(pts < surface.lo) or np.any(pts > surface.hi):
        raise DomainError("intrinsic points off the patch")
    return _surface_point(surface, pts[:, 0], pts[:, 1])


def _truncate_inside(surface: SurfacePatch, pts: np.ndarray) -> np.ndarray:
    inside = np.all((pts >= surface.lo) & (pts <= surface.hi), axis=1)
    if inside.all():
        return pts
    first_out = int(np.argmin(inside))
    return pts[:first_out]


def _free_flight(surface, x0, v, duration, dt):
    n = int(math.floor(duration / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    pts = x0[None, :] + t[:, None] * v[None, :]
    return _truncate_inside(surface, pts)


def sample_segment(surface: SurfacePatch, spec: BoltzmannSpec, duration: float,
                   dt: float, rng: np.random.Generator, segment_id: int = 0,
                   max_retries: int = 100):
    """One free-flight segment from the equilibrium ensemble.

    Start uniform over the patch, velocity Gaussian with per-component
    variance ``kT/mass``, straight-line motion in the isometric chart,
    truncated at patch exit.  Draws that truncate below two points are
    discarded and resampled (bounded retries).  Returns the segment plus
    the number of retries used.
    """
    if duration < 2 * dt:
        raise InvalidSegmentError("duration must cover at least two samples")
    for attempt in range(max_retries):
        x0 = surface.lo + rng.random(2) * surface.extent
        v = rng.normal(0.0, math.sqrt(spec.kT / spec.mass), size=2)
        pts = _free_flight(surface, x0, v, duration, dt)
        if pts.shape[0] >= 2:
            seg = WorldSegment(segment_id=segment_id, dt=dt, intrinsic=pts,
                               lab=_surface_point(surface, pts[:, 0], pts[:, 1]))
            return seg, attempt
    raise InvalidSegmentError(f"segment resampling failed after {max_retries} tries")


def _seed_list(seed) -> list:
    try:
        return [int(s) for s in seed]
    except TypeError:
        return [int(seed)]


def sample_trajectory(surface: SurfacePatch, spec: BoltzmannSpec, n_segments: int,
                      duration: float, dt: float, seed) -> WorldTrajectory:
    """Concatenate independent equilibrium segments.

    Each segment uses its own stream derived from ``(seed, segment_id)``,
    so any sampling order reproduces the same trajectory.  ``seed`` may be
    an integer or a sequence of integers.
    """
    if n_segments < 1:
        raise InvalidSegmentError("need at least one segment")
    base = _seed_list(seed)
    segments = []
    resampled = 0
    for sid in range(n_segments):
        rng = np.random.default_rng(base + [sid])
        seg, retries = sample_segment(surface, spec, duration, dt, rng, segment_id=sid)
        resampled += retries
        segments.append(seg)
    return WorldTrajectory(segments=segments, resampled=resampled)


def sample_constant_speed_trajectory(surface: SurfacePatch, speed: float,
                                     n_segments: int, duration: float, dt: float,
                                     seed) -> WorldTrajectory:
    """Straight segments at a fixed speed in uniformly random directions.

    The constant-speed analogue of `sample_trajectory`, for worlds whose
    velocity statistics are set by a speed rather than a temperature.
    """
    if n_segments < 1:
        raise InvalidSegmentError("need at least one segment")
    base = _seed_list(seed)
    segments = []
    resampled = 0
    for sid in range(n_segments):
        rng = np.random.default_rng(base + [sid])
        for attempt in range(100):
            x0 = surface.lo + rng.random(2) * surface.extent
            theta = rng.uniform(0.0, 2.0 * math.pi)
            v = speed * np.array([math.cos(theta), math.sin(theta)])
            pts = _free_flight(surface, x0, v, duration, dt)
            if pts.shape[0] >= 2:
                segments.append(WorldSegment(
                    segment_id=sid, dt=dt, intrinsic=pts,
                    lab=_surface_point(surface, pts[:, 0], pts[:, 1])))
                resampled += attempt
                break
        else:
            raise InvalidSegmentError("segment resampling failed")
    return WorldTrajectory(segments=segments, resampled=resampled)


@dataclass(frozen=True)
class AnalyticEquilibrium:
    """Closed-form equilibrium fields in the isometric chart."""

    covariance: np.ndarray
    metric: np.ndarray


def analytic_covariance(surface: SurfacePatch, spec: BoltzmannSpec) -> AnalyticEquilibrium:
    """Exact velocity covariance and induced metric for free equilibrium
    motion in the isometric chart: covariance ``(kT/mass) I`` and metric
    ``(mass/kT) I``."""
    d = 2
    c = (spec.kT / spec.mass) * np.eye(d)
    g = (spec.mass / spec.kT) * np.eye(d)
    return AnalyticEquilibrium(covariance=c, metric=g)
