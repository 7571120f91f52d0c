"""Local velocity statistics of chart trajectories.

Estimates per-cell second moments of trajectory velocities on a regular
grid, optionally smooths them, and inverts the result into a metric
field.  Velocities are central differences inside a segment; segment
boundaries are never differenced across.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidSegmentError, SingularCovarianceError
from .geometry import MetricField

__all__ = [
    "CovarianceField",
    "GridSpec",
    "TrajectorySegment",
    "VelocitySample",
    "accumulate",
    "accumulate_arrays",
    "estimate_velocities",
    "smooth",
    "to_metric",
    "velocity_arrays",
]


@dataclass(frozen=True)
class TrajectorySegment:
    """Uniformly sampled chart path; differencing never crosses segments."""

    dt: float
    points: np.ndarray
    segment_id: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if self.dt <= 0:
            raise InvalidSegmentError(f"segment {self.segment_id}: dt must be positive")
        if points.ndim != 2 or points.shape[0] < 2:
            raise InvalidSegmentError(
                f"segment {self.segment_id}: need at least two points, got shape {points.shape}"
            )
        if not np.all(np.isfinite(points)):
            raise InvalidSegmentError(f"segment {self.segment_id}: non-finite points")
        object.__setattr__(self, "points", points)

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class VelocitySample:
    at: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class GridSpec:
    """Regular cell grid over an axis-aligned box."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if np.any(self.hi <= self.lo):
            raise ValueError("grid box is empty")
        if any(n < 1 for n in self.shape):
            raise ValueError("grid needs at least one cell per axis")

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    @property
    def cell_size(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``(*shape, d)``."""
        axes = [
            self.lo[i] + (np.arange(self.shape[i]) + 0.5) * self.cell_size[i]
            for i in range(self.d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index per point; boundary points clamp inward."""
        rel = (points - self.lo) / self.cell_size
        idx = np.clip(rel.astype(np.intp), 0, np.asarray(self.shape) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.shape)

    @classmethod
    def cover(cls, points: np.ndarray, shape=(24, 24), expand: float = 0.05) -> "GridSpec":
        """Bounding box of ``points`` expanded by ``expand`` of its span."""
        points = np.asarray(points, dtype=float)
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        pad = 0.5 * expand * span
        return cls(lo=lo - pad, hi=hi + pad, shape=shape)


@dataclass(frozen=True)
class CovarianceField:
    """Per-cell mean outer products of velocities, with sample counts.

    ``supported`` marks cells whose statistics are considered usable:
    initially those with at least ``support_threshold`` samples, plus any
    cells later filled by `smooth`.
    """

    grid: GridSpec
    counts: np.ndarray
    second_moment: np.ndarray
    support_threshold: int
    supported: Optional[np.ndarray] = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        moment = np.asarray(self.second_moment, dtype=float)
        if counts.shape != self.grid.shape:
            raise ValueError("counts shape does not match grid")
        if moment.shape != self.grid.shape + (self.grid.d, self.grid.d):
            raise ValueError("moment shape does not match grid")
        if self.supported is None:
            object.__setattr__(self, "supported", counts >= self.support_threshold)
        else:
            object.__setattr__(self, "supported", np.asarray(self.supported, dtype=bool))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "second_moment", moment)

    @property
    def d(self) -> int:
        return self.grid.d

    def support_fraction(self) -> float:
        return float(np.mean(self.supported))


def estimate_velocities(seg: TrajectorySegment):
    """Central-difference velocity samples at the segment's interior points.

    Two-point segments fall back to a single forward difference attributed
    at the first point; endpoints are omitted otherwise.
    """
    if seg.dt <= 0:
        raise InvalidSegmentError("dt must be positive")
    pts = seg.points
    if pts.shape[0] == 2:
        v = (pts[1] - pts[0]) / seg.dt
        return [VelocitySample(at=pts[0].copy(), velocity=v)]
    v = (pts[2:] - pts[:-2]) / (2.0 * seg.dt)
    return [VelocitySample(at=pts[i + 1].copy(), velocity=v[i]) for i in range(v.shape[0])]


def velocity_arrays(segments):
    """Bulk form of `estimate_velocities` over many segments.

    Returns ``(positions, velocities)`` arrays concatenated in segment
    order; same differences as the per-segment API.
    """
    pos_parts, vel_parts = [], []
    d = None
    for seg in segments:
        pts = seg.points
        d = pts.shape[1]
        if seg.dt <= 0:
            raise InvalidSegmentError("dt must be positive")
        if pts.shape[0] == 2:
            pos_parts.append(pts[:1])
            vel_parts.append((pts[1:] - pts[:-1]) / seg.dt)
        else:
            pos_parts.append(pts[1:-1])
            vel_parts.append((pts[2:] - pts[:-2]) / (2.0 * seg.dt))
    if not pos_parts:
        return np.empty((0, d or 0)), np.empty((0, d or 0))
    return np.concatenate(pos_parts), np.concatenate(vel_parts)


def accumulate_arrays(positions, velocities, grid: GridSpec,
                      support_threshold: int = 20) -> CovarianceField:
    """Per-cell mean outer product of ``velocities`` binned at ``positions``.

    Samples outside the grid box are ignored.  Accumulation is serial in
    input order, so results are deterministic.
    """
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    d = grid.d
    inside = np.all((positions >= grid.lo) & (positions <= grid.hi), axis=1)
    pos = positions[inside]
    vel = velocities[inside]
    flat = grid.cell_of(pos)
    n_cells = grid.n_cells
    counts = np.bincount(flat, minlength=n_cells).astype(np.int64)
    moment = np.empty((n_cells, d, d))
    for i in range(d):
        for j in range(i, d):
            s = np.bincount(flat, weights=vel[:, i] * vel[:, j], minlength=n_cells)
            moment[:, i, j] = s
            moment[:, j, i] = s
    nz = counts > 0
    moment[nz] /= counts[nz, None, None]
    moment[~nz] = 0.0
    return CovarianceField(
        grid=grid,
        counts=counts.reshape(grid.shape),
        second_moment=moment.reshape(grid.shape + (d, d)),
        support_threshold=support_threshold,
    )


def accumulate(samples, grid: GridSpec, support_threshold: int = 20) -> CovarianceField:
    """`accumulate_arrays` over a list of VelocitySample."""
    if len(samples) == 0:
        positions = np.empty((0, grid.d))
        velocities = np.empty((0, grid.d))
    else:
        positions = np.stack([s.at for s in samples])
        velocities = np.stack([s.velocity for s in samples])
    return accumulate_arrays(positions, velocities, grid, support_threshold)


def smooth(field: CovarianceField, bandwidth: float) -> CovarianceField:
    """Gaussian-kernel smoothing of cell means, weighted by sample counts.

    Unsupported cells are filled from neighbors whenever any supported cell
    center lies within twice the bandwidth; cells with no such neighbor are
    left untouched and stay unsupported.  ``bandwidth`` is in chart units;
    zero returns the field unchanged.
    """
    if bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    if bandwidth == 0.0:
        return field
    grid = field.grid
    centers = grid.centers().reshape(-1, grid.d)
    counts = field.counts.reshape(-1).astype(float)
    moment = field.second_moment.reshape(-1, grid.d, grid.d)
    supported = field.supported.reshape(-1)

    d2 = np.sum((centers[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    kernel = np.exp(-0.5 * d2 / bandwidth**2)
    kernel[d2 > (3.0 * bandwidth) ** 2] = 0.0
    weights = kernel * counts[None, :]
    denom = weights.sum(axis=1)
    ok = denom > 0
    smoothed = moment.copy()
    smoothed[ok] = np.einsum("ij,jkl->ikl", weights[ok], moment) / denom[ok, None, None]

    near_support = (d2[:, supported] <= (2.0 * bandwidth) ** 2).any(axis=1) \
        if supported.any() else np.zeros(len(centers), dtype=bool)
    fillable = ~supported & near_support & ok
    new_supported = supported | fillable
    out_moment = moment.copy()
    out_moment[supported | fillable] = smoothed[supported | fillable]
    return CovarianceField(
        grid=grid,
        counts=field.counts,
        second_moment=out_moment.reshape(field.second_moment.shape),
        support_threshold=field.support_threshold,
        supported=new_supported.reshape(grid.shape),
    )


def to_metric(field: CovarianceField, shrinkage: float = 0.05,
              condition_cap: float = 1e8) -> MetricField:
    """Invert per-cell covariances into a metric field on the cell centers.

    Each supported cell's covariance is first shrunk toward the
    count-weighted global mean by ``shrinkage``; cells that were never
    supported receive the global mean outright and are flagged in the
    output's ``supported`` mask.  A cell whose shrunk covariance has a
    condition number above ``condition_cap`` raises
    SingularCovarianceError naming the cell.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1]")
    grid = field.grid
    d = grid.d
    supported = field.supported.reshape(-1)
    counts = field.counts.reshape(-1).astype(float)
    moment = field.second_moment.reshape(-1, d, d)
    if np.any(counts[field.counts.reshape(-1) >= field.support_threshold] < d):
        raise SingularCovarianceError("a supported cell has fewer samples than d")

    # Global mean over supported territory; a fully-unsupported field falls
    # back to whatever samples exist so sparse runs still produce a field.
    w = np.where(supported, counts, 0.0)
    if w.sum() == 0:
        w = counts
    if w.sum() == 0:
        raise SingularCovarianceError("covariance field holds no samples")
    global_mean = np.einsum("i,ikl->kl", w, moment) / w.sum()

    shrunk = np.where(
        supported[:, None, None],
        (1.0 - shrinkage) * moment + shrinkage * global_mean,
        global_mean,
    )
    shrunk = 0.5 * (shrunk + np.swapaxes(shrunk, -1, -2))

    conds = np.linalg.cond(shrunk[supported])
    if np.any(~np.isfinite(conds)) or np.any(conds > condition_cap):
        flat_bad = np.flatnonzero(supported)[
            int(np.argmax(np.where(np.isfinite(conds), conds, np.inf)))]
        cell = np.unravel_index(flat_bad, grid.shape)
        raise SingularCovarianceError(
            f"cell {tuple(int(c) for c in cell)} covariance condition number "
            f"exceeds {condition_cap:g}", cell=tuple(int(c) for c in cell))

    try:
        tensors = np.linalg.inv(shrunk)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"cell inversion failed: {exc}") from exc
    tensors = 0.5 * (tensors + np.swapaxes(tensors, -1, -2))
    cell_size = grid.cell_size
    return MetricField(
        lo=grid.lo + 0.5 * cell_size,
        spacing=cell_size,
        tensors=tensors.reshape(grid.shape + (d, d)),
        supported=supported.reshape(grid.shape),
    )
