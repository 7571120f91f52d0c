"""Coordinate-system-independent machinery on a sampled metric field.

A grid-backed metric tensor field supplies lengths; from it this module
derives connection coefficients by central differences, transports vectors
along polylines, iterates self-transport ("carry an increment along
itself"), and solves for the transport-count coordinates of a target point
relative to a three-anchor frame.  Everything here is a pure function of
its inputs; all types are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DomainError, InvalidFrameError, NoSolutionError

__all__ = [
    "AnchorFrame",
    "LocateResult",
    "MetricField",
    "RelativeLocation",
    "TangentVector",
    "christoffel_at",
    "co_transport",
    "locate",
    "map_grid",
    "metric_length",
    "self_transport",
    "transport_step",
]


@dataclass(frozen=True)
class TangentVector:
    """A vector attached to a chart point (components in chart units per count)."""

    base: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float))
        if not (np.all(np.isfinite(self.base)) and np.all(np.isfinite(self.components))):
            raise ValueError("tangent vector has non-finite entries")
        if self.base.shape != self.components.shape:
            raise ValueError("base and components must have the same dimension")


@dataclass(frozen=True)
class MetricField:
    """Symmetric positive-definite tensors on a regular node lattice.

    ``tensors`` has shape ``(n_0, ..., n_{d-1}, d, d)``; node ``(i_0, ...)``
    sits at ``lo + i * spacing``.  Interpolation is multilinear on the
    stored components (symmetrized at construction), valid anywhere inside
    the lattice hull.  ``supported`` is an optional per-node diagnostic mask
    for territory actually backed by data; it does not restrict evaluation.
    """

    lo: np.ndarray
    spacing: np.ndarray
    tensors: np.ndarray
    supported: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        spacing = np.asarray(self.spacing, dtype=float)
        tensors = np.asarray(self.tensors, dtype=float)
        d = lo.shape[0]
        if tensors.ndim != d + 2 or tensors.shape[-2:] != (d, d):
            raise ValueError(f"tensor grid shape {tensors.shape} inconsistent with d={d}")
        if any(n < 2 for n in tensors.shape[:d]):
            raise ValueError("need at least two nodes per axis")
        if np.any(spacing <= 0):
            raise ValueError("spacing must be positive")
        asym = np.max(np.abs(tensors - np.swapaxes(tensors, -1, -2)))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(tensors)))):
            raise ValueError(f"stored tensors asymmetric by {asym}")
        tensors = 0.5 * (tensors + np.swapaxes(tensors, -1, -2))
        flat = tensors.reshape(-1, d, d)
        eigs = np.linalg.eigvalsh(flat)
        if np.any(eigs[:, 0] <= 0):
            bad = int(np.argmin(eigs[:, 0]))
            raise ValueError(
                f"node {np.unravel_index(bad, tensors.shape[:d])} is not positive definite"
            )
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "tensors", tensors)
        if self.supported is not None:
            object.__setattr__(self, "supported", np.asarray(self.supported, dtype=bool))

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    @property
    def shape(self) -> tuple:
        return self.tensors.shape[: self.d]

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.spacing * (np.asarray(self.shape) - 1)

    @property
    def default_h(self) -> float:
        """Finite-difference step: half the grid spacing."""
        return 0.5 * float(np.min(self.spacing))

    @property
    def default_h_max(self) -> float:
        """Transport substep cap: a quarter of the grid spacing."""
        return 0.25 * float(np.min(self.spacing))

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    def metric_at(self, p) -> np.ndarray:
        """Interpolated tensor at ``p``; raises DomainError outside the hull."""
        return _kernels.metric_at(self.lo, self.spacing, self.tensors,
                                  np.asarray(p, dtype=float))

    @classmethod
    def from_function(cls, fn, lo, hi, shape) -> "MetricField":
        """Sample ``fn(point) -> (d, d)`` on a regular lattice."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        shape = tuple(int(n) for n in shape)
        d = lo.shape[0]
        spacing = (hi - lo) / (np.asarray(shape) - 1)
        tensors = np.empty(shape + (d, d))
        for idx in np.ndindex(*shape):
            tensors[idx] = fn(lo + spacing * np.asarray(idx))
        return cls(lo=lo, spacing=spacing, tensors=tensors)

    @classmethod
    def constant(cls, g, lo, hi, nodes=2) -> "MetricField":
        """Uniform field equal to ``g`` everywhere on the box."""
        g = np.asarray(g, dtype=float)
        return cls.from_function(lambda _: g, lo, hi, (nodes,) * g.shape[0])


@dataclass(frozen=True)
class AnchorFrame:
    """Three anchor points: origin ``a`` plus the ends of the two defining
    increments ``a -> b`` and ``a -> c``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def validate(self) -> None:
        ab = self.b - self.a
        ac = self.c - self.a
        scale = np.linalg.norm(ab) * np.linalg.norm(ac)
        if scale == 0.0:
            raise InvalidFrameError("anchor frame has coincident points")
        m = np.stack([ac, ab], axis=1)
        if m.shape != (2, 2):
            raise InvalidFrameError("anchor frames are two-dimensional")
        if abs(np.linalg.det(m)) <= 1e-12 * scale:
            raise InvalidFrameError("anchor increments are linearly dependent")


@dataclass(frozen=True)
class RelativeLocation:
    """Transport counts: ``s1`` along the a->c increment, then ``s2`` along
    the carried local equivalent of the a->b increment."""

    s1: float
    s2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2])


@dataclass(frozen=True)
class LocateResult:
    """Per-point outcome of the location solve; never raises."""

    location: Optional[RelativeLocation]
    converged: bool
    residual: float
    iterations: int
    error: Optional[str] = None


def christoffel_at(field: MetricField, p, h: Optional[float] = None) -> np.ndarray:
    """Connection coefficients ``gamma[k, l, m]`` at ``p``.

    Central differences of the interpolated metric with step ``h``
    (default: half the grid spacing).  Symmetric in ``(l, m)`` exactly.
    """
    if h is None:
        h = field.default_h
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    return _kernels.christoffel(field.lo, field.spacing, field.tensors,
                                np.asarray(p, dtype=float), float(h))


def transport_step(v: TangentVector, delta, gamma) -> TangentVector:
    """Single linear transport update of ``v`` along the short segment ``delta``.

    ``gamma`` is evaluated at ``v.base`` by the caller; the returned vector
    is based at ``v.base + delta``.
    """
    delta = np.asarray(delta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    dv = -np.einsum("klm,l,m->k", gamma, v.components, delta)
    return TangentVector(base=v.base + delta, components=v.components + dv)


def self_transport(start, increment, count: float, field: MetricField,
                   h_max: Optional[float] = None, h: Optional[float] = None):
    """Carry ``increment`` along itself ``count`` times starting at ``start``.

    Each whole count moves the base along the chord spanned by the current
    increment (subdivided so no substep exceeds ``h_max``) while the
    increment is transported; the fractional remainder takes a chord scaled
    by the fraction.  Negative counts traverse the chords reversed.

    Returns ``(end, carried, path)`` where ``carried`` is a TangentVector at
    ``end`` and ``path`` is the (K, d) array of chord endpoints.
    """
    start = np.asarray(start, dtype=float)
    comps = increment.components if isinstance(increment, TangentVector) else increment
    comps = np.asarray(comps, dtype=float)
    if h_max is None:
        h_max = field.default_h_max
    if h is None:
        h = field.default_h
    end, carried, path = _kernels.self_transport(
        field.lo, field.spacing, field.tensors, start, comps,
        float(count), float(h_max), float(h))
    return end, TangentVector(base=end, components=carried), path


def co_transport(v: TangentVector, path, field: MetricField,
                 h_max: Optional[float] = None, h: Optional[float] = None) -> TangentVector:
    """Transport ``v`` along an already-traversed polyline.

    ``path`` is a (K, d) vertex array with ``v`` based at ``path[0]``;
    an empty or single-vertex path returns ``v`` unchanged.
    """
    path = np.asarray(path, dtype=float)
    if path.size == 0 or path.shape[0] < 2:
        return v
    if h_max is None:
        h_max = field.default_h_max
    if h is None:
        h = field.default_h
    out = _kernels.transport_polyline(
        field.lo, field.spacing, field.tensors, v.components, path,
        float(h_max), float(h))
    return TangentVector(base=path[-1], components=out)


def metric_length(field: MetricField, v: TangentVector) -> float:
    """Length of ``v`` under the interpolated metric at its base point."""
    g = field.metric_at(v.base)
    return float(np.sqrt(v.components @ g @ v.components))


def _reach(field, frame, s1, s2, h_max, h):
    """Endpoint of the two-leg transport construction for counts (s1, s2)."""
    c_inc = frame.c - frame.a
    b_inc = frame.b - frame.a
    end1, _, path1 = self_transport(frame.a, c_inc, s1, field, h_max=h_max, h=h)
    carried_b = co_transport(TangentVector(frame.a, b_inc), path1, field,
                             h_max=h_max, h=h)
    end2, _, _ = self_transport(end1, carried_b.components, s2, field,
                                h_max=h_max, h=h)
    return end2


def _locate(e, frame, field, tol, max_iter, jacobian_ds, h_max, h) -> LocateResult:
    e = np.asarray(e, dtype=float)
    c_inc = frame.c - frame.a
    b_inc = frame.b - frame.a

    def residual(s):
        return _reach(field, frame, s[0], s[1], h_max, h) - e

    # Flat-frame affine initial guess; exact whenever the connection vanishes.
    basis = np.stack([c_inc, b_inc], axis=1)
    s = np.linalg.solve(basis, e - frame.a)

    r = None
    for _ in range(13):
        try:
            r = residual(s)
            break
        except DomainError:
            s = 0.5 * s
    if r is None:
        return LocateResult(None, False, np.inf, 0,
                            error="initial guess leaves the field domain")

    best_s, best_norm = s.copy(), float(np.linalg.norm(r))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        rnorm = float(np.linalg.norm(r))
        if rnorm < best_norm:
            best_s, best_norm = s.copy(), rnorm
        if rnorm < tol:
            return LocateResult(RelativeLocation(float(s[0]), float(s[1])),
                                True, rnorm, iterations)
        jac = np.empty((2, 2))
        ok = True
        for j in range(2):
            probe = s.copy()
            probe[j] += jacobian_ds
            try:
                jac[:, j] = (residual(probe) - r) / jacobian_ds
            except DomainError:
                probe[j] = s[j] - jacobian_ds
                try:
                    jac[:, j] = (r - residual(probe)) / jacobian_ds
                except DomainError:
                    ok = False
                    break
        if not ok:
            break
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        # Damping: halve the step while it fails to reduce the residual.
        alpha = 1.0
        accepted = False
        while alpha > 2.0 ** -24:
            trial = s + alpha * step
            try:
                r_trial = residual(trial)
            except DomainError:
                alpha *= 0.5
                continue
            if np.linalg.norm(r_trial) < rnorm:
                s, r = trial, r_trial
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
    rnorm = float(np.linalg.norm(r))
    if rnorm < tol:
        return LocateResult(RelativeLocation(float(s[0]), float(s[1])),
                            True, rnorm, iterations)
    return LocateResult(RelativeLocation(float(best_s[0]), float(best_s[1])),
                        False, best_norm, iterations,
                        error=f"no convergence after {iterations} iterations")


def locate(e, frame: AnchorFrame, field: MetricField,
           tol: float = 1e-6, max_iter: int = 100, jacobian_ds: float = 1e-4,
           h_max: Optional[float] = None, h: Optional[float] = None) -> RelativeLocation:
    """Transport counts ``(s1, s2)`` that reach ``e`` from the anchor frame.

    Damped Gauss-Newton shooting on the reached-point residual, seeded with
    the flat-frame affine solution.  Raises NoSolutionError when the
    iteration cap is hit (carrying the best residual) and InvalidFrameError
    for degenerate frames.
    """
    frame.validate()
    res = _locate(e, frame, field, tol, max_iter, jacobian_ds, h_max, h)
    if not res.converged:
        raise NoSolutionError(
            res.error or "location solve failed",
            best=res.location, residual=res.residual)
    return res.location


def map_grid(tests, frame: AnchorFrame, field: MetricField,
             tol: float = 1e-6, max_iter: int = 100, jacobian_ds: float = 1e-4,
             h_max: Optional[float] = None, h: Optional[float] = None):
    """Locate every test point, recording per-point failures instead of
    raising; results are ordered like the input."""
    frame.validate()
    out = []
    for p in tests:
        try:
            out.append(_locate(p, frame, field, tol, max_iter, jacobian_ds, h_max, h))
        except Exception as exc:  # noqa: BLE001 - carried per point by contract
            out.append(LocateResult(None, False, np.inf, 0, error=str(exc)))
    return out
