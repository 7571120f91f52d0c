"""Simulated observation channels.

Pinhole cameras project laboratory points onto focal planes; each channel
then reads the image point out either through a second-order polynomial
warp (a distorting optical path) or as one cosine and one sine Fourier
component.  A sensor suite concatenates channel outputs into a single
measurement vector.  Surfaces are transparent: no occlusion test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .embedding import MeasurementSeries
from .errors import MeasurementError
from .world import SurfacePatch, WorldTrajectory, lab_positions

__all__ = [
    "FourierProbe",
    "MeasureTrajectoryResult",
    "PinholeCamera",
    "QuadraticDistortion",
    "SensorSuite",
    "canonical_camera",
    "distort",
    "distorted_suite",
    "fourier_measure",
    "fourier_suite",
    "measure",
    "measure_trajectory",
    "near_identity_suite",
    "project",
    "random_camera",
    "random_distortion",
    "suite_from_dict",
    "suite_from_json",
    "suite_to_dict",
    "suite_to_json",
]


@dataclass(frozen=True)
class PinholeCamera:
    """Ideal pinhole: rows of ``rotation`` are the image-plane axes and the
    viewing normal; points must have positive depth."""

    position: np.ndarray
    rotation: np.ndarray
    focal: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        rot = np.asarray(self.rotation, dtype=float)
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if rot.shape != (3, 3) or np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9:
            raise ValueError("camera orientation is not orthonormal")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)


@dataclass(frozen=True)
class QuadraticDistortion:
    """Two full second-order bivariate polynomials.

    ``coeffs[i] = (c, cx, cy, cxx, cxy, cyy)`` for output coordinate ``i``;
    the linear part must be invertible.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (2, 6):
            raise ValueError("distortion needs a (2, 6) coefficient array")
        jac = np.array([[c[0, 1], c[0, 2]], [c[1, 1], c[1, 2]]])
        if abs(np.linalg.det(jac)) < 1e-12:
            raise ValueError("distortion's linear part is singular")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def identity(cls) -> "QuadraticDistortion":
        c = np.zeros((2, 6))
        c[0, 1] = 1.0
        c[1, 2] = 1.0
        return cls(coeffs=c)


@dataclass(frozen=True)
class FourierProbe:
    """Reads ``(cos(k1 . y), sin(k2 . y))`` off the focal plane."""

    k1: np.ndarray
    k2: np.ndarray

    def __post_init__(self):
        k1 = np.asarray(self.k1, dtype=float)
        k2 = np.asarray(self.k2, dtype=float)
        n1, n2 = np.linalg.norm(k1), np.linalg.norm(k2)
        if n1 == 0 or n2 == 0:
            raise ValueError("wave vectors must be nonzero")
        if abs(k1[0] * k2[1] - k1[1] * k2[0]) < 1e-9 * n1 * n2:
            raise ValueError("wave vectors must not be parallel")
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)


@dataclass(frozen=True)
class SensorSuite:
    """Ordered channels, each a camera plus a readout (distortion or
    Fourier probe); output width is two per channel."""

    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.channels:
            raise ValueError("suite needs at least one channel")

    @property
    def m(self) -> int:
        return 2 * len(self.channels)


def project(cam: PinholeCamera, world) -> np.ndarray:
    """Focal-plane image of a laboratory point (similar triangles)."""
    q = cam.rotation @ (np.asarray(world, dtype=float) - cam.position)
    if q[2] <= 0:
        raise MeasurementError(f"point at depth {q[2]:g} is behind the camera")
    return cam.focal * q[:2] / q[2]


def _project_many(cam: PinholeCamera, world: np.ndarray) -> np.ndarray:
    q = (world - cam.position) @ cam.rotation.T
    depth = q[:, 2]
    if np.any(depth <= 0):
        raise MeasurementError("a point is behind the camera")
    return cam.focal * q[:, :2] / depth[:, None]


def distort(dist: QuadraticDistortion, y) -> np.ndarray:
    """Evaluate the distortion polynomial at focal-plane point(s) ``y``."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = y[None, :] if single else y
    x1, x2 = pts[:, 0], pts[:, 1]
    basis = np.stack([np.ones_like(x1), x1, x2, x1 * x1, x1 * x2, x2 * x2], axis=1)
    out = basis @ dist.coeffs.T
    return out[0] if single else out


def fourier_measure(probe: FourierProbe, y) -> np.ndarray:
    """Cosine and sine Fourier components of focal-plane point(s) ``y``."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    pts = y[None, :] if single else y
    out = np.stack([np.cos(pts @ probe.k1), np.sin(pts @ probe.k2)], axis=1)
    return out[0] if single else out


def _read_channel(channel, y):
    cam, readout = channel
    if isinstance(readout, FourierProbe):
        return fourier_measure(readout, y)
    return distort(readout, y)


def measure(suite: SensorSuite, world) -> np.ndarray:
    """Concatenated channel measurements of one laboratory point."""
    parts = []
    for i, channel in enumerate(suite.channels):
        try:
            y = project(channel[0], world)
            parts.append(_read_channel(channel, y))
        except MeasurementError as exc:
            raise MeasurementError(f"channel {i}: {exc}", channel=i) from exc
    return np.concatenate(parts)


def measure_points(suite: SensorSuite, world_points) -> np.ndarray:
    """Vectorized `measure` over an (n, 3) array of laboratory points."""
    world_points = np.asarray(world_points, dtype=float)
    parts = []
    for i, channel in enumerate(suite.channels):
        try:
            y = _project_many(channel[0], world_points)
            parts.append(_read_channel(channel, y))
        except MeasurementError as exc:
            raise MeasurementError(f"channel {i}: {exc}", channel=i) from exc
    return np.concatenate(parts, axis=1)


class MeasureTrajectoryResult(NamedTuple):
    series: MeasurementSeries
    dropped_points: int
    split_segments: int


def measure_trajectory(suite: SensorSuite, traj: WorldTrajectory) -> MeasureTrajectoryResult:
    """Measure every trajectory point, preserving dt and segment structure.

    Points a channel cannot measure truncate their segment; surviving runs
    of at least two points keep fresh sequential ids, like `embed_series`.
    """
    segments = []
    dropped = 0
    splits = 0
    next_id = 0
    for seg in traj.segments:
        try:
            vals = measure_points(suite, seg.lab)
            ok = np.ones(seg.n_points, dtype=bool)
        except MeasurementError:
            vals = np.empty((seg.n_points, suite.m))
            ok = np.zeros(seg.n_points, dtype=bool)
            for i in range(seg.n_points):
                try:
                    vals[i] = measure(suite, seg.lab[i])
                    ok[i] = True
                except MeasurementError:
                    ok[i] = False
        dropped += int(np.sum(~ok))
        kept = 0
        start = None
        for i in range(seg.n_points + 1):
            flag = ok[i] if i < seg.n_points else False
            if flag and start is None:
                start = i
            elif not flag and start is not None:
                if i - start >= 2:
                    segments.append((next_id, vals[start:i]))
                    next_id += 1
                    kept += 1
                start = None
        if kept > 1 or (kept >= 1 and not ok.all()):
            splits += 1
    dt = traj.segments[0].dt if traj.segments else 1.0
    return MeasureTrajectoryResult(
        series=MeasurementSeries(dt=dt, segments=tuple(segments)),
        dropped_points=dropped, split_segments=splits)


def _rotation_from_forward(forward: np.ndarray, roll: float) -> np.ndarray:
    """Orthonormal camera frame with the given viewing normal and roll."""
    f = forward / np.linalg.norm(forward)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(f @ helper) > 0.95:
        helper = np.array([0.0, 1.0, 0.0])
    right = np.cross(helper, f)
    right /= np.linalg.norm(right)
    up = np.cross(f, right)
    c, s = math.cos(roll), math.sin(roll)
    r1 = c * right + s * up
    u1 = -s * right + c * up
    return np.stack([r1, u1, f])


def _patch_lab_center(patch: SurfacePatch) -> np.ndarray:
    return lab_positions(patch, patch.center[None, :])[0]


def canonical_camera(patch: SurfacePatch, distance: float = 4.0,
                     focal: float = 1.0) -> PinholeCamera:
    """Camera on the patch centroid's outward axis, aimed straight at it."""
    center = _patch_lab_center(patch)
    if patch.kind == "plane":
        outward = patch.rotation @ np.array([0.0, 0.0, 1.0])
    else:
        local = np.array([math.cos(patch.center[1] / patch.radius),
                          math.sin(patch.center[1] / patch.radius), 0.0])
        outward = patch.rotation @ local
    pos = center + distance * outward
    return PinholeCamera(position=pos, rotation=_rotation_from_forward(center - pos, 0.0),
                         focal=focal)


def random_camera(patch: SurfacePatch, rng: np.random.Generator,
                  distance_range=(3.0, 5.0), jitter_deg: float = 15.0) -> PinholeCamera:
    """Camera at a random pose on a viewing sphere around the patch.

    Aimed at the patch centroid with up to ``jitter_deg`` of aim jitter and
    a uniform roll; the surface is transparent, so any side works.
    """
    center = _patch_lab_center(patch)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    pos = center + rng.uniform(*distance_range) * direction
    forward = center - pos
    forward /= np.linalg.norm(forward)
    axis = np.cross(forward, rng.normal(size=3))
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(0.0, jitter_deg))
    forward = (math.cos(angle) * forward
               + math.sin(angle) * np.cross(axis, forward))
    roll = rng.uniform(0.0, 2.0 * math.pi)
    return PinholeCamera(position=pos,
                         rotation=_rotation_from_forward(forward, roll))


def random_distortion(rng: np.random.Generator) -> QuadraticDistortion:
    """Visibly nonlinear yet invertible-over-the-view distortion draw:
    rotation, rescaling and skew for the linear part, plus bounded
    translation and quadratic terms."""
    angle = math.radians(rng.uniform(-30.0, 30.0))
    scale = rng.uniform(0.8, 1.25)
    skew = rng.uniform(-0.2, 0.2)
    rot = np.array([[math.cos(angle), -math.sin(angle)],
                    [math.sin(angle), math.cos(angle)]])
    linear = rot @ (scale * np.array([[1.0, skew], [0.0, 1.0]]))
    c = np.zeros((2, 6))
    c[:, 0] = rng.uniform(-0.3, 0.3, size=2)
    c[0, 1:3] = linear[0]
    c[1, 1:3] = linear[1]
    c[:, 3:] = rng.uniform(-0.3, 0.3, size=(2, 3))
    return QuadraticDistortion(coeffs=c)


def _patch_fov_span(patch: SurfacePatch, cam: PinholeCamera, n_samples: int = 9) -> float:
    """Largest focal-plane axis span of the imaged patch."""
    u = np.linspace(patch.u_range[0], patch.u_range[1], n_samples)
    w = np.linspace(patch.w_range[0], patch.w_range[1], n_samples)
    uu, ww = np.meshgrid(u, w, indexing="ij")
    pts = np.stack([uu.ravel(), ww.ravel()], axis=1)
    y = _project_many(cam, lab_positions(patch, pts))
    return float(np.max(y.max(axis=0) - y.min(axis=0)))


def random_probe(rng: np.random.Generator, fov_span: float) -> FourierProbe:
    """Wave vectors spanning roughly one oscillation across the field of
    view, in random non-parallel directions.

    Enough to fold every single channel (cosine parity alone folds each
    readout, and the phase sweeps most of a period), while keeping the
    joint measurement manifold loosely enough crumpled that nearest
    neighbors stay intrinsically local.  Beyond ~2 oscillations the folds
    pass within the sampling scale of each other, the reducer's neighbor
    graph short-circuits, and the learned chart ripples badly.
    """
    base = 2.0 * math.pi / fov_span
    while True:
        mags = rng.uniform(0.75, 1.5, size=2) * base
        angles = rng.uniform(0.0, 2.0 * math.pi, size=2)
        k1 = mags[0] * np.array([math.cos(angles[0]), math.sin(angles[0])])
        k2 = mags[1] * np.array([math.cos(angles[1]), math.sin(angles[1])])
        if abs(math.sin(angles[0] - angles[1])) >= 0.1:
            return FourierProbe(k1=k1, k2=k2)


def distorted_suite(patch: SurfacePatch, n_cameras: int,
                    rng: np.random.Generator) -> SensorSuite:
    """Random cameras, each read out through a random quadratic warp."""
    channels = [(random_camera(patch, rng), random_distortion(rng))
                for _ in range(n_cameras)]
    return SensorSuite(channels=tuple(channels))


def fourier_suite(patch: SurfacePatch, n_cameras: int,
                  rng: np.random.Generator) -> SensorSuite:
    """Random cameras, each read out through a Fourier probe scaled to its
    own field of view."""
    channels = []
    for _ in range(n_cameras):
        cam = random_camera(patch, rng)
        channels.append((cam, random_probe(rng, _patch_fov_span(patch, cam))))
    return SensorSuite(channels=tuple(channels))


def near_identity_suite(patch: SurfacePatch, n_cameras: int = 3,
                        distance: float = 6.0) -> SensorSuite:
    """Nearly fronto-parallel cameras with identity readout: measurements
    are close to affine in the intrinsic coordinates of a plane patch."""
    channels = []
    for i in range(n_cameras):
        cam = canonical_camera(patch, distance=distance + 0.5 * i)
        offset = 0.06 * (i - (n_cameras - 1) / 2.0)
        rot = _rotation_from_forward(
            cam.rotation[2] + offset * cam.rotation[0], 0.0)
        channels.append((PinholeCamera(position=cam.position, rotation=rot),
                         QuadraticDistortion.identity()))
    return SensorSuite(channels=tuple(channels))


def suite_to_dict(suite: SensorSuite) -> dict:
    """JSON-ready description of every channel's numeric parameters."""
    channels = []
    for cam, readout in suite.channels:
        entry = {
            "camera": {
                "position": cam.position.tolist(),
                "rotation": cam.rotation.tolist(),
                "focal": cam.focal,
            }
        }
        if isinstance(readout, FourierProbe):
            entry["fourier"] = {"k1": readout.k1.tolist(), "k2": readout.k2.tolist()}
        else:
            entry["distortion"] = {"coeffs": readout.coeffs.tolist()}
        channels.append(entry)
    return {"channels": channels}


def suite_from_dict(data: dict) -> SensorSuite:
    channels = []
    for entry in data["channels"]:
        cam = PinholeCamera(
            position=np.array(entry["camera"]["position"]),
            rotation=np.array(entry["camera"]["rotation"]),
            focal=float(entry["camera"].get("focal", 1.0)),
        )
        if "fourier" in entry:
            readout = FourierProbe(k1=np.array(entry["fourier"]["k1"]),
                                   k2=np.array(entry["fourier"]["k2"]))
        else:
            readout = QuadraticDistortion(coeffs=np.array(entry["distortion"]["coeffs"]))
        channels.append((cam, readout))
    return SensorSuite(channels=tuple(channels))


def suite_to_json(suite: SensorSuite) -> str:
    return json.dumps(suite_to_dict(suite), indent=2, sort_keys=True)


def suite_from_json(text: str) -> SensorSuite:
    return suite_from_dict(json.loads(text))
