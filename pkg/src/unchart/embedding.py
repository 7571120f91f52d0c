"""Dimensional reduction of raw measurement series into a chart.

Standard locally-linear embedding: k-nearest-neighbor reconstruction
weights with regularized local Gram solves, chart coordinates from the
bottom nonzero eigenvectors of the weight-deficit form, axes rescaled to
unit variance.  Out-of-sample points map through the same reconstruction
weights over their nearest training points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh
from scipy.spatial import cKDTree

from .errors import DegenerateDataError, EmbeddingFailureError, OutOfSupportError
from .statistics import TrajectorySegment

__all__ = [
    "EmbedSeriesResult",
    "EmbeddingModel",
    "MeasurementSeries",
    "embed",
    "embed_many",
    "embed_series",
    "estimate_dimension",
    "fit",
]


@dataclass(frozen=True)
class MeasurementSeries:
    """Per-segment measurement vectors at a uniform sampling interval."""

    dt: float
    segments: tuple

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        segs = []
        for sid, pts in self.segments:
            pts = np.asarray(pts, dtype=float)
            if pts.ndim != 2:
                raise ValueError(f"segment {sid}: expected (n, m) array")
            segs.append((int(sid), pts))
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def m(self) -> int:
        return self.segments[0][1].shape[1] if self.segments else 0

    @property
    def n_points(self) -> int:
        return sum(pts.shape[0] for _, pts in self.segments)

    def stack(self) -> np.ndarray:
        if not self.segments:
            return np.empty((0, 0))
        return np.concatenate([pts for _, pts in self.segments])


@dataclass(frozen=True)
class EmbeddingModel:
    """Training cloud with its embedded chart coordinates."""

    training: np.ndarray
    embedded: np.ndarray
    k: int
    reg: float
    median_kth: float
    eigenvalues: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "training", np.asarray(self.training, dtype=float))
        object.__setattr__(self, "embedded", np.asarray(self.embedded, dtype=float))
        if self.training.shape[0] != self.embedded.shape[0]:
            raise ValueError("one embedded point per training point required")
        if self.embedded.shape[1] >= self.training.shape[1]:
            raise ValueError("embedded dimension must be below measurement width")
        object.__setattr__(self, "_tree", cKDTree(self.training))

    @property
    def d(self) -> int:
        return self.embedded.shape[1]

    @property
    def support_radius(self) -> float:
        """Queries farther than this from their nearest training point are
        outside the model's support (3x the median k-th neighbor distance)."""
        return 3.0 * self.median_kth

    @property
    def tree(self) -> cKDTree:
        return self._tree


def _as_points(data) -> np.ndarray:
    if isinstance(data, MeasurementSeries):
        return data.stack()
    return np.asarray(data, dtype=float)


def _barycentric_weights(diffs: np.ndarray, reg: float) -> np.ndarray:
    """Reconstruction weights for each row of stacked neighbor offsets.

    ``diffs`` has shape (n, k, m): neighbors minus query point.  Solves the
    local Gram system regularized by ``reg`` times its trace and normalizes
    the weights to sum to one.
    """
    n, k, _ = diffs.shape
    gram = np.einsum("nkm,nlm->nkl", diffs, diffs)
    trace = np.einsum("nkk->n", gram)
    ridge = reg * np.where(trace > 0, trace, 1.0)
    gram[:, np.arange(k), np.arange(k)] += ridge[:, None]
    w = np.linalg.solve(gram, np.ones((n, k, 1)))[..., 0]
    return w / w.sum(axis=1, keepdims=True)


def estimate_dimension(series, k: int = 12, n_probes: int = 200,
                       gap: float = 0.10) -> int:
    """Modal count of local principal values above ``gap`` of the largest.

    Principal values are the local PCA variances (squared singular values
    of the centered neighborhood), so tangent directions count while
    curvature sag and noise floors fall under the gap.  Accepts a
    MeasurementSeries or a plain (n, m) array.
    """
    x = _as_points(series)
    n = x.shape[0]
    if n < 10 * k:
        raise ValueError(f"need at least {10 * k} points for k={k}, got {n}")
    if np.ptp(x, axis=0).max() == 0.0:
        raise DegenerateDataError("all measurement points identical")
    tree = cKDTree(x)
    probes = x[:: max(1, n // n_probes)][:n_probes]
    _, idx = tree.query(probes, k=k + 1)
    counts = []
    for row in idx:
        nb = x[row]
        nb = nb - nb.mean(axis=0)
        var = np.linalg.svd(nb, compute_uv=False) ** 2
        if var[0] <= 0.0:
            continue
        counts.append(int(np.sum(var >= gap * var[0])))
    if not counts:
        raise DegenerateDataError("no neighborhood carried any variation")
    return int(np.bincount(counts).argmax())


def fit(series, k: int, d: int, reg: float = 1e-3) -> EmbeddingModel:
    """Fit the embedding on the training cloud of ``series``.

    Requires ``k > d`` and at least ``50 d`` training points.  The
    embedding axes are deterministic: eigenvector signs are fixed so each
    axis's largest-magnitude loading is positive, then axes are rescaled
    to unit variance.
    """
    x = _as_points(series)
    n, m = x.shape
    if d >= m:
        raise ValueError(f"embedded dimension {d} must be below measurement width {m}")
    if k <= d:
        raise ValueError(f"neighbor count k={k} must exceed d={d}")
    if n < 50 * d:
        raise ValueError(f"need at least {50 * d} training points, got {n}")

    tree = cKDTree(x)
    dist, idx = tree.query(x, k=k + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]          # drop self
    median_kth = float(np.median(dist[:, -1]))

    w = _barycentric_weights(x[idx] - x[:, None, :], reg)
    rows = np.repeat(np.arange(n), k)
    weight_mat = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))
    delta = sp.identity(n, format="csr") - weight_mat
    quad = (delta.T @ delta).tocsc()

    try:
        if n <= 800:
            vals, vecs = np.linalg.eigh(quad.toarray())
            vals, vecs = vals[: d + 2], vecs[:, : d + 2]
        else:
            v0 = np.full(n, 1.0 / np.sqrt(n))
            vals, vecs = eigsh(quad, k=d + 2, sigma=0.0, which="LM", v0=v0)
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
    except Exception as exc:  # noqa: BLE001 - eigensolver failures vary by path
        raise EmbeddingFailureError(f"eigensolver failed: {exc}") from exc

    if not np.all(np.isfinite(vals)):
        raise EmbeddingFailureError("eigensolver returned non-finite eigenvalues")
    if vals[d + 1] - vals[d] <= 1e-14 * max(1.0, abs(vals[d + 1])):
        raise EmbeddingFailureError(
            f"no eigengap above the chart block (lambda_d={vals[d]:.3e}, "
            f"next={vals[d + 1]:.3e})")

    y = vecs[:, 1 : d + 1]                       # drop the constant mode
    for j in range(d):
        lead = np.argmax(np.abs(y[:, j]))
        if y[lead, j] < 0:
            y[:, j] = -y[:, j]
    scale = y.std(axis=0)
    if np.any(scale == 0):
        raise EmbeddingFailureError("an embedding axis collapsed to a constant")
    y = y / scale

    return EmbeddingModel(training=x, embedded=y, k=k, reg=reg,
                          median_kth=median_kth, eigenvalues=vals)


def embed_many(model: EmbeddingModel, points) -> tuple:
    """Map points through reconstruction weights over training neighbors.

    Returns ``(coords, ok)`` where ``ok`` flags points within support;
    coordinates of unsupported points are NaN.  Queries that coincide with
    a training point return its embedding exactly.
    """
    pts = np.asarray(points, dtype=float)
    squeeze = pts.ndim == 1
    if squeeze:
        pts = pts[None, :]
    n = pts.shape[0]
    dist, idx = model.tree.query(pts, k=model.k)
    if model.k == 1:
        dist, idx = dist[:, None], idx[:, None]
    ok = dist[:, 0] <= model.support_radius
    coords = np.full((n, model.d), np.nan)
    if ok.any():
        sub = np.flatnonzero(ok)
        w = _barycentric_weights(
            model.training[idx[sub]] - pts[sub, None, :], model.reg)
        coords[sub] = np.einsum("nk,nkd->nd", w, model.embedded[idx[sub]])
        exact = sub[dist[sub, 0] == 0.0]
        if exact.size:
            coords[exact] = model.embedded[idx[exact, 0]]
    if squeeze:
        return coords[0], bool(ok[0])
    return coords, ok


def embed(model: EmbeddingModel, v) -> np.ndarray:
    """Chart coordinates of a single measurement vector.

    Raises OutOfSupportError if the nearest training point is farther than
    the model's support radius.
    """
    coords, ok = embed_many(model, v)
    if not ok:
        raise OutOfSupportError(
            "query point lies outside the training data's neighborhood structure")
    return coords


class EmbedSeriesResult(NamedTuple):
    segments: list
    dropped_points: int
    split_segments: int


def embed_series(model: EmbeddingModel, series: MeasurementSeries) -> EmbedSeriesResult:
    """Embed a whole series pointwise, preserving dt and segment structure.

    Out-of-support points truncate their segment at the failure; all runs
    of at least two supported points survive as segments with fresh
    sequential ids.  Returns the segments plus drop/split counts.
    """
    segments = []
    dropped = 0
    splits = 0
    next_id = 0
    for _sid, pts in series.segments:
        coords, ok = embed_many(model, pts)
        dropped += int(np.sum(~ok))
        runs = _runs_of_true(ok)
        kept = 0
        for a, b in runs:
            if b - a >= 2:
                segments.append(TrajectorySegment(
                    dt=series.dt, points=coords[a:b], segment_id=next_id))
                next_id += 1
                kept += 1
        if kept > 1 or (kept >= 1 and not ok.all()):
            splits += 1
    return EmbedSeriesResult(segments=segments, dropped_points=dropped,
                             split_segments=splits)


def _runs_of_true(mask: np.ndarray):
    """Half-open (start, stop) index pairs of maximal True runs."""
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs
