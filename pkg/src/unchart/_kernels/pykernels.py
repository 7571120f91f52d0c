"""Pure-numpy transport kernels.

Reference implementation of the hot geometry loops: multilinear metric
interpolation, finite-difference connection coefficients, and vector
transport along polylines.  The compiled extension in ``_transport.pyx``
mirrors this module function-for-function; `unchart._kernels` picks one
backend at import time.

All functions take the metric field unpacked into plain arrays:

    lo      : (d,)  lower corner of the node lattice
    spacing : (d,)  node spacing per axis
    grid    : (n_0, ..., n_{d-1}, d, d)  symmetric tensors at lattice nodes
"""

import math

import numpy as np

from ..errors import DomainError, DomainExitError, SingularMetricError


def _inside(lo, spacing, shape, p):
    for i in range(p.shape[0]):
        hi = lo[i] + spacing[i] * (shape[i] - 1)
        if not (lo[i] <= p[i] <= hi):
            return False
    return True


def metric_at(lo, spacing, grid, p):
    """Multilinear interpolation of the node tensors at point ``p``."""
    d = p.shape[0]
    shape = grid.shape[:d]
    if not _inside(lo, spacing, shape, p):
        raise DomainError(f"point {p.tolist()} outside metric-field domain")
    u = (p - lo) / spacing
    cell = np.minimum(u.astype(np.intp), np.asarray(shape, dtype=np.intp) - 2)
    cell = np.maximum(cell, 0)
    f = u - cell
    g = np.zeros((d, d))
    for corner in range(1 << d):
        w = 1.0
        idx = []
        for i in range(d):
            bit = (corner >> i) & 1
            w *= f[i] if bit else (1.0 - f[i])
            idx.append(cell[i] + bit)
        if w != 0.0:
            g += w * grid[tuple(idx)]
    return g


def _inverse(g):
    try:
        gi = np.linalg.inv(g)
    except np.linalg.LinAlgError as exc:
        raise SingularMetricError(f"interpolated metric not invertible: {exc}") from exc
    if not np.all(np.isfinite(gi)):
        raise SingularMetricError("interpolated metric inversion overflowed")
    return gi


def christoffel(lo, spacing, grid, p, h):
    """Connection coefficients at ``p`` from central differences of the metric.

    Output indexed as ``gamma[k, l, m]`` (upper index first); symmetric in
    the last two indices by construction.
    """
    d = p.shape[0]
    shape = grid.shape[:d]
    for i in range(d):
        hi = lo[i] + spacing[i] * (shape[i] - 1)
        if not (lo[i] <= p[i] - h and p[i] + h <= hi):
            raise DomainError(
                f"finite-difference stencil at {p.tolist()} (h={h}) leaves the domain"
            )
    gi = _inverse(metric_at(lo, spacing, grid, p))
    dg = np.empty((d, d, d))
    step = np.zeros(d)
    for a in range(d):
        step[a] = h
        gp = metric_at(lo, spacing, grid, p + step)
        gm = metric_at(lo, spacing, grid, p - step)
        dg[a] = (gp - gm) / (2.0 * h)
        step[a] = 0.0
    # gamma^k_lm = 1/2 g^{kn} (dg[l][m,n] + dg[m][n,l] - dg[n][l,m])
    gamma = np.empty((d, d, d))
    for k in range(d):
        for l in range(d):
            for m in range(d):
                s = 0.0
                for n in range(d):
                    s += gi[k, n] * (dg[l][m, n] + dg[m][n, l] - dg[n][l, m])
                gamma[k, l, m] = 0.5 * s
    return gamma


def _substep(lo, spacing, grid, x, delta, v, h_fd):
    """One transport substep: truncated-exponential update with the
    connection evaluated at the spatial midpoint of the substep."""
    mid = x + 0.5 * delta
    gamma = christoffel(lo, spacing, grid, mid, h_fd)
    m = -np.einsum("klm,m->kl", gamma, delta)
    w = m @ v
    return v + w + 0.5 * (m @ w)


def transport_polyline(lo, spacing, grid, v, vertices, h_max, h_fd):
    """Transport ``v`` along the polyline ``vertices`` ((K, d) array).

    Each edge is subdivided so no substep exceeds ``h_max``.  Raises
    DomainExitError (with the last valid point) if the path or any
    stencil leaves the field domain.
    """
    d = v.shape[0]
    shape = grid.shape[:d]
    v = np.array(v, dtype=float)
    for e in range(vertices.shape[0] - 1):
        a = vertices[e]
        b = vertices[e + 1]
        length = float(np.linalg.norm(b - a))
        if length == 0.0:
            continue
        nsub = max(1, int(math.ceil(length / h_max)))
        delta = (b - a) / nsub
        x = np.array(a, dtype=float)
        for _ in range(nsub):
            if not _inside(lo, spacing, shape, x + delta):
                raise DomainExitError(
                    "transport path left the metric-field domain",
                    last_valid=np.array(x),
                )
            try:
                v = _substep(lo, spacing, grid, x, delta, v, h_fd)
            except DomainError as exc:
                raise DomainExitError(str(exc), last_valid=np.array(x)) from exc
            x = x + delta
    return v


def self_transport(lo, spacing, grid, start, inc, count, h_max, h_fd):
    """Iteratively transport ``inc`` along itself ``count`` times from ``start``.

    Each whole step moves the base along the straight chord spanned by the
    current increment while transporting the increment itself; the carried
    increment then defines the next chord.  A fractional remainder takes a
    chord scaled by the fraction.  Negative counts walk the chords reversed.

    Returns ``(end, carried, path)`` where ``path`` holds one vertex per
    chord endpoint (``path[0] == start``).
    """
    d = start.shape[0]
    sign = 1.0 if count >= 0 else -1.0
    total = abs(float(count))
    nwhole = int(math.floor(total))
    frac = total - nwhole

    x = np.array(start, dtype=float)
    v = np.array(inc, dtype=float)
    path = [x.copy()]
    for step in range(nwhole + 1):
        scale = sign if step < nwhole else sign * frac
        if scale == 0.0:
            break
        chord = scale * v
        seg = np.stack([x, x + chord])
        v = transport_polyline(lo, spacing, grid, v, seg, h_max, h_fd)
        x = x + chord
        path.append(x.copy())
    return x, v, np.stack(path)
