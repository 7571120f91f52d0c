# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled transport kernels.

Same contract as ``pykernels``: multilinear metric interpolation,
central-difference connection coefficients, and substepped vector
transport along polylines.  Kept in lockstep with the pure-numpy module;
cross-backend agreement is pinned by tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, fabs, floor, sqrt

from ..errors import DomainError, DomainExitError, SingularMetricError

cnp.import_array()

cdef enum:
    MAXD = 6
    MAXDD = 36      # MAXD * MAXD
    MAXDDD = 216    # MAXD * MAXD * MAXD


cdef struct FieldView:
    double* lo
    double* sp
    double* grid
    long dims[MAXD]
    long strides[MAXD]   # offsets in doubles between consecutive nodes per axis
    int d


cdef inline bint _inside(FieldView* fv, double* p) noexcept nogil:
    cdef int i
    for i in range(fv.d):
        if p[i] < fv.lo[i] or p[i] > fv.lo[i] + fv.sp[i] * (fv.dims[i] - 1):
            return False
    return True


cdef int _metric_at(FieldView* fv, double* p, double* out) noexcept nogil:
    """0 on success, 1 if p is outside the domain."""
    cdef long cell[MAXD]
    cdef double f[MAXD]
    cdef int i, j, corner, bit, dd
    cdef double u, w
    cdef long base
    if not _inside(fv, p):
        return 1
    dd = fv.d * fv.d
    for i in range(fv.d):
        u = (p[i] - fv.lo[i]) / fv.sp[i]
        cell[i] = <long>floor(u)
        if cell[i] > fv.dims[i] - 2:
            cell[i] = fv.dims[i] - 2
        if cell[i] < 0:
            cell[i] = 0
        f[i] = u - cell[i]
    for j in range(dd):
        out[j] = 0.0
    for corner in range(1 << fv.d):
        w = 1.0
        base = 0
        for i in range(fv.d):
            bit = (corner >> i) & 1
            if bit:
                w *= f[i]
            else:
                w *= 1.0 - f[i]
            base += (cell[i] + bit) * fv.strides[i]
        if w != 0.0:
            for j in range(dd):
                out[j] += w * fv.grid[base + j]
    return 0


cdef int _invert(double* a, double* out, int d) noexcept nogil:
    """Gauss-Jordan with partial pivoting; ``a`` is destroyed.
    0 on success, 1 if singular."""
    cdef int i, j, k, piv
    cdef double best, factor, tmp
    for i in range(d):
        for j in range(d):
            out[i * d + j] = 1.0 if i == j else 0.0
    for k in range(d):
        piv = k
        best = fabs(a[k * d + k])
        for i in range(k + 1, d):
            if fabs(a[i * d + k]) > best:
                best = fabs(a[i * d + k])
                piv = i
        if best == 0.0:
            return 1
        if piv != k:
            for j in range(d):
                tmp = a[k * d + j]; a[k * d + j] = a[piv * d + j]; a[piv * d + j] = tmp
                tmp = out[k * d + j]; out[k * d + j] = out[piv * d + j]; out[piv * d + j] = tmp
        factor = a[k * d + k]
        for j in range(d):
            a[k * d + j] /= factor
            out[k * d + j] /= factor
        for i in range(d):
            if i == k:
                continue
            factor = a[i * d + k]
            if factor != 0.0:
                for j in range(d):
                    a[i * d + j] -= factor * a[k * d + j]
                    out[i * d + j] -= factor * out[k * d + j]
    return 0


cdef int _christoffel(FieldView* fv, double* p, double h, double* gamma) noexcept nogil:
    """gamma[k*d*d + l*d + m]; 0 ok, 1 stencil outside, 2 singular metric."""
    cdef double g[MAXDD]
    cdef double gi[MAXDD]
    cdef double gp[MAXDD]
    cdef double gm[MAXDD]
    cdef double dg[MAXDDD]
    cdef double q[MAXD]
    cdef int a, i, k, l, m, n, d
    cdef double s, hi
    d = fv.d
    for i in range(d):
        hi = fv.lo[i] + fv.sp[i] * (fv.dims[i] - 1)
        if p[i] - h < fv.lo[i] or p[i] + h > hi:
            return 1
    if _metric_at(fv, p, g):
        return 1
    if _invert(g, gi, d):
        return 2
    for i in range(d):
        q[i] = p[i]
    for a in range(d):
        q[a] = p[a] + h
        if _metric_at(fv, q, gp):
            return 1
        q[a] = p[a] - h
        if _metric_at(fv, q, gm):
            return 1
        q[a] = p[a]
        for i in range(d * d):
            dg[a * d * d + i] = (gp[i] - gm[i]) / (2.0 * h)
    for k in range(d):
        for l in range(d):
            for m in range(d):
                s = 0.0
                for n in range(d):
                    s += gi[k * d + n] * (
                        dg[l * d * d + m * d + n]
                        + dg[m * d * d + n * d + l]
                        - dg[n * d * d + l * d + m]
                    )
                gamma[k * d * d + l * d + m] = 0.5 * s
    return 0


cdef int _transport_edge(FieldView* fv, double* v, double* a, double* b,
                         double h_max, double h_fd, double* last_valid) noexcept nogil:
    """Transport v along the straight edge a -> b with substepping.
    0 ok, 1 path left domain, 2 singular metric; last_valid holds the
    final in-domain base point on failure."""
    cdef double delta[MAXD]
    cdef double x[MAXD]
    cdef double xn[MAXD]
    cdef double mid[MAXD]
    cdef double gamma[MAXDDD]
    cdef double mat[MAXDD]
    cdef double w[MAXD]
    cdef double mw[MAXD]
    cdef int i, k, l, m, d, nsub, step, status
    cdef double length, s
    d = fv.d
    length = 0.0
    for i in range(d):
        delta[i] = b[i] - a[i]
        length += delta[i] * delta[i]
        x[i] = a[i]
    length = sqrt(length)
    if length == 0.0:
        return 0
    nsub = <int>ceil(length / h_max)
    if nsub < 1:
        nsub = 1
    for i in range(d):
        delta[i] = delta[i] / nsub
    for step in range(nsub):
        for i in range(d):
            xn[i] = x[i] + delta[i]
            mid[i] = x[i] + 0.5 * delta[i]
        if not _inside(fv, xn):
            for i in range(d):
                last_valid[i] = x[i]
            return 1
        status = _christoffel(fv, mid, h_fd, gamma)
        if status:
            for i in range(d):
                last_valid[i] = x[i]
            return status
        # mat[k,l] = -sum_m gamma[k,l,m] * delta[m]
        for k in range(d):
            for l in range(d):
                s = 0.0
                for m in range(d):
                    s += gamma[k * d * d + l * d + m] * delta[m]
                mat[k * d + l] = -s
        for k in range(d):
            s = 0.0
            for l in range(d):
                s += mat[k * d + l] * v[l]
            w[k] = s
        for k in range(d):
            s = 0.0
            for l in range(d):
                s += mat[k * d + l] * w[l]
            mw[k] = s
        for k in range(d):
            v[k] = v[k] + w[k] + 0.5 * mw[k]
        for i in range(d):
            x[i] = xn[i]
    return 0


cdef int _fill_view(FieldView* fv, double[::1] lo, double[::1] sp,
                    double[::1] grid_flat, long[::1] dims, int d) except -1:
    cdef int i
    cdef long stride
    if d > MAXD:
        raise DomainError(f"kernel supports dimension <= {MAXD}, got {d}")
    fv.d = d
    fv.lo = &lo[0]
    fv.sp = &sp[0]
    fv.grid = &grid_flat[0]
    stride = d * d
    for i in range(d - 1, -1, -1):
        fv.dims[i] = dims[i]
        fv.strides[i] = stride
        stride *= dims[i]
    return 0


cdef tuple _prepare(object lo, object spacing, object grid, int d):
    lo_a = np.ascontiguousarray(lo, dtype=np.float64)
    sp_a = np.ascontiguousarray(spacing, dtype=np.float64)
    grid_a = np.ascontiguousarray(grid, dtype=np.float64)
    dims_a = np.asarray(grid_a.shape[:d], dtype=np.int64)
    return lo_a, sp_a, grid_a.reshape(-1), dims_a


def metric_at(lo, spacing, grid, p):
    """Multilinear interpolation of the node tensors at point ``p``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_a = np.ascontiguousarray(p, dtype=np.float64)
    cdef int d = p_a.shape[0]
    lo_a, sp_a, grid_flat, dims_a = _prepare(lo, spacing, grid, d)
    cdef double[::1] lo_v = lo_a, sp_v = sp_a, grid_v = grid_flat
    cdef long[::1] dims_v = dims_a
    cdef FieldView fv
    _fill_view(&fv, lo_v, sp_v, grid_v, dims_v, d)
    out = np.empty((d, d))
    cdef double[:, ::1] out_v = out
    if _metric_at(&fv, &p_a[0], &out_v[0, 0]):
        raise DomainError(f"point {p_a.tolist()} outside metric-field domain")
    return out


def christoffel(lo, spacing, grid, p, double h):
    """Connection coefficients at ``p``; indexed ``gamma[k, l, m]``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_a = np.ascontiguousarray(p, dtype=np.float64)
    cdef int d = p_a.shape[0]
    lo_a, sp_a, grid_flat, dims_a = _prepare(lo, spacing, grid, d)
    cdef double[::1] lo_v = lo_a, sp_v = sp_a, grid_v = grid_flat
    cdef long[::1] dims_v = dims_a
    cdef FieldView fv
    _fill_view(&fv, lo_v, sp_v, grid_v, dims_v, d)
    out = np.empty((d, d, d))
    cdef double[:, :, ::1] out_v = out
    cdef int status = _christoffel(&fv, &p_a[0], h, &out_v[0, 0, 0])
    if status == 1:
        raise DomainError(
            f"finite-difference stencil at {p_a.tolist()} (h={h}) leaves the domain"
        )
    if status == 2:
        raise SingularMetricError("interpolated metric not invertible")
    return out


def transport_polyline(lo, spacing, grid, v, vertices, double h_max, double h_fd):
    """Transport ``v`` along the polyline ``vertices`` ((K, d) array)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_a = np.array(v, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] verts = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef int d = v_a.shape[0]
    lo_a, sp_a, grid_flat, dims_a = _prepare(lo, spacing, grid, d)
    cdef double[::1] lo_v = lo_a, sp_v = sp_a, grid_v = grid_flat
    cdef long[::1] dims_v = dims_a
    cdef FieldView fv
    _fill_view(&fv, lo_v, sp_v, grid_v, dims_v, d)
    cdef double last_valid[MAXD]
    cdef int e, status
    for e in range(verts.shape[0] - 1):
        status = _transport_edge(&fv, &v_a[0], &verts[e, 0], &verts[e + 1, 0],
                                 h_max, h_fd, last_valid)
        if status == 1:
            raise DomainExitError(
                "transport path left the metric-field domain",
                last_valid=np.array([last_valid[i] for i in range(d)]),
            )
        if status == 2:
            raise SingularMetricError("interpolated metric not invertible on path")
    return v_a


def self_transport(lo, spacing, grid, start, inc, double count,
                   double h_max, double h_fd):
    """Iterated transport of ``inc`` along itself from ``start``.

    Returns ``(end, carried, path)``; see the pure-Python twin for the
    chord-by-chord semantics.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] x = np.array(start, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.array(inc, dtype=np.float64)
    cdef int d = x.shape[0]
    lo_a, sp_a, grid_flat, dims_a = _prepare(lo, spacing, grid, d)
    cdef double[::1] lo_v = lo_a, sp_v = sp_a, grid_v = grid_flat
    cdef long[::1] dims_v = dims_a
    cdef FieldView fv
    _fill_view(&fv, lo_v, sp_v, grid_v, dims_v, d)

    cdef double sign = 1.0 if count >= 0 else -1.0
    cdef double total = fabs(count)
    cdef int nwhole = <int>floor(total)
    cdef double frac = total - nwhole
    cdef double last_valid[MAXD]
    cdef double chord[MAXD]
    cdef double xn[MAXD]
    cdef int step, i, status
    cdef double scale

    path = [x.copy()]
    for step in range(nwhole + 1):
        scale = sign if step < nwhole else sign * frac
        if scale == 0.0:
            break
        for i in range(d):
            chord[i] = scale * v[i]
            xn[i] = x[i] + chord[i]
        status = _transport_edge(&fv, &v[0], &x[0], xn, h_max, h_fd, last_valid)
        if status == 1:
            raise DomainExitError(
                "transport path left the metric-field domain",
                last_valid=np.array([last_valid[i] for i in range(d)]),
            )
        if status == 2:
            raise SingularMetricError("interpolated metric not invertible on path")
        for i in range(d):
            x[i] = xn[i]
        path.append(x.copy())
    return x, v, np.stack(path)
