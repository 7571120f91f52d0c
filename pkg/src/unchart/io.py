"""File I/O for the experiment harness.

All writes are atomic (temp file + rename) and byte-deterministic: floats
are serialized with shortest round-trip repr, and the artifact archive
writer pins zip metadata so fixed seeds give fixed bytes.
"""

from __future__ import annotations

import io as _io
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from .embedding import MeasurementSeries

__all__ = [
    "atomic_write_bytes",
    "atomic_write_text",
    "read_map_csv",
    "read_points_csv",
    "read_series_csv",
    "save_npz_deterministic",
    "write_map_csv",
    "write_points_csv",
    "write_report_csv",
    "write_series_csv",
]


def _fmt(x) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(x))


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_npz_deterministic(path, **arrays) -> None:
    """`np.savez`-compatible archive with pinned timestamps and entry order."""
    buf = _io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            payload = _io.BytesIO()
            np.save(payload, np.asarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, payload.getvalue())
    atomic_write_bytes(path, buf.getvalue())


def write_series_csv(path, series: MeasurementSeries) -> None:
    """Measurement series as ``segment_id,t,m_1..m_m`` rows."""
    m = series.m
    lines = ["segment_id,t," + ",".join(f"m_{j + 1}" for j in range(m))]
    for sid, pts in series.segments:
        for i in range(pts.shape[0]):
            t = i * series.dt
            lines.append(f"{sid},{_fmt(t)}," + ",".join(_fmt(v) for v in pts[i]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_series_csv(path, dt: float | None = None) -> MeasurementSeries:
    """Inverse of `write_series_csv`; ``dt`` recovered from the file unless
    given."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["segment_id", "t"]:
            raise ValueError(f"{path}: not a measurement-series file")
        m = len(header) - 2
        segments = {}
        order = []
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            sid = int(parts[0])
            if sid not in segments:
                segments[sid] = []
                order.append(sid)
            segments[sid].append((float(parts[1]), [float(x) for x in parts[2:]]))
    seg_list = []
    file_dt = dt
    for sid in order:
        rows = segments[sid]
        if file_dt is None and len(rows) >= 2:
            file_dt = rows[1][0] - rows[0][0]
        seg_list.append((sid, np.array([r[1] for r in rows]).reshape(len(rows), m)))
    if file_dt is None:
        raise ValueError(f"{path}: cannot recover dt from single-point segments")
    return MeasurementSeries(dt=file_dt, segments=tuple(seg_list))


def write_points_csv(path, rows) -> None:
    """World points: ``(point_id, kind, u, w, x, y, z)`` tuples."""
    lines = ["point_id,kind,u,w,x,y,z"]
    for pid, kind, intr, lab in rows:
        lines.append(
            f"{pid},{kind},{_fmt(intr[0])},{_fmt(intr[1])},"
            f"{_fmt(lab[0])},{_fmt(lab[1])},{_fmt(lab[2])}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_points_csv(path):
    """Inverse of `write_points_csv`."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("point_id,kind"):
            raise ValueError(f"{path}: not a points file")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            rows.append((
                parts[0],
                parts[1],
                np.array([float(parts[2]), float(parts[3])]),
                np.array([float(parts[4]), float(parts[5]), float(parts[6])]),
            ))
    return rows


def write_map_csv(path, point_ids, results) -> None:
    """Located points: ``test_id,s1,s2,converged,residual`` rows."""
    lines = ["test_id,s1,s2,converged,residual"]
    for pid, res in zip(point_ids, results):
        if res.location is None:
            s1, s2 = float("nan"), float("nan")
        else:
            s1, s2 = res.location.s1, res.location.s2
        lines.append(
            f"{pid},{_fmt(s1)},{_fmt(s2)},{int(res.converged)},{_fmt(res.residual)}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_map_csv(path):
    """Returns ``(point_ids, s_array(n, 2), converged(n,), residual(n,))``."""
    ids, s_vals, conv, resid = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("test_id,s1,s2"):
            raise ValueError(f"{path}: not a map file")
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            ids.append(parts[0])
            s_vals.append([float(parts[1]), float(parts[2])])
            conv.append(bool(int(parts[3])))
            resid.append(float(parts[4]))
    return ids, np.array(s_vals).reshape(len(ids), 2), np.array(conv), np.array(resid)


def write_report_csv(path, point_ids, s_a, s_b, both_ok, footer: dict) -> None:
    """Agreement report rows plus a ``# key,value`` summary footer."""
    lines = ["test_id,s1_a,s2_a,s1_b,s2_b,ds1,ds2"]
    for i, pid in enumerate(point_ids):
        ds = s_a[i] - s_b[i] if both_ok[i] else (float("nan"), float("nan"))
        lines.append(
            f"{pid},{_fmt(s_a[i][0])},{_fmt(s_a[i][1])},"
            f"{_fmt(s_b[i][0])},{_fmt(s_b[i][1])},{_fmt(ds[0])},{_fmt(ds[1])}"
        )
    for key in sorted(footer):
        lines.append(f"# {key},{footer[key]}")
    atomic_write_text(path, "\n".join(lines) + "\n")
