"""Two-observer experiment orchestration.

Wires the full pipeline — world sampling, sensor measurement, dimensional
reduction, velocity statistics, metric inversion, anchor-relative location
— for two machines watching the same world through different suites, and
compares their maps.  Owns every file the experiment emits; each pipeline
stage reads its inputs back from disk, so staged CLI runs and the
monolithic run produce byte-identical outputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as hio
from .config import ExperimentConfig, MachineConfig
from .embedding import (EmbeddingModel, MeasurementSeries, embed_many,
                        embed_series, estimate_dimension, fit)
from .errors import StageError, UnchartError
from .geometry import (AnchorFrame, LocateResult, MetricField,
                       RelativeLocation, map_grid)
from .sensors import (SensorSuite, distorted_suite, fourier_suite,
                      measure_points, measure_trajectory, near_identity_suite,
                      suite_from_json, suite_to_json)
from .statistics import (CovarianceField, GridSpec, accumulate_arrays, smooth,
                         to_metric, velocity_arrays)
from .world import (BoltzmannSpec, SurfacePatch, WorldTrajectory,
                    lab_positions, sample_trajectory)

__all__ = [
    "AgreementReport",
    "MachineArtifacts",
    "build_patch",
    "build_suite",
    "compare_maps",
    "experiment",
    "experiment_points",
    "fit_series",
    "load_artifacts",
    "locate_tests",
    "run_machine",
    "save_artifacts",
    "stage_compare",
    "stage_fit",
    "stage_locate",
    "stage_simulate",
]


@dataclass(frozen=True)
class MachineArtifacts:
    """Everything one machine learned from its training trajectory."""

    model: EmbeddingModel
    covariance: CovarianceField
    metric: MetricField
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model.d != self.metric.d or self.covariance.d != self.metric.d:
            raise ValueError("artifact dimensions are inconsistent")


@dataclass(frozen=True)
class AgreementReport:
    """Per-point locations from both machines with deviation summaries.

    Deviations cover only points both machines located; RMS and max are
    per component of the transport-count coordinates.
    """

    point_ids: tuple
    s_a: np.ndarray
    s_b: np.ndarray
    both_ok: np.ndarray
    rms: np.ndarray
    max_abs: np.ndarray
    failures_a: int
    failures_b: int
    meta: dict = field(default_factory=dict)


def _seeded(cfg_seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([cfg_seed, tag])


def build_patch(cfg: ExperimentConfig) -> SurfacePatch:
    """The experiment's surface patch; pose drawn from the seed's stream."""
    if cfg.world.random_pose:
        return SurfacePatch.with_random_pose(
            cfg.world.kind, _seeded(cfg.seed, 0), radius=cfg.world.radius)
    return SurfacePatch(kind=cfg.world.kind, radius=cfg.world.radius)


def build_suite(mc: MachineConfig, patch: SurfacePatch,
                rng: np.random.Generator) -> SensorSuite:
    if mc.suite == "distorted":
        return distorted_suite(patch, mc.cameras, rng)
    if mc.suite == "fourier":
        return fourier_suite(patch, mc.cameras, rng)
    return near_identity_suite(patch, mc.cameras)


def experiment_points(cfg: ExperimentConfig, patch: SurfacePatch):
    """Anchor and test points: ``(point_id, kind, intrinsic, lab)`` rows.

    Anchors sit at the patch center with orthogonal equal-length increments
    along the intrinsic axes; tests form a grid over the central span plus
    one extra point.
    """
    lo, extent, center = patch.lo, patch.extent, patch.center
    spacing = cfg.anchors.spacing_fraction * extent
    rows = []

    def add(pid, kind, intr):
        intr = np.asarray(intr, dtype=float)
        rows.append((pid, kind, intr, lab_positions(patch, intr[None, :])[0]))

    add("A", "anchor_a", center)
    add("B", "anchor_b", center + np.array([0.0, spacing[1]]))
    add("C", "anchor_c", center + np.array([spacing[0], 0.0]))
    n = cfg.tests.grid
    fracs = 0.5 + cfg.tests.span * (np.arange(n) / (n - 1) - 0.5)
    for i, fu in enumerate(fracs):
        for j, fw in enumerate(fracs):
            add(f"t{i}{j}", "test", lo + extent * np.array([fu, fw]))
    add("E", "extra", lo + extent * np.asarray(cfg.tests.extra))
    return rows


def _subsample_training(points: np.ndarray, cap: int) -> np.ndarray:
    stride = max(1, math.ceil(points.shape[0] / cap))
    return points[::stride]


def fit_series(mc: MachineConfig, series: MeasurementSeries) -> MachineArtifacts:
    """Measurement series -> embedding model -> chart trajectory -> metric."""
    try:
        training = _subsample_training(series.stack(), mc.embedding.max_training_points)
        d = mc.embedding.d or estimate_dimension(training, k=mc.embedding.k)
        model = fit(training, k=mc.embedding.k, d=d, reg=mc.embedding.reg)
    except UnchartError as exc:
        raise StageError("embed-fit", exc) from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError("embed-fit", exc) from exc

    try:
        emb = embed_series(model, series)
    except UnchartError as exc:
        raise StageError("embed-series", exc) from exc

    try:
        positions, velocities = velocity_arrays(emb.segments)
        grid = GridSpec.cover(positions, shape=tuple(mc.statistics.grid), expand=0.05)
        cov = accumulate_arrays(positions, velocities, grid,
                                support_threshold=mc.statistics.support_threshold)
        bandwidth = mc.statistics.bandwidth_cells * float(np.mean(grid.cell_size))
        cov = smooth(cov, bandwidth)
        metric = to_metric(cov, shrinkage=mc.statistics.shrinkage)
    except UnchartError as exc:
        raise StageError("statistics", exc) from exc

    counts = cov.counts.reshape(-1)
    diagnostics = {
        "chart_dimension": int(d),
        "training_points": int(model.training.shape[0]),
        "series_points": int(series.n_points),
        "series_segments": int(len(series.segments)),
        "embedded_segments": int(len(emb.segments)),
        "embed_dropped_points": int(emb.dropped_points),
        "embed_split_segments": int(emb.split_segments),
        "velocity_samples": int(positions.shape[0]),
        "supported_cell_fraction": float(cov.support_fraction()),
        "cell_count_quartiles": [float(q) for q in
                                 np.percentile(counts, [0, 25, 50, 75, 100])],
    }
    return MachineArtifacts(model=model, covariance=cov, metric=metric,
                            diagnostics=diagnostics)


def run_machine(mc: MachineConfig, traj: WorldTrajectory,
                suite: SensorSuite) -> MachineArtifacts:
    """Full pipeline for one machine watching one trajectory."""
    if not traj.segments:
        raise StageError("measure", "trajectory is empty")
    try:
        measured = measure_trajectory(suite, traj)
    except UnchartError as exc:
        raise StageError("measure", exc) from exc
    art = fit_series(mc, measured.series)
    art.diagnostics["measure_dropped_points"] = int(measured.dropped_points)
    art.diagnostics["measure_split_segments"] = int(measured.split_segments)
    return art


def locate_tests(art: MachineArtifacts, suite: SensorSuite, anchors, tests,
                 tol: float = 1e-6, max_iter: int = 100,
                 jacobian_ds: float = 1e-4):
    """Locate world test points relative to world anchor points.

    ``anchors`` is the (A, B, C) triple of laboratory 3-vectors; ``tests``
    is an (n, 3) array.  Every point is measured through the suite and
    embedded out-of-sample; per-point failures are recorded, not raised.
    """
    anchors = np.asarray(anchors, dtype=float)
    if anchors.shape != (3, 3):
        raise ValueError("anchors must be three laboratory points")
    chart_anchors, ok = embed_many(art.model, measure_points(suite, anchors))
    if not ok.all():
        raise StageError("locate", "an anchor point is outside embedding support")
    frame = AnchorFrame(a=chart_anchors[0], b=chart_anchors[1], c=chart_anchors[2])

    tests = np.asarray(tests, dtype=float).reshape(-1, 3)
    chart_tests, ok = embed_many(art.model, measure_points(suite, tests))
    results = [None] * len(tests)
    in_support = np.flatnonzero(ok)
    if in_support.size:
        located = map_grid(chart_tests[in_support], frame, art.metric,
                           tol=tol, max_iter=max_iter, jacobian_ds=jacobian_ds)
        for idx, res in zip(in_support, located):
            results[idx] = res
    for idx in np.flatnonzero(~ok):
        results[idx] = LocateResult(None, False, np.inf, 0,
                                    error="outside embedding support")
    return results


def compare_maps(results_a, results_b, meta: dict | None = None,
                 point_ids=None) -> AgreementReport:
    """Deviation summary over points both machines located."""
    if len(results_a) != len(results_b):
        raise ValueError("maps must cover the same test points in the same order")
    n = len(results_a)
    if point_ids is None:
        point_ids = tuple(str(i) for i in range(n))

    def to_array(results):
        out = np.full((n, 2), np.nan)
        ok = np.zeros(n, dtype=bool)
        for i, r in enumerate(results):
            if isinstance(r, LocateResult):
                ok[i] = r.converged
                if r.location is not None:
                    out[i] = r.location.as_array()
            else:
                out[i] = np.asarray(r, dtype=float)
                ok[i] = np.all(np.isfinite(out[i]))
        return out, ok

    s_a, ok_a = to_array(results_a)
    s_b, ok_b = to_array(results_b)
    both = ok_a & ok_b
    if both.any():
        dev = s_a[both] - s_b[both]
        rms = np.sqrt(np.mean(dev**2, axis=0))
        max_abs = np.max(np.abs(dev), axis=0)
    else:
        rms = np.full(2, np.nan)
        max_abs = np.full(2, np.nan)
    return AgreementReport(
        point_ids=tuple(point_ids), s_a=s_a, s_b=s_b, both_ok=both,
        rms=rms, max_abs=max_abs,
        failures_a=int(np.sum(~ok_a)), failures_b=int(np.sum(~ok_b)),
        meta=dict(meta or {}))


def save_artifacts(path, art: MachineArtifacts) -> None:
    """Artifact archive (deterministic bytes under fixed inputs)."""
    cov = art.covariance
    met = art.metric
    hio.save_npz_deterministic(
        path,
        emb_training=art.model.training,
        emb_embedded=art.model.embedded,
        emb_k=np.int64(art.model.k),
        emb_reg=np.float64(art.model.reg),
        emb_median_kth=np.float64(art.model.median_kth),
        emb_eigenvalues=art.model.eigenvalues,
        cov_lo=cov.grid.lo,
        cov_hi=cov.grid.hi,
        cov_shape=np.asarray(cov.grid.shape, dtype=np.int64),
        cov_counts=cov.counts,
        cov_moment=cov.second_moment,
        cov_threshold=np.int64(cov.support_threshold),
        cov_supported=cov.supported,
        met_lo=met.lo,
        met_spacing=met.spacing,
        met_tensors=met.tensors,
        met_supported=met.supported if met.supported is not None
        else np.ones(met.shape, dtype=bool),
        diagnostics=np.str_(json.dumps(art.diagnostics, sort_keys=True)),
    )


def load_artifacts(path) -> MachineArtifacts:
    with np.load(path, allow_pickle=False) as data:
        model = EmbeddingModel(
            training=data["emb_training"],
            embedded=data["emb_embedded"],
            k=int(data["emb_k"]),
            reg=float(data["emb_reg"]),
            median_kth=float(data["emb_median_kth"]),
            eigenvalues=data["emb_eigenvalues"],
        )
        grid = GridSpec(lo=data["cov_lo"], hi=data["cov_hi"],
                        shape=tuple(int(n) for n in data["cov_shape"]))
        cov = CovarianceField(
            grid=grid, counts=data["cov_counts"],
            second_moment=data["cov_moment"],
            support_threshold=int(data["cov_threshold"]),
            supported=data["cov_supported"],
        )
        metric = MetricField(
            lo=data["met_lo"], spacing=data["met_spacing"],
            tensors=data["met_tensors"], supported=data["met_supported"],
        )
        diagnostics = json.loads(str(data["diagnostics"]))
    return MachineArtifacts(model=model, covariance=cov, metric=metric,
                            diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Pipeline stages.  Each one reads named inputs and writes named outputs;
# `experiment` chains them through the same files the CLI uses.

def stage_simulate(cfg: ExperimentConfig, out_dir) -> dict:
    """Sample the world and write measurement series, suites and points."""
    out_dir = Path(out_dir)
    patch = build_patch(cfg)
    spec = BoltzmannSpec(kT=cfg.world.kt, mass=cfg.world.mass)
    points = experiment_points(cfg, patch)
    hio.write_points_csv(out_dir / "points.csv", points)
    manifest = {"points": str(out_dir / "points.csv")}
    for i, mc in enumerate(cfg.machines):
        suite = build_suite(mc, patch, _seeded(cfg.seed, 10 + i))
        traj = sample_trajectory(patch, spec, mc.segments,
                                 cfg.world.duration, cfg.world.dt,
                                 seed=[cfg.seed, 20 + i])
        measured = measure_trajectory(suite, traj)
        suite_path = out_dir / f"machine_{mc.name}.suite.json"
        traj_path = out_dir / f"machine_{mc.name}.trajectory.csv"
        hio.atomic_write_text(suite_path, suite_to_json(suite))
        hio.write_series_csv(traj_path, measured.series)
        manifest[f"suite_{mc.name}"] = str(suite_path)
        manifest[f"trajectory_{mc.name}"] = str(traj_path)
    return manifest


def stage_fit(cfg: ExperimentConfig, machine: str, trajectory_path, out_dir) -> str:
    """Fit one machine's artifacts from its measurement-series file."""
    mc = cfg.machine(machine)
    series = hio.read_series_csv(trajectory_path)
    art = fit_series(mc, series)
    out_path = Path(out_dir) / f"machine_{mc.name}.artifacts.npz"
    save_artifacts(out_path, art)
    return str(out_path)


def stage_locate(cfg: ExperimentConfig, machine: str, artifacts_path,
                 suite_path, points_path, out_path) -> str:
    """Locate the shared test points through one machine's artifacts."""
    mc = cfg.machine(machine)
    art = load_artifacts(artifacts_path)
    with open(suite_path, "r", encoding="utf-8") as fh:
        suite = suite_from_json(fh.read())
    rows = hio.read_points_csv(points_path)
    anchors = {kind: lab for _, kind, _, lab in rows if kind.startswith("anchor")}
    test_rows = [(pid, lab) for pid, kind, _, lab in rows
                 if kind in ("test", "extra")]
    results = locate_tests(
        art, suite,
        anchors=np.stack([anchors["anchor_a"], anchors["anchor_b"], anchors["anchor_c"]]),
        tests=np.stack([lab for _, lab in test_rows]),
        tol=mc.geometry.tol, max_iter=mc.geometry.max_iter,
        jacobian_ds=mc.geometry.jacobian_ds)
    hio.write_map_csv(out_path, [pid for pid, _ in test_rows], results)
    return str(out_path)


def stage_compare(map_a_path, map_b_path, out_path,
                  meta: dict | None = None) -> AgreementReport:
    """Build the agreement report from two map files."""
    ids_a, s_a, conv_a, _ = hio.read_map_csv(map_a_path)
    ids_b, s_b, conv_b, _ = hio.read_map_csv(map_b_path)
    if ids_a != ids_b:
        raise ValueError("maps cover different test points")
    results_a = [LocateResult(RelativeLocation(*s), bool(c), 0.0, 0)
                 for s, c in zip(s_a, conv_a)]
    results_b = [LocateResult(RelativeLocation(*s), bool(c), 0.0, 0)
                 for s, c in zip(s_b, conv_b)]
    report = compare_maps(results_a, results_b, meta=meta, point_ids=ids_a)
    footer = {
        "rms_ds1": repr(float(report.rms[0])),
        "rms_ds2": repr(float(report.rms[1])),
        "max_ds1": repr(float(report.max_abs[0])),
        "max_ds2": repr(float(report.max_abs[1])),
        "failures_a": report.failures_a,
        "failures_b": report.failures_b,
        "compared_points": int(np.sum(report.both_ok)),
    }
    for key in sorted(report.meta):
        footer[key] = report.meta[key]
    hio.write_report_csv(out_path, report.point_ids, report.s_a, report.s_b,
                         report.both_ok, footer)
    return report


def experiment(cfg: ExperimentConfig, out_dir) -> AgreementReport:
    """Run the full two-machine experiment, emitting every stage's files.

    The stages below read back the files the previous stage wrote, so a
    staged CLI run over the same directory reproduces this run exactly.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = stage_simulate(cfg, out_dir)

    meta = {}
    for mc in cfg.machines:
        art_path = stage_fit(cfg, mc.name, manifest[f"trajectory_{mc.name}"], out_dir)
        art = load_artifacts(art_path)
        meta[f"segments_{mc.name}"] = mc.segments
        meta[f"training_points_{mc.name}"] = art.diagnostics["training_points"]
        meta[f"series_points_{mc.name}"] = art.diagnostics["series_points"]
        stage_locate(cfg, mc.name, art_path,
                     manifest[f"suite_{mc.name}"], manifest["points"],
                     out_dir / f"machine_{mc.name}.map.csv")

    names = [mc.name for mc in cfg.machines]
    return stage_compare(out_dir / f"machine_{names[0]}.map.csv",
                         out_dir / f"machine_{names[1]}.map.csv",
                         out_dir / "report.csv", meta=meta)
