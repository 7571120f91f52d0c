"""Experiment configuration: TOML file with namespaced keys.

Every knob of the two-machine experiment lives in one file; see
``configs/default.toml`` for the documented defaults.  Unknown keys are
rejected so typos fail loudly before any output is written.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

__all__ = [
    "AnchorConfig",
    "EmbeddingParams",
    "ExperimentConfig",
    "GeometryParams",
    "MachineConfig",
    "StatisticsParams",
    "TestGridConfig",
    "WorldConfig",
    "load_config",
]

_SUITE_KINDS = ("distorted", "fourier", "near_identity")


@dataclass(frozen=True)
class WorldConfig:
    kind: str = "cylinder"
    radius: float = 1.0
    kt: float = 0.01
    mass: float = 1.0
    duration: float = 0.5
    dt: float = 0.05
    random_pose: bool = True

    def validate(self):
        if self.kind not in ("cylinder", "plane"):
            raise ConfigError(f"world.kind must be cylinder or plane, got {self.kind!r}")
        for name in ("radius", "kt", "mass", "duration", "dt"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"world.{name} must be positive")
        if self.duration < 2 * self.dt:
            raise ConfigError("world.duration must cover at least two samples")


@dataclass(frozen=True)
class AnchorConfig:
    spacing_fraction: float = 1.0 / 30.0

    def validate(self):
        if not 0 < self.spacing_fraction < 0.5:
            raise ConfigError("anchors.spacing_fraction must lie in (0, 0.5)")


@dataclass(frozen=True)
class TestGridConfig:
    grid: int = 7
    span: float = 0.8
    extra: tuple = (0.7, 0.8)

    def validate(self):
        if self.grid < 2:
            raise ConfigError("tests.grid must be at least 2")
        if not 0 < self.span < 1:
            raise ConfigError("tests.span must lie in (0, 1)")
        if not all(0 < v < 1 for v in self.extra):
            raise ConfigError("tests.extra must lie inside the unit patch")


@dataclass(frozen=True)
class EmbeddingParams:
    k: int = 12
    d: int = 0              # 0 = estimate from data
    reg: float = 1e-3
    max_training_points: int = 6000

    def validate(self):
        if self.k < 2:
            raise ConfigError("embedding.k must be at least 2")
        if self.d < 0:
            raise ConfigError("embedding.d must be non-negative (0 = auto)")
        if self.reg <= 0:
            raise ConfigError("embedding.reg must be positive")
        if self.max_training_points < 100:
            raise ConfigError("embedding.max_training_points must be at least 100")


@dataclass(frozen=True)
class StatisticsParams:
    grid: tuple = (24, 24)
    support_threshold: int = 20
    shrinkage: float = 0.05
    bandwidth_cells: float = 1.0

    def validate(self):
        if len(self.grid) != 2 or any(int(n) < 2 for n in self.grid):
            raise ConfigError("statistics.grid must be two counts of at least 2")
        if self.support_threshold < 2:
            raise ConfigError("statistics.support_threshold must be at least 2")
        if not 0 <= self.shrinkage <= 1:
            raise ConfigError("statistics.shrinkage must lie in [0, 1]")
        if self.bandwidth_cells < 0:
            raise ConfigError("statistics.bandwidth_cells must be non-negative")


@dataclass(frozen=True)
class GeometryParams:
    tol: float = 1e-6
    max_iter: int = 100
    jacobian_ds: float = 1e-4

    def validate(self):
        if self.tol <= 0:
            raise ConfigError("geometry.tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("geometry.max_iter must be at least 1")
        if self.jacobian_ds <= 0:
            raise ConfigError("geometry.jacobian_ds must be positive")


@dataclass(frozen=True)
class MachineConfig:
    name: str = "a"
    suite: str = "distorted"
    cameras: int = 3
    segments: int = 18274
    embedding: EmbeddingParams = field(default_factory=EmbeddingParams)
    statistics: StatisticsParams = field(default_factory=StatisticsParams)
    geometry: GeometryParams = field(default_factory=GeometryParams)

    def validate(self):
        if self.suite not in _SUITE_KINDS:
            raise ConfigError(
                f"machine.{self.name}.suite must be one of {_SUITE_KINDS}, got {self.suite!r}")
        if self.cameras < 1:
            raise ConfigError(f"machine.{self.name}.cameras must be positive")
        if self.segments < 1:
            raise ConfigError(f"machine.{self.name}.segments must be positive")
        self.embedding.validate()
        self.statistics.validate()
        self.geometry.validate()
        if 2 * self.cameras < 2 * max(self.embedding.d, 1) + 1:
            raise ConfigError(
                f"machine.{self.name}: {2 * self.cameras} measurements cannot "
                f"support dimension {self.embedding.d}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20260810
    world: WorldConfig = field(default_factory=WorldConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    tests: TestGridConfig = field(default_factory=TestGridConfig)
    machines: tuple = ()

    def validate(self):
        self.world.validate()
        self.anchors.validate()
        self.tests.validate()
        if len(self.machines) != 2:
            raise ConfigError("exactly two machines are required")
        for mc in self.machines:
            mc.validate()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def machine(self, name: str) -> MachineConfig:
        for mc in self.machines:
            if mc.name == name:
                return mc
        raise ConfigError(f"no machine named {name!r} in config")


def _take(table: dict, key: str, default):
    value = table.pop(key, default)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) \
                or int(value) != value:
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value


def _reject_unknown(table: dict, context: str):
    if table:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(sorted(table))}")


def _parse_machine(name: str, table: dict) -> MachineConfig:
    emb = table.pop("embedding", {})
    stats = table.pop("statistics", {})
    geom = table.pop("geometry", {})
    mc = MachineConfig(
        name=name,
        suite=_take(table, "suite", "distorted"),
        cameras=_take(table, "cameras", 3),
        segments=_take(table, "segments", 18274),
        embedding=EmbeddingParams(
            k=_take(emb, "k", 12),
            d=_take(emb, "d", 0),
            reg=_take(emb, "reg", 1e-3),
            max_training_points=_take(emb, "max_training_points", 6000),
        ),
        statistics=StatisticsParams(
            grid=tuple(int(n) for n in stats.pop("grid", [24, 24])),
            support_threshold=_take(stats, "support_threshold", 20),
            shrinkage=_take(stats, "shrinkage", 0.05),
            bandwidth_cells=_take(stats, "bandwidth_cells", 1.0),
        ),
        geometry=GeometryParams(
            tol=_take(geom, "tol", 1e-6),
            max_iter=_take(geom, "max_iter", 100),
            jacobian_ds=_take(geom, "jacobian_ds", 1e-4),
        ),
    )
    _reject_unknown(emb, f"machine.{name}.embedding")
    _reject_unknown(stats, f"machine.{name}.statistics")
    _reject_unknown(geom, f"machine.{name}.geometry")
    _reject_unknown(table, f"machine.{name}")
    return mc


def parse_config(data: dict) -> ExperimentConfig:
    data = dict(data)
    world_t = dict(data.pop("world", {}))
    anchors_t = dict(data.pop("anchors", {}))
    tests_t = dict(data.pop("tests", {}))
    machines_t = data.pop("machine", {})
    seed = _take(data, "seed", 20260810)
    _reject_unknown(data, "top level")

    world = WorldConfig(
        kind=_take(world_t, "kind", "cylinder"),
        radius=_take(world_t, "radius", 1.0),
        kt=_take(world_t, "kt", 0.01),
        mass=_take(world_t, "mass", 1.0),
        duration=_take(world_t, "duration", 0.5),
        dt=_take(world_t, "dt", 0.05),
        random_pose=_take(world_t, "random_pose", True),
    )
    _reject_unknown(world_t, "world")

    anchors = AnchorConfig(
        spacing_fraction=_take(anchors_t, "spacing_fraction", 1.0 / 30.0))
    _reject_unknown(anchors_t, "anchors")

    extra = tests_t.pop("extra", [0.7, 0.8])
    tests = TestGridConfig(
        grid=_take(tests_t, "grid", 7),
        span=_take(tests_t, "span", 0.8),
        extra=tuple(float(v) for v in extra),
    )
    _reject_unknown(tests_t, "tests")

    if not isinstance(machines_t, dict) or not machines_t:
        raise ConfigError("config must define [machine.a] and [machine.b]")
    machines = tuple(
        _parse_machine(name, dict(machines_t[name])) for name in sorted(machines_t))

    cfg = ExperimentConfig(seed=seed, world=world, anchors=anchors,
                           tests=tests, machines=machines)
    cfg.validate()
    return cfg


def load_config(source) -> ExperimentConfig:
    """Parse a config from a path, or from the packaged defaults when
    ``source`` names one (currently just ``"default"``)."""
    if isinstance(source, (str, Path)) and not Path(source).exists():
        name = str(source)
        if name == "default":
            text = resources.files("unchart").joinpath("configs/default.toml").read_text()
            return parse_config(tomllib.loads(text))
        raise ConfigError(f"config file {name!r} not found")
    try:
        with open(source, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return parse_config(data)
