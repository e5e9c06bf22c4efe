"""Scenario configuration: schema, defaults, validation and YAML round trip.

A scenario file is a YAML mapping with the sections ``grid``, ``clock``,
``hjb``, ``physics``, ``geometry``, ``initial`` and ``output`` plus the
top-level keys ``name`` and ``evac_threshold``.  Every default lives in
this module.  Errors name the offending field by its dotted path.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigurationError
from .geometry import Exit, Geometry, Obstacle, classify_nodes
from .grid import GridSpec

DEFAULT_DELTA = 1e-6
DEFAULT_N_THETA = 32
DEFAULT_N_RHO = 4
DEFAULT_WALL_VALUE = 1e3
DEFAULT_GHOST_VALUE = 1e4
DEFAULT_EVAC_THRESHOLD = 1e-3
SNAPSHOT_FORMATS = ("csv", "pgm")


@dataclass
class GridConfig:
    L: float = 1.0
    M: int | None = None
    # requested spacing, rounded to the nearest integer M when M is absent
    dx: float | None = None


@dataclass
class ClockConfig:
    dt: float = 0.08
    T: float = 20.0


@dataclass
class HJBConfig:
    # None means h = dt
    h: float | None = None
    n_theta: int = DEFAULT_N_THETA
    n_rho: int = DEFAULT_N_RHO
    rho_max: float | None = None
    wall_value: float = DEFAULT_WALL_VALUE
    ghost_value: float = DEFAULT_GHOST_VALUE
    pi_tol: float = 1e-9
    lin_tol: float = 1e-12
    max_iterations: int = 200
    linear_solver: str = "direct"


@dataclass
class CostRegion:
    """Environmental running cost ``value`` on the closed rectangle."""

    lo: tuple[float, float]
    hi: tuple[float, float]
    value: float


@dataclass
class PhysicsConfig:
    epsilon: float = 1e-3
    delta: float = DEFAULT_DELTA
    # l(x) = 1 outside the regions
    running_cost: list[CostRegion] = field(default_factory=list)


@dataclass
class ExitConfig:
    id: str
    start: tuple[float, float]
    end: tuple[float, float]


@dataclass
class ObstacleConfig:
    lo: tuple[float, float]
    hi: tuple[float, float]


@dataclass
class GeometryConfig:
    exits: list[ExitConfig] = field(default_factory=list)
    obstacles: list[ObstacleConfig] = field(default_factory=list)
    # path of a node-class mask file; replaces exits and obstacles
    mask: str | None = None


@dataclass
class InitialConfig:
    M0: float = 0.7
    lo: tuple[float, float] | None = None
    hi: tuple[float, float] | None = None


@dataclass
class OutputConfig:
    snapshot_every: int = 0
    formats: list[str] = field(default_factory=lambda: ["csv"])


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    grid: GridConfig = field(default_factory=GridConfig)
    clock: ClockConfig = field(default_factory=ClockConfig)
    hjb: HJBConfig = field(default_factory=HJBConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    evac_threshold: float = DEFAULT_EVAC_THRESHOLD
    # directory relative paths (mask files) are resolved against
    base_dir: str | None = None

    # -- derived objects -------------------------------------------------

    def grid_spec(self) -> GridSpec:
        if self.grid.M is not None:
            return GridSpec(L=self.grid.L, M=self.grid.M)
        return GridSpec.from_spacing(self.grid.L, self.grid.dx)

    @property
    def h(self) -> float:
        return self.clock.dt if self.hjb.h is None else self.hjb.h

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.clock.T / self.clock.dt - 1e-9)))

    def mask_path(self) -> Path | None:
        if self.geometry.mask is None:
            return None
        p = Path(self.geometry.mask)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    def geometry_obj(self) -> Geometry:
        path = self.mask_path()
        if path is not None:
            from .io import read_mask

            return Geometry(mask=read_mask(path))
        return Geometry(
            exits=tuple(Exit(e.id, tuple(e.start), tuple(e.end)) for e in self.geometry.exits),
            obstacles=tuple(Obstacle(tuple(o.lo), tuple(o.hi)) for o in self.geometry.obstacles),
        )

    def node_map(self):
        return classify_nodes(self.grid_spec(), self.geometry_obj())

    def running_cost_field(self) -> np.ndarray | None:
        """Nodal ``l(x)``, or None when it is 1 everywhere."""
        if not self.physics.running_cost:
            return None
        grid = self.grid_spec()
        pos = grid.node_positions()
        tol = 1e-9 * grid.dx
        ell = np.ones(grid.size)
        for r in self.physics.running_cost:
            inside = ((pos[:, 0] >= r.lo[0] - tol) & (pos[:, 0] <= r.hi[0] + tol)
                      & (pos[:, 1] >= r.lo[1] - tol) & (pos[:, 1] <= r.hi[1] + tol))
            ell[inside] = r.value
        return ell

    def to_dict(self) -> dict:
        out = _plain(asdict(self))
        out.pop("base_dir", None)
        return out


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# building from plain data


def _point(value, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigurationError("expected a pair [x, y]", path=path)
    return (_number(value[0], f"{path}[0]"), _number(value[1], f"{path}[1]"))


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        # YAML reads 1e-3 without a dot as a string
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigurationError(f"expected a number, got {value!r}", path=path)
    v = float(value)
    if not math.isfinite(v):
        raise ConfigurationError("must be finite", path=path)
    return v


def _integer(value, path: str) -> int:
    if isinstance(value, bool):
        raise ConfigurationError(f"expected an integer, got {value!r}", path=path)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise ConfigurationError(f"expected an integer, got {value!r}", path=path)


def _section(cls, data, path: str):
    """Instantiate dataclass ``cls`` from a mapping, checking keys and types."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("expected a mapping", path=path)
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in known:
            raise ConfigurationError(f"unknown key {key!r}", path=sub)
        kwargs[key] = _convert(cls, key, value, sub)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"missing field ({exc})", path=path) from None


_SECTIONS = {
    "grid": GridConfig, "clock": ClockConfig, "hjb": HJBConfig, "physics": PhysicsConfig,
    "geometry": GeometryConfig, "initial": InitialConfig, "output": OutputConfig,
}
_FLOAT_KEYS = {"L", "dx", "dt", "T", "h", "rho_max", "wall_value", "ghost_value", "pi_tol",
               "lin_tol", "epsilon", "delta", "M0", "evac_threshold", "value"}
_INT_KEYS = {"M", "n_theta", "n_rho", "max_iterations", "snapshot_every"}
_POINT_KEYS = {"lo", "hi", "start", "end"}


def _convert(cls, key, value, path):
    if cls is ScenarioConfig and key in _SECTIONS:
        return _section(_SECTIONS[key], value, path)
    if value is None:
        return None
    if key in _FLOAT_KEYS:
        return _number(value, path)
    if key in _INT_KEYS:
        return _integer(value, path)
    if key in _POINT_KEYS:
        return _point(value, path)
    if key == "running_cost":
        return [_section(CostRegion, v, f"{path}[{i}]") for i, v in enumerate(_list(value, path))]
    if key == "exits":
        return [_section(ExitConfig, v, f"{path}[{i}]") for i, v in enumerate(_list(value, path))]
    if key == "obstacles":
        return [_section(ObstacleConfig, v, f"{path}[{i}]")
                for i, v in enumerate(_list(value, path))]
    if key == "formats":
        return [str(v) for v in _list(value, path)]
    if key in ("name", "id", "mask", "linear_solver", "base_dir"):
        return str(value)
    return value


def _list(value, path):
    if not isinstance(value, list):
        raise ConfigurationError("expected a list", path=path)
    return value


def from_dict(data: dict, base_dir: str | None = None) -> ScenarioConfig:
    """Build and validate a config from plain (YAML-like) data."""
    cfg = _section(ScenarioConfig, data, "")
    if base_dir is not None and cfg.base_dir is None:
        cfg.base_dir = str(base_dir)
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    """Check ranges and cross-field constraints; raise ConfigurationError."""

    def need(cond, msg, path):
        if not cond:
            raise ConfigurationError(msg, path=path)

    g = cfg.grid
    need(g.L > 0, "must be > 0", "grid.L")
    need(g.M is not None or g.dx is not None, "give M or dx", "grid")
    if g.M is not None:
        need(g.M >= 2, "must be >= 2", "grid.M")
    if g.dx is not None:
        need(0 < g.dx < g.L, "must lie in (0, L)", "grid.dx")
    need(cfg.clock.dt > 0, "must be > 0", "clock.dt")
    need(cfg.clock.T > 0, "must be > 0", "clock.T")
    hj = cfg.hjb
    if hj.h is not None:
        need(hj.h > 0, "must be > 0", "hjb.h")
    need(hj.n_theta >= 4 and hj.n_theta % 4 == 0, "must be a positive multiple of 4",
         "hjb.n_theta")
    need(hj.n_rho >= 1, "must be >= 1", "hjb.n_rho")
    if hj.rho_max is not None:
        need(hj.rho_max > 0, "must be > 0", "hjb.rho_max")
    need(hj.wall_value > 0, "must be > 0", "hjb.wall_value")
    need(hj.ghost_value > 0, "must be > 0", "hjb.ghost_value")
    need(hj.pi_tol > 0, "must be > 0", "hjb.pi_tol")
    need(hj.lin_tol > 0, "must be > 0", "hjb.lin_tol")
    need(hj.max_iterations >= 1, "must be >= 1", "hjb.max_iterations")
    need(hj.linear_solver in ("direct", "gauss_seidel"),
         "must be 'direct' or 'gauss_seidel'", "hjb.linear_solver")
    ph = cfg.physics
    need(ph.epsilon >= 0, "must be >= 0", "physics.epsilon")
    need(ph.delta > 0, "must be > 0", "physics.delta")
    for i, r in enumerate(ph.running_cost):
        need(r.value >= 1, "running cost must be >= 1", f"physics.running_cost[{i}].value")
        need(r.hi[0] >= r.lo[0] and r.hi[1] >= r.lo[1], "hi must not be below lo",
             f"physics.running_cost[{i}]")
    geo = cfg.geometry
    ids = [e.id for e in geo.exits]
    for i, e in enumerate(geo.exits):
        need(ids.count(e.id) == 1, f"duplicate exit id {e.id!r}", f"geometry.exits[{i}].id")
    for i, o in enumerate(geo.obstacles):
        need(o.hi[0] > o.lo[0] and o.hi[1] > o.lo[1], "hi must exceed lo",
             f"geometry.obstacles[{i}]")
    if geo.mask is not None:
        p = cfg.mask_path()
        need(p.is_file(), f"mask file {str(p)!r} not found", "geometry.mask")
        need(not geo.exits and not geo.obstacles,
             "a mask replaces exits and obstacles; give one or the other", "geometry")
    ini = cfg.initial
    need(ini.M0 >= 0, "must be >= 0", "initial.M0")
    need((ini.lo is None) == (ini.hi is None), "give both lo and hi", "initial")
    if ini.lo is not None:
        need(ini.hi[0] > ini.lo[0] and ini.hi[1] > ini.lo[1], "hi must exceed lo", "initial")
    out = cfg.output
    need(out.snapshot_every >= 0, "must be >= 0", "output.snapshot_every")
    for i, f in enumerate(out.formats):
        need(f in SNAPSHOT_FORMATS, f"unknown format {f!r}", f"output.formats[{i}]")
    need(0 <= cfg.evac_threshold < 1, "must lie in [0, 1)", "evac_threshold")


# ---------------------------------------------------------------------------
# files and overrides


def parse_config(path) -> ScenarioConfig:
    """Read and validate a YAML scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {str(p)!r}: {exc.strerror}", path=str(p)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid YAML: {exc}", path=str(p)) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("top level must be a mapping", path=str(p))
    return from_dict(data, base_dir=str(p.parent.resolve()))


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def write_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def _coerce_scalar(text: str) -> Any:
    value = yaml.safe_load(text)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def apply_overrides(cfg: ScenarioConfig, overrides) -> ScenarioConfig:
    """Apply ``dotted.path=value`` overrides and revalidate.

    Values are parsed as YAML scalars or lists.  Unknown paths raise
    ConfigurationError naming the key.
    """
    data = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value", path=item)
        key, text = item.split("=", 1)
        key = key.strip()
        parts = key.split(".")
        node = data
        for depth, part in enumerate(parts[:-1]):
            if not isinstance(node, dict) or part not in node or not isinstance(node[part], dict):
                raise ConfigurationError(f"unknown key {key!r}", path=key)
            node = node[part]
        last = parts[-1]
        if not isinstance(node, dict) or last not in node:
            raise ConfigurationError(f"unknown key {key!r}", path=key)
        node[last] = _coerce_scalar(text)
    return from_dict(data, base_dir=cfg.base_dir)

