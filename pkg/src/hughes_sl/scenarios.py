"""Built-in scenarios: two doors, turnstiles and the Les Halles hall."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .config import (
    ClockConfig, CostRegion, ExitConfig, GeometryConfig, GridConfig, HJBConfig,
    InitialConfig, ObstacleConfig, OutputConfig, PhysicsConfig, ScenarioConfig, validate,
)
from .errors import ConfigurationError

TURNSTILE_SPACINGS = (0.1, 0.2, 0.3)


def builtin_two_doors(M0: float = 0.7, epsilon: float = 1e-3) -> ScenarioConfig:
    """Square room, a wide door on the left and a narrow one on the right.

    The requested spacing 0.08 does not divide 1; the grid uses M = 13.
    """
    cfg = ScenarioConfig(
        name="two_doors",
        grid=GridConfig(L=1.0, M=13),
        clock=ClockConfig(dt=0.08, T=20.0),
        hjb=HJBConfig(h=0.08),
        physics=PhysicsConfig(epsilon=epsilon),
        geometry=GeometryConfig(exits=[
            ExitConfig("left", (0.0, 0.13), (0.0, 0.27)),
            ExitConfig("right", (1.0, 0.49), (1.0, 0.51)),
        ]),
        initial=InitialConfig(M0=M0, lo=(1 / 3, 1 / 3), hi=(2 / 3, 2 / 3)),
        output=OutputConfig(),
    )
    validate(cfg)
    return cfg


def turnstile_rectangles(c: float | None) -> list[ObstacleConfig]:
    """Barriers ``[0.4, 0.6] x [0.5 + c s - 0.02, 0.5 + c s + 0.02]``, ``s = -4..4``.

    Barriers are clipped to the unit square and dropped when nothing is left.
    ``c = None`` gives the room without barriers.
    """
    if c is None:
        return []
    if not c > 0:
        raise ConfigurationError("turnstile spacing must be > 0", path="c")
    out = []
    for s in range(-4, 5):
        y = 0.5 + c * s
        lo, hi = max(y - 0.02, 0.0), min(y + 0.02, 1.0)
        if hi - lo > 1e-12:
            out.append(ObstacleConfig((0.4, lo), (0.6, hi)))
    return out


def builtin_turnstiles(c: float | None = 0.1, M0: float = 0.7,
                       epsilon: float = 1e-3) -> ScenarioConfig:
    """One exit on the right, barriers in front of it, crowd on the left."""
    cfg = ScenarioConfig(
        name="turnstiles_none" if c is None else f"turnstiles_c{c:g}",
        grid=GridConfig(L=1.0, M=50),
        clock=ClockConfig(dt=0.02, T=12.0),
        # a node where m reaches 1 carries the cost 1/delta, so u can grow far
        # beyond the usual wall value; the ghost value has to stay above it
        hjb=HJBConfig(h=0.02, ghost_value=1e12),
        physics=PhysicsConfig(epsilon=epsilon),
        geometry=GeometryConfig(
            exits=[ExitConfig("exit", (1.0, 0.45), (1.0, 0.55))],
            obstacles=turnstile_rectangles(c),
        ),
        initial=InitialConfig(M0=M0, lo=(0.15, 0.2), hi=(0.35, 0.8)),
    )
    validate(cfg)
    return cfg


def _mask_text(name: str) -> str:
    return resources.files("hughes_sl").joinpath("data", name).read_text()


def mask_file(year: int) -> str:
    """Path of the shipped Les Halles mask for ``year`` (2014 or 2016)."""
    if year not in (2014, 2016):
        raise ConfigurationError("year must be 2014 or 2016", path="year")
    return str(resources.files("hughes_sl").joinpath("data", f"les_halles_{year}.mask"))


def builtin_les_halles(year: int = 2014, M0: float = 0.7,
                       epsilon: float = 1e-3) -> ScenarioConfig:
    """Schematic transit hall; 2016 adds an exit in the middle of the bottom side.

    The crowd fills the middle third of the bounding box of the free region.
    Turnstiles in the exit corridors carry the running cost 2.
    """
    from .io import parse_mask

    path = mask_file(year)
    rows = parse_mask(_mask_text(f"les_halles_{year}.mask"))
    M = len(rows) - 1
    dx = 1.0 / M
    free = np.array([[ch != "X" and ch != "*" for ch in r] for r in rows])
    js, is_ = np.nonzero(free)
    y = (M - js) * dx
    x = is_ * dx
    a1, b1, a2, b2 = (float(v) for v in (x.min(), x.max(), y.min(), y.max()))
    lo = (a1 + (b1 - a1) / 3, a2 + (b2 - a2) / 3)
    hi = (a1 + 2 * (b1 - a1) / 3, a2 + 2 * (b2 - a2) / 3)
    costs = [CostRegion((0.45, 0.8), (0.55, 0.85), 2.0)]
    if year == 2016:
        costs.append(CostRegion((0.45, 0.15), (0.55, 0.2), 2.0))
    cfg = ScenarioConfig(
        name=f"les_halles_{year}",
        grid=GridConfig(L=1.0, M=M),
        clock=ClockConfig(dt=0.025, T=20.0),
        hjb=HJBConfig(h=0.025, ghost_value=1e12),
        physics=PhysicsConfig(epsilon=epsilon, running_cost=costs),
        geometry=GeometryConfig(mask=path),
        initial=InitialConfig(M0=M0, lo=lo, hi=hi),
    )
    validate(cfg)
    return cfg


BUILTINS = {
    "two_doors": lambda: builtin_two_doors(),
    "turnstiles": lambda: builtin_turnstiles(0.1),
    "turnstiles_c0.1": lambda: builtin_turnstiles(0.1),
    "turnstiles_c0.2": lambda: builtin_turnstiles(0.2),
    "turnstiles_c0.3": lambda: builtin_turnstiles(0.3),
    "turnstiles_none": lambda: builtin_turnstiles(None),
    "les_halles_2014": lambda: builtin_les_halles(2014),
    "les_halles_2016": lambda: builtin_les_halles(2016),
}


def builtin(name: str) -> ScenarioConfig:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario {name!r}; choose from {', '.join(BUILTINS)}", path="scenario"
        ) from None
