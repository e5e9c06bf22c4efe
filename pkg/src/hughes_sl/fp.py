"""Explicit semi-Lagrangian step for the nonlinear Fokker-Planck equation.

Each node's mass is split over ``2d`` characteristic branches
``x + dt*b +/- sqrt(2 d eps dt) e_l``.  A branch that meets an exit within
the step is absorbed there; the others are reflected back into the domain
and scattered onto the P1 stencil of their foot.  Stencil weight falling
on exit nodes is absorbed as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigurationError, InternalError
from .geometry import NodeMap, first_crossing, reflect_point
from .grid import GridSpec, NodeClass, p1_stencil

_TARGET = int(NodeClass.TARGET)
_OBSTACLE = int(NodeClass.OBSTACLE)
_GHOST = int(NodeClass.GHOST)


@dataclass
class DensityField:
    grid: GridSpec
    values: np.ndarray  # flat, one value per node

    @property
    def total_mass(self) -> float:
        return float(self.values.sum()) * self.grid.dx**self.grid.d

    @property
    def max(self) -> float:
        return float(self.values.max())

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True)
class RectangleDensity:
    """Density ``value`` on the rectangle ``[lo, hi]`` and zero elsewhere."""

    lo: tuple[float, float]
    hi: tuple[float, float]
    value: float


@dataclass
class ExitLedger:
    """Absorbed mass per exit and remaining mass, step by step."""

    exit_ids: list[str]
    initial_mass: float
    absorbed: list[np.ndarray] = field(default_factory=list)
    remaining: list[float] = field(default_factory=list)

    def record(self, absorbed: np.ndarray, remaining: float) -> None:
        self.absorbed.append(np.asarray(absorbed, dtype=float).copy())
        self.remaining.append(float(remaining))

    @property
    def cumulative(self) -> np.ndarray:
        if not self.absorbed:
            return np.zeros(len(self.exit_ids))
        return np.sum(self.absorbed, axis=0)

    def balance_error(self, step: int | None = None) -> float:
        """Relative violation of ``remaining + absorbed == initial``."""
        if not self.remaining:
            return 0.0
        k = len(self.remaining) - 1 if step is None else step
        absorbed = np.sum(self.absorbed[: k + 1]) if self.absorbed else 0.0
        scale = max(self.initial_mass, 1e-300)
        return abs(self.remaining[k] + absorbed - self.initial_mass) / scale

    def split_percentages(self) -> dict[str, float]:
        cum = self.cumulative
        total = cum.sum()
        if total <= 0:
            return {}
        return {e: 100.0 * float(a) / total for e, a in zip(self.exit_ids, cum)}


def _interval_overlap(a0, a1, b0, b1):
    return np.clip(np.minimum(a1, b1) - np.maximum(a0, b0), 0.0, None)


def init_density(spec, node_map: NodeMap) -> DensityField:
    """Cell averages of the initial density.

    ``spec`` is a :class:`RectangleDensity` or an array of nodal values.
    Exit and blocked nodes start empty.
    """
    grid = node_map.grid
    if isinstance(spec, RectangleDensity):
        L = grid.L
        lo = np.clip(np.asarray(spec.lo, dtype=float), 0.0, L)
        hi = np.clip(np.asarray(spec.hi, dtype=float), 0.0, L)
        if not np.all(hi > lo):
            raise ConfigurationError(
                "initial rectangle does not meet the domain interior", path="initial"
            )
        x = grid.coords()
        h = grid.dx / 2
        fx = _interval_overlap(x - h, x + h, lo[0], hi[0]) / grid.dx
        fy = _interval_overlap(x - h, x + h, lo[1], hi[1]) / grid.dx
        values = spec.value * np.outer(fx, fy).ravel()
    else:
        values = np.array(spec, dtype=float).ravel()
        if values.size != grid.size:
            raise ConfigurationError(f"initial density needs {grid.size} values",
                                     path="initial")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigurationError("initial density must be finite and >= 0",
                                     path="initial")
    values[~node_map.fp_active] = 0.0
    return DensityField(grid, values)


def characteristic_foot(x, b, dt: float, eps: float, axis: int, sign: int, d: int = 2):
    """Raw foot ``x + dt*b + sign*sqrt(2 d eps dt) e_axis``."""
    z = np.asarray(x, dtype=float) + dt * np.asarray(b, dtype=float)
    z[axis] += sign * math.sqrt(2 * d * eps * dt)
    return z


def target_truncated_dt(node_map: NodeMap, x, b, dt: float, eps: float,
                        axis: int, sign: int):
    """Truncated step at the exits for one branch.

    Returns ``(dt_hat, landing_point, exit_id)``; ``exit_id`` is None when
    the branch does not reach an exit within ``dt`` (then ``dt_hat == dt``).
    """
    coef = math.sqrt(2 * node_map.grid.d * eps)
    g, row = first_crossing(float(x[0]), float(x[1]), float(b[0]), float(b[1]),
                            axis, sign, coef, dt, node_map.target_segments,
                            node_map.grid.dx / 100)
    if row < 0:
        return dt, characteristic_foot(x, b, dt, eps, axis, sign), None
    land = characteristic_foot(x, b, g, eps, axis, sign)
    seg = node_map.target_segments[row]
    land[int(seg[0])] = seg[1]
    return g, land, node_map.exit_ids[int(seg[4])]


@numba.njit(cache=True)
def _fp_kernel(m, bx, by, px, py, codes, exit_of, dx, M, L, dt, coef,
               tsegs, boxes, tol_along, tol_box, out, absorbed):
    step = coef * math.sqrt(dt)
    has_targets = tsegs.shape[0] > 0
    ks = np.empty(3, dtype=np.int64)
    ws = np.empty(3)
    for j in range(m.shape[0]):
        mj = m[j]
        if mj <= 0.0:
            continue
        q = mj / 4.0
        x0 = px[j]
        x1 = py[j]
        v0 = bx[j]
        v1 = by[j]
        for ell in range(2):
            for sgn in (1.0, -1.0):
                if has_targets:
                    g, row = first_crossing(x0, x1, v0, v1, ell, sgn, coef, dt,
                                            tsegs, tol_along)
                    if row >= 0:
                        absorbed[int(tsegs[row, 4])] += q
                        continue
                zx = x0 + dt * v0
                zy = x1 + dt * v1
                if ell == 0:
                    zx += sgn * step
                else:
                    zy += sgn * step
                zx, zy = reflect_point(zx, zy, x0, x1, L, boxes, tol_box)
                k0, k1, k2, w0, w1, w2 = p1_stencil(zx, zy, dx, M)
                ks[0] = k0
                ks[1] = k1
                ks[2] = k2
                ws[0] = w0
                ws[1] = w1
                ws[2] = w2
                top = 0
                for t in range(1, 3):
                    if ws[t] > ws[top]:
                        top = t
                for t in range(3):
                    c = codes[ks[t]]
                    if ws[t] > 0.0 and (c == _OBSTACLE or c == _GHOST):
                        if ws[t] > 1e-9:
                            return j
                        # round-off contact with a blocked node
                        ws[top] += ws[t]
                        ws[t] = 0.0
                for t in range(3):
                    w = ws[t]
                    if w == 0.0:
                        continue
                    k = ks[t]
                    if codes[k] == _TARGET:
                        absorbed[exit_of[k]] += q * w
                    else:
                        out[k] += q * w
    return -1


def fp_step(m, drift: np.ndarray, node_map: NodeMap, dt: float, eps: float):
    """Advance the density one step.

    ``m`` is a :class:`DensityField` or flat array, ``drift`` an
    ``(n_nodes, 2)`` array.  Returns the new :class:`DensityField` and the
    mass absorbed at each exit during the step.
    """
    grid = node_map.grid
    values = m.values if isinstance(m, DensityField) else np.asarray(m, dtype=float)
    drift = np.asarray(drift, dtype=float).reshape(grid.size, 2)
    if not np.all(np.isfinite(drift)):
        raise ValueError("drift must be finite")
    pos = grid.node_positions()
    out = np.zeros(grid.size)
    absorbed = np.zeros(len(node_map.exit_ids))
    bad = _fp_kernel(
        values, np.ascontiguousarray(drift[:, 0]), np.ascontiguousarray(drift[:, 1]),
        np.ascontiguousarray(pos[:, 0]), np.ascontiguousarray(pos[:, 1]),
        node_map.codes, node_map.exit_of, grid.dx, grid.M, grid.L, dt,
        math.sqrt(2 * grid.d * eps), node_map.target_segments, node_map.boxes,
        grid.dx / 100, 1e-12 * grid.dx, out, absorbed,
    )
    if bad >= 0:
        raise InternalError(f"characteristic from node {bad} landed on a blocked node")
    cell = grid.dx**grid.d
    return DensityField(grid, out), absorbed * cell
