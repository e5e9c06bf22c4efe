"""Uniform grids on (0, L)^2, node classes and P1 interpolation.

Nodes are indexed ``(i, j)`` with position ``(i*dx, j*dx)`` and stored in
``(M+1, M+1)`` arrays with the x-index first.  Flat node indices are
``k = i*(M+1) + j``.

The triangulation is of Friedrichs-Keller type: every grid square is cut
along the diagonal joining its lower-left and upper-right corners.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import IntEnum

import numba
import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)


class NodeClass(IntEnum):
    INTERIOR = 0
    WALL = 1
    TARGET = 2
    OBSTACLE = 3
    GHOST = 4


@dataclass(frozen=True)
class GridSpec:
    """Square grid with ``M`` cells per side on ``[0, L]^2``."""

    L: float
    M: int
    d: int = 2

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.d != 2:
            raise ValueError("only d = 2 is supported")

    @property
    def dx(self) -> float:
        return self.L / self.M

    @property
    def n(self) -> int:
        """Nodes per side."""
        return self.M + 1

    @property
    def size(self) -> int:
        return self.n**2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    def coords(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    def node_positions(self) -> np.ndarray:
        """``(n*n, 2)`` array of node positions in flat order."""
        x = self.coords()
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def flat(self, i: int, j: int) -> int:
        return i * self.n + j

    def cell_of(self, point) -> tuple[int, int]:
        """Index of the cell ``E_i`` containing ``point``.

        A point on the shared face of two cells belongs to the lower
        index, so cells are ``(x_i - dx/2, x_i + dx/2]`` except the first.
        """
        idx = []
        for c in point:
            t = c / self.dx + 0.5
            k = math.floor(t)
            if t == k and k > 0:
                k -= 1
            idx.append(min(max(k, 0), self.M))
        return tuple(idx)

    @classmethod
    def from_spacing(cls, L: float, dx: float) -> "GridSpec":
        """Grid with the integer ``M`` closest to ``L/dx``."""
        M = int(math.floor(L / dx + 0.5))
        if not math.isclose(M * dx, L, rel_tol=1e-12):
            logger.warning(
                "requested dx=%g does not divide L=%g; using M=%d (dx=%.6g)",
                dx, L, M, L / M,
            )
        return cls(L=L, M=M)


@dataclass(frozen=True)
class SimulationClock:
    dt: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def T(self) -> float:
        return self.N * self.dt

    def t(self, k: int) -> float:
        return k * self.dt

    @classmethod
    def from_horizon(cls, dt: float, T: float) -> "SimulationClock":
        N = max(1, int(math.ceil(T / dt - 1e-9)))
        return cls(dt=dt, N=N)


# ---------------------------------------------------------------------------
# P1 interpolation kernels


@numba.njit(cache=True)
def p1_stencil(px, py, dx, M):
    """Vertices and barycentric weights of the triangle containing (px, py).

    Returns ``(k0, k1, k2, w0, w1, w2)`` with flat node indices.  The
    caller guarantees the point lies in ``[0, M*dx]^2``.
    """
    n = M + 1
    tx = px / dx
    ty = py / dx
    ci = int(math.floor(tx))
    cj = int(math.floor(ty))
    if ci > M - 1:
        ci = M - 1
    if ci < 0:
        ci = 0
    if cj > M - 1:
        cj = M - 1
    if cj < 0:
        cj = 0
    a = tx - ci
    b = ty - cj
    k00 = ci * n + cj
    k11 = k00 + n + 1
    if a >= b:
        # lower triangle (0,0), (1,0), (1,1)
        return k00, k00 + n, k11, 1.0 - a, a - b, b
    # upper triangle (0,0), (0,1), (1,1)
    return k00, k00 + 1, k11, 1.0 - b, b - a, a


@numba.njit(cache=True)
def p1_eval(values, px, py, dx, M):
    k0, k1, k2, w0, w1, w2 = p1_stencil(px, py, dx, M)
    return w0 * values[k0] + w1 * values[k1] + w2 * values[k2]


@numba.njit(cache=True)
def _p1_batch(points, dx, M, idx, w):
    for p in range(points.shape[0]):
        k0, k1, k2, w0, w1, w2 = p1_stencil(points[p, 0], points[p, 1], dx, M)
        idx[p, 0] = k0
        idx[p, 1] = k1
        idx[p, 2] = k2
        w[p, 0] = w0
        w[p, 1] = w1
        w[p, 2] = w2


def _check_inside(grid: GridSpec, points: np.ndarray) -> None:
    tol = 1e-12 * grid.L
    bad = (points < -tol) | (points > grid.L + tol)
    if np.any(bad):
        where = np.argwhere(bad.any(axis=1)).ravel()[0]
        raise DomainError(
            f"point {tuple(points[where])} lies outside [0, {grid.L}]^2"
        )


def p1_weights(grid: GridSpec, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised P1 stencils for an ``(n, 2)`` array of points.

    Returns flat node indices and weights, both of shape ``(n, 3)``.
    """
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    _check_inside(grid, pts)
    pts = np.clip(pts, 0.0, grid.L)
    idx = np.empty((pts.shape[0], 3), dtype=np.int64)
    w = np.empty((pts.shape[0], 3), dtype=float)
    _p1_batch(pts, grid.dx, grid.M, idx, w)
    return idx, w


def interpolation_weights(grid: GridSpec, x) -> list[tuple[tuple[int, int], float]]:
    """P1 basis values at ``x`` as ``[((i, j), weight), ...]``.

    Only the three vertices of the containing triangle are listed.
    """
    idx, w = p1_weights(grid, np.asarray(x, dtype=float).reshape(1, 2))
    n = grid.n
    return [((int(k) // n, int(k) % n), float(wk)) for k, wk in zip(idx[0], w[0])]


def p1_interpolate(grid: GridSpec, values, x) -> np.ndarray | float:
    """Evaluate the P1 interpolant of nodal ``values`` at one or many points."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size != grid.size:
        raise ValueError(f"expected {grid.size} nodal values, got {v.size}")
    x = np.asarray(x, dtype=float)
    idx, w = p1_weights(grid, x.reshape(-1, 2))
    out = np.einsum("pk,pk->p", w, v[idx])
    return float(out[0]) if x.ndim == 1 else out
