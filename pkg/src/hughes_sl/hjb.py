"""Semi-Lagrangian scheme for the stationary HJB equation

    -eps * Lap(u) + |grad u|^2 / 2 = F

with Dirichlet data (0 on exits, g on walls, G on blocked nodes), solved by
Howard's policy iteration over a finite polar control set.

For a node ``x``, control ``a`` and branch ``(l, +-)`` the characteristic
``x + s^2 a +- s sqrt(2 d eps) e_l`` is followed for a fictive time
``h`` or until it leaves the square, whichever comes first.  The discrete
operator is

    W(v, i) = min_a  1/4 sum_branches [ I[v](y) + hhat (|a|^2/2 + F_i) ]

with ``I`` the P1 interpolant.  A branch that meets an obstacle face stops
there and reads the ghost value ``G``; a branch leaving a node that lies
on an obstacle face directly into the obstacle reads the ghost nodes
through ``I``.  Both keep agents out of obstacles and stop a long
characteristic from jumping across a thin one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import spsolve

from .errors import ConvergenceError, InternalError, ReachabilityError
from .geometry import NodeMap, first_crossing, obstacle_faces, outer_faces
from .grid import NodeClass, p1_stencil

logger = logging.getLogger(__name__)

LINEAR_SOLVERS = ("direct", "gauss_seidel")


class ControlSet:
    """Polar grid of controls, zero first, then by radius and angle.

    Radii are ``k * rho_max / n_rho`` for ``k = 1..n_rho``; with the default
    ``rho_max = n_rho`` they are the integers ``1..n_rho``.
    """

    def __init__(self, n_theta: int = 32, n_rho: int = 4, rho_max: float | None = None):
        if n_theta < 1 or n_rho < 1:
            raise ValueError("n_theta and n_rho must be >= 1")
        self.n_theta = int(n_theta)
        self.n_rho = int(n_rho)
        self.rho_max = float(n_rho if rho_max is None else rho_max)
        if not self.rho_max > 0:
            raise ValueError("rho_max must be positive")
        theta = 2 * np.pi * np.arange(self.n_theta) / self.n_theta
        unit = np.column_stack([np.cos(theta), np.sin(theta)])
        unit[np.abs(unit) < 1e-15] = 0.0
        rows = [np.zeros((1, 2))]
        for k in range(1, self.n_rho + 1):
            rows.append(unit * (k * self.rho_max / self.n_rho))
        self.controls = np.ascontiguousarray(np.vstack(rows))
        self.norms = np.hypot(self.controls[:, 0], self.controls[:, 1])

    def __len__(self) -> int:
        return self.controls.shape[0]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.controls[k]


@dataclass
class HJBProblem:
    node_map: NodeMap
    F: np.ndarray  # running cost per node
    h: float
    eps: float
    controls: ControlSet = field(default_factory=ControlSet)
    wall_value: float | np.ndarray = 1e3
    ghost_value: float = 1e4
    pi_tol: float = 1e-9
    lin_tol: float = 1e-12
    max_iterations: int = 200
    linear_solver: str = "direct"

    def __post_init__(self):
        grid = self.node_map.grid
        self.F = np.asarray(self.F, dtype=float).ravel()
        if self.F.size != grid.size:
            raise ValueError(f"F needs {grid.size} values, got {self.F.size}")
        if np.any(self.F < 0) or not np.all(np.isfinite(self.F)):
            raise ValueError("F must be finite and nonnegative")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"linear_solver must be one of {LINEAR_SOLVERS}")
        walls = np.broadcast_to(np.asarray(self.wall_value, dtype=float), (grid.size,))
        if np.any(walls[self.node_map.codes == NodeClass.WALL] <= 0):
            raise ValueError("wall values must be positive")
        self._walls = np.array(walls)
        self._interior = np.flatnonzero(self.node_map.interior).astype(np.int64)
        uidx = np.full(grid.size, -1, dtype=np.int64)
        uidx[self._interior] = np.arange(self._interior.size)
        self._uidx = uidx
        pos = grid.node_positions()
        self._px = np.ascontiguousarray(pos[:, 0])
        self._py = np.ascontiguousarray(pos[:, 1])
        exits = self.node_map.exit_cells.copy()
        exits[:, 4] = 2
        self._faces = np.vstack([outer_faces(grid.L), obstacle_faces(self.node_map), exits])
        self._near_box = self._nodes_near_boxes()

    def _nodes_near_boxes(self) -> np.ndarray:
        boxes = self.node_map.solids
        near = np.zeros(self.node_map.grid.size, dtype=np.bool_)
        if boxes.shape[0] == 0:
            return near
        reach = self.controls.rho_max * self.h + self.coef * math.sqrt(self.h)
        reach = reach * (1 + 1e-9) + 1e-12
        for x0, y0, x1, y1 in boxes:
            dx = np.maximum(np.maximum(x0 - self._px, self._px - x1), 0.0)
            dy = np.maximum(np.maximum(y0 - self._py, self._py - y1), 0.0)
            near |= np.hypot(dx, dy) <= reach
        return near

    @property
    def coef(self) -> float:
        return math.sqrt(2 * self.node_map.grid.d * self.eps)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self._interior

    def boundary_values(self) -> np.ndarray:
        """Full node vector holding the Dirichlet data (0 on interior nodes)."""
        codes = self.node_map.codes
        v = np.zeros(codes.size)
        wall = codes == NodeClass.WALL
        v[wall] = self._walls[wall]
        v[self.node_map.blocked] = self.ghost_value
        return v

    def _kernel_args(self):
        grid = self.node_map.grid
        return (self._px, self._py, self._near_box, self.controls.controls, self.h,
                self.coef, grid.L, grid.dx, grid.M, self._faces, 1e-9 * grid.dx,
                self.ghost_value)


@dataclass
class TransitionRow:
    """Characteristics of one (node, control) pair.

    ``weights`` maps flat node indices to the coefficients of ``I[v]``
    averaged over the branches; ``ghost_weight`` is the share of branches
    stopped at an obstacle face, so the two add up to one.
    """

    node: int
    control: int
    hhat: np.ndarray  # (4,) in branch order (x+, x-, y+, y-)
    feet: np.ndarray  # (4, 2)
    weights: dict[int, float]
    ghost_weight: float
    cost: float


@dataclass
class HJBResult:
    u: np.ndarray
    policy: np.ndarray  # control index per node, -1 off the interior
    iterations: int
    residual: float
    residual_trace: list[float]
    value_trace: list[np.ndarray] | None = None
    saturated: int = 0


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _branch(x0, x1, ax, ay, ell, sgn, h, coef, L, dx, faces, tol, near, near_box):
    """Truncated step, foot and stop kind.

    The kind is -1 for a full step, 0 on a wall, 1 on an obstacle face and
    2 on an exit cell, where the foot is moved onto the exit node.
    """
    g = h
    kind = -1
    if near or near_box:
        segs = faces if near_box else faces[:4]
        gc, row = first_crossing(x0, x1, ax, ay, ell, sgn, coef, h, segs, tol)
        if row >= 0:
            g = gc
            kind = int(segs[row, 4])
    s = math.sqrt(g) * coef * sgn
    yx = x0 + g * ax
    yy = x1 + g * ay
    if ell == 0:
        yx += s
    else:
        yy += s
    yx = min(max(yx, 0.0), L)
    yy = min(max(yy, 0.0), L)
    if kind == 0 or kind == 2:
        # a foot on an exit cell reads the exit node, not a wall mixture
        for r in range(faces.shape[0]):
            if faces[r, 4] != 2:
                continue
            if int(faces[r, 0]) == 0:
                pa, po = yx, yy
            else:
                pa, po = yy, yx
            if abs(pa - faces[r, 1]) > tol or po < faces[r, 2] - tol or po > faces[r, 3] + tol:
                continue
            k = math.floor(po / dx + 0.5)
            k = min(max(k, math.ceil(faces[r, 2] / dx - 1e-9)),
                    math.floor(faces[r, 3] / dx + 1e-9))
            if int(faces[r, 0]) == 0:
                yy = k * dx
            else:
                yx = k * dx
            kind = 2
            break
    return g, yx, yy, kind


@numba.njit(cache=True)
def _near(x0, x1, ax, ay, h, coef, L):
    reach = math.sqrt(ax * ax + ay * ay) * h + coef * math.sqrt(h)
    dmin = min(min(x0, L - x0), min(x1, L - x1))
    return dmin <= reach * (1.0 + 1e-12) + 1e-14


@numba.njit(cache=True)
def _q_value(v, F, i, a, px, py, near_box, ctrl, h, coef, L, dx, M, faces, tol, G):
    x0 = px[i]
    x1 = py[i]
    ax = ctrl[a, 0]
    ay = ctrl[a, 1]
    near = _near(x0, x1, ax, ay, h, coef, L)
    expect = 0.0
    hsum = 0.0
    for ell in range(2):
        for sgn in (1.0, -1.0):
            g, yx, yy, kind = _branch(x0, x1, ax, ay, ell, sgn, h, coef, L, dx, faces,
                                      tol, near, near_box[i])
            hsum += g
            if kind == 1:
                expect += G
                continue
            k0, k1, k2, w0, w1, w2 = p1_stencil(yx, yy, dx, M)
            expect += w0 * v[k0] + w1 * v[k1] + w2 * v[k2]
    run = 0.5 * (ax * ax + ay * ay) + F[i]
    return 0.25 * expect + 0.25 * hsum * run


@numba.njit(cache=True)
def _improve(v, F, nodes, px, py, near_box, ctrl, h, coef, L, dx, M, faces, tol, G,
             pol, wmin):
    for p in range(nodes.shape[0]):
        i = nodes[p]
        best = np.inf
        arg = 0
        for a in range(ctrl.shape[0]):
            q = _q_value(v, F, i, a, px, py, near_box, ctrl, h, coef, L, dx, M,
                         faces, tol, G)
            if q < best:
                best = q
                arg = a
        pol[p] = arg
        wmin[p] = best


@numba.njit(cache=True)
def _assemble(v_bnd, F, nodes, uidx, pol, px, py, near_box, ctrl, h, coef, L, dx, M,
              faces, tol, G):
    n = nodes.shape[0]
    rows = np.empty(n * 13, dtype=np.int64)
    cols = np.empty(n * 13, dtype=np.int64)
    vals = np.empty(n * 13)
    rhs = np.zeros(n)
    cnt = 0
    for p in range(n):
        i = nodes[p]
        a = pol[p]
        x0 = px[i]
        x1 = py[i]
        ax = ctrl[a, 0]
        ay = ctrl[a, 1]
        near = _near(x0, x1, ax, ay, h, coef, L)
        rows[cnt] = p
        cols[cnt] = p
        vals[cnt] = 1.0
        cnt += 1
        hsum = 0.0
        for ell in range(2):
            for sgn in (1.0, -1.0):
                g, yx, yy, kind = _branch(x0, x1, ax, ay, ell, sgn, h, coef, L, dx, faces,
                                          tol, near, near_box[i])
                hsum += g
                if kind == 1:
                    rhs[p] += 0.25 * G
                    continue
                k0, k1, k2, w0, w1, w2 = p1_stencil(yx, yy, dx, M)
                for t in range(3):
                    if t == 0:
                        k, w = k0, w0
                    elif t == 1:
                        k, w = k1, w1
                    else:
                        k, w = k2, w2
                    if w == 0.0:
                        continue
                    q = uidx[k]
                    if q >= 0:
                        rows[cnt] = p
                        cols[cnt] = q
                        vals[cnt] = -0.25 * w
                        cnt += 1
                    else:
                        rhs[p] += 0.25 * w * v_bnd[k]
        rhs[p] += 0.25 * hsum * (0.5 * (ax * ax + ay * ay) + F[i])
    return rows[:cnt], cols[:cnt], vals[:cnt], rhs


@numba.njit(cache=True)
def _gauss_seidel(indptr, indices, data, rhs, x, tol, max_sweeps):
    n = rhs.shape[0]
    for sweep in range(max_sweeps):
        for r in range(n):
            diag = 0.0
            s = rhs[r]
            for q in range(indptr[r], indptr[r + 1]):
                c = indices[q]
                if c == r:
                    diag += data[q]
                else:
                    s -= data[q] * x[c]
            x[r] = s / diag
        res = 0.0
        for r in range(n):
            acc = -rhs[r]
            for q in range(indptr[r], indptr[r + 1]):
                acc += data[q] * x[indices[q]]
            res = max(res, abs(acc))
        if res <= tol:
            return sweep + 1
    return -1


# ---------------------------------------------------------------------------
# single-node operations


def hjb_char(problem: HJBProblem, i: int, alpha, axis: int, sign: int):
    """Truncated fictive step, foot and stop kind of one branch from node ``i``.

    The kind is -1 for an untruncated branch, 0 when it stops on a wall,
    1 when it stops on an obstacle face and 2 when it reaches an exit cell.
    """
    grid = problem.node_map.grid
    ax, ay = float(alpha[0]), float(alpha[1])
    x0, x1 = problem._px[i], problem._py[i]
    near = _near(x0, x1, ax, ay, problem.h, problem.coef, grid.L)
    g, yx, yy, kind = _branch(x0, x1, ax, ay, axis, float(sign), problem.h,
                              problem.coef, grid.L, grid.dx, problem._faces,
                              1e-9 * grid.dx,
                              near, problem._near_box[i])
    return g, np.array([yx, yy]), kind


def transition_row(problem: HJBProblem, i: int, a: int) -> TransitionRow:
    grid = problem.node_map.grid
    alpha = problem.controls[a]
    hhat = np.empty(4)
    feet = np.empty((4, 2))
    weights: dict[int, float] = {}
    ghost = 0.0
    b = 0
    for ell in (0, 1):
        for sgn in (1, -1):
            hhat[b], feet[b], kind = hjb_char(problem, i, alpha, ell, sgn)
            if kind == 1:
                ghost += 0.25
            else:
                st = p1_stencil(feet[b, 0], feet[b, 1], grid.dx, grid.M)
                for k, w in zip(st[:3], st[3:]):
                    if w != 0.0:
                        weights[int(k)] = weights.get(int(k), 0.0) + 0.25 * w
            b += 1
    cost = 0.25 * hhat.sum() * (0.5 * float(alpha @ alpha) + problem.F[i])
    return TransitionRow(i, a, hhat, feet, weights, ghost, cost)


def bellman_apply(problem: HJBProblem, v, i: int) -> tuple[float, int]:
    """``W(v, i)`` and the minimising control index (lowest index on ties)."""
    v = np.ascontiguousarray(v, dtype=float)
    nodes = np.array([i], dtype=np.int64)
    pol = np.empty(1, dtype=np.int64)
    wmin = np.empty(1)
    _improve(v, problem.F, nodes, *problem._kernel_args(), pol, wmin)
    return float(wmin[0]), int(pol[0])


# ---------------------------------------------------------------------------
# policy iteration


def _full_policy(problem: HJBProblem, pol_int: np.ndarray) -> np.ndarray:
    full = np.full(problem.node_map.grid.size, -1, dtype=np.int64)
    full[problem._interior] = pol_int
    return full


def assemble(problem: HJBProblem, policy) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse ``B^alpha`` restricted to interior unknowns and its right side.

    Dirichlet contributions are moved to the right side.
    """
    pol = np.asarray(policy, dtype=np.int64)
    if pol.size == problem.node_map.grid.size:
        pol = pol[problem._interior]
    n = problem._interior.size
    rows, cols, vals, rhs = _assemble(
        problem.boundary_values(), problem.F, problem._interior, problem._uidx,
        np.ascontiguousarray(pol), *problem._kernel_args(),
    )
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A, rhs


def _check_reachable(A: sp.csr_matrix) -> None:
    n = A.shape[0]
    if n == 0:
        return
    exits = np.asarray(A.sum(axis=1)).ravel() > 1e-14
    off = A.tocoo()
    keep = off.row != off.col
    # edge k -> i whenever row i reads unknown k; node 0 is a source feeding the exits
    src = np.flatnonzero(exits)
    heads = np.concatenate([np.zeros(src.size, dtype=np.int64), off.col[keep] + 1])
    tails = np.concatenate([src + 1, off.row[keep] + 1])
    rev = sp.csr_matrix((np.ones(heads.size), (heads, tails)), shape=(n + 1, n + 1))
    order = breadth_first_order(rev, 0, directed=True, return_predecessors=False)
    if order.size - 1 < n:
        reached = np.zeros(n + 1, dtype=bool)
        reached[order] = True
        stuck = np.flatnonzero(~reached[1:])
        raise ReachabilityError(
            f"{stuck.size} interior unknowns never reach the boundary "
            f"(first: unknown {stuck[0]}); reduce h or increase eps"
        )


def policy_evaluation(problem: HJBProblem, policy, x0=None) -> np.ndarray:
    """Value of a fixed policy: solve ``B^alpha v = c(alpha)``.

    Returns the full node vector including the Dirichlet values.
    """
    A, rhs = assemble(problem, policy)
    _check_reachable(A)
    v = problem.boundary_values()
    n = rhs.size
    if n == 0:
        return v
    if problem.linear_solver == "direct":
        x = spsolve(A.tocsc(), rhs)
        r = A @ x - rhs
        if np.max(np.abs(r)) > problem.lin_tol:
            x = x - spsolve(A.tocsc(), r)
    else:
        x = np.zeros(n) if x0 is None else np.array(x0[problem._interior], dtype=float)
        M = problem.node_map.grid.M
        sweeps = _gauss_seidel(A.indptr, A.indices.astype(np.int64), A.data, rhs, x,
                               problem.lin_tol, 10 * M * M)
        if sweeps < 0:
            raise ReachabilityError(
                f"Gauss-Seidel did not reach {problem.lin_tol:g} in {10 * M * M} sweeps"
            )
    v[problem._interior] = x
    return v


def bellman_residual(problem: HJBProblem, v) -> tuple[float, np.ndarray]:
    """``max |v - W(v)|`` over interior nodes and the greedy policy."""
    v = np.ascontiguousarray(v, dtype=float)
    n = problem._interior.size
    pol = np.empty(n, dtype=np.int64)
    wmin = np.empty(n)
    _improve(v, problem.F, problem._interior, *problem._kernel_args(), pol, wmin)
    res = float(np.max(np.abs(v[problem._interior] - wmin))) if n else 0.0
    return res, pol


def policy_iteration(problem: HJBProblem, warm_start=None, keep_trace: bool = False,
                     mono_slack: float = 1e-12) -> HJBResult:
    """Howard's algorithm from ``warm_start`` (zero control when None).

    The value sequence must be non-increasing; an increase beyond
    ``mono_slack * max(1, |v|)`` signals an assembly bug.
    """
    n = problem._interior.size
    if warm_start is None:
        pol = np.zeros(n, dtype=np.int64)
    else:
        pol = np.asarray(warm_start, dtype=np.int64)
        if pol.size == problem.node_map.grid.size:
            pol = pol[problem._interior]
        pol = np.ascontiguousarray(pol.copy())
        if np.any((pol < 0) | (pol >= len(problem.controls))):
            raise ValueError("warm start policy holds invalid control indices")

    v = policy_evaluation(problem, pol)
    trace = [v.copy()] if keep_trace else None
    residuals = []
    it = 1
    while True:
        res, greedy = bellman_residual(problem, v)
        residuals.append(res)
        if res <= problem.pi_tol or np.array_equal(greedy, pol):
            break
        if it >= problem.max_iterations:
            raise ConvergenceError(
                f"policy iteration stopped after {it} iterations, residual {res:.3e}"
            )
        pol = greedy
        v_new = policy_evaluation(problem, pol, x0=v)
        rise = v_new - v
        bound = mono_slack * np.maximum(1.0, np.abs(v))
        if np.any(rise > bound):
            k = int(np.argmax(rise - bound))
            raise InternalError(
                f"value increased by {rise[k]:.3e} at node {k} during policy iteration"
            )
        change = float(np.max(np.abs(rise))) if n else 0.0
        v = v_new
        if trace is not None:
            trace.append(v.copy())
        it += 1
        if change <= problem.pi_tol:
            res, pol = bellman_residual(problem, v)
            residuals.append(res)
            break

    if n and np.max(v[problem._interior]) >= problem.ghost_value / 2:
        raise InternalError(
            f"interior value {np.max(v[problem._interior]):.3e} reached half the ghost "
            f"value {problem.ghost_value:g}; raise the ghost value"
        )
    saturated = int(np.count_nonzero(
        problem.controls.norms[pol] >= problem.controls.rho_max * (1 - 1e-12)))
    if saturated:
        logger.debug("control saturated at |alpha| = %g on %d nodes",
                     problem.controls.rho_max, saturated)
    return HJBResult(
        u=v, policy=_full_policy(problem, pol), iterations=it,
        residual=residuals[-1], residual_trace=residuals, value_trace=trace,
        saturated=saturated,
    )


# ---------------------------------------------------------------------------
# gradient


def _differences(U: np.ndarray, ok: np.ndarray, dx: float) -> np.ndarray:
    """Centred where both neighbours are ``ok``, one-sided otherwise."""
    n = U.shape[0]
    grad = np.zeros((n, n, 2))
    for axis in (0, 1):
        Um = np.moveaxis(U, axis, 0)
        okm = np.moveaxis(ok, axis, 0)
        g = np.zeros_like(Um)
        fwd = np.zeros_like(okm)
        bwd = np.zeros_like(okm)
        fwd[:-1] = okm[1:]
        bwd[1:] = okm[:-1]
        dfwd = np.zeros_like(Um)
        dbwd = np.zeros_like(Um)
        dfwd[:-1] = (Um[1:] - Um[:-1]) / dx
        dbwd[1:] = (Um[1:] - Um[:-1]) / dx
        both = fwd & bwd
        g[both] = 0.5 * (dfwd[both] + dbwd[both])
        only_f = fwd & ~bwd
        g[only_f] = dfwd[only_f]
        only_b = bwd & ~fwd
        g[only_b] = dbwd[only_b]
        g[~okm] = 0.0
        np.moveaxis(grad[..., axis], axis, 0)[...] = g
    return grad


def discrete_gradient(node_map: NodeMap, u, wall_rule: str = "tangential") -> np.ndarray:
    """Finite-difference gradient, ``(n_nodes, 2)``.

    Centred differences where both neighbours are usable, one-sided ones
    otherwise; blocked nodes get zero.  With ``wall_rule="plain"`` every
    unblocked node is usable, which makes the operator exact on affine
    ``u`` at every node.

    The default ``"tangential"`` rule is the one used for the drift.  Wall
    values are the large penalty ``g`` and carry no slope information, so
    interior and exit nodes never read them.  At a wall node ``u`` is
    replaced by the value of its inward neighbour (diagonal at corners) and
    differences are taken along the wall, with exit nodes keeping their
    zero value.  The normal component then vanishes and the tangential one
    points along the wall towards exits.
    """
    if wall_rule not in ("tangential", "plain"):
        raise ValueError(f"unknown wall rule {wall_rule!r}")
    grid = node_map.grid
    n, dx = grid.n, grid.dx
    U = np.asarray(u, dtype=float).reshape(grid.shape)
    codes = node_map.codes.reshape(grid.shape)
    if wall_rule == "plain":
        ok = ~node_map.blocked.reshape(grid.shape)
        return _differences(U, ok, dx).reshape(grid.size, 2)
    ok = (codes == NodeClass.INTERIOR) | (codes == NodeClass.TARGET)
    grad = _differences(U, ok, dx)

    wall = codes == NodeClass.WALL
    if not wall.any():
        return grad.reshape(grid.size, 2)
    proxy = U.copy()
    has_proxy = np.zeros_like(wall)
    for i, j in zip(*np.nonzero(wall)):
        ii = min(max(i, 1), n - 2)
        jj = min(max(j, 1), n - 2)
        if ok[ii, jj]:
            proxy[i, j] = U[ii, jj]
            has_proxy[i, j] = True
    along = _differences(proxy, ok | has_proxy, dx)
    grad[wall] = np.where(has_proxy[wall][:, None], along[wall], 0.0)
    return grad.reshape(grid.size, 2)
