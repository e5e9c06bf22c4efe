"""Scenario geometry: exits, obstacles, node classification and the
characteristic-geometry kernels shared by the Fokker-Planck and HJB solvers.

Obstacles are closed rectangles and block every node they contain.  The
blocked nodes are covered by index rectangles whose hulls (``solids``)
stand in for the obstacles in the HJB solver, where characteristics that
touch a solid stop and read the ghost value.  The region in which a P1
query would touch a blocked node is the union of the open ``boxes``, each
one cell wider than its solid; FP feet are reflected off those boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigurationError
from .grid import GridSpec, NodeClass

MASK_INTERIOR = "."
MASK_WALL = "#"
MASK_OBSTACLE = "X"
MASK_GHOST = "*"


@dataclass(frozen=True)
class Exit:
    """Axis-aligned exit segment on the boundary of the square."""

    id: str
    start: tuple[float, float]
    end: tuple[float, float]

    @property
    def width(self) -> float:
        return math.dist(self.start, self.end)


@dataclass(frozen=True)
class Obstacle:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise ConfigurationError(f"degenerate obstacle {self.lo}-{self.hi}")


@dataclass(frozen=True)
class Geometry:
    exits: tuple[Exit, ...] = ()
    obstacles: tuple[Obstacle, ...] = ()
    # Optional per-node mask, one string per row, top row (largest y) first.
    mask: tuple[str, ...] | None = None


@dataclass
class NodeMap:
    """Classification of every grid node plus derived geometric data.

    ``solids`` rows are ``(x0, y0, x1, y1)`` hulls of blocked nodes and
    ``boxes`` the open regions to keep density out of.  ``target_segments``
    rows are ``(axis, c, lo, hi, exit)`` meaning the set
    ``{x[axis] == c, lo <= x[1-axis] <= hi}``; they are the exits as given
    and absorb density.  ``exit_cells`` has the same layout and covers the
    boundary cells (half a cell either side) of the exit nodes.
    """

    grid: GridSpec
    codes: np.ndarray  # flat int8
    exit_of: np.ndarray  # flat int32, -1 off target
    exit_ids: list[str]
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    solids: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    target_segments: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))
    exit_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))

    @property
    def blocked(self) -> np.ndarray:
        return (self.codes == NodeClass.OBSTACLE) | (self.codes == NodeClass.GHOST)

    @property
    def fp_active(self) -> np.ndarray:
        """Nodes that may carry density."""
        return (self.codes == NodeClass.INTERIOR) | (self.codes == NodeClass.WALL)

    @property
    def interior(self) -> np.ndarray:
        return self.codes == NodeClass.INTERIOR

    def count(self, cls: NodeClass) -> int:
        return int(np.count_nonzero(self.codes == cls))

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.int64(self.grid.M).tobytes())
        h.update(self.codes.astype(np.int8).tobytes())
        h.update(self.exit_of.astype(np.int32).tobytes())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# classification


def _exit_face(ex: Exit, L: float, tol: float) -> tuple[int, float, float, float]:
    (x0, y0), (x1, y1) = ex.start, ex.end
    for axis, a0, a1, b0, b1 in ((0, x0, x1, y0, y1), (1, y0, y1, x0, x1)):
        if abs(a0 - a1) <= tol and (abs(a0) <= tol or abs(a0 - L) <= tol):
            c = 0.0 if abs(a0) <= tol else L
            lo, hi = sorted((b0, b1))
            if lo < -tol or hi > L + tol:
                break
            return axis, c, max(lo, 0.0), min(hi, L)
    raise ConfigurationError(
        f"exit {ex.id!r} is not an axis-aligned segment on the domain boundary",
        path="geometry.exits",
    )


def _boundary_nodes_on_face(grid: GridSpec, axis: int, c: float) -> np.ndarray:
    """(k, along-coordinate) for nodes on the face ``x[axis] == c``."""
    n = grid.n
    fixed = 0 if c == 0.0 else grid.M
    along = np.arange(n)
    if axis == 0:
        flat = fixed * n + along
    else:
        flat = along * n + fixed
    return np.column_stack([flat, along * grid.dx])


def _merge_runs(blocked2d: np.ndarray) -> list[tuple[int, int, int, int]]:
    """Cover a boolean (n, n) array with index rectangles (i0, i1, j0, j1)."""
    n = blocked2d.shape[0]
    open_rects: dict[tuple[int, int], list[int]] = {}
    done: list[tuple[int, int, int, int]] = []
    for j in range(n):
        col = blocked2d[:, j]
        runs = []
        i = 0
        while i < n:
            if col[i]:
                i0 = i
                while i + 1 < n and col[i + 1]:
                    i += 1
                runs.append((i0, i))
            i += 1
        still = {}
        for r in runs:
            if r in open_rects:
                still[r] = open_rects[r]
                still[r][1] = j
            else:
                still[r] = [j, j]
        for r, (j0, j1) in open_rects.items():
            if r not in still:
                done.append((r[0], r[1], j0, j1))
        open_rects = still
    for r, (j0, j1) in open_rects.items():
        done.append((r[0], r[1], j0, j1))
    done.sort(key=lambda t: (t[2], t[0]))
    return done


def _blocked_boxes(grid: GridSpec, blocked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solids and boxes covering the blocked nodes."""
    dx = grid.dx
    solids = []
    boxes = []
    for i0, i1, j0, j1 in _merge_runs(blocked.reshape(grid.shape)):
        solids.append((i0 * dx, j0 * dx, i1 * dx, j1 * dx))
        # not clipped to the square: a foot folded onto the outer edge next
        # to a blocked node must still count as inside the box
        boxes.append(((i0 - 1) * dx, (j0 - 1) * dx, (i1 + 1) * dx, (j1 + 1) * dx))
    return (np.array(solids, dtype=float).reshape(-1, 4),
            np.array(boxes, dtype=float).reshape(-1, 4))


def _split_ghosts(grid: GridSpec, codes: np.ndarray, blocked: np.ndarray) -> None:
    """Blocked nodes next to a free node become ghosts, the rest obstacles."""
    b2 = blocked.reshape(grid.shape)
    padded = np.pad(b2, 1, constant_values=True)
    n = grid.n
    all_blocked = np.ones_like(b2)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            all_blocked &= padded[1 + di : 1 + di + n, 1 + dj : 1 + dj + n]
    c2 = codes.reshape(grid.shape)
    c2[b2 & all_blocked] = NodeClass.OBSTACLE
    c2[b2 & ~all_blocked] = NodeClass.GHOST


def classify_nodes(grid: GridSpec, geometry: Geometry) -> NodeMap:
    """Assign a :class:`NodeClass` to every node of ``grid``."""
    if geometry.mask is not None:
        return _classify_mask(grid, geometry.mask)

    n, dx, L = grid.n, grid.dx, grid.L
    tol = 1e-9 * dx
    codes = np.full(grid.shape, NodeClass.INTERIOR, dtype=np.int8)
    codes[0, :] = codes[-1, :] = codes[:, 0] = codes[:, -1] = NodeClass.WALL
    codes = codes.ravel()

    pos = grid.node_positions()
    blocked = np.zeros(grid.size, dtype=bool)
    for ob in geometry.obstacles:
        if (ob.lo[0] < -tol or ob.lo[1] < -tol or ob.hi[0] > L + tol
                or ob.hi[1] > L + tol):
            raise ConfigurationError(
                f"obstacle {ob.lo}-{ob.hi} leaves the domain", path="geometry.obstacles"
            )
        inside = (
            (pos[:, 0] >= ob.lo[0] - tol) & (pos[:, 0] <= ob.hi[0] + tol)
            & (pos[:, 1] >= ob.lo[1] - tol) & (pos[:, 1] <= ob.hi[1] + tol)
        )
        if not inside.any():
            raise ConfigurationError(
                f"obstacle {ob.lo}-{ob.hi} contains no grid node; refine the grid",
                path="geometry.obstacles",
            )
        blocked |= inside
    _split_ghosts(grid, codes, blocked)

    exit_of = np.full(grid.size, -1, dtype=np.int32)
    exit_ids: list[str] = []
    faces = []
    segs = []
    cells = []
    for e_idx, ex in enumerate(geometry.exits):
        if ex.id in exit_ids:
            raise ConfigurationError(f"duplicate exit id {ex.id!r}", path="geometry.exits")
        exit_ids.append(ex.id)
        axis, c, lo, hi = _exit_face(ex, L, tol)
        for other_axis, other_c, olo, ohi, oid in faces:
            if other_axis == axis and other_c == c and lo <= ohi + tol and olo <= hi + tol:
                raise ConfigurationError(
                    f"exits {oid!r} and {ex.id!r} overlap", path="geometry.exits"
                )
        faces.append((axis, c, lo, hi, ex.id))
        segs.append((axis, c, lo, hi, e_idx))

        face = _boundary_nodes_on_face(grid, axis, c)
        flat = face[:, 0].astype(np.int64)
        along = face[:, 1]
        hit = (along >= lo - tol) & (along <= hi + tol) & ~blocked[flat]
        chosen = flat[hit]
        if chosen.size == 0:
            # narrower than the grid: snap to the nearest node, lower index on ties
            mid = 0.5 * (lo + hi)
            dist = np.where(blocked[flat], np.inf, np.abs(along - mid))
            chosen = flat[[int(np.argmin(dist))]]
        for k in chosen:
            if exit_of[k] >= 0 and exit_of[k] != e_idx:
                raise ConfigurationError(
                    f"exits {exit_ids[exit_of[k]]!r} and {ex.id!r} share node {k}",
                    path="geometry.exits",
                )
            exit_of[k] = e_idx
            codes[k] = NodeClass.TARGET
        # boundary cells of the exit nodes, read by the HJB solver
        chosen_along = np.sort(along[np.isin(flat, chosen)])
        cells.append((axis, c, max(chosen_along[0] - dx / 2, 0.0),
                      min(chosen_along[-1] + dx / 2, L), e_idx))

    solids, boxes = _blocked_boxes(grid, blocked)
    return NodeMap(
        grid=grid,
        codes=codes,
        exit_of=exit_of,
        exit_ids=exit_ids,
        boxes=boxes,
        solids=solids,
        target_segments=np.array(segs, dtype=float).reshape(-1, 5),
        exit_cells=np.array(cells, dtype=float).reshape(-1, 5),
    )


def _classify_mask(grid: GridSpec, rows: tuple[str, ...]) -> NodeMap:
    n = grid.n
    if len(rows) != n or any(len(r) != n for r in rows):
        raise ConfigurationError(
            f"mask must be {n} rows of {n} characters", path="geometry.mask"
        )
    codes = np.empty(grid.shape, dtype=np.int8)
    exit_of = np.full(grid.shape, -1, dtype=np.int32)
    exit_ids: list[str] = []
    blocked = np.zeros(grid.shape, dtype=bool)
    for r, row in enumerate(rows):
        j = n - 1 - r
        for i, ch in enumerate(row):
            if ch == MASK_INTERIOR:
                codes[i, j] = NodeClass.INTERIOR
            elif ch == MASK_WALL:
                codes[i, j] = NodeClass.WALL
            elif ch in (MASK_OBSTACLE, MASK_GHOST):
                blocked[i, j] = True
            elif ch.islower():
                if ch not in exit_ids:
                    exit_ids.append(ch)
                codes[i, j] = NodeClass.TARGET
                exit_of[i, j] = exit_ids.index(ch)
            else:
                raise ConfigurationError(
                    f"unknown mask code {ch!r} at row {r}, column {i}", path="geometry.mask"
                )
    on_edge = np.zeros(grid.shape, dtype=bool)
    on_edge[0, :] = on_edge[-1, :] = on_edge[:, 0] = on_edge[:, -1] = True
    if np.any((codes == NodeClass.INTERIOR) & on_edge & ~blocked):
        raise ConfigurationError("boundary nodes must be wall, exit or blocked",
                                 path="geometry.mask")
    if np.any((codes == NodeClass.TARGET) & ~on_edge):
        raise ConfigurationError("exit nodes must lie on the domain boundary",
                                 path="geometry.mask")
    codes = codes.ravel()
    blocked = blocked.ravel()
    _split_ghosts(grid, codes, blocked)
    exit_of = exit_of.ravel()

    # target segments: contiguous runs along each face, widened by half a cell
    segs = []
    dx, L = grid.dx, grid.L
    for axis in (0, 1):
        for c in (0.0, L):
            face = _boundary_nodes_on_face(grid, axis, c)
            flat = face[:, 0].astype(np.int64)
            ids = exit_of[flat]
            start = None
            for p in range(len(flat) + 1):
                cur = ids[p] if p < len(flat) else -1
                if start is not None and (cur != ids[start]):
                    lo = max(face[start, 1] - dx / 2, 0.0)
                    hi = min(face[p - 1, 1] + dx / 2, L)
                    segs.append((axis, c, lo, hi, ids[start]))
                    start = None
                if start is None and cur >= 0:
                    start = p
    solids, boxes = _blocked_boxes(grid, blocked)
    return NodeMap(
        grid=grid,
        codes=codes,
        exit_of=exit_of,
        exit_ids=exit_ids,
        boxes=boxes,
        solids=solids,
        target_segments=np.array(segs, dtype=float).reshape(-1, 5),
        exit_cells=np.array(segs, dtype=float).reshape(-1, 5),
    )


def outer_faces(L: float) -> np.ndarray:
    """The four sides of the square as ``(axis, c, lo, hi, kind)`` rows."""
    return np.array([(0, 0.0, 0.0, L, 0), (0, L, 0.0, L, 0),
                     (1, 0.0, 0.0, L, 0), (1, L, 0.0, L, 0)], dtype=float)


def obstacle_faces(node_map: NodeMap) -> np.ndarray:
    """Faces of the solids as ``(axis, c, lo, hi, 1)`` rows."""
    segs = []
    for x0, y0, x1, y1 in node_map.solids:
        segs += [(0, x0, y0, y1, 1), (0, x1, y0, y1, 1), (1, y0, x0, x1, 1), (1, y1, x0, x1, 1)]
    return np.array(segs, dtype=float).reshape(-1, 5)


# ---------------------------------------------------------------------------
# characteristic kernels


@numba.njit(cache=True)
def first_crossing(x0, x1, v0, v1, ell, sgn, coef, gmax, segs, tol):
    """Earliest ``0 < g <= gmax`` at which ``x + g*v + sgn*sqrt(coef^2*g)*e_ell``
    lies on one of ``segs``.

    With ``s = sqrt(g)`` each coordinate is a quadratic in ``s``, solved in
    closed form.  Returns ``(g, row)``; ``row == -1`` means no crossing.
    """
    best = np.inf
    best_row = -1
    smin = 1e-13 * math.sqrt(gmax)
    smax = math.sqrt(gmax)
    for r in range(segs.shape[0]):
        axis = int(segs[r, 0])
        c = segs[r, 1]
        lo = segs[r, 2]
        hi = segs[r, 3]
        if axis == 0:
            pa, va, po, vo = x0, v0, x1, v1
        else:
            pa, va, po, vo = x1, v1, x0, v0
        ba = sgn * coef if ell == axis else 0.0
        bo = sgn * coef if ell != axis else 0.0
        A = va
        B = ba
        C = pa - c
        r1 = np.inf
        r2 = np.inf
        if A == 0.0:
            if B != 0.0:
                r1 = -C / B
        else:
            disc = B * B - 4.0 * A * C
            if disc >= 0.0:
                sq = math.sqrt(disc)
                q = -0.5 * (B + sq) if B >= 0.0 else -0.5 * (B - sq)
                if q != 0.0:
                    r1 = q / A
                    r2 = C / q
                else:
                    r1 = 0.0
        for s in (r1, r2):
            if s > smin and s <= smax * (1.0 + 1e-15):
                g = min(s * s, gmax)
                if g < best:
                    o = po + vo * s * s + bo * s
                    if o >= lo - tol and o <= hi + tol:
                        best = g
                        best_row = r
    return best, best_row


@numba.njit(cache=True)
def _in_box(px, py, boxes, tol):
    for b in range(boxes.shape[0]):
        if (px > boxes[b, 0] + tol and px < boxes[b, 2] - tol
                and py > boxes[b, 1] + tol and py < boxes[b, 3] - tol):
            return b
    return -1


@numba.njit(cache=True)
def _admissible(px, py, L, boxes, tol):
    if px < 0.0 or px > L or py < 0.0 or py > L:
        return False
    return _in_box(px, py, boxes, tol) < 0


@numba.njit(cache=True)
def reflect_point(zx, zy, sx, sy, L, boxes, tol):
    """Symmetrised projection of ``z`` back into the admissible region.

    ``(sx, sy)`` is the start of the characteristic; it picks among the
    face projections when ``z`` ends inside an obstacle box.
    """
    if zx < 0.0 or zx > L or zy < 0.0 or zy > L:
        wx = min(max(zx, 0.0), L)
        wy = min(max(zy, 0.0), L)
        zx = min(max(2.0 * wx - zx, 0.0), L)
        zy = min(max(2.0 * wy - zy, 0.0), L)
    b = _in_box(zx, zy, boxes, tol)
    if b < 0:
        return zx, zy
    best = np.inf
    wx = sx
    wy = sy
    for f in range(4):
        if f == 0:
            cx, cy = boxes[b, 0], zy
        elif f == 1:
            cx, cy = boxes[b, 2], zy
        elif f == 2:
            cx, cy = zx, boxes[b, 1]
        else:
            cx, cy = zx, boxes[b, 3]
        if not _admissible(cx, cy, L, boxes, tol):
            continue
        dist = (cx - sx) ** 2 + (cy - sy) ** 2
        if dist < best:
            best = dist
            wx, wy = cx, cy
    if best == np.inf:
        return sx, sy
    mx = 2.0 * wx - zx
    my = 2.0 * wy - zy
    if _admissible(mx, my, L, boxes, tol):
        return mx, my
    return wx, wy


def reflect(node_map: NodeMap, z, start) -> tuple[float, float]:
    """Python wrapper around :func:`reflect_point`."""
    tol = 1e-12 * node_map.grid.dx
    return reflect_point(float(z[0]), float(z[1]), float(start[0]), float(start[1]),
                         node_map.grid.L, node_map.boxes, tol)
