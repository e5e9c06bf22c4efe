"""Reference solutions for validating the solvers.

* Cole-Hopf: ``-eps u'' + u'^2/2 = F`` on ``[0, 1]`` with ``u(0) = u(1) = 0``
  becomes ``phi'' = F/(2 eps^2) phi`` under ``u = -2 eps ln phi``.
* Heat kernel: the constant-drift Fokker-Planck equation moves a Gaussian
  by ``b t`` and adds ``2 eps t`` to its variance on each axis.
* Particles: Monte Carlo walkers following the discrete axis walk, with a
  counter-based SplitMix64 stream per particle.
* Convergence: observed orders by least squares on log-log data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import Exit, Geometry, NodeMap, classify_nodes
from .grid import GridSpec, NodeClass

# ---------------------------------------------------------------------------
# Cole-Hopf


def _log_cosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)


def cole_hopf_hjb(eps: float, F: float, x):
    """Exact ``u*(x)`` on the slab ``[0, 1]`` with zero boundary values."""
    if not (eps > 0 and F >= 0):
        raise ValueError("need eps > 0 and F >= 0")
    x = np.asarray(x, dtype=float)
    if F == 0:
        return np.zeros_like(x)
    k = math.sqrt(F / 2.0) / eps
    return 2.0 * eps * (_log_cosh(k / 2.0) - _log_cosh(k * (x - 0.5)))


def cole_hopf_derivatives(eps: float, F: float, x):
    """``(u', u'')`` of :func:`cole_hopf_hjb`."""
    x = np.asarray(x, dtype=float)
    if F == 0:
        return np.zeros_like(x), np.zeros_like(x)
    k = math.sqrt(F / 2.0) / eps
    t = np.tanh(k * (x - 0.5))
    return -2.0 * eps * k * t, -2.0 * eps * k * k * (1.0 - t * t)


def cole_hopf_residual(eps: float, F: float, x):
    """``-eps u'' + u'^2/2 - F`` at ``x``, computed from the closed form."""
    d1, d2 = cole_hopf_derivatives(eps, F, x)
    return -eps * d2 + 0.5 * d1 * d1 - F


def slab_node_map(M: int) -> NodeMap:
    """Unit square whose left and right sides are exits."""
    geo = Geometry(exits=(Exit("left", (0.0, 0.0), (0.0, 1.0)),
                          Exit("right", (1.0, 0.0), (1.0, 1.0))))
    return classify_nodes(GridSpec(1.0, M), geo)


def cole_hopf_slab_error(M: int, h: float, eps: float, F: float, **problem_kw) -> dict:
    """Solve the HJB on the slab embedded in 2D and compare with ``u*``.

    The top and bottom walls carry the exact solution as Dirichlet data, so
    the continuous 2D solution is ``u*(x)`` for every ``y``.
    """
    from .hjb import ControlSet, HJBProblem, policy_iteration

    nm = slab_node_map(M)
    pos = nm.grid.node_positions()
    exact = cole_hopf_hjb(eps, F, pos[:, 0])
    walls = np.where(nm.codes == NodeClass.WALL, exact, 1.0)
    problem = HJBProblem(node_map=nm, F=np.full(nm.grid.size, float(F)), h=h, eps=eps,
                         controls=problem_kw.pop("controls", ControlSet()),
                         wall_value=walls, **problem_kw)
    res = policy_iteration(problem)
    inner = nm.interior
    err = np.abs(res.u - exact)[inner]
    return {"linf": float(err.max()), "l1": float(err.sum() * nm.grid.dx**2),
            "iterations": res.iterations, "u": res.u, "exact": exact}


# ---------------------------------------------------------------------------
# heat kernel


@dataclass(frozen=True)
class Gaussian:
    mean: tuple[float, float]
    sigma: float
    mass: float = 1.0

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r2 = (pts[:, 0] - self.mean[0]) ** 2 + (pts[:, 1] - self.mean[1]) ** 2
        return self.mass * np.exp(-r2 / (2 * self.sigma**2)) / (2 * math.pi * self.sigma**2)

    def mass_outside(self, L: float) -> float:
        """Mass outside ``[0, L]^2`` (union bound over the four sides)."""
        tail = 0.0
        for c in self.mean:
            for d in (c, L - c):
                tail += 0.5 * math.erfc(d / (self.sigma * math.sqrt(2)))
        return self.mass * tail


def heat_kernel_fp(eps: float, b, m0: Gaussian, t: float) -> Gaussian:
    """Exact solution at time ``t``: mean ``+ b t``, variance ``+ 2 eps t``."""
    if eps < 0 or t < 0:
        raise ValueError("need eps >= 0 and t >= 0")
    mean = (m0.mean[0] + b[0] * t, m0.mean[1] + b[1] * t)
    return Gaussian(mean, math.sqrt(m0.sigma**2 + 2 * eps * t), m0.mass)


def heat_kernel_error(M: int, dt: float, eps: float, b, m0: Gaussian, t: float,
                      L: float = 1.0) -> dict:
    """L1 error of the SL Fokker-Planck scheme against the heat kernel.

    Raises ConfigurationError when the domain lets more than 1e-12 of the
    mass reach the walls.
    """
    from .fp import fp_step

    end = heat_kernel_fp(eps, b, m0, t)
    for g in (m0, end):
        if g.mass_outside(L) > 1e-12 * g.mass:
            raise ConfigurationError("domain too small for the free-space oracle",
                                     path="L")
    n_steps = int(round(t / dt))
    if not math.isclose(n_steps * dt, t, rel_tol=1e-9):
        raise ValueError("t must be a multiple of dt")
    nm = classify_nodes(GridSpec(L, M), Geometry())
    pos = nm.grid.node_positions()
    m = m0(pos)
    drift = np.tile(np.asarray(b, dtype=float), (nm.grid.size, 1))
    for _ in range(n_steps):
        m, _ = fp_step(m, drift, nm, dt, eps)
        m = m.values
    exact = end(pos)
    cell = nm.grid.dx**2
    return {"l1": float(np.abs(m - exact).sum() * cell),
            "linf": float(np.abs(m - exact).max()), "m": m, "exact": exact}


# ---------------------------------------------------------------------------
# particles

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, counter) -> np.ndarray:
    """SplitMix64 output number ``counter`` of the stream started at ``seed``.

    ``z = seed + (counter + 1) * 0x9E3779B97F4A7C15``, then the usual
    finaliser ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31`` (all modulo 2^64).
    """
    c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + (c + np.uint64(1)) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform01(seed: int, counter) -> np.ndarray:
    """Doubles in ``[0, 1)`` from the top 53 bits of :func:`splitmix64`."""
    return (splitmix64(seed, counter) >> np.uint64(11)).astype(np.float64) * 2.0**-53


# draws per particle and step: start node, axis, sign, stencil vertex
_DRAWS = 4


def particle_counter(particle, step: int, slot: int):
    """Counter of draw ``slot`` for ``particle`` at ``step``.

    Each particle owns the block ``[particle * 2^32, (particle + 1) * 2^32)``.
    """
    p = np.asarray(particle, dtype=np.uint64)
    return (p << np.uint64(32)) + np.uint64(step * _DRAWS + slot)


@dataclass
class ParticleReport:
    n_particles: int
    counts: np.ndarray  # particles per node after the step
    absorbed: dict[str, int]
    histogram: np.ndarray  # counts / n_particles
    l1_bound: float = 0.0
    extras: dict = field(default_factory=dict)


def _crossing_s(p_along, v_along, b_along, c):
    """Smallest s in (0, inf) solving p + v s^2 + b s = c, vectorised."""
    A = v_along
    B = b_along
    C = p_along - c
    s = np.full(np.shape(p_along), np.inf)
    lin = A == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(lin & (B != 0.0), -C / np.where(B == 0, 1.0, B), np.inf)
        s = np.where(lin & (r > 0), r, s)
        disc = B * B - 4 * A * C
        ok = ~lin & (disc >= 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        den = np.where(A == 0, 1.0, 2 * A)
        r1 = (-B - sq) / den
        r2 = (-B + sq) / den
        for rr in (r1, r2):
            s = np.where(ok & (rr > 0) & (rr < s), rr, s)
    return s


def particle_step(node_map: NodeMap, m, drift, dt: float, eps: float,
                  n_particles: int, seed: int, step: int = 0) -> ParticleReport:
    """Move ``n_particles`` walkers one step from the discrete density ``m``.

    Starts are drawn from ``m`` (node probabilities ``m_j / sum m``), each
    walker takes the characteristic of its start node along one random axis
    and sign, is absorbed if it meets an exit segment within ``dt`` and is
    otherwise folded back into the square and assigned to one vertex of its
    P1 triangle with the barycentric weights as probabilities.  Only the
    empty room (no obstacles) is supported.
    """
    if node_map.boxes.shape[0]:
        raise ConfigurationError("the particle oracle handles rooms without obstacles",
                                 path="geometry.obstacles")
    grid = node_map.grid
    L, dx, n = grid.L, grid.dx, grid.n
    m = np.asarray(getattr(m, "values", m), dtype=float)
    drift = np.asarray(drift, dtype=float).reshape(grid.size, 2)
    pid = np.arange(n_particles, dtype=np.uint64)

    cdf = np.cumsum(m)
    cdf /= cdf[-1]
    start = np.searchsorted(cdf, uniform01(seed, particle_counter(pid, step, 0)), side="right")
    start = np.minimum(start, grid.size - 1)
    axis = (uniform01(seed, particle_counter(pid, step, 1)) < 0.5).astype(np.int64)
    sign = np.where(uniform01(seed, particle_counter(pid, step, 2)) < 0.5, 1.0, -1.0)

    pos = grid.node_positions()[start]
    b = drift[start]
    coef = math.sqrt(2 * grid.d * eps)
    jump = np.zeros_like(pos)
    jump[np.arange(n_particles), axis] = sign * coef

    # exits: earliest crossing s = sqrt(g) with g <= dt and the other
    # coordinate within the segment (tolerance dx/100)
    best_s = np.full(n_particles, np.inf)
    best_exit = np.full(n_particles, -1)
    smax = math.sqrt(dt)
    tol = dx / 100
    for ax_, c, lo, hi, e in node_map.target_segments:
        ax_ = int(ax_)
        o = 1 - ax_
        s = _crossing_s(pos[:, ax_], b[:, ax_], jump[:, ax_], c)
        hit = (s > 1e-13 * smax) & (s <= smax * (1 + 1e-15))
        s = np.where(hit, s, 0.0)
        other = pos[:, o] + b[:, o] * s * s + jump[:, o] * s
        hit &= (other >= lo - tol) & (other <= hi + tol) & (s < best_s)
        best_s = np.where(hit, s, best_s)
        best_exit = np.where(hit, int(e), best_exit)

    z = pos + dt * b + math.sqrt(dt) * jump
    w = np.clip(z, 0.0, L)
    z = np.clip(2 * w - z, 0.0, L)

    # P1 vertex draw on the lower-left/upper-right diagonal split
    t = z / dx
    ci = np.clip(np.floor(t[:, 0]).astype(np.int64), 0, grid.M - 1)
    cj = np.clip(np.floor(t[:, 1]).astype(np.int64), 0, grid.M - 1)
    a = t[:, 0] - ci
    bb = t[:, 1] - cj
    lower = a >= bb
    k00 = ci * n + cj
    k11 = k00 + n + 1
    kmid = np.where(lower, k00 + n, k00 + 1)
    w0 = np.where(lower, 1 - a, 1 - bb)
    w1 = np.where(lower, a - bb, bb - a)
    r = uniform01(seed, particle_counter(pid, step, 3))
    dest = np.where(r < w0, k00, np.where(r < w0 + w1, kmid, k11))

    absorbed_by = best_exit.copy()
    free = absorbed_by < 0
    tgt = free & (node_map.codes[dest] == NodeClass.TARGET)
    absorbed_by[tgt] = node_map.exit_of[dest[tgt]]
    stay = absorbed_by < 0
    counts = np.bincount(dest[stay], minlength=grid.size)
    absorbed = {eid: int(np.count_nonzero(absorbed_by == i))
                for i, eid in enumerate(node_map.exit_ids)}
    active = int(np.count_nonzero(node_map.fp_active))
    return ParticleReport(
        n_particles=n_particles, counts=counts, absorbed=absorbed,
        histogram=counts / n_particles,
        l1_bound=3.0 * math.sqrt(active / n_particles),
    )


# ---------------------------------------------------------------------------
# convergence


@dataclass
class OracleReport:
    name: str
    levels: list[float]
    linf: list[float]
    l1: list[float]
    orders: list[float]  # successive observed orders (L-inf)
    fitted_order: float
    expected_order: float
    passed: bool
    notes: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name, "levels": self.levels, "linf": self.linf, "l1": self.l1,
            "orders": self.orders, "fitted_order": self.fitted_order,
            "expected_order": self.expected_order, "passed": self.passed, **self.notes,
        }


def fit_order(levels, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(level)``."""
    x = np.log(np.asarray(levels, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def convergence_study(name: str, levels, linf, l1=None, expected_order: float = 1.0,
                      norm: str = "linf") -> OracleReport:
    """Observed orders from at least three refinement levels.

    ``levels`` are mesh sizes.  The study fails when the fitted order is
    below half the expected one.
    """
    levels = [float(v) for v in levels]
    if len(levels) < 3:
        raise ValueError(f"need at least 3 refinement levels, got {len(levels)}")
    linf = [float(v) for v in linf]
    l1 = [float(v) for v in (l1 if l1 is not None else [math.nan] * len(levels))]
    errs = linf if norm == "linf" else l1
    if len(linf) != len(levels) or len(l1) != len(levels):
        raise ValueError("one error per level expected")
    if any(not (e > 0) for e in errs):
        raise ValueError("errors must be positive to fit an order")
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(levels[i] / levels[i + 1])
              for i in range(len(levels) - 1)]
    p = fit_order(levels, errs)
    return OracleReport(name, levels, linf, l1, orders, p, expected_order,
                        passed=p >= 0.5 * expected_order)
