"""Validation suite behind ``hughes-sl validate``.

The fast level checks conservation, interpolation and policy iteration
properties on small grids.  The full level adds the convergence studies
against the Cole-Hopf and heat-kernel oracles and the 10^6-particle
comparison of one coupled step.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .coupling import HughesSolver, drift_field
from .errors import ConfigurationError
from .fp import fp_step
from .grid import GridSpec, NodeClass, p1_weights
from .hjb import ControlSet, discrete_gradient, policy_iteration, transition_row
from .oracles import (
    Gaussian, OracleReport, cole_hopf_slab_error, convergence_study, heat_kernel_error,
    particle_step,
)
from .runner import prepare
from .scenarios import builtin_two_doors

LEVELS = ("fast", "full")


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3g} (limit {self.limit:.3g}, {self.seconds:.1f} s)"


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# fast checks


def closed_room_mass(n_steps: int = 200, max_seconds: float = 5.0) -> Check:
    """Coupled run in the two-door room with both doors shut."""
    cfg = builtin_two_doors()
    cfg.geometry.exits = []
    cfg.clock.T = n_steps * cfg.clock.dt
    prep = prepare(cfg)
    solver = HughesSolver(prep.node_map, prep.params)

    def go():
        state = solver.initial_state(prep.m0)
        m0 = prep.m0.total_mass
        drift = 0.0
        for _ in range(n_steps):
            state, _ = solver.step(state)
            drift = max(drift, abs(state.m.total_mass - m0) / m0)
        return drift

    drift, secs = _timed(go)
    ok = drift <= 1e-12 and secs < max_seconds
    return Check("mass_conservation_closed_room", ok, drift, 1e-12, secs,
                 {"steps": n_steps, "max_seconds": max_seconds})


def two_door_balance() -> Check:
    cfg = builtin_two_doors()
    prep = prepare(cfg)
    res, secs = _timed(lambda: HughesSolver(prep.node_map, prep.params).run(prep.m0))
    err = res.metrics.max_balance_error
    return Check("exit_mass_balance", err <= 1e-10, err, 1e-10, secs,
                 {"evac_time": res.metrics.evac_time, **res.metrics.splits})


def interpolation_exactness(n_queries: int = 10**6, seed: int = 7) -> list[Check]:
    rng = np.random.default_rng(seed)
    grid = GridSpec(1.0, 37)
    pts = rng.uniform(0.0, 1.0, size=(n_queries, 2))
    t0 = time.perf_counter()
    idx, w = p1_weights(grid, pts)
    pos = grid.node_positions()
    affine = 0.3 + 1.7 * pos[:, 0] - 2.9 * pos[:, 1]
    got = (affine[idx] * w).sum(axis=1)
    want = 0.3 + 1.7 * pts[:, 0] - 2.9 * pts[:, 1]
    err_aff = float(np.max(np.abs(got - want)))
    err_pou = float(np.max(np.abs(w.sum(axis=1) - 1.0)))
    secs = time.perf_counter() - t0
    return [
        Check("affine_reproduction", err_aff <= 1e-13, err_aff, 1e-13, secs),
        Check("partition_of_unity", err_pou <= 1e-14, err_pou, 1e-14, secs),
    ]


def policy_iteration_properties(n_pairs: int = 100, seed: int = 11) -> list[Check]:
    """Value monotonicity, iteration count, residual and matrix row sums."""
    prep = prepare(builtin_two_doors())
    solver = HughesSolver(prep.node_map, prep.params)
    problem = solver.hjb_problem(prep.m0)
    res, secs = _timed(lambda: policy_iteration(problem, keep_trace=True))
    rise = 0.0
    for a, b in zip(res.value_trace, res.value_trace[1:]):
        rise = max(rise, float(np.max(b - a)))
    rng = np.random.default_rng(seed)
    # Dirichlet rows are rows of the identity; sample interior rows, whose
    # sum 1 - (P1 weights + ghost share) must vanish
    inner = np.flatnonzero(prep.node_map.codes == NodeClass.INTERIOR)
    nodes = rng.choice(inner, n_pairs)
    ctrls = rng.integers(0, len(problem.controls), n_pairs)
    row_err = 0.0
    for i, a in zip(nodes, ctrls):
        row = transition_row(problem, int(i), int(a))
        row_err = max(row_err, abs(1.0 - sum(row.weights.values()) - row.ghost_weight))
    return [
        Check("pi_monotone", rise <= 1e-12, rise, 1e-12, secs),
        Check("pi_iterations", res.iterations <= 50, res.iterations, 50, secs),
        Check("pi_residual", res.residual <= 1e-8, res.residual, 1e-8, secs),
        Check("row_sums", row_err <= 1e-13, row_err, 1e-13, 0.0),
    ]


# ---------------------------------------------------------------------------
# full checks


def cole_hopf_study(levels=(10, 20, 40), eps: float = 0.05, F: float = 1.0) -> tuple[Check, OracleReport]:
    """HJB against the Cole-Hopf slab with ``h = 2 dx^(4/3)``."""
    linf, l1 = [], []
    t0 = time.perf_counter()
    for M in levels:
        dx = 1.0 / M
        r = cole_hopf_slab_error(M, 2 * dx ** (4 / 3), eps, F,
                                 controls=ControlSet(32, 40, 4.0))
        linf.append(r["linf"])
        l1.append(r["l1"])
    secs = time.perf_counter() - t0
    dxs = [1.0 / M for M in levels]
    rep = convergence_study("cole_hopf", dxs, linf, l1, expected_order=1.0)
    ratios = [linf[i] / linf[i + 1] for i in range(len(linf) - 1)]
    ok = min(ratios) >= 1.5 and linf[-1] <= 0.02 and secs < 60
    rep.notes["ratios"] = ratios
    return Check("cole_hopf_convergence", ok, linf[-1], 0.02, secs,
                 {"linf": linf, "ratios": ratios}), rep


HEAT_START = Gaussian((0.6, 1.0), 0.05)
HEAT_B = (0.5, 0.0)


def heat_kernel_study(levels=((100, 0.01), (200, 0.005), (400, 0.0025)),
                      eps: float = 0.01, t: float = 0.5, L: float = 2.0) -> tuple[Check, OracleReport]:
    """FP against the heat kernel; the first level has dx = 0.02, dt = 0.01."""
    l1, linf = [], []
    t0 = time.perf_counter()
    for M, dt in levels:
        r = heat_kernel_error(M, dt, eps, HEAT_B, HEAT_START, t, L=L)
        l1.append(r["l1"])
        linf.append(r["linf"])
    secs = time.perf_counter() - t0
    dxs = [L / M for M, _ in levels]
    rep = convergence_study("heat_kernel", dxs, linf, l1, expected_order=1.0, norm="l1")
    ok = l1[0] <= 0.05 and l1[1] < l1[0]
    return Check("heat_kernel_l1", ok, l1[0], 0.05, secs,
                 {"l1": l1, "fitted_order": rep.fitted_order}), rep


def first_step_inputs():
    """Density, drift and node map of the first coupled two-door step."""
    prep = prepare(builtin_two_doors())
    solver = HughesSolver(prep.node_map, prep.params)
    res = policy_iteration(solver.hjb_problem(prep.m0))
    Du = discrete_gradient(prep.node_map, res.u)
    b = drift_field(prep.m0, Du, prep.node_map, prep.params.running_cost)
    return prep, b


def particle_comparison(n_particles: int = 10**6, seed: int = 2024) -> list[Check]:
    prep, b = first_step_inputs()
    p = prep.params
    nm = prep.node_map
    t0 = time.perf_counter()
    m1, absorbed = fp_step(prep.m0, b, nm, p.dt, p.eps)
    rep = particle_step(nm, prep.m0, b, p.dt, p.eps, n_particles, seed)
    secs = time.perf_counter() - t0
    total = prep.m0.total_mass
    det_hist = m1.values * nm.grid.dx**2 / total
    l1 = float(np.abs(rep.histogram - det_hist).sum())
    checks = [Check("particle_histogram_l1", l1 <= rep.l1_bound, l1, rep.l1_bound, secs)]
    for k, eid in enumerate(nm.exit_ids):
        q = absorbed[k] / total
        sigma = math.sqrt(max(q * (1 - q), 1e-300) / n_particles)
        got = rep.absorbed[eid] / n_particles
        z = abs(got - q) / sigma if q > 0 else (0.0 if got == 0 else math.inf)
        checks.append(Check(f"particle_absorption_{eid}", z <= 3.0, z, 3.0, secs,
                            {"deterministic": q, "particles": got}))
    return checks


def run_suite(level: str) -> list[Check]:
    if level not in LEVELS:
        raise ConfigurationError(f"unknown level {level!r}; choose fast or full", path="level")
    checks = [closed_room_mass(), two_door_balance()]
    checks += interpolation_exactness()
    checks += policy_iteration_properties()
    if level == "full":
        checks.append(cole_hopf_study()[0])
        checks.append(heat_kernel_study()[0])
        checks += particle_comparison()
    return checks

