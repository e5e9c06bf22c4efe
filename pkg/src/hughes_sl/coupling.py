"""Explicit time loop coupling the HJB and Fokker-Planck solvers.

At every step the running cost ``F = 1/(2 f(m)^2 + delta)`` is built from
the current density, the HJB is solved by policy iteration (warm started
from the previous policy), the drift ``b = -f(m)^2 Du`` is formed and the
density is advanced one semi-Lagrangian step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fp import DensityField, ExitLedger, fp_step
from .geometry import NodeMap
from .hjb import ControlSet, HJBProblem, discrete_gradient, policy_iteration

logger = logging.getLogger(__name__)


@dataclass
class HughesParams:
    eps: float
    dt: float
    h: float
    n_steps: int
    delta: float = 1e-6
    # environmental running cost l(x) >= 1 per node; None means l = 1
    running_cost: np.ndarray | None = None
    evac_threshold: float = 1e-3
    n_theta: int = 32
    n_rho: int = 4
    rho_max: float | None = None
    wall_value: float = 1e3
    ghost_value: float = 1e4
    pi_tol: float = 1e-9
    lin_tol: float = 1e-12
    max_policy_iterations: int = 200
    linear_solver: str = "direct"

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if not (self.dt > 0 and self.h > 0):
            raise ValueError("dt and h must be > 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not 0 <= self.evac_threshold < 1:
            raise ValueError("evac_threshold must lie in [0, 1)")
        if self.running_cost is not None:
            self.running_cost = np.asarray(self.running_cost, dtype=float).ravel()
            if np.any(self.running_cost < 1):
                raise ValueError("running cost must be >= 1")


def _f_squared(m: np.ndarray, running_cost) -> np.ndarray:
    f = 1.0 - m
    if running_cost is not None:
        f = f / running_cost
    return f * f


def congestion_cost(m, delta: float = 1e-6, running_cost=None) -> np.ndarray:
    """``F = 1 / (2 f(m)^2 + delta)`` with ``f = (1 - m) / l``."""
    values = m.values if isinstance(m, DensityField) else np.asarray(m, dtype=float)
    return 1.0 / (2.0 * _f_squared(values, running_cost) + delta)


def drift_field(m, Du, node_map: NodeMap | None = None, running_cost=None) -> np.ndarray:
    """``b = -f(m)^2 Du``, zero on blocked nodes."""
    values = m.values if isinstance(m, DensityField) else np.asarray(m, dtype=float)
    b = -_f_squared(values, running_cost)[:, None] * np.asarray(Du, dtype=float)
    if node_map is not None:
        b[node_map.blocked] = 0.0
    return b


@dataclass
class SimulationState:
    k: int
    m: DensityField
    ledger: ExitLedger
    u: np.ndarray | None = None
    policy: np.ndarray | None = None


@dataclass
class Metrics:
    evacuated: bool
    evac_step: int | None
    evac_time: float | None
    steps: int
    initial_mass: float
    remaining_mass: float
    absorbed: dict[str, float]
    splits: dict[str, float]
    max_density: float
    evac_threshold: float
    max_balance_error: float
    hjb_iterations: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {
            "evacuated": self.evacuated,
            "evac_step": self.evac_step,
            "evac_time": self.evac_time,
            "steps": self.steps,
            "initial_mass": self.initial_mass,
            "remaining_mass": self.remaining_mass,
            "max_density": self.max_density,
            "evac_threshold": self.evac_threshold,
            "max_balance_error": self.max_balance_error,
            "hjb_iterations_total": int(sum(self.hjb_iterations)),
            "hjb_iterations_max": int(max(self.hjb_iterations, default=0)),
        }
        for e, a in self.absorbed.items():
            out[f"absorbed.{e}"] = a
        for e, s in self.splits.items():
            out[f"split.{e}"] = s
        return out


@dataclass
class RunResult:
    metrics: Metrics
    snapshots: list[tuple[int, np.ndarray]]
    final: SimulationState


class HughesSolver:
    """Owns the node map and parameters of one run."""

    def __init__(self, node_map: NodeMap, params: HughesParams):
        self.node_map = node_map
        self.params = params
        self.controls = ControlSet(params.n_theta, params.n_rho, params.rho_max)
        rc = params.running_cost
        if rc is not None and rc.size != node_map.grid.size:
            raise ValueError("running cost must have one value per node")

    def initial_state(self, m0: DensityField) -> SimulationState:
        ledger = ExitLedger(list(self.node_map.exit_ids), m0.total_mass)
        return SimulationState(0, m0, ledger)

    def hjb_problem(self, m: DensityField) -> HJBProblem:
        p = self.params
        return HJBProblem(
            node_map=self.node_map,
            F=congestion_cost(m, p.delta, p.running_cost),
            h=p.h, eps=p.eps, controls=self.controls,
            wall_value=p.wall_value, ghost_value=p.ghost_value,
            pi_tol=p.pi_tol, lin_tol=p.lin_tol,
            max_iterations=p.max_policy_iterations, linear_solver=p.linear_solver,
        )

    def step(self, state: SimulationState) -> tuple[SimulationState, int]:
        """One coupled step; returns the new state and the HJB iteration count."""
        p = self.params
        res = policy_iteration(self.hjb_problem(state.m), warm_start=state.policy)
        Du = discrete_gradient(self.node_map, res.u)
        b = drift_field(state.m, Du, self.node_map, p.running_cost)
        m_next, absorbed = fp_step(state.m, b, self.node_map, p.dt, p.eps)
        state.ledger.record(absorbed, m_next.total_mass)
        new = SimulationState(state.k + 1, m_next, state.ledger, res.u, res.policy)
        return new, res.iterations

    def run(self, m0: DensityField, snapshot_every: int = 0, callback=None) -> RunResult:
        p = self.params
        state = self.initial_state(m0)
        initial = state.ledger.initial_mass
        limit = p.evac_threshold * initial
        snapshots = []
        if snapshot_every:
            snapshots.append((0, m0.values.copy()))
        max_density = float(m0.values.max(initial=0.0))
        iterations: list[int] = []
        balance = 0.0
        evac_step = 0 if initial <= limit else None
        while evac_step is None and state.k < p.n_steps:
            state, its = self.step(state)
            iterations.append(its)
            max_density = max(max_density, state.m.max)
            balance = max(balance, state.ledger.balance_error())
            if snapshot_every and state.k % snapshot_every == 0:
                snapshots.append((state.k, state.m.values.copy()))
            if callback is not None:
                callback(state)
            if state.m.total_mass <= limit:
                evac_step = state.k
        if snapshot_every and (not snapshots or snapshots[-1][0] != state.k):
            snapshots.append((state.k, state.m.values.copy()))
        cum = state.ledger.cumulative
        metrics = Metrics(
            evacuated=evac_step is not None,
            evac_step=evac_step,
            evac_time=None if evac_step is None else evac_step * p.dt,
            steps=state.k,
            initial_mass=initial,
            remaining_mass=state.m.total_mass,
            absorbed={e: float(a) for e, a in zip(state.ledger.exit_ids, cum)},
            splits=state.ledger.split_percentages(),
            max_density=max_density,
            evac_threshold=p.evac_threshold,
            max_balance_error=balance,
            hjb_iterations=iterations,
        )
        if evac_step is None:
            logger.warning("horizon reached with %.3e of %.3e mass left",
                           metrics.remaining_mass, initial)
        return RunResult(metrics, snapshots, state)
