import numpy as np
import pytest

from hughes_sl.coupling import (
    HughesParams, HughesSolver, congestion_cost, drift_field,
)
from hughes_sl.fp import DensityField, RectangleDensity, init_density
from hughes_sl.hjb import bellman_residual, policy_iteration
from hughes_sl.runner import prepare
from hughes_sl.scenarios import builtin_two_doors


def test_congestion_cost_values():
    assert congestion_cost(np.array([0.0]))[0] == pytest.approx(1 / (2 + 1e-6), rel=1e-15)
    assert congestion_cost(np.array([0.0]))[0] == pytest.approx(0.49999975, abs=1e-8)
    assert congestion_cost(np.array([1.0]))[0] == pytest.approx(1e6)
    f = congestion_cost(np.array([0.0]), running_cost=np.array([2.0]))[0]
    assert f == pytest.approx(1.999996, abs=1e-6)


def test_drift_field_limits(rng):
    Du = rng.normal(size=(5, 2))
    assert np.all(drift_field(np.zeros(5), np.zeros((5, 2))) == 0.0)
    assert np.array_equal(drift_field(np.zeros(5), Du), -Du)
    assert np.all(drift_field(np.ones(5), Du) == 0.0)


def test_drift_zero_on_blocked(obstacle_room, rng):
    Du = rng.normal(size=(obstacle_room.grid.size, 2))
    b = drift_field(np.zeros(obstacle_room.grid.size), Du, obstacle_room)
    assert np.all(b[obstacle_room.blocked] == 0.0)


def test_params_validated():
    with pytest.raises(ValueError):
        HughesParams(eps=-1, dt=0.1, h=0.1, n_steps=3)
    with pytest.raises(ValueError):
        HughesParams(eps=0.1, dt=0.1, h=0.1, n_steps=3, running_cost=np.array([0.5]))


def _two_doors():
    prep = prepare(builtin_two_doors())
    return prep, HughesSolver(prep.node_map, prep.params)


def test_empty_crowd_stays_empty():
    prep, solver = _two_doors()
    zero = DensityField(prep.node_map.grid, np.zeros(prep.node_map.grid.size))
    state, _ = solver.step(solver.initial_state(zero))
    assert np.all(state.m.values == 0.0)
    # u is the value function of the uncongested problem
    p = solver.hjb_problem(zero)
    assert np.all(p.F == pytest.approx(1 / (2 + 1e-6)))
    res, _ = bellman_residual(p, state.u)
    assert res <= 1e-9


def test_closed_room_step_conserves_mass():
    cfg = builtin_two_doors()
    cfg.geometry.exits = []
    prep = prepare(cfg)
    solver = HughesSolver(prep.node_map, prep.params)
    state = solver.initial_state(prep.m0)
    for _ in range(5):
        nxt, _ = solver.step(state)
        assert abs(nxt.m.total_mass - state.m.total_mass) <= 1e-13 * state.m.total_mass
        state = nxt


def test_first_two_door_step():
    prep, solver = _two_doors()
    state, its = solver.step(solver.initial_state(prep.m0))
    res, _ = bellman_residual(solver.hjb_problem(prep.m0), state.u)
    assert res <= 1e-9
    assert its >= 1
    assert state.ledger.balance_error() <= 1e-10


def test_empty_start_evacuated_at_step_zero():
    prep, solver = _two_doors()
    zero = DensityField(prep.node_map.grid, np.zeros(prep.node_map.grid.size))
    res = solver.run(zero)
    assert res.metrics.evac_step == 0 and res.metrics.evac_time == 0.0
    assert res.metrics.splits == {}


def test_single_exit_gets_everything(one_exit_room):
    params = HughesParams(eps=1e-3, dt=0.05, h=0.05, n_steps=200)
    m0 = init_density(RectangleDensity((0.3, 0.3), (0.6, 0.6), 0.6), one_exit_room)
    res = HughesSolver(one_exit_room, params).run(m0)
    assert res.metrics.evacuated
    assert res.metrics.splits == {"east": pytest.approx(100.0)}


def test_two_door_run_metrics():
    prep, solver = _two_doors()
    res = solver.run(prep.m0, snapshot_every=5)
    m = res.metrics
    assert m.evacuated
    assert m.remaining_mass <= 1e-3 * m.initial_mass
    assert sum(m.splits.values()) == pytest.approx(100.0)
    assert m.max_balance_error <= 1e-10
    assert res.snapshots[0][0] == 0 and res.snapshots[-1][0] == m.steps
    assert m.initial_mass == pytest.approx(0.7 / 9, rel=0.02)


def test_callback_sees_every_step():
    prep, solver = _two_doors()
    seen = []
    res = solver.run(prep.m0, callback=lambda s: seen.append(s.k))
    assert seen == list(range(1, res.metrics.steps + 1))
