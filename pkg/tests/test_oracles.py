import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp

from hughes_sl.errors import ConfigurationError
from hughes_sl.fp import RectangleDensity, fp_step, init_density
from hughes_sl.geometry import Geometry, Obstacle, classify_nodes
from hughes_sl.grid import GridSpec
from hughes_sl.oracles import (
    Gaussian, cole_hopf_hjb, cole_hopf_residual, convergence_study, fit_order,
    heat_kernel_error, heat_kernel_fp, particle_counter, particle_step, splitmix64, uniform01,
)

# u*(1/2) for eps = 0.05, F = 1, from the closed form; checked below against a
# collocation solve of the two-point problem
U_MID = 0.6377921352659423


def test_cole_hopf_zero_cost():
    assert np.all(cole_hopf_hjb(0.05, 0.0, np.linspace(0, 1, 11)) == 0.0)


def test_cole_hopf_shape():
    x = np.linspace(0, 1, 101)
    u = cole_hopf_hjb(0.05, 1.0, x)
    assert np.allclose(u, u[::-1], atol=1e-14)
    assert np.argmax(u) == 50
    assert abs(u[0]) < 1e-14 and abs(u[-1]) < 1e-14


def test_cole_hopf_midpoint_against_collocation():
    eps, F = 0.05, 1.0
    assert cole_hopf_hjb(eps, F, 0.5) == pytest.approx(U_MID, abs=1e-15)

    def rhs(x, y):
        return np.vstack([y[1], (0.5 * y[1] ** 2 - F) / eps])

    x = np.linspace(0, 1, 401)
    guess = np.vstack([0.7 * (1 - (2 * x - 1) ** 4), np.zeros_like(x)])
    sol = solve_bvp(rhs, lambda a, b: np.array([a[0], b[0]]), x, guess, tol=1e-10,
                    max_nodes=10**6)
    assert sol.success
    assert sol.sol(0.5)[0] == pytest.approx(U_MID, abs=1e-7)


def test_cole_hopf_residual():
    x = np.random.default_rng(3).uniform(0, 1, 1000)
    assert np.max(np.abs(cole_hopf_residual(0.05, 1.0, x))) < 1e-10


def test_heat_kernel_parameters():
    g0 = Gaussian((0.6, 1.0), 0.05)
    assert heat_kernel_fp(0.01, (0.5, 0.0), g0, 0.0) == g0
    assert heat_kernel_fp(0.0, (0.0, 0.0), g0, 3.0) == g0
    g = heat_kernel_fp(0.01, (0.5, 0.0), g0, 0.5)
    assert g.mean == pytest.approx((0.85, 1.0))
    assert g.sigma**2 == pytest.approx(0.0125)


def test_gaussian_mass():
    g = Gaussian((0.5, 0.5), 0.05, mass=2.0)
    x = np.linspace(0, 1, 401)
    X, Y = np.meshgrid(x, x)
    vals = g(np.column_stack([X.ravel(), Y.ravel()]))
    assert vals.sum() * (x[1] - x[0]) ** 2 == pytest.approx(2.0, rel=1e-8)


def test_heat_kernel_leak_detected():
    with pytest.raises(ConfigurationError):
        heat_kernel_error(50, 0.01, 0.01, (0.5, 0.0), Gaussian((0.6, 0.5), 0.05), 0.5, L=1.0)


def test_heat_kernel_error_refines():
    g0 = Gaussian((0.6, 1.0), 0.05)
    coarse = heat_kernel_error(50, 0.02, 0.01, (0.5, 0.0), g0, 0.5, L=2.0)["l1"]
    fine = heat_kernel_error(100, 0.01, 0.01, (0.5, 0.0), g0, 0.5, L=2.0)["l1"]
    assert fine < coarse


def test_splitmix64_reference_values():
    out = splitmix64(0, np.arange(3, dtype=np.uint64))
    assert [int(v) for v in out] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
                                     0x06C45D188009454F]
    u = uniform01(99, np.arange(10**5, dtype=np.uint64))
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def _room():
    return classify_nodes(GridSpec(1.0, 16), Geometry())


def test_particles_stationary_without_motion():
    nm = _room()
    m = init_density(RectangleDensity((0.2, 0.3), (0.7, 0.6), 0.5), nm).values
    rep = particle_step(nm, m, np.zeros((nm.grid.size, 2)), 0.1, 0.0, 5000, seed=4)
    pid = np.arange(5000, dtype=np.uint64)
    cdf = np.cumsum(m) / m.sum()
    start = np.searchsorted(cdf, uniform01(4, particle_counter(pid, 0, 0)), side="right")
    assert np.array_equal(rep.counts, np.bincount(start, minlength=nm.grid.size))


def test_particles_closed_room_count(rng):
    nm = _room()
    m = rng.uniform(0, 1, nm.grid.size)
    rep = particle_step(nm, m, rng.normal(size=(nm.grid.size, 2)), 0.1, 1e-2, 20000, seed=5)
    assert rep.counts.sum() == 20000
    assert rep.absorbed == {}


def test_particles_reproducible(rng):
    nm = _room()
    m = rng.uniform(0, 1, nm.grid.size)
    b = rng.normal(size=(nm.grid.size, 2))
    a = particle_step(nm, m, b, 0.1, 1e-2, 10000, seed=8)
    c = particle_step(nm, m, b, 0.1, 1e-2, 10000, seed=8)
    assert a.counts.tobytes() == c.counts.tobytes()


def test_particles_reject_obstacles():
    nm = classify_nodes(GridSpec(1.0, 10), Geometry(obstacles=(Obstacle((0.4, 0.4), (0.6, 0.6)),)))
    with pytest.raises(ConfigurationError):
        particle_step(nm, np.ones(nm.grid.size), np.zeros((nm.grid.size, 2)), 0.1, 0.0, 10, 1)


def test_particles_agree_better_with_more_samples(rng):
    nm = _room()
    m = init_density(RectangleDensity((0.2, 0.2), (0.8, 0.8), 0.5), nm).values
    b = np.tile([0.3, -0.2], (nm.grid.size, 1))
    det, _ = fp_step(m, b, nm, 0.1, 2e-3)
    ref = det.values / det.values.sum()
    d = {}
    for n in (10**4, 10**6):
        rep = particle_step(nm, m, b, 0.1, 2e-3, n, seed=21)
        d[n] = np.abs(rep.histogram - ref).sum()
        assert d[n] <= rep.l1_bound
    sigma = math.sqrt(nm.grid.size / 10**4)
    assert d[10**6] <= d[10**4] + 2 * sigma


def test_convergence_needs_three_levels():
    with pytest.raises(ValueError):
        convergence_study("x", [0.1], [1.0])
    with pytest.raises(ValueError):
        convergence_study("x", [0.1, 0.05], [1.0, 0.5])


def test_fitted_orders():
    h = np.array([0.1, 0.05, 0.025])
    rep = convergence_study("q", h, 3 * h**2, expected_order=2.0)
    assert rep.fitted_order == pytest.approx(2.0)
    assert rep.orders == pytest.approx([2.0, 2.0])
    assert rep.passed
    assert fit_order(h, 5 * h) == pytest.approx(1.0)
    assert not convergence_study("flat", h, [1.0, 0.99, 0.98]).passed
