"""Symplectic phase-space integration, path actions, and the
path-stationarity residual."""
import numpy as np
import pytest

from stochaction.classical import (PathRecord, PhasePoint, action_of_path,
                                   euler_lagrange_residual, hamilton_step,
                                   integrate_path)
from stochaction.errors import ShapeError
from stochaction.hamiltonian import hamiltonian_value, make_system


def _harmonic():
    return make_system("harmonic", m=1.0, omega=1.0)


def test_free_particle_step_is_exact():
    spec = make_system("free", m=2.0)
    pt = hamilton_step(PhasePoint(1.0, 3.0), spec, 0.25)
    assert pt.q == pytest.approx(1.0 + 3.0 / 2.0 * 0.25, abs=1e-15)
    assert pt.p == 3.0
    assert pt.t == 0.25


def test_one_period_returns_to_the_start():
    # an exact-period step count keeps the time horizon commensurate, so
    # the return error is the integrator's own phase error (measured
    # |dq| = 3.0e-14, |dp| = 2.6e-7 at this resolution)
    spec = _harmonic()
    steps = 6283
    dt = 2.0 * np.pi / steps   # ~1e-3
    pt = PhasePoint(1.0, 0.0)
    for _ in range(steps):
        pt = hamilton_step(pt, spec, dt)
    assert abs(pt.q - 1.0) < 1e-5
    assert abs(pt.p) < 1e-5


def test_energy_drift_is_bounded_over_long_runs():
    # second-order energy oscillation, no secular drift: measured end
    # deviation 7.4e-10 and sampled worst 2.5e-9 relative at this dt
    spec = _harmonic()
    pt = PhasePoint(1.0, 0.0)
    E0 = hamiltonian_value(pt.q, pt.p, spec)
    dt = 1e-4
    for _ in range(100000):
        pt = hamilton_step(pt, spec, dt)
    E1 = hamiltonian_value(pt.q, pt.p, spec)
    assert abs(E1 - E0) / E0 < 1e-8


def test_variable_mass_step_conserves_energy():
    spec = make_system("variable_mass", m=1.0, omega=1.0, beta=0.3)
    pt = PhasePoint(0.8, 0.4)
    E0 = hamiltonian_value(pt.q, pt.p, spec)
    for _ in range(2000):
        pt = hamilton_step(pt, spec, 1e-3)
    E1 = hamiltonian_value(pt.q, pt.p, spec)
    assert abs(E1 - E0) / abs(E0) < 1e-6


def test_integrate_path_records_uniform_times():
    spec = _harmonic()
    path = integrate_path(PhasePoint(0.5, 0.0), spec, 1e-2, 100)
    assert len(path.qs) == 101
    assert path.ts[0] == 0.0
    assert np.max(np.abs(np.diff(path.ts) - 1e-2)) < 1e-12


def test_action_vanishes_at_rest_at_the_well_bottom():
    spec = _harmonic()
    path = integrate_path(PhasePoint(0.0, 0.0), spec, 1e-3, 100)
    assert action_of_path(path, spec) == 0.0


def test_free_particle_unit_time_action():
    spec = make_system("free", m=1.0)
    path = integrate_path(PhasePoint(0.0, 1.0), spec, 1e-3, 1000)
    assert action_of_path(path, spec) == pytest.approx(0.5, abs=1e-12)


def test_half_period_action_converges_at_second_order():
    # analytic half-period action is zero for any start point; the
    # trapezoid defect is 0.1492 dt^2 (measured at two resolutions)
    spec = _harmonic()
    vals = []
    for steps in (3000, 6000):
        dt = np.pi / steps
        path = integrate_path(PhasePoint(0.8, 0.3), spec, dt, steps)
        vals.append(abs(action_of_path(path, spec)) / dt ** 2)
    assert vals[0] == pytest.approx(0.1492, abs=0.01)
    assert vals[1] == pytest.approx(0.1492, abs=0.01)


def test_action_of_path_validates_nonuniform_times():
    ts = np.array([0.0, 0.1, 0.25])
    with pytest.raises(ShapeError):
        PathRecord(qs=np.zeros(3), ps=np.zeros(3), ts=ts, dt=0.1)


def test_residual_of_true_trajectory_is_second_order():
    # interior stencil constant 0.2136 dt^2, measured at two resolutions
    spec = _harmonic()
    vals = []
    for dt in (1e-2, 5e-3):
        steps = int(round(1.0 / dt))
        path = integrate_path(PhasePoint(0.8, 0.3), spec, dt, steps)
        res = euler_lagrange_residual(path, spec)
        vals.append(np.max(np.abs(res)) / dt ** 2)
    assert vals[0] == pytest.approx(0.2136, abs=0.01)
    assert vals[1] == pytest.approx(0.2136, abs=0.01)


def test_residual_grows_linearly_with_path_perturbation():
    spec = _harmonic()
    dt = 1e-2
    steps = 100
    path = integrate_path(PhasePoint(0.8, 0.3), spec, dt, steps)
    T = steps * dt
    maxima = []
    for eps in (0.05, 0.1):
        bump = eps * np.sin(np.pi * path.ts / T)
        qs = path.qs + bump
        # momentum consistent with the perturbed coordinate path
        ps = np.gradient(qs, dt)
        perturbed = PathRecord(qs=qs, ps=ps, ts=path.ts, dt=dt)
        maxima.append(np.max(np.abs(euler_lagrange_residual(perturbed, spec))))
    ratio = maxima[1] / maxima[0]
    assert abs(ratio - 2.0) < 0.2   # measured 2.0002


def test_residual_of_straight_free_path_is_zero():
    spec = make_system("free", m=1.0)
    path = integrate_path(PhasePoint(-0.5, 1.0), spec, 0.1, 20)
    assert np.max(np.abs(euler_lagrange_residual(path, spec))) < 1e-12


def test_residual_needs_enough_samples():
    spec = _harmonic()
    path = integrate_path(PhasePoint(0.5, 0.0), spec, 1e-2, 4)
    with pytest.raises(ShapeError):
        euler_lagrange_residual(path, spec)


def test_action_is_stationary_under_endpoint_fixed_variations():
    # sinusoidal variations vanishing at the endpoints: the action's
    # first difference is second order in the variation amplitude
    spec = _harmonic()
    dt = 1e-3
    steps = 1000
    path = integrate_path(PhasePoint(0.8, 0.3), spec, dt, steps)
    T = steps * dt

    def action_of_coordinates(qs):
        # momenta consistent with the coordinate path (m = 1, A = 0), so
        # the comparison isolates the variation and not the p-construction
        ps = np.gradient(qs, dt)
        return action_of_path(PathRecord(qs=qs, ps=ps, ts=path.ts, dt=dt), spec)

    S0 = action_of_coordinates(path.qs)
    deltas = []
    for eps in (1e-3, 2e-3):
        bump = eps * np.sin(np.pi * path.ts / T)
        deltas.append(abs(action_of_coordinates(path.qs + bump) - S0))
    # quadrupling, not doubling, under eps -> 2 eps
    assert deltas[1] / deltas[0] == pytest.approx(4.0, rel=0.2)
