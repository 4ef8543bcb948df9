import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from conftest import random_complex, random_density
from tclgen.baths import BathCorrelation, ohmic_zero_temperature
from tclgen.liouville import SIGMA_Z, SystemModel, SystemState, trace_row, unvec, vec
from tclgen.moments import TimeGrid, compute_moments
from tclgen.tcl import (
    Composition,
    dynamical_map_from_generator,
    enumerate_compositions,
    generator_via_compositions,
    generator_via_recursion,
    propagate,
    solve_linear,
    step_halving_error,
    tcl2_generator,
    tcl_generator,
)


def _random_moments(rng, n_max, n_points=6, L=4):
    return {
        n: (random_complex(rng, (n_points, L, L)), random_complex(rng, (n_points, L, L)))
        for n in range(1, n_max + 1)
    }


def test_compositions_of_three():
    comps = enumerate_compositions(3)
    assert [c.parts for c in comps] == [(3,), (2, 1), (1, 2), (1, 1, 1)]
    assert [c.sign for c in comps] == [1, -1, -1, 1]
    assert comps[1].term() == "Ṁ(2)·M(1)"


def test_single_composition_of_one():
    (c,) = enumerate_compositions(1)
    assert c.parts == (1,) and c.sign == 1


@pytest.mark.parametrize("n", range(1, 13))
def test_composition_counts_and_signed_sum(n):
    comps = enumerate_compositions(n)
    assert len(comps) == 2 ** (n - 1)
    assert len({c.parts for c in comps}) == len(comps)
    assert all(c.n == n for c in comps)
    assert sum(c.sign for c in comps) == (1 if n == 1 else 0)


def test_composition_errors():
    with pytest.raises(ValueError):
        enumerate_compositions(0)
    with pytest.raises(ValueError):
        enumerate_compositions(13)
    with pytest.raises(ValueError):
        Composition((2, 0))


def test_second_order_by_hand(rng):
    moments = _random_moments(rng, 2)
    (M1, D1), (M2, D2) = moments[1], moments[2]
    G = generator_via_recursion(moments, 2).orders
    np.testing.assert_allclose(G[1], D1)
    np.testing.assert_allclose(G[2], D2 - D1 @ M1, atol=1e-13)


@given(seed=st.integers(0, 2**32 - 1), n_max=st.integers(1, 6))
def test_recursion_equals_compositions(seed, n_max):
    moments = _random_moments(np.random.default_rng(seed), n_max)
    rec = generator_via_recursion(moments, n_max).orders
    for n in range(1, n_max + 1):
        direct = generator_via_compositions(moments, n)
        assert np.max(np.abs(rec[n] - direct)) < 1e-12 * max(1.0, np.max(np.abs(direct)))


def test_recursion_missing_order(rng):
    moments = _random_moments(rng, 2)
    del moments[1]
    with pytest.raises(ValueError, match="missing"):
        generator_via_recursion(moments, 2)


def test_closed_form_tcl2_matches_recursion(qubit_x_model, ohmic):
    grid = TimeGrid(0.0, 0.01, 60)
    closed = tcl2_generator(qubit_x_model, ohmic, grid).orders[2]
    recursive = tcl_generator(qubit_x_model, ohmic, grid, 2).orders[2]
    assert np.max(np.abs(closed - recursive)) < 1e-10


@pytest.mark.parametrize("bath_name", ["ohmic", "spin_bath"])
def test_generator_trace_annihilation_and_hermiticity(bath_name, request, qubit_x_model, rng):
    bath = request.getfixturevalue(bath_name)
    grid = TimeGrid(0.0, 0.02, 30)
    series = tcl_generator(qubit_x_model, bath, grid, 4)
    row = trace_row(2)
    X = random_complex(rng, (2, 2))
    H = X + X.conj().T
    for G in series.orders.values():
        assert np.max(np.abs(row @ G)) < 1e-11
        out = np.array([unvec(g @ vec(H)) for g in G])
        assert np.max(np.abs(out - out.conj().transpose(0, 2, 1))) < 1e-11


def test_generator_homogeneity(qubit_x_model, spin_bath):
    grid = TimeGrid(0.0, 0.02, 20)
    a = tcl_generator(qubit_x_model, spin_bath, grid, 4).orders
    b = tcl_generator(qubit_x_model, spin_bath.scaled(0.5), grid, 4).orders
    for n in (2, 4):
        np.testing.assert_allclose(b[n], 0.5**n * a[n], atol=1e-12 * np.max(np.abs(a[n])))


def test_dephasing_rate_against_quadrature():
    eta, wc = 0.1, 5.0
    C = BathCorrelation(ohmic_zero_temperature(eta, wc))
    grid = TimeGrid(0.0, 1e-3, 400)
    G2 = tcl2_generator(SystemModel(0.5 * SIGMA_Z, SIGMA_Z), C, grid).orders[2]
    t = grid.t_end
    rate = -4 * integrate.quad(lambda s: np.real(C(s)), 0, t)[0]
    assert abs(G2[-1, 2, 2] - rate) < 1e-6 * abs(rate)
    assert rate == pytest.approx(-4 * eta * wc**2 * t / (np.pi * (1 + wc**2 * t**2)), rel=1e-10)


def test_propagation_with_zero_generator(rng):
    grid = TimeGrid(0.0, 0.1, 10)
    rho = random_density(rng, 2)
    traj = propagate(np.zeros((len(grid), 4, 4)), SystemState(rho), grid)
    np.testing.assert_allclose(traj.rho, np.broadcast_to(rho, traj.rho.shape), atol=1e-15)


def test_propagation_of_constant_generator_matches_exponential(rng):
    from scipy.linalg import expm

    A = random_complex(rng, (4, 4)) * 0.3
    grid = TimeGrid(0.0, 0.01, 100)
    y0 = random_complex(rng, 4)
    ys = solve_linear(np.broadcast_to(A, (len(grid), 4, 4)), y0, grid)
    np.testing.assert_allclose(ys[-1], expm(A * grid.t_end) @ y0, atol=1e-10)


def test_trace_drift_and_halving(qubit_x_model, ohmic):
    grid = TimeGrid(0.0, 0.01, 200)
    series = tcl_generator(qubit_x_model, ohmic, grid, 4)
    traj = propagate(series, SystemState(np.array([[1, 0], [0, 0]], complex)), grid)
    assert np.max(np.abs(traj.traces() - 1)) < 1e-10
    assert step_halving_error(series.total(), vec(traj.rho[0]), grid) < 1e-6
    schr = traj.to_schrodinger(qubit_x_model.H_S)
    np.testing.assert_allclose(schr.purities(), traj.purities(), atol=1e-13)


def test_map_inverse(qubit_x_model, ohmic):
    grid = TimeGrid(0.0, 0.01, 100)
    dmap = dynamical_map_from_generator(tcl2_generator(qubit_x_model, ohmic, grid), grid, qubit_x_model.H_S)
    assert dmap.trace_defect() < 1e-12
    L = dmap.maps[-1]
    np.testing.assert_allclose(L @ np.linalg.inv(L), np.eye(4), atol=1e-12)
    np.testing.assert_allclose(dmap.maps[0], np.eye(4))


def test_grid_mismatch():
    grid = TimeGrid(0.0, 0.1, 10)
    with pytest.raises(ValueError, match="grid"):
        solve_linear(np.zeros((5, 4, 4)), np.ones(4), grid)
    with pytest.raises(ValueError, match="interaction picture"):
        propagate(np.zeros((11, 4, 4)), SystemState(np.eye(2) / 2, "schrodinger"), grid)


def test_moment_series_accepted(qubit_x_model, spin_bath):
    grid = TimeGrid(0.0, 0.02, 10)
    ms = compute_moments(qubit_x_model, spin_bath, grid, 2)
    series = generator_via_recursion(ms, 2)
    assert series.grid == grid
    assert set(series.norms()) == {1, 2}
