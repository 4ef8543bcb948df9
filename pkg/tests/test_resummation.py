import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_complex
from tclgen.liouville import SIGMA_X, SIGMA_Z, SystemModel
from tclgen.moments import TimeGrid
from tclgen.resummation import (
    HierarchyLevel,
    relative_series,
    level2_generator,
    level_series,
    nested_resummation,
    regularized_inverse,
    resum,
    time_derivative,
)
from tclgen.tcl import tcl_generator


@pytest.fixture(scope="module")
def spin_boson_series(ohmic):
    grid = TimeGrid(0.0, 0.01, 40)
    model = SystemModel(0.5 * SIGMA_X, SIGMA_Z)
    return tcl_generator(model, ohmic, grid, 4), grid


def _polynomial_series(rng, orders, grid, lam, L=4):
    t = grid.times[:, None, None]
    return {n: lam**n * (random_complex(rng, (L, L)) + t * random_complex(rng, (L, L))) for n in orders}


def test_inverse_of_identity():
    np.testing.assert_allclose(regularized_inverse(np.eye(3)), np.eye(3))


def test_inverse_drops_tiny_singular_values():
    np.testing.assert_allclose(regularized_inverse(np.diag([1.0, 1e-20])), np.diag([1.0, 0.0]))


def test_inverse_of_well_conditioned_matrix(rng):
    A = random_complex(rng, (16, 16)) + 8 * np.eye(16)
    np.testing.assert_allclose(regularized_inverse(A), np.linalg.inv(A), atol=1e-10)


def test_inverse_errors():
    with pytest.raises(ValueError, match="no retained singular values"):
        regularized_inverse(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="cutoff"):
        regularized_inverse(np.eye(2), cutoff=0.0)


@given(seed=st.integers(0, 2**32 - 1), rank=st.integers(1, 4))
def test_moore_penrose_identity(seed, rank):
    rng = np.random.default_rng(seed)
    A = random_complex(rng, (5, rank)) @ random_complex(rng, (rank, 5))
    P = regularized_inverse(A)
    scale = np.linalg.norm(A)
    assert np.max(np.abs(A @ P @ A - A)) < 1e-9 * scale
    assert np.max(np.abs(P @ A @ P - P)) < 1e-9 * np.linalg.norm(P)


def test_gtilde_against_direct_pseudo_inverse(spin_boson_series):
    series, grid = spin_boson_series
    level = HierarchyLevel.from_series(series)
    assert level.lowest_order == 2
    gt, diag = relative_series(level, start=1)
    k = grid.index(0.2)
    G2, G4 = series.orders[2][k], series.orders[4][k]
    direct = np.linalg.pinv(G2, rcond=1e-10) @ G4
    assert np.max(np.abs(gt[2][k - 1] - direct)) < 1e-10
    np.testing.assert_allclose(gt[0][k - 1], np.eye(4))
    # the lowest order maps into the range of a qubit commutator, rank 2
    assert diag.rank.max() == 2


def test_hierarchy_level_validation():
    with pytest.raises(ValueError, match="vanish"):
        HierarchyLevel.from_series({2: np.zeros((3, 4, 4))})
    with pytest.raises(ValueError):
        HierarchyLevel(0, 2, {})


def test_level_generator_vanishes_for_identity_gtilde():
    N, L = 10, 4
    gt = {0: np.broadcast_to(np.eye(L), (N, L, L)).copy(), 1: np.zeros((N, L, L)), 2: np.zeros((N, L, L))}
    assert np.max(np.abs(level2_generator(gt, 2, 0.1))) == 0.0


def test_level_generator_scales_with_square_of_coupling(rng):
    grid = TimeGrid(0.0, 0.01, 30)
    rng_state = rng.bit_generator.state
    terms = []
    for lam in (0.2, 0.1):
        rng.bit_generator.state = rng_state
        series = _polynomial_series(rng, (2, 4), grid, lam)
        gt, _ = relative_series(HierarchyLevel.from_series(series, grid=grid))
        terms.append(level_series(gt, grid.dt)[2])
    np.testing.assert_allclose(terms[1], terms[0] / 4, atol=1e-14 * np.max(np.abs(terms[0])))


def test_derivative_is_second_order():
    errs = []
    for n in (50, 100):
        t = np.linspace(0, 1, n + 1)
        errs.append(np.max(np.abs(time_derivative(np.sin(3 * t), t[1]) - 3 * np.cos(3 * t))))
    assert 3.5 < errs[0] / errs[1] < 4.5
    with pytest.raises(ValueError):
        time_derivative(np.zeros(2), 0.1)


def test_exact_reduction_when_only_lowest_order(spin_boson_series):
    series, grid = spin_boson_series
    out = resum({2: series.orders[2]}, grid)
    assert np.max(np.abs(out.resummed - series.orders[2])) == 0.0
    np.testing.assert_allclose(out.auxiliary[0], np.eye(4))


def test_resummed_generator_annihilates_trace(spin_boson_series):
    series, grid = spin_boson_series
    out = resum(series, grid)
    assert out.diagnostics["trace_defect"] < 1e-12
    assert out.diagnostics["min_rank"] == 2
    np.testing.assert_allclose(out.auxiliary[0], np.eye(4))
    assert out.resummed.shape == series.orders[2].shape


def test_resum_options(spin_boson_series):
    series, grid = spin_boson_series
    with pytest.raises(ValueError, match="initial"):
        resum(series, grid, initial="zero")
    with pytest.raises(ValueError, match="eps_steps"):
        resum(series, grid, eps_steps=len(grid))
    with pytest.raises(ValueError, match="truncation"):
        resum(series, grid, truncation=5)


def test_two_level_resum_equals_nested_depth_two(rng):
    grid = TimeGrid(0.0, 0.01, 50)
    series = _polynomial_series(rng, (2, 4, 6), grid, 0.3)
    a = resum(series, grid, eps_steps=0).resummed
    b = nested_resummation(series, grid, 2)
    assert np.max(np.abs(a - b)) < 1e-13


def test_three_level_nesting_reproduces_series(rng):
    # G^(n) = lam^n (A_n + t B_n); the nested form must agree through lam^6
    grid = TimeGrid(0.0, 0.005, 200)
    state = rng.bit_generator.state
    dists = []
    for lam in (0.2, 0.1):
        rng.bit_generator.state = state
        series = _polynomial_series(rng, (2, 4, 6), grid, lam)
        dists.append(np.max(np.abs(nested_resummation(series, grid, 3) - sum(series.values()))))
    assert 128 <= dists[0] / dists[1] <= 512
    assert nested_resummation(series, grid, 1).shape == (len(grid), 4, 4)
    with pytest.raises(ValueError):
        nested_resummation(series, grid, 0)
