import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from wiener_cubature.cubature import wong_zakai_formula
from wiener_cubature.meshes import build_cubature_path, uniform_mesh
from wiener_cubature.paths import PiecewiseLinearPath, concatenate, reverse
from wiener_cubature.sde import (
    DivergenceError,
    VectorFieldSystem,
    black_scholes_exact,
    black_scholes_expectation,
    integrate_along_path,
    ito_to_stratonovich,
    model_from_config,
    wong_zakai_reference,
)
from wiener_cubature.tensor_algebra import ContractError

A0 = np.array([[0.1, 0.3], [-0.2, 0.0]])
A1 = np.array([[0.0, 1.0], [0.0, 0.0]])
A2 = np.array([[0.0, 0.0], [1.0, 0.5]])


def exact_linear(mats, driver, x0):
    """Product of segment exponentials: the exact flow of a linear system."""
    x = np.asarray(x0, dtype=float)
    for row in driver.increments():
        m = sum(c * a for c, a in zip(row, mats))
        x = expm(m) @ x
    return x


def test_exponential_growth():
    vf = VectorFieldSystem.linear([[1.0]], [[0.0]])
    line = PiecewiseLinearPath.linear([0.7], time_increment=1.0)
    sol = integrate_along_path(vf, line, [1.0])
    assert sol.terminal[0] == pytest.approx(math.e, rel=1e-10)
    assert integrate_along_path(vf, line, [1.0], substeps=256).terminal[0] == pytest.approx(math.e, rel=1e-11)


def test_rk4_is_fourth_order():
    vf = VectorFieldSystem.linear(A0, A1, A2)
    line = PiecewiseLinearPath.linear([1.3, -0.8], time_increment=1.0)
    x0 = np.array([1.0, 2.0])
    ref = exact_linear(vf.matrices, line, x0)
    errs = [np.linalg.norm(integrate_along_path(vf, line, x0, substeps=s).terminal - ref) for s in (2, 4, 8)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 4.0) <= 0.3)


def test_square_loop_matches_segment_exponentials():
    vf = VectorFieldSystem.linear(np.zeros((2, 2)), A1, A2)
    loop = PiecewiseLinearPath([0, 1, 2, 3, 4], [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]])
    x0 = np.array([0.5, -1.0])
    sol = integrate_along_path(vf, loop, x0, substeps=64)
    assert np.linalg.norm(sol.terminal - exact_linear(vf.matrices, loop.with_identity_time(), x0)) <= 1e-8
    # non-commuting fields: the loop does not return to the start
    assert np.linalg.norm(sol.terminal - x0) > 0.1


def test_square_loop_returns_for_commuting_fields():
    vf = VectorFieldSystem.linear(np.zeros((2, 2)), np.diag([1.0, 0.3]), np.diag([-0.5, 2.0]))
    loop = PiecewiseLinearPath([0, 1, 2, 3, 4], [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], np.zeros(5))
    x0 = np.array([0.5, -1.0])
    sol = integrate_along_path(vf, loop, x0, substeps=64)
    assert np.linalg.norm(sol.terminal - x0) <= 1e-8


@given(st.integers(0, 2**32 - 1))
def test_linear_change_of_variables(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    ti = np.linalg.inv(t)
    vf = VectorFieldSystem.linear(A0, A1, A2)
    conj = VectorFieldSystem.linear(*(t @ a @ ti for a in vf.matrices))
    bp = np.array([0.0, 0.3, 1.0])
    drv = PiecewiseLinearPath(bp, np.cumsum(np.vstack([[0, 0], rng.normal(size=(2, 2))]), axis=0), bp)
    x0 = rng.normal(size=2)
    a = integrate_along_path(vf, drv, x0, substeps=32).terminal
    b = integrate_along_path(conj, drv, t @ x0, substeps=32).terminal
    assert np.linalg.norm(t @ a - b) <= 1e-10 * max(1.0, np.linalg.norm(b))


def test_zero_fields_keep_the_state():
    vf = VectorFieldSystem.zero(3, 2)
    p = PiecewiseLinearPath([0, 0.5, 1], [[0, 0], [4, -1], [2, 2]])
    sol = integrate_along_path(vf, p, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(sol.states, [[1, 2, 3]] * 3)


def test_adaptive_matches_fine_fixed_step():
    vf = VectorFieldSystem.linear(A0, A1, A2)
    rng = np.random.default_rng(0)
    bp = np.linspace(0, 1, 5)
    nodes = np.concatenate([np.zeros((7, 1, 2)), np.cumsum(rng.normal(size=(7, 4, 2)), axis=1)], axis=1)
    drv = PiecewiseLinearPath(bp, nodes, bp)
    ada = integrate_along_path(vf, drv, [1.0, 0.0])
    fine = integrate_along_path(vf, drv, [1.0, 0.0], substeps=256)
    assert ada.substeps > 8
    np.testing.assert_allclose(ada.terminal, fine.terminal, rtol=1e-9)


def test_missing_time_component_means_identity():
    vf = VectorFieldSystem.linear(A0, A1, A2)
    p = PiecewiseLinearPath([0, 0.4, 1], [[0, 0], [1, 0.5], [0.2, 0.2]])
    a = integrate_along_path(vf, p, [1.0, 1.0], substeps=16)
    b = integrate_along_path(vf, p.with_identity_time(), [1.0, 1.0], substeps=16)
    np.testing.assert_array_equal(a.states, b.states)


def test_batch_broadcasting_and_sample_times():
    vf = VectorFieldSystem.linear(A0, A1, A2)
    rng = np.random.default_rng(1)
    bp = np.linspace(0, 1, 5)
    nodes = np.concatenate([np.zeros((3, 1, 2)), np.cumsum(rng.normal(size=(3, 4, 2)), axis=1)], axis=1)
    drv = PiecewiseLinearPath(bp, nodes)
    x0 = np.array([[1.0, 0.0], [0.0, 1.0]])[:, None, :]
    sol = integrate_along_path(vf, drv, x0, substeps=16, sample_times=[0.5, 1.0])
    assert sol.states.shape == (2, 3, 2, 2)
    one = integrate_along_path(vf, drv[2], x0[1, 0], substeps=16)
    np.testing.assert_allclose(sol.states[1, 2], one.states[[2, 4]], rtol=1e-14)
    with pytest.raises(ContractError):
        integrate_along_path(vf, drv, x0, sample_times=[0.3])
    with pytest.raises(ContractError):
        integrate_along_path(vf, drv, [1.0, 2.0, 3.0])


def test_divergence_reports_segment():
    vf = VectorFieldSystem(1, (lambda x: np.zeros_like(x), lambda x: x**3), "cubic")
    p = PiecewiseLinearPath([0, 0.5, 1], [[0.0], [0.0], [50.0]])
    with pytest.raises(DivergenceError) as err:
        integrate_along_path(vf, p, [1e100], substeps=4)
    assert err.value.segment == 1
    batch = PiecewiseLinearPath([0, 0.5, 1], np.array([[[0.0], [0.0], [50.0]], [[0.0], [0.0], [0.0]]]))
    sol = integrate_along_path(vf, batch, [1e100], substeps=4, on_divergence="mask")
    np.testing.assert_array_equal(sol.diverged, [True, False])
    assert np.all(np.isnan(sol.terminal[0]))
    assert sol.terminal[1, 0] == 1e100


def test_black_scholes_closed_form():
    assert black_scholes_exact(100, 100, 0.2, 1) == pytest.approx(7.965567455405804, rel=1e-13)
    # quadrature oracle against the closed form
    q = black_scholes_expectation(lambda s: np.maximum(s - 100.0, 0.0), 100, 0.2)
    assert q == pytest.approx(7.965567455405804, abs=1e-10)
    assert black_scholes_exact(100, 90, 0.0, 1) == 10.0
    assert black_scholes_exact(100, 100, 1e-9, 1) == pytest.approx(0.0, abs=1e-6)
    prices = [black_scholes_exact(100, 100, s, 1) for s in (0.1, 0.2, 0.4, 0.8)]
    assert all(a < b for a, b in zip(prices, prices[1:]))
    with pytest.raises(ContractError):
        black_scholes_exact(-1, 100, 0.2, 1)


def test_black_scholes_fields_are_stratonovich():
    vf = VectorFieldSystem.black_scholes(0.2)
    np.testing.assert_allclose(vf.matrices[0], [[-0.02]])
    np.testing.assert_allclose(vf.matrices[1], [[0.2]])
    # along w(t) = t z the solution is exactly the lognormal value
    z = 0.7
    sol = integrate_along_path(vf, PiecewiseLinearPath.linear([z]), [100.0])
    assert sol.terminal[0] == pytest.approx(100 * math.exp(-0.02 + 0.2 * z), rel=1e-10)


def test_wong_zakai_reference_prices_the_call():
    vf = VectorFieldSystem.black_scholes(0.2)
    rng = np.random.default_rng(2)
    s = wong_zakai_reference(vf, [100.0], 16, rng, (20_000,))[..., 0]
    pay = np.maximum(s - 100.0, 0.0)
    se = pay.std(ddof=1) / math.sqrt(pay.size)
    assert abs(pay.mean() - 7.965567455405804) <= 4 * se
    sol = wong_zakai_reference(vf, [100.0], 16, rng, (5,), sample_times=[0.5, 1.0])
    assert sol.states.shape == (5, 2, 1)


def test_ito_correction():
    vf = ito_to_stratonovich(VectorFieldSystem.linear(A0, A1, A2))
    np.testing.assert_allclose(vf.matrices[0], A0 - 0.5 * (A1 @ A1 + A2 @ A2))
    np.testing.assert_array_equal(vf.matrices[1], A1)
    with pytest.raises(ContractError):
        ito_to_stratonovich(VectorFieldSystem(1, (np.sin, np.cos)))


def test_model_configs():
    vf, x0 = model_from_config({"model": "black_scholes", "N": 1, "sigma": [0.2], "x0": [100.0]})
    assert vf.d == 1 and x0.tolist() == [100.0]
    lin, none = model_from_config({"model": "linear", "A0": A0.tolist(), "A1": A1.tolist(), "ito": True})
    assert none is None
    np.testing.assert_allclose(lin.matrices[0], A0 - 0.5 * A1 @ A1)
    for bad in (
        {"model": "heston"},
        {"model": "black_scholes", "sigma": [0.2], "volatility": 1},
        {"model": "black_scholes", "N": 2, "sigma": [0.2]},
        {"model": "linear", "A0": A0.tolist(), "A2": A2.tolist()},
        {"model": "black_scholes", "sigma": [0.2], "x0": [1.0, 2.0]},
    ):
        with pytest.raises(ContractError):
            model_from_config(bad)


def test_spatial_exponential_richardson():
    # V_1(x) = x along a unit line: X_1 = e, with error shrinking like substeps^-4
    vf = VectorFieldSystem.linear([[0.0]], [[1.0]])
    line = PiecewiseLinearPath.linear([1.0])
    errs = np.array([abs(integrate_along_path(vf, line, [1.0], substeps=s).terminal[0] - math.e) for s in (2, 4, 8, 16)])
    assert integrate_along_path(vf, line, [1.0]).terminal[0] == pytest.approx(math.e, rel=1e-9)
    order = -np.polyfit(np.log([2, 4, 8, 16]), np.log(errs), 1)[0]
    assert order == pytest.approx(4.0, abs=0.3)


def test_loop_followed_by_its_reversal_returns():
    vf = VectorFieldSystem.linear(np.zeros((2, 2)), A1, A2)
    loop = PiecewiseLinearPath([0, 1, 2, 3, 4], [[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], np.zeros(5))
    x0 = np.array([0.5, -1.0])
    there_and_back = concatenate([loop, reverse(loop)])
    sol = integrate_along_path(vf, there_and_back, x0, substeps=64)
    assert np.linalg.norm(sol.terminal - x0) <= 1e-8


def test_wong_zakai_reference_with_zero_fields():
    x = wong_zakai_reference(VectorFieldSystem.zero(2, 3), [1.5, -2.0], 8, np.random.default_rng(3), (10,))
    np.testing.assert_array_equal(x, np.tile([1.5, -2.0], (10, 1)))


def test_wong_zakai_reference_commuting_flow():
    # commuting fields: X_1 = exp(A0 + sum A_i B^i_1) x0 on every sample path
    mats = (np.diag([0.1, -0.2]), np.diag([0.5, 0.2]), np.diag([-0.3, 0.4]))
    vf = VectorFieldSystem.linear(*mats)
    x0 = np.array([1.0, 2.0])
    errs = []
    for fine_n in (2, 8, 32, 128):
        x = wong_zakai_reference(vf, x0, fine_n, np.random.default_rng(4), (50,), substeps=2)
        b = build_cubature_path(wong_zakai_formula(2), uniform_mesh(fine_n), np.random.default_rng(4), (50,)).endpoint
        exact = np.exp(np.diag(mats[0]) + b @ np.array([np.diag(m) for m in mats[1:]])) * x0
        errs.append(np.abs(x / exact - 1).max())
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-6
