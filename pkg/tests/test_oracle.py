import numpy as np
import pytest

from tunnelshock import characteristics, manifold, oracle, symbol

GAUSS_H = 0.05


@pytest.fixture(scope="module")
def m_burgers():
    return symbol.make_symbol(A="0.5")


@pytest.fixture(scope="module")
def m_jump():
    return symbol.make_symbol(jumps=((1.0, "1"),))


@pytest.fixture(scope="module")
def tanh_fan(m_burgers):
    return characteristics.integrate_fan(
        m_burgers, "log(sech(x))", np.linspace(-4.0, 4.0, 1601),
        T=2.0, h_t=2.5e-3, store_every=8)


# ----------------------------------------------------------- action search


def test_action_quadratic_data(m_burgers):
    val = oracle.hopf_lax(m_burgers, "x^2/2", x=1.0, t=1.0)
    assert abs(val - 0.25) < 1e-9


def test_action_short_time_limit(m_burgers):
    # plain limit where the time drift t*P(x, S0') is below the tolerance
    want = float(np.log(1.0 / np.cosh(0.1)))
    got = oracle.hopf_lax(m_burgers, "log(sech(x))", x=0.1, t=1e-4)
    assert abs(got - want) < 1e-6
    # first-order structure: S(x, t) = S0(x) - t*P(x, S0'(x)) + O(t^2)
    s0 = float(np.log(1.0 / np.cosh(0.7)))
    drift = 0.5 * np.tanh(0.7) ** 2
    got = oracle.hopf_lax(m_burgers, "log(sech(x))", x=0.7, t=1e-4)
    assert abs(got - (s0 - 1e-4 * drift)) < 1e-8


def test_action_box_edge_error(m_burgers):
    with pytest.raises(oracle.OracleError):
        oracle.hopf_lax(m_burgers, "x^2/2", x=5.0, t=1.0, y_box=(-0.5, 0.5))


def test_action_matches_characteristics(tanh_fan, m_burgers):
    curve = manifold.slice_fan(tanh_fan, 2.0)
    ess = manifold.essential(curve, np.array([0.0]))
    val = oracle.hopf_lax(m_burgers, "log(sech(x))", x=0.0, t=2.0)
    assert abs(val - ess.S[0]) <= 1e-3


def test_action_jump_symbol_flat_data(m_jump):
    # zero initial action stays zero: the conjugate vanishes at the drift speed
    val = oracle.hopf_lax(m_jump, "0", x=0.3, t=0.7)
    assert abs(val) < 1e-9


# ----------------------------------------------------------- finite volume


def test_godunov_stationary_riemann(m_burgers):
    sol = oracle.godunov(m_burgers, lambda x: np.where(x < 0, 1.0, -1.0),
                         (-2.0, 2.0), 1000, T=1.0)
    assert abs(sol.shock_x[-1]) <= 2 * sol.dx
    v = sol.at(1.0)
    assert np.all(np.abs(v[sol.x < -0.2] - 1.0) < 1e-9)
    assert np.all(np.abs(v[sol.x > 0.2] + 1.0) < 1e-9)


def test_godunov_shock_speed(m_burgers):
    sol = oracle.godunov(m_burgers, lambda x: np.where(x < 0, 2.0, 0.0),
                         (-1.5, 2.5), 2000, T=1.0)
    assert abs(sol.shock_x[-1] - 1.0) <= 2 * sol.dx


def test_godunov_rarefaction_l1(m_burgers):
    sol = oracle.godunov(m_burgers, lambda x: np.where(x < 0, -1.0, 1.0),
                         (-3.0, 3.0), 2000, T=1.0)
    exact = np.clip(sol.x / 1.0, -1.0, 1.0)
    err = float(np.sum(np.abs(sol.at(1.0) - exact)) * sol.dx)
    assert err <= 5e-2


def test_godunov_cfl_violation(m_burgers):
    with pytest.raises(oracle.StabilityError):
        oracle.godunov(m_burgers, lambda x: np.where(x < 0, 1.0, -1.0),
                       (-2.0, 2.0), 1000, T=0.5, dt=1.0)


def test_godunov_velocity_matches_characteristics(tanh_fan, m_burgers):
    sol = oracle.godunov(m_burgers, lambda x: -np.tanh(x),
                         (-4.0, 4.0), 2000, T=1.5)
    keep = np.abs(sol.x) <= 2.0
    curve = manifold.slice_fan(tanh_fan, 1.5)
    ess = manifold.essential(curve, sol.x[keep])
    err = float(np.sum(np.abs(sol.at(1.5)[keep] - ess.u)) * sol.dx)
    assert err <= 5e-2


# ----------------------------------------------------------------- lattice


def test_lattice_pointwise_decay():
    m = symbol.make_symbol(A="0", V="-1")
    f0 = oracle.make_lattice("exp(-200*x^2)", h=0.1, x_box=(-2.0, 2.0),
                             dx=0.01)
    out = oracle.kf_lattice(m, f0, T=0.05, dt=1e-5)
    assert np.allclose(out.values, f0.values * np.exp(-0.5), rtol=1e-4)
    assert out.t == pytest.approx(0.05)


def test_lattice_gaussian_closed_form(gaussian_lattice_fields):
    f = gaussian_lattice_fields[2e-3]
    keep = np.abs(f.x) <= 1.0
    exact = np.exp(-f.x[keep] ** 2 / (2 * GAUSS_H * 2.0)) / np.sqrt(2.0)
    rel = np.max(np.abs(f.values[keep] - exact) / exact)
    assert rel <= 1e-3


def test_lattice_space_refinement(gaussian_lattice_fields):
    errs = {}
    for dx, f in gaussian_lattice_fields.items():
        keep = np.abs(f.x) <= 1.0
        exact = np.exp(-f.x[keep] ** 2 / (2 * GAUSS_H * 2.0)) / np.sqrt(2.0)
        errs[dx] = np.max(np.abs(f.values[keep] - exact) / exact)
    assert errs[4e-3] / errs[2e-3] >= 3.5


def test_lattice_jump_positivity(m_jump):
    f0 = oracle.make_lattice("exp(-200*x^2)", h=0.05, x_box=(-1.5, 2.5),
                             dx=0.0125)
    out = oracle.kf_lattice(m_jump, f0, T=0.5)
    assert float(np.min(out.values)) >= 0.0
    assert float(np.max(out.values)) > 0.0


def test_lattice_shift_snap_error(m_jump):
    f0 = oracle.make_lattice("exp(-200*x^2)", h=0.053, x_box=(-1.0, 1.0),
                             dx=0.01)
    with pytest.raises(oracle.OracleError):
        oracle.kf_lattice(m_jump, f0, T=0.1)


def test_lattice_stability_error():
    m = symbol.make_symbol(A="0.5")
    f0 = oracle.make_lattice("exp(-10*x^2)", h=0.05, x_box=(-1.0, 1.0),
                             dx=0.01)
    with pytest.raises(oracle.StabilityError):
        oracle.kf_lattice(m, f0, T=0.1, dt=1e-3)


def test_lattice_boundary_contact():
    m = symbol.make_symbol(A="0.5")
    f0 = oracle.make_lattice("exp(-x^2/8)", h=0.05, x_box=(-1.0, 1.0),
                             dx=0.01)
    with pytest.raises(oracle.BoundaryContactError):
        oracle.kf_lattice(m, f0, T=0.01)


# -------------------------------------------------------------- comparator


def test_tunnel_compare_gaussian(gaussian_lattice_fields, gaussian_gd):
    f = gaussian_lattice_fields[2e-3]
    table = oracle.tunnel_compare([f], gaussian_gd, x_window=(-1.0, 1.0))
    assert table.n_points[0] > 500
    assert table.E_rel[0] <= 1e-3


def test_tunnel_compare_empty_set(gaussian_lattice_fields, gaussian_gd):
    f = gaussian_lattice_fields[4e-3]
    with pytest.raises(oracle.OracleError):
        oracle.tunnel_compare([f], gaussian_gd, x_window=(5.0, 6.0))
