import numpy as np
import pytest

from tunnelshock import characteristics, manifold, symbol


@pytest.fixture(scope="module")
def burgers():
    return symbol.make_symbol(A="0.5")


@pytest.fixture(scope="module")
def tanh_fan(burgers):
    # v0 = -tanh(x): first fold at t=1, x=0
    x0 = np.linspace(-3.0, 3.0, 1201)
    return characteristics.integrate_fan(
        burgers, "log(sech(x))", x0, T=1.5, h_t=2.5e-3, store_every=2,
        S0_prime="0-tanh(x)", S0_second="0-sech(x)^2")


@pytest.fixture(scope="module")
def drift_fan(burgers):
    # v0 = 0.5 - tanh(x): same fold in a frame moving at speed 1/2
    x0 = np.linspace(-3.0, 3.0, 1201)
    return characteristics.integrate_fan(
        burgers, "log(sech(x)) + 0.5*x", x0, T=1.5, h_t=2.5e-3, store_every=2,
        S0_prime="0.5-tanh(x)", S0_second="0-sech(x)^2")


def test_branches_pre_fold_single(tanh_fan):
    curve = manifold.slice_fan(tanh_fan, 0.5)
    assert len(curve.branches) == 1
    assert curve.branches[0].sign == 1.0
    assert curve.folds == []


def test_branches_post_fold_three(tanh_fan):
    curve = manifold.slice_fan(tanh_fan, 1.5)
    signs = [b.sign for b in curve.branches]
    assert signs == [1.0, -1.0, 1.0]
    assert len(curve.folds) == 2
    # fold projections straddle the crossing and connect adjacent branches
    f0, f1 = curve.folds
    assert f0.left_branch == 0 and f0.right_branch == 1
    assert f1.left_branch == 1 and f1.right_branch == 2
    # x = x0 - 1.5*tanh(x0) has turning points where sech^2 = 1/1.5;
    # the fold at positive label projects across the crossing to x < 0
    x0_turn = np.arccosh(np.sqrt(1.5))
    x_turn = x0_turn - 1.5 * np.tanh(x0_turn)
    assert x_turn < 0
    assert abs(f1.x0 - x0_turn) < 5e-3
    assert abs(f1.x - x_turn) < 5e-3


def test_first_singularity_location(tanh_fan):
    ev = manifold.first_singularity(tanh_fan)
    assert ev is not None
    assert abs(ev.t - 1.0) < 1e-5
    assert abs(ev.x) < 1e-5
    assert abs(ev.x0) < 5e-3


def test_no_singularity_for_expanding_flow(burgers):
    x0 = np.linspace(-2.0, 2.0, 201)
    fan = characteristics.integrate_fan(
        burgers, "x^2/2", x0, T=1.0, h_t=0.01, S0_prime="x", S0_second="x*0+1")
    assert manifold.first_singularity(fan) is None
    assert manifold.find_singularities(fan) == []


def test_essential_pre_fold_matches_slice(tanh_fan, burgers):
    curve = manifold.slice_fan(tanh_fan, 0.5)
    xq = curve.x[100:-100:50]
    ess = manifold.essential(curve, xq)
    assert np.allclose(ess.S, curve.S[100:-100:50], atol=1e-9)
    assert np.allclose(ess.p, curve.p[100:-100:50], atol=1e-9)
    # velocity for a quadratic symbol with A=1/2 equals the momentum
    assert np.allclose(ess.u, ess.p, atol=1e-12)
    assert np.all(ess.branch_id == 0)


def test_essential_post_fold_picks_minimum(tanh_fan):
    curve = manifold.slice_fan(tanh_fan, 1.5)
    xq = np.linspace(-1.2, 1.2, 241)
    ess = manifold.essential(curve, xq)
    # minimum over every covering branch, done by hand
    brute = np.full_like(xq, np.inf)
    for b in curve.branches:
        mask = b.covers(xq)
        brute[mask] = np.minimum(brute[mask], b.interp("S", xq[mask]))
    assert np.allclose(ess.S, brute, atol=1e-12)
    # odd data make the action even and the velocity odd with a jump at 0
    mid = np.searchsorted(xq, 0.0)
    assert ess.u[mid - 1] > 0.4
    assert ess.u[mid + 1] < -0.4


def test_essential_tie_rules(tanh_fan):
    curve = manifold.slice_fan(tanh_fan, 1.5)
    # at x=0 both outer branches carry equal action and equal |p|;
    # the tie goes to the smaller branch index
    ess = manifold.essential(curve, np.array([0.0]))
    assert ess.branch_id[0] == 0


def test_essential_uncovered_raises(tanh_fan):
    curve = manifold.slice_fan(tanh_fan, 0.5)
    with pytest.raises(manifold.UncoveredPointError):
        manifold.essential(curve, np.array([50.0]))


def test_stationary_shock_path(tanh_fan):
    recs = manifold.track_shocks(tanh_fan)
    assert len(recs) == 1
    rec = recs[0]
    assert abs(rec.t_birth - 1.0) < 1e-5
    assert abs(rec.x_birth) < 1e-5
    assert rec.times[0] >= rec.t_birth - 1e-9
    assert rec.times[-1] == pytest.approx(1.5)
    # odd data pin the shock at the origin with zero speed
    assert np.max(np.abs(rec.x_s)) < 1e-8
    assert np.max(np.abs(rec.c)) < 1e-6
    assert np.max(np.abs(rec.u_l + rec.u_r)) < 1e-8
    # one-sided momenta bracket zero once the jump is resolved
    late = rec.times > 1.1
    assert np.all(rec.p_l[late] > 0.1)
    assert np.all(rec.p_r[late] < -0.1)
    # one-sided labels are the pre-images of the shock from either side
    assert np.all(rec.x0_l[late] < -0.1)
    assert np.all(rec.x0_r[late] > 0.1)
    assert np.all(rec.J_l[late] > 0)
    assert np.all(rec.J_r[late] > 0)


def test_moving_shock_galilean(drift_fan):
    recs = manifold.track_shocks(drift_fan)
    assert len(recs) == 1
    rec = recs[0]
    assert abs(rec.t_birth - 1.0) < 1e-4
    assert abs(rec.x_birth - 0.5) < 1e-4
    late = rec.times > 1.05
    # shifting the data by +1/2 moves the whole picture at speed 1/2
    assert np.max(np.abs(rec.x_s[late] - 0.5 * rec.times[late])) < 1e-6
    assert np.max(np.abs(rec.c[late] - 0.5)) < 1e-4
    assert np.all(rec.u_l[late] > 0.5)
    assert np.all(rec.u_r[late] < 0.5)
    # jump quotient of the flux equals the path speed
    dev = manifold.check_speed_consistency(rec, drift_fan.symbol)
    assert dev < 1e-4


def test_shock_action_continuity(tanh_fan):
    # the essential action is continuous across the shock: both one-sided
    # branch actions agree at the tracked position
    recs = manifold.track_shocks(tanh_fan)
    rec = recs[0]
    k = np.searchsorted(rec.times, 1.3)
    curve = manifold.slice_fan(tanh_fan, rec.times[k])
    ess = manifold.essential(curve, np.array([rec.x_s[k] - 1e-4,
                                              rec.x_s[k] + 1e-4]))
    assert abs(ess.S[0] - ess.S[1]) < 1e-6


def test_two_shocks_merge(burgers):
    d = 0.1
    x0 = np.linspace(-4.0, 4.0, 4001)
    s0 = "0.1*(log(sech((x+1)/0.1)) + log(sech((x-1)/0.1)))"
    s0p = "0-tanh((x+1)/0.1)-tanh((x-1)/0.1)"
    fan = characteristics.integrate_fan(
        burgers, s0, x0, T=1.4, h_t=2.5e-3, store_every=4, S0_prime=s0p)
    events = sorted(manifold.find_singularities(fan), key=lambda e: e.x)
    assert len(events) == 2
    assert abs(events[0].t - d) < 5e-3 and abs(events[1].t - d) < 5e-3
    assert abs(events[0].x + (1 - d)) < 5e-3  # born at -1 + t*.u(-1), u=1
    assert abs(events[1].x - (1 - d)) < 5e-3

    recs = manifold.track_shocks(fan)
    assert len(recs) == 3
    child = next(r for r in recs if r.parents)
    a, b = sorted((r for r in recs if not r.parents), key=lambda r: r.x_birth)
    assert a.merged_into == child.id and b.merged_into == child.id
    assert child.parents == (a.id, b.id)
    assert abs(child.t_birth - 1.0) < 0.1
    assert abs(child.x_birth) < 0.01
    # between strengthening and interaction the left path rides x = t - 1
    mid = (a.times > 0.4) & (a.times < 0.8)
    assert np.max(np.abs(a.x_s[mid] - (a.times[mid] - 1.0))) < 1e-3
    assert np.max(np.abs(a.c[mid] - 1.0)) < 1e-3
    # the merged shock is stationary at the origin between the far states
    assert np.max(np.abs(child.x_s)) < 1e-6
    tail = child.times > child.times[0] + 0.2
    assert np.all(np.abs(child.u_l[tail] - 2.0) < 1e-2)
    assert np.all(np.abs(child.u_r[tail] + 2.0) < 1e-2)
    # parents stop at the crossing, the child picks up there
    assert a.times[-1] <= child.times[0] + 1e-12
    assert abs(a.x_s[-1] - b.x_s[-1]) < 0.05


def test_record_interpolation(tanh_fan):
    rec = manifold.track_shocks(tanh_fan)[0]
    vals = rec.at(1.3)
    assert abs(vals["x_s"]) < 1e-8
    assert "p_l" in vals and vals["p_l"] > 0


def test_shock_tracking_deterministic(tanh_fan):
    r1 = manifold.track_shocks(tanh_fan)[0]
    r2 = manifold.track_shocks(tanh_fan)[0]
    assert np.array_equal(r1.x_s, r2.x_s)
    assert np.array_equal(r1.p_l, r2.p_l)
