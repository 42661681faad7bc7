"""Independent ground-truth solvers used to cross-check the pipeline.

Three routes that never touch the characteristic machinery:

* a brute-force variational minimizer for the action of spatially
  homogeneous symbols,
* a first-order finite-volume scheme with exact Riemann fluxes for the
  gradient conservation law,
* an explicit lattice integrator for the generator equation
  ``h u_t = A(x) h^2 u_xx + V(x) u + sum_k lambda_k(x) (u(x - h nu_k) - u(x))``,

plus the comparator that measures how well the product-form field
``exp(-S/h) sqrt(R)`` reproduces the lattice solution.
"""

from dataclasses import dataclass

import numpy as np

from . import expr, symbol

EXP_CLIP = 700.0  # exponent guard when rescaling lattice values by e^{S/h}


class OracleError(ValueError):
    pass


class StabilityError(OracleError):
    """Requested time step exceeds the recorded stability bound."""


class BoundaryContactError(OracleError):
    """Lattice support reached the edge of the computational window."""


def _as_expression(src, names=("x", "t")):
    if isinstance(src, str):
        return expr.parse(src, allowed_names=names)
    return src


def _field_values(data, xs):
    """Initial data given as expression source, Expression, callable or array."""
    if isinstance(data, (str, expr.Expression)):
        e = _as_expression(data, names=("x",))
        return expr.evaluate(e, x=xs) + np.zeros_like(xs)
    if callable(data):
        return np.asarray(data(xs), dtype=float) + np.zeros_like(xs)
    vals = np.asarray(data, dtype=float)
    if vals.shape != xs.shape:
        raise OracleError("initial data array does not match the grid")
    return vals.copy()


# ---------------------------------------------------------------------------
# brute-force variational action


def hopf_lax(m, S0, x, t, y_box=(-30.0, 30.0), n=2001):
    """Minimum of S0(y) + t*L((x-y)/t) by grid search with one refinement.

    L is the box-restricted convex conjugate of the symbol, so unreachable
    slopes carry the affine edge penalty and never win the minimum.  The
    refined minimum is polished with a three-point parabola vertex.  A
    minimizer on the y-box edge raises: the box is too small for (x, t).
    """
    if not m.spatially_homogeneous:
        raise OracleError("variational minimizer needs an x-independent symbol")
    if m.time_dependent:
        raise OracleError("variational minimizer needs an autonomous symbol")
    if not t > 0.0:
        raise OracleError("t must be positive")
    S0 = _as_expression(S0, names=("x",))
    x = float(x)
    t = float(t)

    def total(ys):
        _, L = symbol.legendre_clamped(m, 0.0, (x - ys) / t)
        return expr.evaluate(S0, x=ys) + np.zeros_like(ys) + t * L

    ys = np.linspace(y_box[0], y_box[1], n)
    vals = total(ys)
    k = int(np.argmin(vals))
    if k == 0 or k == n - 1:
        raise OracleError(
            f"action minimizer for x={x:g}, t={t:g} sits on the y-box edge; "
            "enlarge y_box")

    yr = np.linspace(ys[k - 1], ys[k + 1], n)
    vr = total(yr)
    j = int(np.argmin(vr))
    best = float(vr[j])
    if 0 < j < n - 1:
        d2 = vr[j - 1] - 2.0 * vr[j] + vr[j + 1]
        if np.isfinite(d2) and d2 > 0.0:
            step = yr[1] - yr[0]
            y_v = yr[j] - 0.5 * step * (vr[j + 1] - vr[j - 1]) / d2
            best = min(best, float(total(np.asarray([y_v]))[0]))
    return best


def hopf_lax_grid(m, S0, xs, t, y_box=(-30.0, 30.0), n=2001):
    xs = np.asarray(xs, dtype=float)
    return np.array([hopf_lax(m, S0, x, t, y_box=y_box, n=n) for x in xs])


# ---------------------------------------------------------------------------
# finite-volume conservation law for the gradient variable


@dataclass
class FiniteVolumeSolution:
    x: np.ndarray        # cell centers
    dx: float
    times: np.ndarray    # stored instants
    v: np.ndarray        # one row of cell averages per stored instant
    shock_x: np.ndarray  # steepest-descent interface per stored instant

    def at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(float(self.times[k]) - t) > 1e-9 * (1.0 + abs(t)):
            raise OracleError(f"time {t!r} was not stored")
        return self.v[k]


def _sonic_point(m, t=0.0):
    """Zero of the nondecreasing dP/dp, clipped to the momentum box."""
    lo, hi = symbol.P_BOX
    if symbol.eval_dP_dp(m, 0.0, lo, t) >= 0.0:
        return lo
    if symbol.eval_dP_dp(m, 0.0, hi, t) <= 0.0:
        return hi
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if symbol.eval_dP_dp(m, 0.0, mid, t) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def godunov(m, v0, x_box, n_cells, T, store_times=None, cfl=0.8, dt=None):
    """First-order finite-volume solution of v_t + (P(v))_x = 0.

    The interface flux is the exact Riemann flux of a convex flux function:
    the minimum of P over [v_l, v_r] (attained at the clipped sonic point)
    when v_l <= v_r, the maximum of the endpoint values otherwise.  Outflow
    ghost cells close the ends.  A caller-supplied dt that exceeds the CFL
    bound at any step raises.
    """
    if not m.spatially_homogeneous:
        raise OracleError("the flux P(v) must not depend on x")
    lo, hi = float(x_box[0]), float(x_box[1])
    dx = (hi - lo) / n_cells
    xs = lo + dx * (0.5 + np.arange(n_cells))
    v = _field_values(v0, xs)

    if store_times is None:
        store_times = (T,)
    marks = sorted(set(float(s) for s in store_times))
    if any(not 0.0 < s <= T + 1e-12 for s in marks):
        raise OracleError("store_times must lie in (0, T]")

    out_v, out_t, out_sx = [], [], []
    t = 0.0
    mark_i = 0
    while mark_i < len(marks):
        speeds = np.abs(symbol.eval_dP_dp(m, 0.0, v, t)) + np.zeros_like(v)
        smax = float(np.max(speeds))
        limit = dx / max(smax, 1e-300)
        if dt is not None:
            if dt > limit * (1.0 + 1e-12):
                raise StabilityError(
                    f"dt={dt:g} violates the CFL bound {limit:g} at t={t:g}")
            step = dt
        else:
            step = cfl * limit
        step = min(step, marks[mark_i] - t)

        s_star = _sonic_point(m, t)
        vl = np.concatenate(([v[0]], v))
        vr = np.concatenate((v, [v[-1]]))
        with np.errstate(all="ignore"):
            f_min = symbol.eval_P(m, 0.0, np.clip(s_star, vl, vr), t)
            f_max = np.maximum(symbol.eval_P(m, 0.0, vl, t),
                               symbol.eval_P(m, 0.0, vr, t))
        flux = np.where(vl <= vr, f_min, f_max)
        v = v - (step / dx) * (flux[1:] - flux[:-1])
        t += step

        if t >= marks[mark_i] - 1e-13:
            out_t.append(marks[mark_i])
            out_v.append(v.copy())
            jumps = np.diff(v)
            i = int(np.argmin(jumps))
            out_sx.append(lo + dx * (i + 1))
            mark_i += 1

    return FiniteVolumeSolution(x=xs, dx=dx, times=np.asarray(out_t),
                                v=np.asarray(out_v),
                                shock_x=np.asarray(out_sx))


# ---------------------------------------------------------------------------
# explicit lattice integrator for the generator equation


@dataclass
class LatticeField:
    x: np.ndarray
    values: np.ndarray
    h: float
    t: float = 0.0
    dt: float = 0.0      # step used by the last run, 0 before any run
    reach: int = 0       # stencil half-width in cells
    u0: object = None    # initial-data expression, reused for frozen ghosts

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    def minus_h_log(self, floor=1e-300):
        """Action-scale reading -h*log(values) with an underflow floor."""
        return -self.h * np.log(np.maximum(self.values, floor))


def make_lattice(u0, h, x_box, dx):
    lo, hi = float(x_box[0]), float(x_box[1])
    n = int(round((hi - lo) / dx))
    if abs(lo + n * dx - hi) > 1e-9 * max(1.0, abs(hi - lo)):
        raise OracleError("dx must tile the lattice window exactly")
    xs = lo + dx * np.arange(n + 1)
    u0e = _as_expression(u0, names=("x",)) if isinstance(u0, str) else u0
    return LatticeField(x=xs, values=_field_values(u0e, xs), h=float(h),
                        u0=u0e)


def _lattice_shifts(m, h, dx):
    shifts = []
    for j in m.jumps:
        s_exact = j.nu * h / dx
        s = int(round(s_exact))
        if abs(s_exact - s) > 1e-9 * (1.0 + abs(s_exact)):
            raise OracleError(
                f"jump displacement h*nu={h * j.nu:g} is {s_exact:g} cells; "
                "it must be a whole number of lattice cells")
        shifts.append(s)
    return shifts


def kf_lattice(m, field, T, safety=0.4, dt=None, support_tol=1e-10):
    """Advance a lattice field by T under the generator equation.

    Explicit stepping; the jump terms are exact grid shifts (displacements
    snapped to whole cells at configuration).  Ghost nodes hold the initial
    data, frozen in time; the run aborts if the solution support touches
    them.  The recorded stability bound is
    0.4*min(dx^2/(2 max A h), dx/max|dP/dp(.,0)|, 1/max sum lambda); the
    automatic step also respects the sharper positivity caps of the jump and
    potential terms.
    """
    xs = field.x
    dx = field.dx
    n = xs.size
    h = field.h
    if abs(np.max(np.abs(np.diff(xs))) - dx) > 1e-9 * dx:
        raise OracleError("lattice grid must be uniform")
    if not 0.0 < safety <= 0.4:
        raise OracleError("safety must lie in (0, 0.4]")

    shifts = _lattice_shifts(m, h, dx)
    reach = max([1] + [abs(s) for s in shifts])

    def coefficients(t):
        A = expr.evaluate(m.A, x=xs, t=t) + np.zeros_like(xs)
        V = expr.evaluate(m.V, x=xs, t=t) + np.zeros_like(xs)
        lams = [expr.evaluate(j.lam, x=xs, t=t) + np.zeros_like(xs)
                for j in m.jumps]
        return A, V, lams

    def step_bounds(A, V, lams):
        max_A = float(np.max(A))
        lam_sum = float(np.max(sum(lams))) if lams else 0.0
        speed = float(np.max(np.abs(symbol.eval_dP_dp(m, xs, 0.0, t0)
                                    + np.zeros_like(xs))))
        terms = [
            dx * dx / (2.0 * max_A * h) if max_A > 0 else np.inf,
            dx / speed if speed > 0 else np.inf,
            1.0 / lam_sum if lam_sum > 0 else np.inf,
        ]
        bound = 0.4 * min(terms)
        cap = min(
            0.9 * h / lam_sum if lam_sum > 0 else np.inf,
            0.5 * h / abs(float(np.min(V))) if float(np.min(V)) < 0 else np.inf,
        )
        return bound, cap

    t0 = field.t
    A, V, lams = coefficients(t0)
    bound, cap = step_bounds(A, V, lams)
    if dt is not None:
        if dt > bound * (1.0 + 1e-12):
            raise StabilityError(
                f"dt={dt:g} exceeds the stability bound {bound:g}")
        step0 = float(dt)
    else:
        step0 = min((safety / 0.4) * bound, cap)
        if not np.isfinite(step0):
            step0 = T  # free evolution: nothing restricts the step
    n_steps = max(1, int(np.ceil(T / step0 - 1e-12)))
    step0 = T / n_steps

    u = np.empty(n + 2 * reach)
    u[reach:reach + n] = field.values
    ghost_x = np.concatenate((xs[0] + dx * np.arange(-reach, 0),
                              xs[-1] + dx * np.arange(1, reach + 1)))
    if field.u0 is not None:
        ghost_vals = _field_values(field.u0, ghost_x)
    else:
        ghost_vals = np.zeros_like(ghost_x)
    u[:reach] = ghost_vals[:reach]
    u[reach + n:] = ghost_vals[reach:]

    def contact_check(vals):
        scale = float(np.max(np.abs(vals)))
        edge = max(float(np.max(np.abs(vals[:1 + reach]))),
                   float(np.max(np.abs(vals[-1 - reach:]))))
        if edge > support_tol * max(scale, 1e-300):
            raise BoundaryContactError(
                f"lattice support reached the window edge "
                f"(edge magnitude {edge:g} vs scale {scale:g})")

    contact_check(field.values)

    core = slice(reach, reach + n)
    check_every = max(1, n_steps // 32)
    dt_h = step0 / h
    diag = 1.0 + dt_h * (V - sum(lams) if lams else V)
    c_lap = A * h * step0 / (dx * dx)
    diag = diag - 2.0 * c_lap
    c_jump = [dt_h * lv for lv in lams]

    for k in range(n_steps):
        if m.time_dependent:
            A, V, lams = coefficients(t0 + k * step0)
            diag = 1.0 + dt_h * (V - sum(lams) if lams else V)
            c_lap = A * h * step0 / (dx * dx)
            diag = diag - 2.0 * c_lap
            c_jump = [dt_h * lv for lv in lams]
        cur = u[core]
        new = diag * cur
        new += c_lap * (u[reach + 1:reach + n + 1] + u[reach - 1:reach + n - 1])
        for s, cj in zip(shifts, c_jump):
            new += cj * u[reach - s:reach - s + n]
        u[core] = new
        if (k + 1) % check_every == 0 or k == n_steps - 1:
            contact_check(u[core])

    return LatticeField(x=xs, values=u[core].copy(), h=h, t=t0 + T,
                        dt=step0, reach=reach, u0=field.u0)


# ---------------------------------------------------------------------------
# product-form asymptotics comparator


@dataclass
class TunnelComparison:
    h: np.ndarray
    E: np.ndarray          # max |u e^{S/h} - sqrt(R)| on the comparison set
    E_rel: np.ndarray      # same, relative to sqrt(R)
    n_points: np.ndarray
    fitted_order: float

    def rows(self):
        return [(float(self.h[i]), float(self.E[i]), self.fitted_order)
                for i in range(self.h.size)]


def comparison_mask(gd, t, xs, dx, h, collar_cells=5, collar_smear=3.0):
    """Points where the asymptotic comparison is meaningful.

    Keeps points covered by exactly one branch (bijective projection) and
    outside every shock collar; the collar is ``collar_cells`` lattice cells
    plus ``collar_smear`` smearing widths h/|p_l - p_r|.
    """
    xs = np.asarray(xs, dtype=float)
    curve = gd.curve_at(t)
    counts = np.zeros(xs.shape, dtype=int)
    for b in curve.branches:
        counts += b.covers(xs)
    keep = counts == 1
    for rec in gd.shocks:
        t_end = rec.t_end if rec.t_end is not None else float(rec.times[-1])
        if not rec.t_birth - 1e-12 <= t <= t_end + 1e-12:
            continue
        vals = rec.at(min(t, float(rec.times[-1])))
        gap = abs(vals["p_l"] - vals["p_r"])
        width = collar_cells * dx + collar_smear * h / max(gap, 1e-12)
        keep &= np.abs(xs - vals["x_s"]) > width
    return keep


def tunnel_compare(fields, gd, x_window, collar_cells=5, collar_smear=3.0):
    """Error table of the product-form asymptotics against lattice runs.

    Every field must hold the solution at one common time.  For each field
    the pipeline action S and regular density R are evaluated on the field's
    own comparison points, and E(h) = max |u e^{S/h} - sqrt(R)| is recorded
    together with its relative variant; the order is fitted by regression of
    log E on log h.
    """
    if not fields:
        raise OracleError("no lattice fields supplied")
    t = float(fields[0].t)
    if any(abs(f.t - t) > 1e-9 * (1.0 + abs(t)) for f in fields):
        raise OracleError("lattice fields are not at a common time")

    hs, errs, rel_errs, counts = [], [], [], []
    for f in fields:
        inside = (f.x >= x_window[0]) & (f.x <= x_window[1])
        keep = inside & comparison_mask(gd, t, f.x, f.dx, f.h,
                                        collar_cells=collar_cells,
                                        collar_smear=collar_smear)
        if not np.any(keep):
            raise OracleError(
                f"comparison set is empty for h={f.h:g} at t={t:g}")
        xs = f.x[keep]
        data = gd.fields(t, xs)
        amp = np.sqrt(data["R"])
        scaled = f.values[keep] * np.exp(np.clip(data["S"] / f.h,
                                                 -EXP_CLIP, EXP_CLIP))
        diff = np.abs(scaled - amp)
        hs.append(f.h)
        errs.append(float(np.max(diff)))
        rel_errs.append(float(np.max(diff / amp)))
        counts.append(int(xs.size))

    hs = np.asarray(hs)
    errs = np.asarray(errs)
    if hs.size >= 2 and np.all(errs > 0):
        order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    else:
        order = float("nan")
    return TunnelComparison(h=hs, E=errs, E_rel=np.asarray(rel_errs),
                            n_points=np.asarray(counts), fitted_order=order)
