"""Self-expander solutions over cones and the linearized stability form.

A hypersurface whose mean curvature vector equals half the normal part of the
position, H - (1/2) X.N = 0, generates the self-similar flow sqrt(t)*Gamma.
For graphs over a 1-D cone the equation reduces to the ODE

    u'' = (1/2) (u - x u') (1 + u'^2),

and for rotationally symmetric graphs u(r) over R^n to

    u'' = (1 + u'^2) [ (u - r u')/2 - (n-1) u'/r ],

with the smooth-axis regularization u''(0) = u(0)/(2n).  Both reductions are
certified a posteriori: every returned solution passes an independent
residual check that rebuilds H and X.N from the sampled values alone.

Solutions are found by shooting: integrate from the symmetry point with an
adaptive embedded Runge-Kutta pair and root-find the terminal slope mismatch
by bisection plus a secant polish.  The initial scan brackets every sign
change, so multiple expanders over one cone are all reported, ordered by
height at the origin; no uniqueness is claimed.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp

from .geometry import (
    GeometryError,
    GraphHypersurface,
    Grid1D,
    PolylineCurve,
    RegularCone,
    graph_geometry,
    polyline_geometry,
)


class SolverError(RuntimeError):
    """Shooting failed to bracket or certify a solution."""


# ---------------------------------------------------------------------------
# residual of the expander equation
# ---------------------------------------------------------------------------

def expander_residual(S):
    """Pointwise |H - (1/2) X.N| from discrete geometry operators.

    Works on graphs and polylines via their standard second-order stencils;
    returns (sup over interior nodes, full field).
    """
    if isinstance(S, GraphHypersurface):
        f = graph_geometry(S)
    elif isinstance(S, PolylineCurve):
        f = polyline_geometry(S)
    else:
        raise GeometryError(f"unsupported surface type {type(S).__name__}")
    xn = np.einsum("ij,ij->i", f.points, f.normal)
    resid = np.abs(f.mean_curvature - 0.5 * xn)
    sup = float(np.max(resid[f.interior])) if f.interior.any() else float(np.max(resid))
    return sup, resid


def _d1_order4(y: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order first derivative on a uniform grid, one-sided at ends."""
    n = y.size
    out = np.empty(n)
    out[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    out[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * h)
    out[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * h)
    out[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * h)
    out[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * h)
    return out


def _state_residual(x, u, du, n_rot: int = 1):
    """Residual field rebuilt from sampled (u, u') with u'' = D4[u'].

    Independent of the ODE right-hand side: the only inputs are the sampled
    state values.  n_rot = 1 is the planar case; n_rot >= 2 adds the
    rotational principal curvatures of a radial profile.
    """
    h = x[1] - x[0]
    d2u = _d1_order4(du, h)
    w2 = 1.0 + du**2
    w = np.sqrt(w2)
    H = d2u / (w2 * w)
    if n_rot >= 2:
        with np.errstate(divide="ignore", invalid="ignore"):
            rot = np.where(np.abs(x) > 1e-12, du / (x * w), d2u / w)
        H = H + (n_rot - 1) * rot
    xn = (u - x * du) / w
    return np.abs(H - 0.5 * xn)


# ---------------------------------------------------------------------------
# ODE right-hand sides and integrators
# ---------------------------------------------------------------------------

def _rhs_planar(x, y):
    u, du = y
    return [du, 0.5 * (u - x * du) * (1.0 + du * du)]


def _rhs_rotsym(n_rot):
    def rhs(r, y):
        u, du = y
        if r < 1e-12:
            lim = u / (2.0 * n_rot)
            return [du, lim]
        return [du, (1.0 + du * du) * (0.5 * (u - r * du) - (n_rot - 1) * du / r)]
    return rhs


def _accel_batch(x, u, du, n_rot):
    """Vectorized u'' of the expander ODE for a batch of states."""
    if n_rot == 1:
        return 0.5 * (u - x * du) * (1.0 + du * du)
    if x < 1e-12:
        return u / (2.0 * n_rot)
    return (1.0 + du * du) * (0.5 * (u - x * du) - (n_rot - 1) * du / x)


BLOWUP_SLOPE = 50.0


def _terminal_slopes_batch(a_grid, du0_grid, x_max, step, n_rot=1):
    """Terminal u'(x_max) for a batch of initial states via fixed-step RK4.

    Trajectories whose slope runs away are frozen at the blowup value, which
    keeps the sign of any mismatch against a bounded target slope.
    """
    n_steps = max(int(np.ceil(x_max / step)), 1)
    h = x_max / n_steps
    u = np.array(a_grid, dtype=float)
    du = np.array(du0_grid, dtype=float)
    alive = np.ones(u.shape, dtype=bool)
    x = 0.0
    for _ in range(n_steps):
        k1u, k1v = du, _accel_batch(x, u, du, n_rot)
        k2u = du + 0.5 * h * k1v
        k2v = _accel_batch(x + 0.5 * h, u + 0.5 * h * k1u, k2u, n_rot)
        k3u = du + 0.5 * h * k2v
        k3v = _accel_batch(x + 0.5 * h, u + 0.5 * h * k2u, k3u, n_rot)
        k4u = du + h * k3v
        k4v = _accel_batch(x + h, u + h * k3u, k4u, n_rot)
        u_new = u + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
        du_new = du + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        bad = ~np.isfinite(du_new) | (np.abs(du_new) > BLOWUP_SLOPE)
        runaway_sign = np.sign(np.where(np.isfinite(du_new), du_new, du))
        keep = alive & ~bad
        u = np.where(keep, u_new, u)
        du = np.where(keep, du_new,
                      np.where(alive & bad, runaway_sign * BLOWUP_SLOPE, du))
        alive = keep
        x += h
    return du


def _shoot(rhs, a, x_max, rtol, du0=0.0, blow=BLOWUP_SLOPE):
    """Terminal slope by the adaptive embedded pair, +-inf on blowup."""
    def runaway(x, y):
        return abs(y[1]) - blow
    runaway.terminal = True
    sol = solve_ivp(rhs, (0.0, x_max), [a, du0], method="RK45",
                    rtol=rtol, atol=rtol, events=runaway)
    if sol.t_events[0].size > 0:
        return np.sign(sol.y[1, -1]) * np.inf
    return float(sol.y[1, -1])


def _accel_scalar(x, u, du, n_rot):
    if n_rot == 1:
        return 0.5 * (u - x * du) * (1.0 + du * du)
    if x < 1e-12:
        return u / (2.0 * n_rot)
    return (1.0 + du * du) * (0.5 * (u - x * du) - (n_rot - 1) * du / x)


def _rk4_dense(y0, x_max, n_out, n_rot=1, substeps=4):
    """Fixed-step classical RK4 sampled on a uniform grid (no interpolation).

    Avoids the dense-output kinks of adaptive integrators, which finite
    differencing would amplify; global error ~ (step)^4.
    """
    xs = np.linspace(0.0, x_max, n_out)
    h = xs[1] - xs[0]
    hs = h / substeps
    u_out = np.empty(n_out)
    du_out = np.empty(n_out)
    u, du = float(y0[0]), float(y0[1])
    u_out[0], du_out[0] = u, du
    x = 0.0
    acc = _accel_scalar
    for i in range(1, n_out):
        for _ in range(substeps):
            k1u = du
            k1v = acc(x, u, du, n_rot)
            k2u = du + 0.5 * hs * k1v
            k2v = acc(x + 0.5 * hs, u + 0.5 * hs * k1u, k2u, n_rot)
            k3u = du + 0.5 * hs * k2v
            k3v = acc(x + 0.5 * hs, u + 0.5 * hs * k2u, k3u, n_rot)
            k4u = du + hs * k3v
            k4v = acc(x + hs, u + hs * k3u, k4u, n_rot)
            u = u + hs / 6.0 * (k1u + 2.0 * (k2u + k3u) + k4u)
            du = du + hs / 6.0 * (k1v + 2.0 * (k2v + k3v) + k4v)
            x += hs
        u_out[i], du_out[i] = u, du
    return xs, u_out, du_out


# ---------------------------------------------------------------------------
# solution container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpanderSolution:
    """Certified sampled solution of the self-expander equation."""

    cone: RegularCone
    x: np.ndarray               # sample abscissae (radial for rotsym)
    u: np.ndarray
    du: np.ndarray
    residual_field: np.ndarray
    residual_sup: float
    a_sup: float                # ||A||_inf
    slope_errors: tuple         # |u'(end) - asymptotic slope| per end
    shooting_parameter: tuple   # (u(0), u'(0))
    all_roots: tuple            # u(0) of every bracketed root, ascending
    x_max: float
    tol: float
    refinement_shift: float | None = None   # |u(0)| change on doubling x_max
    n_rot: int = 1              # 1 planar, >=2 rotationally symmetric

    @property
    def height_at_origin(self) -> float:
        return float(self.shooting_parameter[0])

    def height_interpolant(self):
        """Callable xi -> u(xi), cubic inside the window, rays outside."""
        from scipy.interpolate import CubicSpline
        spline = CubicSpline(self.x, self.u)
        x0, x1 = self.x[0], self.x[-1]
        u0, u1 = self.u[0], self.u[-1]
        du0, du1 = self.du[0], self.du[-1]

        def f(xi):
            xi = np.asarray(xi, dtype=float)
            y = spline(np.clip(xi, x0, x1))
            y = np.where(xi < x0, u0 + du0 * (xi - x0), y)
            y = np.where(xi > x1, u1 + du1 * (xi - x1), y)
            return y

        return f

    def as_graph(self, n_nodes: int = 801, half_width: float | None = None,
                 farfield_mode: str = "dirichlet_expander") -> GraphHypersurface:
        """Resample onto a uniform working grid as a GraphHypersurface."""
        if self.n_rot != 1:
            raise SolverError("only planar expanders resample to plane graphs")
        w = half_width if half_width is not None else float(self.x[-1])
        grid = Grid1D(-w, w, n_nodes)
        f = self.height_interpolant()
        u = f(grid.nodes)
        tol = max(np.abs(u[[0, -1]] - self.cone.profile(grid.nodes[[0, -1]]))) * 1.5 + 1e-12
        return GraphHypersurface(grid, u, self.cone, farfield_mode=farfield_mode,
                                 farfield_tol=float(tol))

    # -- quadrature arrays used by the stability form ----------------------
    def measure_weights(self) -> np.ndarray:
        """Hausdorff measure density per sample (includes angular factor)."""
        w = np.sqrt(1.0 + self.du**2)
        if self.n_rot == 1:
            return w
        n = self.n_rot
        omega = 2.0 * np.pi ** (n / 2.0) / _gamma_half(n)
        return omega * np.abs(self.x) ** (n - 1) * w

    def grad_factor(self) -> np.ndarray:
        """|grad v|^2 = (dv/dx)^2 * grad_factor for radial/graph test fields."""
        return 1.0 / (1.0 + self.du**2)

    def a_norm_sq(self) -> np.ndarray:
        h = self.x[1] - self.x[0]
        d2u = _d1_order4(self.du, h)
        w2 = 1.0 + self.du**2
        k1 = d2u / w2**1.5
        if self.n_rot == 1:
            return k1**2
        with np.errstate(divide="ignore", invalid="ignore"):
            k2 = np.where(np.abs(self.x) > 1e-12, self.du / (self.x * np.sqrt(w2)),
                          d2u / w2)
        return k1**2 + (self.n_rot - 1) * k2**2

    def ambient_norm_sq(self) -> np.ndarray:
        return self.x**2 + self.u**2

    def to_text(self) -> str:
        meta = {"cone": self.cone.to_dict(), "tol": self.tol,
                "shooting_parameter": list(self.shooting_parameter),
                "a_sup": self.a_sup, "x_max": self.x_max,
                "residual_sup": self.residual_sup,
                "slope_errors": list(self.slope_errors),
                "all_roots": list(self.all_roots), "n_rot": self.n_rot}
        buf = io.StringIO()
        buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        buf.write("# x u du residual\n")
        for row in zip(self.x, self.u, self.du, self.residual_field):
            buf.write(" ".join(repr(float(c)) for c in row) + "\n")
        return buf.getvalue()


def _gamma_half(n: int) -> float:
    from math import gamma
    return gamma(n / 2.0)


# ---------------------------------------------------------------------------
# shooting solvers
# ---------------------------------------------------------------------------

SCAN_RANGE = (-10.0, 10.0)
SCAN_SAMPLES = 400
SCAN_STEP = 0.02
BISECT_STEP = 0.02
RTOL_FINAL = 1e-10


def _sign_change_brackets(grid, vals):
    out = []
    s = np.sign(vals)
    for i in range(len(grid) - 1):
        if not (np.isfinite(vals[i]) and np.isfinite(vals[i + 1])):
            continue
        if s[i] == 0:
            out.append((grid[i], grid[i]))
        elif s[i] * s[i + 1] < 0:
            out.append((grid[i], grid[i + 1]))
    return out


def _tail_slope(m, n_rot, R):
    """Expected graph slope of the expander at finite radius R.

    Planar profiles approach their ray exponentially fast; radial profiles
    carry the algebraic tail u = m r + c1/r + c3/r^3 + ... forced by the
    rotational curvature, so the matching condition at R must subtract it.
    """
    if n_rot == 1:
        return m
    c1 = (n_rot - 1) * m
    c3 = 0.5 * c1 * (2.0 / (1.0 + m * m) - (n_rot - 1))
    return m - c1 / R**2 - 3.0 * c3 / R**4


def _refine_brackets(brackets, x_max, step, n_rot, target, passes):
    """Shrink all sign-change brackets simultaneously, 17 probes each."""
    brackets = np.array(brackets, dtype=float)
    for _ in range(passes):
        probes = np.linspace(brackets[:, 0], brackets[:, 1], 17, axis=1)
        v = _terminal_slopes_batch(probes.ravel(), np.zeros(probes.size),
                                   x_max, step, n_rot) - target
        v = v.reshape(probes.shape)
        nxt = []
        for row, (grid, vr) in enumerate(zip(probes, v)):
            sub = _sign_change_brackets(grid, vr)
            nxt.append(sub[0] if sub else tuple(brackets[row]))
        brackets = np.array(nxt, dtype=float)
    return brackets


def _solve_even(rhs, m_target, x_max, scan_range, scan_samples, n_rot=1):
    """Roots u(0) of the symmetric shooting problem u'(0)=0, u'(x_max)=m.

    Batched fixed-step sweeps bracket every sign change of the terminal
    slope mismatch and shrink all brackets simultaneously.  A bracket can
    also enclose a boundary between opposite blowup basins rather than a
    root; those keep O(1) midpoint mismatches and are discarded.  Genuine
    roots get a final Newton correction against the adaptive embedded pair
    at rtol 1e-10.
    """
    target = _tail_slope(m_target, n_rot, x_max)
    a_grid = np.linspace(scan_range[0], scan_range[1], scan_samples)
    vals = _terminal_slopes_batch(a_grid, np.zeros_like(a_grid), x_max,
                                  SCAN_STEP, n_rot) - target
    brackets = _sign_change_brackets(a_grid, vals)
    if not brackets:
        raise SolverError(
            "shooting scan found no bracket for terminal slope "
            f"{m_target}: scanned u(0) in {scan_range} with {scan_samples} "
            f"samples, mismatch range [{np.nanmin(vals):.3g}, {np.nanmax(vals):.3g}]")
    brackets = _refine_brackets(brackets, x_max, BISECT_STEP, n_rot, target, 6)
    # classify: genuine roots have midpoint mismatch ~ bracket width
    mids = 0.5 * (brackets[:, 0] + brackets[:, 1])
    v_mid = _terminal_slopes_batch(mids, np.zeros_like(mids), x_max,
                                   BISECT_STEP / 4, n_rot) - target
    keep = np.abs(v_mid) < max(1.0, abs(m_target)) * 1e-3
    if not keep.any():
        raise SolverError(
            f"all {len(brackets)} scan brackets were blowup basin boundaries; "
            f"no expander root for terminal slope {m_target} in {scan_range}")
    brackets = _refine_brackets(brackets[keep], x_max, BISECT_STEP / 4, n_rot,
                                target, 3)
    roots = []
    for lo, hi in brackets:
        a = 0.5 * (lo + hi)
        # slope of the mismatch from the refined probes, then one Newton
        # correction with the adaptive integrator
        da = max(hi - lo, 1e-9)
        v2 = _terminal_slopes_batch(np.array([a - da, a + da]), np.zeros(2),
                                    x_max, BISECT_STEP / 4, n_rot) - target
        dphi = (v2[1] - v2[0]) / (2 * da)
        f_a = _shoot(rhs, a, x_max, RTOL_FINAL) - target
        if np.isfinite(f_a) and dphi != 0:
            a_new = a - f_a / dphi
            if abs(a_new - a) < 1e-5:
                a = a_new
        f_check = _shoot(rhs, a, x_max, RTOL_FINAL) - target
        if not np.isfinite(f_check) or abs(f_check) > max(1.0, abs(m_target)) * 1e-6:
            continue
        if not any(abs(a - r) < 1e-9 for r, _ in roots):
            roots.append((float(a), 0.0))
    if not roots:
        raise SolverError(
            f"no bracket survived adaptive verification for slope {m_target}")
    return roots


def _solve_asymmetric(m_minus, m_plus, x_max, scan_range, scan_samples):
    """Two-parameter shooting (u(0), u'(0)) for an asymmetric cone.

    The left half-line maps onto the same ODE by reflection: w(s) = u(-s)
    solves it with w'(0) = -u'(0) and terminal target -m_minus.  A coarse
    batched scan over the (u(0), u'(0)) plane seeds a damped Newton iteration
    on the two slope mismatches, evaluated with the adaptive pair.
    """
    b_lim = 0.5 * abs(m_plus - m_minus) + 1.5
    n_a = max(scan_samples // 8, 40)
    n_b = 41
    a_vals = np.linspace(scan_range[0], scan_range[1], n_a)
    b_vals = np.linspace(-b_lim, b_lim, n_b)
    A, B = np.meshgrid(a_vals, b_vals, indexing="ij")
    right = _terminal_slopes_batch(A.ravel(), B.ravel(), x_max,
                                   SCAN_STEP) - m_plus
    left = _terminal_slopes_batch(A.ravel(), -B.ravel(), x_max,
                                  SCAN_STEP) - (-m_minus)
    score = np.abs(right) + np.abs(left)
    order = np.argsort(score)

    def G(a, b):
        gr = _shoot(_rhs_planar, a, x_max, RTOL_FINAL, du0=b) - m_plus
        gl = _shoot(_rhs_planar, a, x_max, RTOL_FINAL, du0=-b) - (-m_minus)
        return np.array([gr, gl])

    roots = []
    for idx in order[:6]:
        a, b = float(A.ravel()[idx]), float(B.ravel()[idx])
        if not np.isfinite(score[idx]) or score[idx] > 1.0:
            continue
        if any(abs(a - ra) < 1e-6 and abs(b - rb) < 1e-6 for ra, rb in roots):
            continue
        ok = False
        g = G(a, b)
        for _ in range(25):
            if not np.all(np.isfinite(g)):
                break
            if np.max(np.abs(g)) < 1e-9:
                ok = True
                break
            eps = 1e-7
            ga = G(a + eps, b)
            gb = G(a, b + eps)
            J = np.column_stack([(ga - g) / eps, (gb - g) / eps])
            try:
                step = np.linalg.solve(J, -g)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            for _ in range(8):
                g_new = G(a + lam * step[0], b + lam * step[1])
                if np.all(np.isfinite(g_new)) and \
                        np.max(np.abs(g_new)) < np.max(np.abs(g)):
                    break
                lam *= 0.5
            a, b = a + lam * step[0], b + lam * step[1]
            g = g_new
        if ok and not any(abs(a - ra) < 1e-8 for ra, _ in roots):
            roots.append((float(a), float(b)))
    if not roots:
        raise SolverError(
            f"two-parameter shooting found no root for cone ({m_minus}, {m_plus})")
    return roots


def _certify(two_sided, a, b, x_max, tol, slope_tol, m_minus, m_plus,
              cone, n_rot, sample_spacing=0.01):
    """Dense fixed-step resampling plus the independent residual check."""
    n_out = int(round(x_max / sample_spacing)) + 1
    xs_r, u_r, du_r = _rk4_dense((a, b), x_max, n_out, n_rot)
    if two_sided:
        # reflection: w(s) = u(-s) solves the same ODE with w'(0) = -u'(0)
        xs_l, w_l, dw_l = _rk4_dense((a, -b), x_max, n_out, n_rot)
        x = np.concatenate([-xs_l[::-1][:-1], xs_r])
        u = np.concatenate([w_l[::-1][:-1], u_r])
        du = np.concatenate([-dw_l[::-1][:-1], du_r])
    else:
        x, u, du = xs_r, u_r, du_r
    resid = _state_residual(x, u, du, n_rot=n_rot)
    sup = float(np.max(resid))
    if sup > tol:
        raise SolverError(f"residual {sup:.3e} above tolerance {tol:.3e} "
                          "after shooting convergence")
    if two_sided:
        s_err = (abs(du[0] - m_minus), abs(du[-1] - m_plus))
    else:
        s_err = (abs(du[-1] - _tail_slope(m_plus, n_rot, x_max)),) * 2
    if max(s_err) > slope_tol:
        raise SolverError(
            f"asymptotic slope errors {s_err} above slope_tol {slope_tol}; "
            "x_max may be too small for the declared tolerance")
    h = x[1] - x[0]
    d2u = _d1_order4(du, h)
    w2 = 1.0 + du**2
    k1 = d2u / w2**1.5
    if n_rot == 1:
        a_sq = k1**2
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            k2 = np.where(np.abs(x) > 1e-12, du / (x * np.sqrt(w2)), d2u / w2)
        a_sq = k1**2 + (n_rot - 1) * k2**2
    return ExpanderSolution(
        cone=cone, x=x, u=u, du=du, residual_field=resid, residual_sup=sup,
        a_sup=float(np.sqrt(np.max(a_sq))), slope_errors=tuple(float(e) for e in s_err),
        shooting_parameter=(float(a), float(b)), all_roots=(),
        x_max=float(x_max), tol=float(tol), n_rot=n_rot)


def solve_expander_graph1d(m_minus: float, m_plus: float, x_max: float = 20.0,
                           tol: float = 1e-8, slope_tol: float = 1e-4,
                           scan_range=SCAN_RANGE, scan_samples=SCAN_SAMPLES,
                           refine_check: bool = True) -> ExpanderSolution:
    """Expander graph over the planar cone with slopes (m_minus, m_plus).

    Symmetric cones (m_minus == -m_plus) shoot on u(0) with u'(0) = 0; the
    asymmetric case adds u'(0) as a second unknown.  Every bracketed root is
    reported in ``all_roots`` (ascending u(0)); the returned solution is the
    root of smallest |u(0)|.  ``refine_check`` re-solves with doubled x_max
    and records the shift of u(0).
    """
    if not (np.isfinite(m_minus) and np.isfinite(m_plus)):
        raise SolverError("cone slopes must be finite")
    cone = RegularCone.slopes1d(m_minus, m_plus)
    symmetric = (m_minus == -m_plus)
    if symmetric:
        roots = _solve_even(_rhs_planar, m_plus, x_max, scan_range, scan_samples)
    else:
        roots = _solve_asymmetric(m_minus, m_plus, x_max, scan_range, scan_samples)
    roots.sort(key=lambda ab: ab[0])
    a_prim, b_prim = min(roots, key=lambda ab: abs(ab[0]))
    sol = _certify(True, a_prim, b_prim, x_max, tol,
                   slope_tol, m_minus, m_plus, cone, n_rot=1)
    shift = None
    if refine_check:
        if symmetric:
            wide = _solve_even(_rhs_planar, m_plus, 2 * x_max,
                               (a_prim - 0.5, a_prim + 0.5), 40)
        else:
            wide = _solve_asymmetric(m_minus, m_plus, 2 * x_max,
                                     (a_prim - 0.5, a_prim + 0.5), 40)
        a_wide = min(wide, key=lambda ab: abs(ab[0] - a_prim))[0]
        shift = abs(a_wide - a_prim)
    return replace(sol, all_roots=tuple(float(a) for a, _ in roots),
                   refinement_shift=shift)


def solve_expander_rotsym(ambient_dim: int, half_angle: float,
                          x_max: float = 20.0, tol: float = 1e-8,
                          slope_tol: float = 1e-4, scan_range=SCAN_RANGE,
                          scan_samples=SCAN_SAMPLES,
                          refine_check: bool = True) -> ExpanderSolution:
    """Rotationally symmetric expander with the given cone half-angle.

    The profile is a radial graph u(r) over R^n, n = ambient_dim - 1 >= 2;
    the asymptotic slope is cot(half_angle), so half_angle -> pi/2 recovers
    the flat hyperplane.  Smooth-axis data u'(0) = 0 leaves u(0) as the
    single shooting unknown.
    """
    cone = RegularCone.rotsym(half_angle, ambient_dim)
    n_rot = ambient_dim - 1
    m = cone.slope
    rhs = _rhs_rotsym(n_rot)
    roots = _solve_even(rhs, m, x_max, scan_range, scan_samples, n_rot=n_rot)
    roots.sort(key=lambda ab: ab[0])
    a_prim, b_prim = min(roots, key=lambda ab: abs(ab[0]))
    sol = _certify(False, a_prim, b_prim, x_max, tol, slope_tol,
                   m, m, cone, n_rot=n_rot)
    shift = None
    if refine_check:
        wide = _solve_even(rhs, m, 2 * x_max, (a_prim - 0.5, a_prim + 0.5), 40,
                           n_rot=n_rot)
        a_wide = min(wide, key=lambda ab: abs(ab[0] - a_prim))[0]
        shift = abs(a_wide - a_prim)
    return replace(sol, all_roots=tuple(float(a) for a, _ in roots),
                   refinement_shift=shift)


# ---------------------------------------------------------------------------
# linearized stability form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticFormReport:
    test_id: str
    value: float
    weight_truncation_bound: float
    a_sup: float
    positive: bool


def compact_bump(x, center: float, width: float, amplitude: float = 1.0):
    """Smooth compactly supported bump a*exp(1/(xi^2 - 1)) on |xi| < 1."""
    xi = (np.asarray(x, dtype=float) - center) / width
    out = np.zeros_like(xi)
    inside = np.abs(xi) < 1.0
    out[inside] = amplitude * np.exp(1.0 / (xi[inside] ** 2 - 1.0))
    return out


def _support_slice(sol: ExpanderSolution, v: np.ndarray, margin: int = 2):
    nz = np.nonzero(v)[0]
    if nz.size == 0:
        return None
    if nz[0] < margin or nz[-1] > v.size - 1 - margin:
        raise SolverError("test function support touches the stored window "
                          "boundary; the weight makes far support meaningless")
    return slice(max(nz[0] - margin, 0), min(nz[-1] + margin + 1, v.size))


def quadratic_form(sol: ExpanderSolution, v: np.ndarray,
                   test_id: str = "v") -> QuadraticFormReport:
    """Stability form int [ |grad v|^2 + (1/2 - |A|^2) v^2 ] e^{|X|^2/4} dH.

    v is sampled on sol.x and must be supported strictly inside the window;
    quadrature is restricted to the support so the growing weight never
    overflows.  Positive verdict iff the value is > 0.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != sol.x.shape:
        raise SolverError(f"v has shape {v.shape}, expected {sol.x.shape}")
    sl = _support_slice(sol, v)
    if sl is None:
        return QuadraticFormReport(test_id, 0.0, 0.0, sol.a_sup, False)
    x = sol.x[sl]
    h = x[1] - x[0]
    vv = v[sl]
    dv = np.gradient(vv, h)
    integrand = (dv**2 * sol.grad_factor()[sl]
                 + (0.5 - sol.a_norm_sq()[sl]) * vv**2)
    weight = np.exp(sol.ambient_norm_sq()[sl] / 4.0) * sol.measure_weights()[sl]
    value = float(np.trapezoid(integrand * weight, dx=h))
    return QuadraticFormReport(test_id=test_id, value=value,
                               weight_truncation_bound=0.0,
                               a_sup=sol.a_sup, positive=bool(value > 0.0))


def weighted_mass(sol: ExpanderSolution, v: np.ndarray) -> float:
    """Weighted L^2 norm int v^2 e^{|X|^2/4} dH over the support."""
    v = np.asarray(v, dtype=float)
    sl = _support_slice(sol, v)
    if sl is None:
        return 0.0
    x = sol.x[sl]
    h = x[1] - x[0]
    weight = np.exp(sol.ambient_norm_sq()[sl] / 4.0) * sol.measure_weights()[sl]
    return float(np.trapezoid(v[sl] ** 2 * weight, dx=h))


def rayleigh_min(sol: ExpanderSolution, basis) -> float:
    """Smallest generalized eigenvalue of the form over span(basis).

    Assembles the form and weighted-mass Gram matrices of the basis and
    solves the dense symmetric generalized eigenproblem; rejects bases whose
    mass matrix is numerically singular.
    """
    from scipy.linalg import eigh

    basis = [np.asarray(b, dtype=float) for b in basis]
    k = len(basis)
    if k == 0:
        raise SolverError("empty basis")
    sls = [_support_slice(sol, b) for b in basis]
    if any(s is None for s in sls):
        raise SolverError("basis contains the zero function")
    F = np.empty((k, k))
    M = np.empty((k, k))
    h = sol.x[1] - sol.x[0]
    gradf = sol.grad_factor()
    pot = 0.5 - sol.a_norm_sq()
    wgt = np.exp(np.minimum(sol.ambient_norm_sq(), 1400.0) / 4.0) * sol.measure_weights()
    dbs = [np.gradient(b, h) for b in basis]
    for i in range(k):
        lo_i = sls[i]
        for j in range(i, k):
            sl = slice(min(lo_i.start, sls[j].start), max(lo_i.stop, sls[j].stop))
            integ = (dbs[i][sl] * dbs[j][sl] * gradf[sl]
                     + pot[sl] * basis[i][sl] * basis[j][sl])
            F[i, j] = F[j, i] = np.trapezoid(integ * wgt[sl], dx=h)
            M[i, j] = M[j, i] = np.trapezoid(basis[i][sl] * basis[j][sl] * wgt[sl],
                                             dx=h)
    mass_eigs = np.linalg.eigvalsh(M)
    if mass_eigs[0] <= 1e-12 * max(mass_eigs[-1], 1e-300):
        raise SolverError("singular mass matrix: basis not independent on the window")
    vals = eigh(F, M, eigvals_only=True)
    return float(vals[0])
