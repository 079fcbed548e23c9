"""Expander solver certification: residuals, shooting regressions, stability form.

Regression heights u(0) were computed by an independent bisection on the
shooting problem before this suite was frozen (batched RK4 scan + adaptive
RK45 polish agree to 1e-10).
"""

import numpy as np
import pytest

from mcflab.expander import (
    ExpanderSolution,
    SolverError,
    compact_bump,
    expander_residual,
    quadratic_form,
    rayleigh_min,
    solve_expander_graph1d,
    solve_expander_rotsym,
    weighted_mass,
)
from mcflab.geometry import Grid1D, GraphHypersurface, PolylineCurve, RegularCone

# frozen after the first certified runs (x_max=20, rtol 1e-10)
REGRESSION_HEIGHTS = {0.2: 0.224784177121, 0.5: 0.551262190035, 1.0: 1.044487991868}
ROTSYM_HEIGHT_N2_A12 = 0.6842422199
ROTSYM_ASUP_N2_A12 = 0.241916


@pytest.fixture(scope="module")
def sol_half():
    return solve_expander_graph1d(-0.5, 0.5, refine_check=False)


class TestExpanderResidual:
    def test_flat_line_through_origin(self):
        g = Grid1D(-10, 10, 201)
        G = GraphHypersurface(g, np.zeros(201), RegularCone.slopes1d(0, 0),
                              farfield_tol=1e-12)
        sup, field = expander_residual(G)
        assert sup < 1e-12

    def test_offset_line(self):
        # u = c: H = 0, X.N = c, so the residual is |c|/2 everywhere
        c = 0.6
        g = Grid1D(-10, 10, 201)
        G = GraphHypersurface(g, np.full(201, c), RegularCone.slopes1d(0, 0),
                              farfield_tol=1.0)
        sup, field = expander_residual(G)
        assert np.allclose(field, c / 2, atol=1e-10)

    def test_polyline_flat_through_origin(self):
        pts = np.column_stack([np.linspace(-5, 5, 64), np.zeros(64)])
        C = PolylineCurve(pts, ray_minus=[-1, 0], ray_plus=[1, 0])
        sup, _ = expander_residual(C)
        assert sup < 1e-12


class TestShooting1D:
    @pytest.mark.parametrize("m", [0.2, 0.5, 1.0])
    def test_symmetric_cones_certified(self, m):
        sol = solve_expander_graph1d(-m, m)
        assert sol.residual_sup <= 1e-8
        assert max(sol.slope_errors) <= 1e-4
        assert sol.refinement_shift < 1e-6
        assert sol.height_at_origin == pytest.approx(REGRESSION_HEIGHTS[m],
                                                     abs=1e-9)
        # even solution: u(0) reported with u'(0) = 0
        assert sol.shooting_parameter[1] == 0.0
        assert np.abs(sol.u - sol.u[::-1]).max() < 1e-10

    def test_flat_cone_zero_solution(self):
        sol = solve_expander_graph1d(0.0, 0.0, refine_check=False)
        assert abs(sol.height_at_origin) < 1e-10
        assert np.abs(sol.u).max() < 1e-9

    def test_height_consistent_with_curvature(self):
        # at the origin A = u''(0) = u(0)/2 and that is the curvature maximum
        sol = solve_expander_graph1d(-0.5, 0.5, refine_check=False)
        assert sol.a_sup == pytest.approx(sol.height_at_origin / 2, rel=1e-6)

    def test_resampled_graph_residual_second_order(self, sol_half):
        for n in (801, 1601):
            G = sol_half.as_graph(n_nodes=n)
            h = G.grid.h
            sup, _ = expander_residual(G)
            assert sup <= 5 * h**2

    def test_asymmetric_cone(self):
        sol = solve_expander_graph1d(-0.1, 0.4, refine_check=False)
        assert sol.residual_sup <= 1e-8
        assert max(sol.slope_errors) <= 1e-4
        assert sol.shooting_parameter[1] != 0.0

    def test_small_slope_linear_theory(self):
        # u(0) -> 2 m / sqrt(pi) as m -> 0
        sol = solve_expander_graph1d(-0.01, 0.01, refine_check=False)
        assert sol.height_at_origin == pytest.approx(2 * 0.01 / np.sqrt(np.pi),
                                                     rel=2e-3)

    def test_scan_failure_reported(self):
        with pytest.raises(SolverError):
            solve_expander_graph1d(-0.5, 0.5, scan_range=(5.0, 10.0),
                                   scan_samples=50, refine_check=False)


class TestShootingRotsym:
    def test_half_angle_near_flat(self):
        sol = solve_expander_rotsym(3, np.pi / 2 - 1e-3, refine_check=False)
        assert sol.residual_sup <= 1e-8
        assert abs(sol.height_at_origin) < 5e-3

    def test_n2_half_angle_12(self):
        sol = solve_expander_rotsym(3, 1.2)
        assert sol.residual_sup <= 1e-8
        assert sol.refinement_shift < 1e-6
        assert sol.height_at_origin == pytest.approx(ROTSYM_HEIGHT_N2_A12, abs=1e-6)
        assert sol.a_sup == pytest.approx(ROTSYM_ASUP_N2_A12, abs=1e-5)
        # umbilic axis: |A|(0) = sqrt(2) u(0) / (2n)
        assert sol.a_sup == pytest.approx(np.sqrt(2) * sol.height_at_origin / 4,
                                          rel=1e-5)

    def test_agrees_with_planar_in_flat_limit(self):
        rot = solve_expander_rotsym(3, np.pi / 2, refine_check=False)
        plan = solve_expander_graph1d(0.0, 0.0, refine_check=False)
        assert abs(rot.height_at_origin - plan.height_at_origin) < 1e-9


class TestQuadraticForm:
    def test_zero_function(self, sol_half):
        rep = quadratic_form(sol_half, np.zeros_like(sol_half.x))
        assert rep.value == 0.0
        assert not rep.positive

    def test_flat_line_any_bump_positive(self):
        sol = solve_expander_graph1d(0.0, 0.0, refine_check=False)
        v = compact_bump(sol.x, 0.0, 3.0)
        rep = quadratic_form(sol, v)
        # A = 0: value >= (1/2) integral v^2 e^{|X|^2/4}
        assert rep.value >= 0.5 * weighted_mass(sol, v) - 1e-12
        assert rep.positive

    def test_low_curvature_expander_positive_bumps(self, sol_half):
        assert sol_half.a_sup < 1 / np.sqrt(2)
        rng = np.random.default_rng(7)
        count = 0
        for _ in range(100):
            c = rng.uniform(-8, 8)
            w = rng.uniform(0.5, 3.0)
            if abs(c) + w > sol_half.x[-1] - 0.5:
                continue
            rep = quadratic_form(sol_half, compact_bump(sol_half.x, c, w,
                                                        rng.uniform(0.1, 2.0)))
            assert rep.positive
            count += 1
        assert count > 50

    def test_support_touching_boundary_rejected(self, sol_half):
        v = np.ones_like(sol_half.x)
        with pytest.raises(SolverError):
            quadratic_form(sol_half, v)


class TestRayleighMin:
    def test_flat_line_at_least_half(self):
        sol = solve_expander_graph1d(0.0, 0.0, refine_check=False)
        basis = [compact_bump(sol.x, c, 1.5) for c in np.linspace(-6, 6, 9)]
        assert rayleigh_min(sol, basis) >= 0.5 - 1e-6

    def test_curved_expander_bound(self, sol_half):
        basis = [compact_bump(sol_half.x, c, 1.5) for c in np.linspace(-6, 6, 9)]
        lam = rayleigh_min(sol_half, basis)
        assert lam >= 0.5 - sol_half.a_sup**2 - 1e-3

    def test_single_function_equals_quotient(self, sol_half):
        v = compact_bump(sol_half.x, 0.0, 2.0)
        lam = rayleigh_min(sol_half, [v])
        quot = quadratic_form(sol_half, v).value / weighted_mass(sol_half, v)
        assert lam == pytest.approx(quot, rel=1e-9)

    def test_dependent_basis_rejected(self, sol_half):
        v = compact_bump(sol_half.x, 0.0, 2.0)
        with pytest.raises(SolverError):
            rayleigh_min(sol_half, [v, 2 * v])


class TestSolutionPlumbing:
    def test_serialization_round_trip_text(self, sol_half):
        text = sol_half.to_text()
        assert "cone" in text.splitlines()[0]
        data = np.array([[float(t) for t in ln.split()]
                         for ln in text.splitlines()[2:]])
        assert np.allclose(data[:, 1], sol_half.u)

    def test_height_interpolant_matches_samples_and_rays(self, sol_half):
        f = sol_half.height_interpolant()
        assert np.abs(f(sol_half.x) - sol_half.u).max() < 1e-12
        x_out = sol_half.x[-1] + 3.0
        expected = sol_half.u[-1] + sol_half.du[-1] * 3.0
        assert f(x_out) == pytest.approx(expected, abs=1e-10)

    def test_as_graph_roundtrip(self, sol_half):
        G = sol_half.as_graph(n_nodes=801)
        assert G.grid.n_nodes == 801
        assert G.cone == sol_half.cone
        assert np.abs(G.u[400] - sol_half.height_at_origin) < 1e-9
