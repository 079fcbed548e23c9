"""Gaussian area and entropy oracles: closed forms, bounds, invariances."""

import numpy as np
import pytest

from mcflab.geometry import (
    Grid1D,
    GraphHypersurface,
    PolylineCurve,
    RegularCone,
)
from mcflab.gaussian import (
    EntropySearchConfig,
    GaussianQuery,
    QuadratureError,
    entropy_lower_bound,
    gaussian_area,
    lipschitz_entropy_bound,
    localized_gaussian_area,
    monotonicity_trace,
)

SQRT_2PI_E = np.sqrt(2 * np.pi / np.e)


def flat_line(width=40.0, n=2001):
    g = Grid1D(-width, width, n)
    return GraphHypersurface(g, np.zeros(n), RegularCone.slopes1d(0, 0),
                             farfield_tol=1e-12)


def wedge(m, width=30.0, n=1501):
    g = Grid1D(-width, width, n)
    cone = RegularCone.slopes1d(-m, m)
    return GraphHypersurface(g, cone.profile(g.nodes), cone, farfield_tol=1e-12)


def circle(n=512, r=1.0, center=(0.0, 0.0)):
    th = np.linspace(0.0, 2 * np.pi, n + 1)[:-1]
    pts = np.column_stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)])
    return PolylineCurve(pts, closed=True)


def circle_gaussian_exact(r, t):
    # F(center, t) = r sqrt(pi/t) e^{-r^2/(4t)}
    return r * np.sqrt(np.pi / t) * np.exp(-r**2 / (4 * t))


class TestGaussianArea:
    def test_flat_line_normalized_any_scale(self):
        line = flat_line()
        for lt in np.linspace(-6, 6, 13):
            gv = gaussian_area(line, GaussianQuery((0.0, 0.0), np.exp(lt)))
            assert gv.value == pytest.approx(1.0, abs=1e-6)
        gv = gaussian_area(line, GaussianQuery((7.3, 0.0), 0.42))
        assert gv.value == pytest.approx(1.0, abs=1e-6)

    def test_circle_closed_form(self):
        C = circle(512)
        for t in (0.2, 0.5, 1.3):
            gv = gaussian_area(C, GaussianQuery((0.0, 0.0), t))
            assert gv.value == pytest.approx(circle_gaussian_exact(1.0, t), abs=2e-5)
        gv = gaussian_area(C, GaussianQuery((0.0, 0.0), 0.5))
        assert gv.value == pytest.approx(SQRT_2PI_E, abs=2e-5)

    def test_cone_vertex_normalized(self):
        for m in (0.3, 1.0):
            W = wedge(m)
            for t in (0.01, 1.0, 25.0):
                gv = gaussian_area(W, GaussianQuery((0.0, 0.0), t))
                assert gv.value == pytest.approx(1.0, abs=1e-6)

    def test_rejects_bad_scale(self):
        with pytest.raises(QuadratureError):
            GaussianQuery((0.0, 0.0), 0.0)
        with pytest.raises(QuadratureError):
            GaussianQuery((0.0, 0.0), -1.0)

    def test_scale_invariance_exact(self):
        g = Grid1D(-10, 10, 501)
        u = 0.3 * np.sin(g.nodes) * np.exp(-(g.nodes / 5) ** 2)
        S = GraphHypersurface(g, u, RegularCone.slopes1d(0, 0), farfield_tol=0.1)
        lam = 2.5
        f1 = gaussian_area(S, GaussianQuery((0.3, 0.1), 0.7)).value
        f2 = gaussian_area(S.scaled(lam),
                           GaussianQuery((0.3 * lam, 0.1 * lam), 0.7 * lam**2)).value
        assert f2 == pytest.approx(f1, rel=1e-10)


class TestLocalizedGaussianArea:
    def test_flat_line_wide_ball(self):
        line = flat_line()
        t = 0.5
        gv = localized_gaussian_area(line, GaussianQuery((0.0, 0.0), t),
                                     8 * np.sqrt(t))
        assert gv.value == pytest.approx(1.0, abs=1e-6)

    def test_small_ball_vanishes(self):
        line = flat_line()
        q = GaussianQuery((0.0, 0.0), 0.5)
        vals = [localized_gaussian_area(line, q, r).value for r in (0.5, 0.1, 0.01)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 0.02

    def test_never_exceeds_full_area(self):
        C = circle(256)
        q = GaussianQuery((0.3, -0.2), 0.4)
        full = gaussian_area(C, q).value
        for r in (0.2, 1.0, 3.0, 50.0):
            assert localized_gaussian_area(C, q, r).value <= full + 1e-12

    def test_small_lipschitz_graph_bound(self):
        # delta-Lipschitz local graph: localized area <= sqrt(1 + 4 delta^2)
        delta = 0.05
        g = Grid1D(-20, 20, 2001)
        u = delta * np.sin(g.nodes)  # |u'| <= delta
        S = GraphHypersurface(g, u, RegularCone.slopes1d(0, 0), farfield_tol=1.0)
        bound = np.sqrt(1 + 4 * delta**2)
        for t in (0.05, 0.25, 1.0):
            for px in (-1.0, 0.0, 2.0):
                q = GaussianQuery((px, u[0] * 0), t)
                v = localized_gaussian_area(S, q, 8 * np.sqrt(t)).value
                assert v <= bound + 1e-9


class TestLipschitzBound:
    def test_values(self):
        assert lipschitz_entropy_bound(0.0) == pytest.approx(1.0)
        assert lipschitz_entropy_bound(1.0) == pytest.approx(np.sqrt(2))
        assert lipschitz_entropy_bound(0.75) == pytest.approx(1.25)

    def test_rejects_negative(self):
        with pytest.raises(QuadratureError):
            lipschitz_entropy_bound(-0.1)


class TestEntropySearch:
    def test_flat_line_entropy_one(self):
        rep = entropy_lower_bound(flat_line())
        assert rep.best_value == pytest.approx(1.0, abs=1e-6)

    def test_circle_entropy(self):
        C = circle(512)
        rep = entropy_lower_bound(C, EntropySearchConfig.for_surface(
            C, refinement_rounds=4))
        assert rep.best_value == pytest.approx(SQRT_2PI_E, abs=1e-4)
        # argmax near the center at t = r^2/2
        assert np.hypot(*rep.arg_p) < 0.05
        assert rep.arg_t == pytest.approx(0.5, abs=0.02)

    def test_circle_entropy_two_resolutions_agree(self):
        r1 = entropy_lower_bound(circle(256), EntropySearchConfig(
            p_bounds=((-1, 1), (-1, 1)), refinement_rounds=3))
        r2 = entropy_lower_bound(circle(512), EntropySearchConfig(
            p_bounds=((-1, 1), (-1, 1)), refinement_rounds=3))
        assert r1.best_value == pytest.approx(r2.best_value, abs=2e-4)

    def test_lipschitz_graph_bounded(self):
        # zigzag with straight cone tails: lower bound <= sqrt(1+L^2) + tol
        for L in (0.25, 0.5, 1.0):
            g = Grid1D(-20, 20, 2001)
            x = g.nodes
            cone = RegularCone.slopes1d(-L, L)
            # slope +-L teeth joining the cone exactly at |x| = 8
            r = np.abs(x)
            teeth = np.interp(r, [0, 2, 4, 6, 8], [8, 6, 8, 6, 8])
            u = L * np.where(r >= 8.0, r, teeth)
            S = GraphHypersurface(g, u, cone, farfield_tol=1e-9)
            rep = entropy_lower_bound(S)
            assert rep.best_value <= lipschitz_entropy_bound(L) + 1e-3
            assert rep.best_value >= 1.0 - 1e-4
            assert rep.upper_bound_hint == pytest.approx(lipschitz_entropy_bound(L),
                                                         abs=1e-6)

    def test_entropy_at_least_one(self):
        for S in (flat_line(), wedge(0.3), circle(256)):
            rep = entropy_lower_bound(S)
            assert rep.best_value >= 1.0 - 1e-4

    def test_large_scale_bound_conical_surface(self):
        # cone-asymptotic surface: sup over large t of F_{O,t} <= 2 E[cone]
        m = 0.3
        g = Grid1D(-30, 30, 1501)
        cone = RegularCone.slopes1d(-m, m)
        u = cone.profile(g.nodes) + 0.5 * np.exp(-g.nodes**2)
        S = GraphHypersurface(g, u, cone, farfield_tol=1e-9)
        cone_rep = entropy_lower_bound(wedge(m))
        for t in (25.0, 100.0, 400.0):
            v = gaussian_area(S, GaussianQuery((0.0, 0.0), t)).value
            assert v <= 2 * cone_rep.best_value

    def test_rejects_empty_grid(self):
        with pytest.raises(QuadratureError):
            EntropySearchConfig(p_bounds=((0, 1), (0, 1)), p_resolution=(0, 3))
        with pytest.raises(QuadratureError):
            EntropySearchConfig(p_bounds=((0, 1), (0, 1)), refinement_rounds=0)


class TestMonotonicity:
    def test_static_flat_line_constant(self):
        line = flat_line()
        snaps = [(t, line) for t in np.linspace(0.0, 0.4, 9)]
        rep = monotonicity_trace(snaps, (0.0, 0.0), t0=0.5)
        assert np.allclose(rep.values, 1.0, atol=1e-6)
        assert rep.non_increasing

    def test_shrinking_circle_constant_series(self):
        # exact self-shrinker: F_{center, t0-t}(Sigma_t) is constant sqrt(2pi/e)
        t0 = 0.5  # extinction of the unit circle
        snaps = []
        for t in np.linspace(0.0, 0.3, 7):
            snaps.append((t, circle(512, np.sqrt(1.0 - 2 * t))))
        rep = monotonicity_trace(snaps, (0.0, 0.0), t0=t0)
        assert np.allclose(rep.values, SQRT_2PI_E, atol=1e-3)
        assert rep.non_increasing

    def test_rejects_time_past_center(self):
        line = flat_line()
        with pytest.raises(QuadratureError):
            monotonicity_trace([(0.6, line)], (0.0, 0.0), t0=0.5)
