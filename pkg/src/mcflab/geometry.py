"""Discrete hypersurface representations and pointwise differential geometry.

Two concrete representations are supported: height-function graphs over a
uniform 1-D grid (curves in the plane written as y = u(x)) and polyline
curves (ordered planar vertices, optionally closed).  Both carry the far
field of a scale-invariant cone so that quantities of complete surfaces
(Gaussian areas, entropies) can be extended beyond the stored window.

Conventions, recorded in every geometry report:
  * graph normals have positive last component, N = (-u', 1)/sqrt(1+u'^2);
  * closed polyline normals point outward of the bounded region;
  * second fundamental form A_ij = <d_i d_j X, N>, mean curvature H = g^ij A_ij,
    so the mean curvature vector is H*N.
All spatial derivatives in the interior use second-order central differences;
one-sided stencils appear only at boundary nodes and those nodes are flagged.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace

import numpy as np


class GeometryError(ValueError):
    """Invalid or degenerate geometric input."""


# ---------------------------------------------------------------------------
# grids and cones
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid1D:
    """Uniform node set on [x_min, x_max] with at least five nodes."""

    x_min: float
    x_max: float
    n_nodes: int

    def __post_init__(self):
        if self.n_nodes < 5:
            raise GeometryError(f"grid needs >= 5 nodes, got {self.n_nodes}")
        if not np.isfinite(self.x_min) or not np.isfinite(self.x_max):
            raise GeometryError("grid bounds must be finite")
        if self.x_max <= self.x_min:
            raise GeometryError("grid bounds must satisfy x_max > x_min")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_nodes - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_nodes)


@dataclass(frozen=True)
class RegularCone:
    """Scale-invariant model geometry at infinity.

    ``slopes1d`` describes the planar wedge y = m_minus*x (x<0), m_plus*x
    (x>=0).  ``rotsym`` describes the rotationally symmetric cone in R^(n+1)
    with the given half-angle measured from the rotation axis (half-angle
    pi/2 is the flat hyperplane).
    """

    kind: str                      # "slopes1d" | "rotsym"
    m_minus: float = 0.0
    m_plus: float = 0.0
    half_angle: float = 0.0
    ambient_dim: int = 2

    @staticmethod
    def slopes1d(m_minus: float, m_plus: float) -> "RegularCone":
        if not (np.isfinite(m_minus) and np.isfinite(m_plus)):
            raise GeometryError("cone slopes must be finite")
        return RegularCone(kind="slopes1d", m_minus=float(m_minus), m_plus=float(m_plus))

    @staticmethod
    def rotsym(half_angle: float, ambient_dim: int) -> "RegularCone":
        if not 0.0 < half_angle <= np.pi / 2:
            raise GeometryError("half-angle must lie in (0, pi/2]")
        if ambient_dim < 3:
            raise GeometryError("rotationally symmetric cones need ambient dimension >= 3")
        return RegularCone(kind="rotsym", half_angle=float(half_angle),
                           ambient_dim=int(ambient_dim))

    @property
    def surface_dim(self) -> int:
        return 1 if self.kind == "slopes1d" else self.ambient_dim - 1

    @property
    def slope(self) -> float:
        """Radial slope of the profile (cot of the half-angle for rotsym)."""
        if self.kind == "slopes1d":
            raise GeometryError("slope is single-valued only for rotsym cones")
        return 1.0 / np.tan(self.half_angle)

    def profile(self, x) -> np.ndarray:
        """Degree-1 homogeneous height profile."""
        x = np.asarray(x, dtype=float)
        if self.kind == "slopes1d":
            return np.where(x >= 0.0, self.m_plus * x, self.m_minus * x)
        return self.slope * np.abs(x)

    @property
    def lipschitz_constant(self) -> float:
        if self.kind == "slopes1d":
            return max(abs(self.m_minus), abs(self.m_plus))
        return abs(self.slope)

    def ray_directions(self):
        """Unit directions of the two asymptotic rays (1-D cones only)."""
        if self.kind != "slopes1d":
            raise GeometryError("ray directions are defined for 1-D cones only")
        d_plus = np.array([1.0, self.m_plus]) / np.hypot(1.0, self.m_plus)
        d_minus = np.array([-1.0, -self.m_minus]) / np.hypot(1.0, self.m_minus)
        return d_minus, d_plus

    def to_dict(self) -> dict:
        if self.kind == "slopes1d":
            return {"kind": "slopes1d", "m_minus": self.m_minus, "m_plus": self.m_plus}
        return {"kind": "rotsym", "half_angle": self.half_angle,
                "ambient_dim": self.ambient_dim}

    @staticmethod
    def from_dict(d: dict) -> "RegularCone":
        if d["kind"] == "slopes1d":
            return RegularCone.slopes1d(d["m_minus"], d["m_plus"])
        return RegularCone.rotsym(d["half_angle"], d["ambient_dim"])


# ---------------------------------------------------------------------------
# hypersurfaces
# ---------------------------------------------------------------------------

FARFIELD_MODES = ("dirichlet_cone", "dirichlet_expander")


@dataclass(frozen=True)
class GraphHypersurface:
    """Height samples u on a uniform grid with a cone-matched far field.

    ``farfield_tol`` bounds |u - cone profile| at the two outermost nodes;
    in expander mode the boundary trace is the sqrt(t)-scaled expander, which
    deviates from the cone by an exponentially small amount, so the declared
    tolerance must absorb that offset.
    """

    grid: Grid1D
    u: np.ndarray
    cone: RegularCone
    farfield_mode: str = "dirichlet_cone"
    farfield_tol: float = 1e-2

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        object.__setattr__(self, "u", u)
        if u.shape != (self.grid.n_nodes,):
            raise GeometryError(f"u has shape {u.shape}, expected ({self.grid.n_nodes},)")
        if not np.all(np.isfinite(u)):
            raise GeometryError("non-finite height sample")
        if self.farfield_mode not in FARFIELD_MODES:
            raise GeometryError(f"unknown farfield_mode {self.farfield_mode!r}")
        if self.cone.kind != "slopes1d":
            raise GeometryError("graph hypersurfaces require a 1-D cone")
        x = self.grid.nodes
        edge_err = max(abs(u[0] - self.cone.profile(x[0])),
                       abs(u[-1] - self.cone.profile(x[-1])))
        if edge_err > self.farfield_tol:
            raise GeometryError(
                f"outermost nodes deviate from the cone profile by {edge_err:.3e} "
                f"> farfield_tol {self.farfield_tol:.3e}")

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.grid.nodes, self.u])

    def with_u(self, u: np.ndarray) -> "GraphHypersurface":
        return replace(self, u=np.asarray(u, dtype=float))

    def scaled(self, lam: float) -> "GraphHypersurface":
        """Dilate the surface by lam > 0 (cone is scale invariant)."""
        if lam <= 0:
            raise GeometryError("scale factor must be positive")
        g = Grid1D(self.grid.x_min * lam, self.grid.x_max * lam, self.grid.n_nodes)
        return GraphHypersurface(g, self.u * lam, self.cone, self.farfield_mode,
                                 self.farfield_tol * lam)


@dataclass(frozen=True)
class PolylineCurve:
    """Ordered planar vertices, closed or with two asymptotic ray directions."""

    vertices: np.ndarray
    ray_minus: np.ndarray | None = None
    ray_plus: np.ndarray | None = None
    closed: bool = False
    angle_tol: float = 0.2
    check_embedded: bool = True

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError("vertices must be an (n>=3, 2) array")
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite vertex")
        edges = np.diff(v, axis=0)
        lens = np.hypot(edges[:, 0], edges[:, 1])
        if self.closed:
            wrap = v[0] - v[-1]
            lens = np.append(lens, np.hypot(*wrap))
        if np.any(lens == 0.0):
            raise GeometryError("consecutive vertices coincide")
        if self.closed:
            if self.ray_minus is not None or self.ray_plus is not None:
                raise GeometryError("closed curves carry no asymptotic rays")
        else:
            if self.ray_minus is None or self.ray_plus is None:
                raise GeometryError("open curves need both ray directions")
            for name in ("ray_minus", "ray_plus"):
                r = np.asarray(getattr(self, name), dtype=float)
                nr = np.hypot(*r)
                if nr == 0:
                    raise GeometryError(f"{name} must be nonzero")
                object.__setattr__(self, name, r / nr)
            # first/last edge must align with the declared rays
            d_first = (v[0] - v[1]) / lens[0]
            d_last = (v[-1] - v[-2]) / lens[-1]
            for d, r, name in ((d_first, self.ray_minus, "ray_minus"),
                               (d_last, self.ray_plus, "ray_plus")):
                ang = np.arccos(np.clip(np.dot(d, r), -1.0, 1.0))
                if ang > self.angle_tol:
                    raise GeometryError(
                        f"end edge deviates from {name} by {ang:.3f} rad "
                        f"> angle_tol {self.angle_tol}")
        if self.check_embedded and polyline_self_intersects(v, self.closed):
            raise GeometryError("polyline self-intersects")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self.vertices

    def with_vertices(self, v: np.ndarray, check_embedded: bool | None = None) -> "PolylineCurve":
        chk = self.check_embedded if check_embedded is None else check_embedded
        return replace(self, vertices=np.asarray(v, dtype=float), check_embedded=chk)

    def edge_lengths(self) -> np.ndarray:
        v = self.vertices
        e = np.diff(v, axis=0)
        lens = np.hypot(e[:, 0], e[:, 1])
        if self.closed:
            lens = np.append(lens, np.hypot(*(v[0] - v[-1])))
        return lens

    def scaled(self, lam: float) -> "PolylineCurve":
        if lam <= 0:
            raise GeometryError("scale factor must be positive")
        return self.with_vertices(self.vertices * lam)


def polyline_self_intersects(vertices: np.ndarray, closed: bool) -> bool:
    """Exact segment-pair sweep for proper crossings between non-adjacent edges."""
    v = np.asarray(vertices, dtype=float)
    n = v.shape[0]
    segs = [(v[i], v[i + 1]) for i in range(n - 1)]
    if closed:
        segs.append((v[-1], v[0]))
    m = len(segs)
    a = np.array([s[0] for s in segs])
    b = np.array([s[1] for s in segs])

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) \
             - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    for i in range(m - 2):
        # skip the neighbouring edge (and the wrap pair for closed curves)
        j0 = i + 2
        j1 = m if not (closed and i == 0) else m - 1
        if j0 >= j1:
            continue
        p, q = a[i], b[i]
        r, s = a[j0:j1], b[j0:j1]
        # quick reject on bounding boxes
        lo = np.minimum(p, q)
        hi = np.maximum(p, q)
        box = ~((np.maximum(r, s) < lo).any(axis=1) | (np.minimum(r, s) > hi).any(axis=1))
        if not box.any():
            continue
        d1 = orient(p, q, r[box])
        d2 = orient(p, q, s[box])
        d3 = orient(r[box], s[box], p)
        d4 = orient(r[box], s[box], q)
        hit = ((d1 * d2) < 0) & ((d3 * d4) < 0)
        if hit.any():
            return True
    return False


# ---------------------------------------------------------------------------
# pointwise geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeometryFields:
    """Per-node metric/curvature report for a 1-D hypersurface.

    For curves all tensors are scalars: ``metric`` is g_11, ``second_form``
    is A_11, ``christoffel`` is Gamma^1_11.  ``interior`` marks nodes whose
    stencils are fully central; boundary values come from one-sided stencils
    and are diagnostic only.
    """

    points: np.ndarray          # (n, 2) ambient positions
    metric: np.ndarray          # g_11
    metric_inv: np.ndarray      # g^11
    christoffel: np.ndarray     # Gamma^1_11
    second_form: np.ndarray     # A_11
    mean_curvature: np.ndarray  # H = g^11 A_11
    a_norm: np.ndarray          # |A| = sqrt(g^11 g^11 A_11^2)
    normal: np.ndarray          # (n, 2) unit normals
    interior: np.ndarray        # bool mask
    length_element: np.ndarray  # sqrt(g) per node
    convention: str = "graph normal has positive last component; closed-curve normal outward"

    def __post_init__(self):
        if np.any(self.metric <= 0.0):
            raise GeometryError("metric is not positive definite")

    @property
    def a_sup(self) -> float:
        return float(np.max(np.abs(self.a_norm[self.interior])))


def _central_derivatives(u: np.ndarray, h: float):
    """Second-order u', u'' everywhere; one-sided second-order at the ends."""
    n = u.size
    du = np.empty(n)
    d2u = np.empty(n)
    du[1:-1] = (u[2:] - u[:-2]) / (2 * h)
    d2u[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
    du[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
    du[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
    d2u[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / h**2
    d2u[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / h**2
    return du, d2u


def graph_geometry(G: GraphHypersurface) -> GeometryFields:
    """All pointwise fields of a height-function graph.

    Metric g = 1 + u'^2, second form A = u''/sqrt(1+u'^2), Christoffel
    Gamma = u' u''/(1+u'^2), H = g^-1 A, all by central differences.
    """
    u = G.u
    h = G.grid.h
    du, d2u = _central_derivatives(u, h)
    g = 1.0 + du**2
    ginv = 1.0 / g
    w = np.sqrt(g)
    a = d2u / w
    h_mean = a * ginv
    a_norm = np.abs(a) * ginv
    gamma = du * d2u * ginv
    normal = np.column_stack([-du, np.ones_like(du)]) / w[:, None]
    interior = np.ones(u.size, dtype=bool)
    interior[[0, -1]] = False
    return GeometryFields(points=G.points, metric=g, metric_inv=ginv,
                          christoffel=gamma, second_form=a, mean_curvature=h_mean,
                          a_norm=a_norm, normal=normal, interior=interior,
                          length_element=w)


def menger_curvature_vectors(vertices: np.ndarray, closed: bool):
    """Per-vertex curvature vector kappa*N from the circumscribed circle.

    The vector points from the vertex toward the circumcenter of the triple
    (prev, this, next) with magnitude 1/circumradius; collinear triples give
    zero.  Returns (vectors, signed curvature w.r.t. traversal orientation,
    vertex indices carrying values).
    """
    v = np.asarray(vertices, dtype=float)
    n = v.shape[0]
    x, y = v[:, 0].copy(), v[:, 1].copy()
    if closed:
        xp, yp = np.roll(x, 1), np.roll(y, 1)
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        idx = np.arange(n)
    else:
        xp, yp = x[:-2], y[:-2]
        xn, yn = x[2:], y[2:]
        x, y = x[1:-1], y[1:-1]
        idx = np.arange(1, n - 1)
    # edges around the vertex and the chord
    e1x, e1y = x - xp, y - yp
    e2x, e2y = xn - x, yn - y
    cross = e1x * e2y - e1y * e2x
    l1sq = e1x * e1x + e1y * e1y
    l2sq = e2x * e2x + e2y * e2y
    cx_, cy_ = e1x + e2x, e1y + e2y
    lcsq = cx_ * cx_ + cy_ * cy_
    denom = np.sqrt(l1sq * l2sq * lcsq)
    good = np.abs(cross) > 1e-14 * np.maximum(denom, 1e-300)
    safe = np.where(good, denom, 1.0)
    kappa = np.where(good, 2.0 * cross / safe, 0.0)
    # circumcenter offset c - q from |c-p| = |c-q| = |c-next|
    det = -2.0 * np.where(good, cross, 1.0)
    ox = (l1sq * e2y + l2sq * e1y) / det
    oy = -(l1sq * e2x + l2sq * e1x) / det
    rad2 = ox * ox + oy * oy
    inv = np.where(good, 1.0 / np.where(rad2 > 0, rad2, 1.0), 0.0)
    vec = np.empty((idx.size, 2))
    vec[:, 0] = ox * inv
    vec[:, 1] = oy * inv
    return vec, kappa, idx


def polyline_geometry(C: PolylineCurve) -> GeometryFields:
    """Per-vertex curvature via the circumscribed-circle (Menger) formula.

    The returned fields use arclength parametrization, so metric == 1 and
    |A| == |H| == |kappa|.  Open-curve endpoints are excluded from the
    interior mask.
    """
    v = C.vertices
    lens = C.edge_lengths()
    if np.any(lens < 1e-14):
        raise GeometryError("duplicate vertices")
    vec, kappa, idx = menger_curvature_vectors(v, C.closed)
    n = C.n_vertices
    kap = np.zeros(n)
    kap[idx] = kappa
    normal = np.zeros((n, 2))
    # normal from the curvature vector where it is nonzero, else edge-orthogonal
    mag = np.hypot(vec[:, 0], vec[:, 1])
    nz = mag > 0
    normal[idx[nz]] = vec[nz] / mag[nz, None] * np.sign(kappa[nz])[:, None]
    tang = _vertex_tangents(v, C.closed)
    left = np.column_stack([-tang[:, 1], tang[:, 0]])
    flat = np.ones(n, dtype=bool)
    flat[idx[nz]] = False
    normal[flat] = left[flat]
    if C.closed and _signed_area(v) > 0:
        # outward convention: for counterclockwise curves the left normal
        # points inward, so flip
        normal = -normal
        kap = -kap
    interior = np.ones(n, dtype=bool)
    if not C.closed:
        interior[[0, -1]] = False
    # nodal length element: half the sum of adjacent edges
    ds = np.zeros(n)
    if C.closed:
        ds = 0.5 * (lens + np.roll(lens, 1))
    else:
        ds[1:-1] = 0.5 * (lens[:-1] + lens[1:])
        ds[0] = 0.5 * lens[0]
        ds[-1] = 0.5 * lens[-1]
    ones = np.ones(n)
    return GeometryFields(points=v, metric=ones, metric_inv=ones,
                          christoffel=np.zeros(n), second_form=kap,
                          mean_curvature=kap, a_norm=np.abs(kap), normal=normal,
                          interior=interior, length_element=ds)


def _vertex_tangents(v: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        d = np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)
    else:
        d = np.empty_like(v)
        d[1:-1] = v[2:] - v[:-2]
        d[0] = v[1] - v[0]
        d[-1] = v[-1] - v[-2]
    return d / np.hypot(d[:, 0], d[:, 1])[:, None]


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# ---------------------------------------------------------------------------
# normal-graph calculus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalGraphField:
    """Scalar deviation v sampled on the nodes of a base hypersurface.

    The graph X + v*N is well defined only in the smallness regime
    ||grad v|| + ||A v|| <= smallness; construction checks it.
    ``flags`` marks nodes where a deviation measurement failed (no unique
    normal-line intersection); flagged entries of v are NaN.
    """

    base: GraphHypersurface | PolylineCurve
    v: np.ndarray
    smallness: float = 0.1
    flags: np.ndarray | None = None
    validate: bool = True

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "v", v)
        n = base_node_count(self.base)
        if v.shape != (n,):
            raise GeometryError(f"v has shape {v.shape}, expected ({n},)")
        if self.flags is None:
            object.__setattr__(self, "flags", np.zeros(n, dtype=bool))
        if self.validate:
            r = self.regime_measure()
            if r > self.smallness * (1 + 1e-9):
                raise GeometryError(
                    f"normal graph regime violated: ||grad v|| + ||A v|| = {r:.3e} "
                    f"> smallness {self.smallness:.3e}")

    def regime_measure(self) -> float:
        """sup |grad_base v| + sup |A_base v| over unflagged nodes."""
        fields = base_geometry(self.base)
        ok = ~self.flags & np.isfinite(self.v)
        if not ok.any():
            return 0.0
        dv = surface_gradient(self.base, self.v)
        return float(np.nanmax(np.abs(dv[ok])) + np.nanmax(np.abs(fields.a_norm[ok] * self.v[ok])))


def base_node_count(base) -> int:
    if isinstance(base, GraphHypersurface):
        return base.grid.n_nodes
    return base.n_vertices


def base_geometry(base) -> GeometryFields:
    if isinstance(base, GraphHypersurface):
        return graph_geometry(base)
    return polyline_geometry(base)


def surface_gradient(base, v: np.ndarray) -> np.ndarray:
    """First derivative of a nodal scalar with respect to arclength."""
    v = np.asarray(v, dtype=float)
    if isinstance(base, GraphHypersurface):
        dv, _ = _central_derivatives(v, base.grid.h)
        g = 1.0 + _central_derivatives(base.u, base.grid.h)[0] ** 2
        return dv / np.sqrt(g)
    s = _cumulative_arclength(base)
    if base.closed:
        ext_s = np.concatenate([[s[0] - base.edge_lengths()[-1]], s,
                                [s[-1] + base.edge_lengths()[-1]]])
        ext_v = np.concatenate([[v[-1]], v, [v[0]]])
        return _nonuniform_d1(ext_s, ext_v)[1:-1]
    return _nonuniform_d1(s, v)


def _cumulative_arclength(C: PolylineCurve) -> np.ndarray:
    lens = C.edge_lengths()
    if C.closed:
        lens = lens[:-1]
    return np.concatenate([[0.0], np.cumsum(lens)])


def _nonuniform_d1(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Second-order first derivative on a non-uniform 1-D mesh."""
    n = s.size
    out = np.empty(n)
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    out[1:-1] = (v[2:] * hm**2 - v[:-2] * hp**2 + v[1:-1] * (hp**2 - hm**2)) \
        / (hm * hp * (hm + hp))
    out[0] = (v[1] - v[0]) / (s[1] - s[0])
    out[-1] = (v[-1] - v[-2]) / (s[-1] - s[-2])
    return out


def _nonuniform_d2(s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Three-point second derivative on a non-uniform 1-D mesh."""
    n = s.size
    out = np.zeros(n)
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    out[1:-1] = 2.0 * (v[:-2] * hp - v[1:-1] * (hm + hp) + v[2:] * hm) \
        / (hm * hp * (hm + hp))
    out[0] = out[1]
    out[-1] = out[-2]
    return out


def surface_laplacian(base, v: np.ndarray) -> np.ndarray:
    """Laplace-Beltrami of a nodal scalar (d^2/ds^2 in arclength for curves)."""
    if isinstance(base, GraphHypersurface):
        h = base.grid.h
        du, _ = _central_derivatives(base.u, h)
        dv, d2v = _central_derivatives(np.asarray(v, dtype=float), h)
        g = 1.0 + du**2
        # Delta v = g^-1 (v'' - Gamma v')
        _, d2u = _central_derivatives(base.u, h)
        gamma = du * d2u / g
        return (d2v - gamma * dv) / g
    s = _cumulative_arclength(base)
    v = np.asarray(v, dtype=float)
    if base.closed:
        lens = base.edge_lengths()
        ext_s = np.concatenate([[s[0] - lens[-1]], s, [s[-1] + lens[-1]]])
        ext_v = np.concatenate([[v[-1]], v, [v[0]]])
        return _nonuniform_d2(ext_s, ext_v)[1:-1]
    return _nonuniform_d2(s, v)


def normal_graph_embed(F: NormalGraphField):
    """Embedded point set X + v N over the base, ordering preserved.

    For polyline bases the result is checked for self-intersection and an
    error is raised rather than silently accepting a non-embedded image.
    """
    fields = base_geometry(F.base)
    pts = fields.points + F.v[:, None] * fields.normal
    if isinstance(F.base, PolylineCurve):
        if polyline_self_intersects(pts, F.base.closed):
            raise GeometryError("embedded normal graph self-intersects")
    return pts


def normal_graph_metric(F: NormalGraphField) -> np.ndarray:
    """Metric of the normal graph by the closed formula.

    g~ = g - 2 A v + A g^-1 A v^2 + (dv)^2 in the base parametrization
    (graphs: d/dx; polylines: d/ds).  Raises when the result is not positive,
    which signals v outside the graph regime.
    """
    fields = base_geometry(F.base)
    g = fields.metric
    a = fields.second_form
    if isinstance(F.base, GraphHypersurface):
        dv, _ = _central_derivatives(F.v, F.base.grid.h)
    else:
        dv = surface_gradient(F.base, F.v)  # arclength derivative, g == 1
    gt = g - 2.0 * a * F.v + a * fields.metric_inv * a * F.v**2 + dv**2
    if np.any(gt[~F.flags] <= 0.0):
        raise GeometryError("normal-graph metric not positive definite: "
                            "v outside the graph regime")
    return gt


def radon_nikodym_density(F: NormalGraphField, bound_constant: float = 1.0,
                          bound_slack: float = 1e-9) -> np.ndarray:
    """Area-element ratio sqrt(det g~)/sqrt(det g) of the normal graph.

    The declared constant C(n)=1 (curves) in the bound
    density <= 1 + C (|grad v| + |A v|) is asserted on every accepted input.
    """
    fields = base_geometry(F.base)
    r = F.regime_measure()
    if r > F.smallness:
        raise GeometryError(
            f"smallness bound violated: ||grad v|| + ||A v|| = {r:.3e} "
            f"> {F.smallness:.3e}")
    gt = normal_graph_metric(F)
    dens = np.sqrt(gt / fields.metric)
    dv = np.abs(surface_gradient(F.base, F.v))
    av = np.abs(fields.a_norm * F.v)
    ok = ~F.flags
    if np.any(dens[ok] > 1.0 + bound_constant * (dv[ok] + av[ok]) + bound_slack):
        raise GeometryError("density bound 1 + C(|grad v| + |Av|) violated")
    return dens


def closest_point_deviation(base, target, r_max: float | None = None,
                            smallness: float = 0.1) -> NormalGraphField:
    """Deviation field v with X + v N on the target, node by node.

    Each base node searches its normal line within |v| <= r_max for a unique
    intersection with the target; nodes with no or multiple intersections are
    flagged (v = NaN there) and the partial field is returned.
    """
    fields = base_geometry(base)
    pts = fields.points
    if r_max is None:
        # half the focal distance of the base, capped by its extent so the
        # bisection keeps full precision on flat bases
        a_sup = float(np.max(fields.a_norm)) if fields.a_norm.size else 0.0
        span = float(np.max(np.ptp(pts, axis=0)))
        r_max = min(0.5 / (a_sup + 1e-12), max(span, 1.0))
    nrm = fields.normal
    n = pts.shape[0]
    v = np.full(n, np.nan)
    flags = np.ones(n, dtype=bool)

    if isinstance(target, GraphHypersurface):
        interp = _cubic_interpolator(target)
        v, flags = _normal_lines_vs_graph(pts, nrm, interp, r_max)
    elif isinstance(target, PolylineCurve):
        tv = target.vertices
        segs_a = tv[:-1] if not target.closed else tv
        segs_b = tv[1:] if not target.closed else np.roll(tv, -1, axis=0)
        for i in range(n):
            vi = _normal_line_vs_polyline(pts[i], nrm[i], segs_a, segs_b, r_max)
            if vi is not None:
                v[i] = vi
                flags[i] = False
    else:
        raise GeometryError(f"unsupported target type {type(target).__name__}")
    vv = np.where(flags, 0.0, v)
    out = NormalGraphField(base=base, v=np.where(flags, np.nan, v),
                           smallness=smallness, flags=flags, validate=False)
    # enforce the regime on the measured part only
    measured = NormalGraphField(base=base, v=vv, smallness=smallness,
                                flags=flags, validate=False)
    if measured.regime_measure() > smallness:
        raise GeometryError("measured deviation leaves the normal-graph regime")
    return out


def _cubic_interpolator(G: GraphHypersurface):
    from scipy.interpolate import CubicSpline
    spline = CubicSpline(G.grid.nodes, G.u)
    m_minus, m_plus = G.cone.m_minus, G.cone.m_plus
    x0, x1 = G.grid.x_min, G.grid.x_max
    u0, u1 = G.u[0], G.u[-1]

    def f(x):
        x = np.asarray(x, dtype=float)
        inside = np.clip(x, x0, x1)
        y = spline(inside)
        y = np.where(x < x0, u0 + m_minus * (x - x0), y)
        y = np.where(x > x1, u1 + m_plus * (x - x1), y)
        return y

    return f


def _normal_lines_vs_graph(pts, nrm, interp, r_max, n_scan=17, n_bisect=52):
    """Roots of phi(v) = (p + v n)_y - u((p + v n)_x) for every node at once.

    Nodes whose scan shows no sign change or more than one are flagged.
    Vectorized bisection to machine precision replaces a per-node root call.
    """
    n = pts.shape[0]
    vs = np.linspace(-r_max, r_max, n_scan)
    qx = pts[:, 0:1] + vs[None, :] * nrm[:, 0:1]
    qy = pts[:, 1:2] + vs[None, :] * nrm[:, 1:2]
    phi = qy - interp(qx)
    prod = phi[:, :-1] * phi[:, 1:]
    changes = prod < 0
    n_changes = changes.sum(axis=1)
    zeros = phi == 0.0
    flags = ~((n_changes == 1) | ((n_changes == 0) & (zeros.sum(axis=1) == 1)))
    v = np.full(n, np.nan)
    exact_rows = (~flags) & (n_changes == 0)
    if exact_rows.any():
        v[exact_rows] = vs[np.argmax(zeros[exact_rows], axis=1)]
    rows = np.nonzero((~flags) & (n_changes == 1))[0]
    if rows.size:
        cells = np.argmax(changes[rows], axis=1)
        lo = np.full(rows.size, vs[0]) + cells * (vs[1] - vs[0])
        hi = lo + (vs[1] - vs[0])
        f_lo = phi[rows, cells]
        for _ in range(n_bisect):
            mid = 0.5 * (lo + hi)
            fx = pts[rows, 0] + mid * nrm[rows, 0]
            fy = pts[rows, 1] + mid * nrm[rows, 1]
            f_mid = fy - interp(fx)
            take_lo = np.sign(f_mid) == np.sign(f_lo)
            lo = np.where(take_lo, mid, lo)
            f_lo = np.where(take_lo, f_mid, f_lo)
            hi = np.where(take_lo, hi, mid)
        v[rows] = 0.5 * (lo + hi)
    return v, flags


def _normal_line_vs_polyline(p, nrm, a, b, r_max):
    """Intersections of {p + v n : |v| <= r_max} with target segments."""
    e = b - a
    denom = nrm[0] * e[:, 1] - nrm[1] * e[:, 0]
    ok = np.abs(denom) > 1e-300
    w = p - a
    tt = np.where(ok, (nrm[0] * w[:, 1] - nrm[1] * w[:, 0]) / np.where(ok, denom, 1.0), np.nan)
    vv = np.where(ok, (e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0]) / np.where(ok, denom, 1.0), np.nan)
    hit = ok & (tt >= 0.0) & (tt <= 1.0) & (np.abs(vv) <= r_max)
    vals = vv[hit]
    if vals.size == 0:
        return None
    vals = np.unique(np.round(vals, 12))
    if vals.size > 1:
        return None
    return float(vals[0])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def snapshot_to_text(geom, extra_meta: dict | None = None) -> str:
    """Columnar text form: one node per row (coords, height/vertex, H, |A|)."""
    fields = base_geometry(geom)
    meta = {"convention": fields.convention}
    if isinstance(geom, GraphHypersurface):
        meta.update({"type": "graph", "x_min": geom.grid.x_min,
                     "x_max": geom.grid.x_max, "n_nodes": geom.grid.n_nodes,
                     "cone": geom.cone.to_dict(), "farfield_mode": geom.farfield_mode,
                     "farfield_tol": geom.farfield_tol})
        cols = np.column_stack([geom.x, geom.u, fields.mean_curvature, fields.a_norm])
        header = "x u H absA"
    else:
        meta.update({"type": "polyline", "closed": geom.closed,
                     "n_vertices": geom.n_vertices})
        if not geom.closed:
            meta["ray_minus"] = geom.ray_minus.tolist()
            meta["ray_plus"] = geom.ray_plus.tolist()
        cols = np.column_stack([geom.vertices, fields.mean_curvature, fields.a_norm])
        header = "x y H absA"
    if extra_meta:
        meta.update(extra_meta)
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    buf.write("# " + header + "\n")
    for row in cols:
        buf.write(" ".join(repr(float(c)) for c in row) + "\n")
    return buf.getvalue()


def snapshot_from_text(text: str):
    """Inverse of snapshot_to_text (geometry only; derived columns ignored)."""
    lines = text.splitlines()
    meta = json.loads(lines[0].lstrip("# "))
    data = np.array([[float(tok) for tok in ln.split()]
                     for ln in lines[2:] if ln.strip()])
    if meta["type"] == "graph":
        grid = Grid1D(meta["x_min"], meta["x_max"], meta["n_nodes"])
        cone = RegularCone.from_dict(meta["cone"])
        return GraphHypersurface(grid, data[:, 1], cone, meta["farfield_mode"],
                                 meta["farfield_tol"])
    if meta["closed"]:
        return PolylineCurve(data[:, :2], closed=True)
    return PolylineCurve(data[:, :2], ray_minus=np.array(meta["ray_minus"]),
                         ray_plus=np.array(meta["ray_plus"]))
