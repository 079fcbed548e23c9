"""Numerical laboratory for mean curvature flow of surfaces with conical ends."""

from .geometry import (
    GeometryError,
    Grid1D,
    RegularCone,
    GraphHypersurface,
    PolylineCurve,
    GeometryFields,
    NormalGraphField,
    graph_geometry,
    polyline_geometry,
    normal_graph_embed,
    normal_graph_metric,
    radon_nikodym_density,
    closest_point_deviation,
)

__all__ = [
    "GeometryError",
    "Grid1D",
    "RegularCone",
    "GraphHypersurface",
    "PolylineCurve",
    "GeometryFields",
    "NormalGraphField",
    "graph_geometry",
    "polyline_geometry",
    "normal_graph_embed",
    "normal_graph_metric",
    "radon_nikodym_density",
    "closest_point_deviation",
]

__version__ = "0.1.0"
