"""Continuous geometry: base domains, cross-sections, scaled cylinders, directions.

The cylinder is the product of a scaled base (an interval or a convex polygon
containing the origin) with a box cross-section.  Its boundary splits into the
lateral part (boundary of the scaled base, crossed with the cross-section),
which carries natural boundary conditions, and the remaining part (base crossed
with the cross-section boundary), which carries homogeneous Dirichlet
conditions.  Everything here is immutable and purely geometric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

# Relative tolerance for "is this point on that plane" questions; scaled by the
# domain diameter wherever it is used.
BOUNDARY_RTOL = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BaseSpec:
    """The base domain of the cylinder: an interval (1D) or a convex polygon (2D).

    Parameters
    ----------
    kind : str
        Either ``"interval"`` or ``"polygon"``.
    bounds : tuple of float, optional
        ``(a, b)`` with ``a < 0 < b`` for intervals.
    vertices : ndarray, optional
        ``(n, 2)`` array of polygon vertices, counter-clockwise, strictly
        convex, origin strictly inside.
    """

    kind: str
    bounds: tuple[float, float] | None = None
    vertices: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind == "interval":
            if self.bounds is None:
                raise GeometryError("interval base needs bounds (a, b)")
            a, b = self.bounds
            if not a < b:
                raise GeometryError(f"empty interval ({a}, {b})")
            if not (a < 0.0 < b):
                raise GeometryError("base interval must contain the origin strictly")
        elif self.kind == "polygon":
            if self.vertices is None:
                raise GeometryError("polygon base needs vertices")
            verts = np.asarray(self.vertices, dtype=float)
            if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
                raise GeometryError("polygon needs an (n>=3, 2) vertex array")
            object.__setattr__(self, "vertices", verts)
            _check_convex_ccw(verts)
            if not _origin_strictly_inside(verts):
                raise GeometryError("polygon base must contain the origin strictly")
        else:
            raise GeometryError(f"unknown base kind {self.kind!r}")

    @staticmethod
    def interval(a: float, b: float) -> "BaseSpec":
        return BaseSpec(kind="interval", bounds=(float(a), float(b)))

    @staticmethod
    def polygon(vertices) -> "BaseSpec":
        return BaseSpec(kind="polygon", vertices=np.asarray(vertices, dtype=float))

    @staticmethod
    def regular_polygon(n_sides: int = 24, circumradius: float = 1.0) -> "BaseSpec":
        """Regular n-gon with one vertex on the positive x-axis."""
        if n_sides < 3:
            raise GeometryError("need at least 3 sides")
        ang = 2.0 * math.pi * np.arange(n_sides) / n_sides
        verts = circumradius * np.column_stack([np.cos(ang), np.sin(ang)])
        return BaseSpec.polygon(verts)

    @property
    def m(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def diameter(self) -> float:
        if self.kind == "interval":
            return self.bounds[1] - self.bounds[0]
        v = self.vertices
        d2 = ((v[:, None, :] - v[None, :, :]) ** 2).sum(axis=2)
        return float(np.sqrt(d2.max()))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "interval":
            return np.array([self.bounds[0]]), np.array([self.bounds[1]])
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edge_constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """Half-plane form of the polygon: normals (n,2) and offsets (n,) with
        the interior characterized by normals @ x < offsets (all rows)."""
        if self.kind != "polygon":
            raise GeometryError("edge_constraints only defined for polygons")
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        edges = nxt - v
        normals = np.column_stack([edges[:, 1], -edges[:, 0]])
        lengths = np.linalg.norm(normals, axis=1)
        normals = normals / lengths[:, None]
        offsets = np.einsum("ij,ij->i", normals, v)
        return normals, offsets

    def is_axis_aligned_rectangle(self, tol: float = 1e-12) -> bool:
        if self.kind != "polygon" or self.vertices.shape[0] != 4:
            return False
        normals, _ = self.edge_constraints()
        ok = np.isclose(np.abs(normals), 0.0, atol=tol) | np.isclose(
            np.abs(normals), 1.0, atol=tol
        )
        return bool(ok.all())


def _check_convex_ccw(verts: np.ndarray) -> None:
    n = verts.shape[0]
    nxt = np.roll(verts, -1, axis=0)
    edges = nxt - verts
    lengths = np.linalg.norm(edges, axis=1)
    scale = lengths.max()
    if (lengths < 1e-12 * max(scale, 1.0)).any():
        raise GeometryError("degenerate polygon edge (repeated vertex)")
    cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(
        edges, -1, axis=0
    )[:, 0]
    if (cross <= 1e-12 * scale * scale).any():
        raise GeometryError("polygon must be strictly convex and counter-clockwise")
    if n != len(np.unique(verts.round(decimals=12), axis=0)):
        raise GeometryError("polygon has repeated vertices")


def _origin_strictly_inside(verts: np.ndarray) -> bool:
    nxt = np.roll(verts, -1, axis=0)
    edges = nxt - verts
    # cross(edge, origin - vertex) > 0 for every edge of a CCW polygon
    cross = edges[:, 0] * (-verts[:, 1]) - edges[:, 1] * (-verts[:, 0])
    return bool((cross > 0.0).all())


@dataclass(frozen=True)
class CrossSectionSpec:
    """Box cross-section: a product of p nonempty intervals."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivals = tuple((float(a), float(b)) for a, b in self.intervals)
        if len(ivals) < 1:
            raise GeometryError("cross-section needs at least one interval")
        for a, b in ivals:
            if not a < b:
                raise GeometryError(f"empty cross-section interval ({a}, {b})")
        object.__setattr__(self, "intervals", ivals)

    @property
    def p(self) -> int:
        return len(self.intervals)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in self.intervals)

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def diameter(self) -> float:
        return float(math.sqrt(sum(s * s for s in self.lengths)))


@dataclass(frozen=True)
class CylinderSpec:
    """The product domain: (scale * base) x cross-section."""

    base: BaseSpec
    cross: CrossSectionSpec
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise GeometryError("scale must be positive")
        if self.dim > 3:
            raise GeometryError(
                f"dimension m+p = {self.dim} > 3 is not meshable here"
            )

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def p(self) -> int:
        return self.cross.p

    @property
    def dim(self) -> int:
        return self.m + self.p

    @property
    def diameter(self) -> float:
        return float(
            math.hypot(self.scale * self.base.diameter, self.cross.diameter)
        )


@dataclass(frozen=True)
class Direction:
    """Unit vector in the base coordinates."""

    components: tuple[float, ...]

    def __post_init__(self):
        comps = tuple(float(c) for c in self.components)
        if len(comps) not in (1, 2):
            raise GeometryError("directions live in 1 or 2 base dimensions")
        if abs(math.hypot(*comps) - 1.0) > 1e-12:
            raise GeometryError("direction must be a unit vector (within 1e-12)")
        object.__setattr__(self, "components", comps)

    @staticmethod
    def from_angle(theta: float) -> "Direction":
        return Direction((math.cos(theta), math.sin(theta)))

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.components, dtype=float)

    @property
    def angle(self) -> float:
        if self.m == 1:
            return 0.0 if self.components[0] > 0 else math.pi
        return math.atan2(self.components[1], self.components[0])


def classify_boundary_facet(cyl: CylinderSpec, centroid, normal) -> str:
    """Tag one boundary facet of the cylinder as Dirichlet or Neumann.

    Neumann facets are the lateral ones: their normal has (numerically) zero
    cross-section components and their base coordinates sit on the boundary of
    the scaled base.  Dirichlet facets have their cross-section coordinate on
    the boundary of the cross-section box.  Ties (corner facets passing both
    tests cannot occur for flat facets, but roundoff ties resolve conservatively)
    go to Dirichlet.
    """
    centroid = np.asarray(centroid, dtype=float)
    normal = np.asarray(normal, dtype=float)
    m, p = cyl.m, cyl.p
    if centroid.shape != (m + p,) or normal.shape != (m + p,):
        raise GeometryError("centroid/normal dimension mismatch")
    tol = BOUNDARY_RTOL * cyl.diameter
    xi = centroid[m:]
    on_cross_boundary = False
    for (a, b), x in zip(cyl.cross.intervals, xi):
        if abs(x - a) <= tol or abs(x - b) <= tol:
            on_cross_boundary = True
    if on_cross_boundary:
        return DIRICHLET
    if np.abs(normal[m:]).max(initial=0.0) <= BOUNDARY_RTOL and _on_scaled_base_boundary(
        cyl.base, cyl.scale, centroid[:m], tol
    ):
        return NEUMANN
    raise GeometryError(f"interior facet at {centroid.tolist()}")


def _on_scaled_base_boundary(base: BaseSpec, r: float, X: np.ndarray, tol: float) -> bool:
    if base.kind == "interval":
        a, b = base.bounds
        return abs(X[0] - r * a) <= tol or abs(X[0] - r * b) <= tol
    normals, offsets = base.edge_constraints()
    vals = normals @ X - r * offsets
    if (vals > tol).any():
        return False
    return bool((np.abs(vals) <= tol).any())


def point_in_scaled_base(base: BaseSpec, r: float, X) -> bool:
    """Strict-interior membership test for X in the base scaled by r.

    Boundary points count as outside (a measure-zero convention; the only
    consumer integrates element masses by barycenter membership, where the
    choice is irrelevant).
    """
    if not r > 0:
        raise GeometryError("scale r must be positive")
    X = np.atleast_1d(np.asarray(X, dtype=float))
    if base.kind == "interval":
        a, b = base.bounds
        return bool(r * a < X[0] < r * b)
    normals, offsets = base.edge_constraints()
    return bool((normals @ X[:2] < r * offsets).all())


def outward_normals(base: BaseSpec) -> list[tuple[Direction, str]]:
    """Unit outward normals of the base boundary, one per face, with face ids.

    Intervals give ``[(+1, "right"), (-1, "left")]``; polygons give one normal
    per edge with ids ``"edge0"``, ``"edge1"``, ... in vertex order.
    """
    if base.kind == "interval":
        return [(Direction((1.0,)), "right"), (Direction((-1.0,)), "left")]
    normals, _ = base.edge_constraints()
    out = []
    for i, nrm in enumerate(normals):
        n = nrm / np.linalg.norm(nrm)
        out.append((Direction((float(n[0]), float(n[1]))), f"edge{i}"))
    return out


def base_face(base: BaseSpec, face_id: str) -> tuple[Direction, np.ndarray, float]:
    """Look up one face: its outward normal, centroid, and length.

    For intervals the "face" is an endpoint (length 0).
    """
    if base.kind == "interval":
        a, b = base.bounds
        if face_id == "right":
            return Direction((1.0,)), np.array([b]), 0.0
        if face_id == "left":
            return Direction((-1.0,)), np.array([a]), 0.0
        raise GeometryError(f"unknown face {face_id!r} for interval base")
    for (direction, fid), v0, v1 in zip(
        outward_normals(base), base.vertices, np.roll(base.vertices, -1, axis=0)
    ):
        if fid == face_id:
            return direction, 0.5 * (v0 + v1), float(np.linalg.norm(v1 - v0))
    raise GeometryError(f"unknown face {face_id!r}")


def base_measure(base: BaseSpec) -> float:
    """Length (interval) or area (polygon) of the unscaled base."""
    if base.kind == "interval":
        a, b = base.bounds
        return b - a
    v = base.vertices
    nxt = np.roll(v, -1, axis=0)
    return float(0.5 * np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]))


def base_boundary_measure(base: BaseSpec) -> float:
    """Number of endpoints (interval) or perimeter (polygon)."""
    if base.kind == "interval":
        return 2.0
    v = base.vertices
    nxt = np.roll(v, -1, axis=0)
    return float(np.linalg.norm(nxt - v, axis=1).sum())
