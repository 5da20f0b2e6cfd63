"""Deterministic structured meshes for the supported product domains.

Element types: 1D segments, axis-aligned tensor quads/hexes, triangles (fan
triangulation of convex polygons plus uniform refinement), and tetrahedra
(extrusion of triangle meshes with a sorted-index prism split).  Boundary
facets are extracted by face counting and tagged through a caller-supplied
classifier; everything is constructed in fixed iteration orders, so identical
inputs give bit-identical meshes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import BaseSpec, GeometryError


class MeshError(ValueError):
    pass


# local faces per element type, in the node numbering used by this module;
# boxes use tensor (lexicographic) local order: node = ix + 2*iy + 4*iz
_LOCAL_FACES = {
    "segment": ((0,), (1,)),
    "triangle": ((0, 1), (1, 2), (2, 0)),
    "quad": ((0, 1), (1, 3), (3, 2), (2, 0)),
    "tet": ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)),
    "hex": (
        (0, 2, 4, 6),
        (1, 3, 5, 7),
        (0, 1, 4, 5),
        (2, 3, 6, 7),
        (0, 1, 2, 3),
        (4, 5, 6, 7),
    ),
}

_NODES_PER_ELEMENT = {"segment": 2, "triangle": 3, "quad": 4, "tet": 4, "hex": 8}


@dataclass(frozen=True)
class BoundaryFacet:
    nodes: tuple[int, ...]
    centroid: tuple[float, ...]
    normal: tuple[float, ...]
    tag: str | None = None
    face_id: str = ""


@dataclass(frozen=True)
class Mesh:
    """Immutable simplicial or tensor mesh.

    Attributes
    ----------
    dim : int
        Ambient dimension (1, 2, or 3).
    element_type : str
        One of ``segment``, ``triangle``, ``quad``, ``tet``, ``hex``.
    nodes : ndarray (N, dim)
    elements : ndarray (E, nodes_per_element)
    boundary_facets : tuple of BoundaryFacet
    h_max : float
        Largest element diameter.
    """

    dim: int
    element_type: str
    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: tuple[BoundaryFacet, ...]
    h_max: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def tagged_nodes(self, tag: str) -> np.ndarray:
        """Sorted unique node indices belonging to facets with the given tag."""
        idx = set()
        for f in self.boundary_facets:
            if f.tag == tag:
                idx.update(f.nodes)
        return np.array(sorted(idx), dtype=np.intp)


def _finish(dim, element_type, nodes, elements, classifier=None) -> Mesh:
    nodes = np.ascontiguousarray(nodes, dtype=float)
    elements = np.ascontiguousarray(elements, dtype=np.intp)
    if elements.size and (elements.min() < 0 or elements.max() >= nodes.shape[0]):
        raise MeshError("element node index out of range")
    _check_positive_measure(dim, element_type, nodes, elements)
    facets = _extract_boundary_facets(dim, element_type, nodes, elements)
    if classifier is not None:
        facets = tuple(_classify(f, classifier) for f in facets)
    used = np.zeros(nodes.shape[0], dtype=bool)
    used[elements.ravel()] = True
    if not used.all():
        raise MeshError("mesh has orphan nodes")
    return Mesh(
        dim=dim,
        element_type=element_type,
        nodes=nodes,
        elements=elements,
        boundary_facets=facets,
        h_max=_h_max(nodes, elements),
    )


def _classify(f: BoundaryFacet, classifier) -> BoundaryFacet:
    out = classifier(np.array(f.centroid), np.array(f.normal))
    if isinstance(out, tuple):
        tag, face_id = out
        return replace(f, tag=tag, face_id=face_id)
    return replace(f, tag=out)


def tag_boundary(mesh: Mesh, classifier) -> Mesh:
    """New mesh with boundary tags assigned by classifier(centroid, normal).

    The classifier returns a tag string or a (tag, face_id) pair.
    """
    facets = tuple(_classify(f, classifier) for f in mesh.boundary_facets)
    return replace(mesh, boundary_facets=facets)


def _h_max(nodes: np.ndarray, elements: np.ndarray) -> float:
    if elements.size == 0:
        return 0.0
    coords = nodes[elements]  # (E, nv, dim)
    d2 = ((coords[:, :, None, :] - coords[:, None, :, :]) ** 2).sum(axis=3)
    return float(np.sqrt(d2.max()))


def _check_positive_measure(dim, element_type, nodes, elements):
    if elements.size == 0:
        raise MeshError("mesh has no elements")
    coords = nodes[elements]
    if element_type == "segment":
        if not (coords[:, 1, 0] > coords[:, 0, 0]).all():
            raise MeshError("segment with nonpositive length")
    elif element_type == "triangle":
        e1 = coords[:, 1] - coords[:, 0]
        e2 = coords[:, 2] - coords[:, 0]
        if not (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] > 0).all():
            raise MeshError("triangle with nonpositive area (orientation)")
    elif element_type == "tet":
        e = coords[:, 1:] - coords[:, :1]
        if not (np.linalg.det(e) > 0).all():
            raise MeshError("tet with nonpositive volume (orientation)")
    elif element_type in ("quad", "hex"):
        _check_tensor_cells(dim, coords)
    else:
        raise MeshError(f"unknown element type {element_type!r}")


def _check_tensor_cells(dim, coords):
    """Boxes must be axis-aligned with the tensor local numbering."""
    lo = coords[:, 0, :]
    h = coords[:, _NODES_PER_ELEMENT["quad" if dim == 2 else "hex"] - 1, :] - lo
    if not (h > 0).all():
        raise MeshError("box element with nonpositive extent")
    nv = coords.shape[1]
    for local in range(nv):
        bits = [(local >> k) & 1 for k in range(dim)]
        expect = lo + np.array(bits) * h
        if not np.allclose(coords[:, local, :], expect, rtol=0.0, atol=1e-9):
            raise MeshError("box element is not an axis-aligned tensor cell")


def _extract_boundary_facets(dim, element_type, nodes, elements):
    local_faces = _LOCAL_FACES[element_type]
    nf = len(local_faces)
    faces = elements[:, np.array(local_faces)].reshape(-1, len(local_faces[0]))
    keys = np.sort(faces, axis=1)
    order = np.lexsort(keys.T[::-1])
    skeys = keys[order]
    new_run = np.ones(skeys.shape[0], dtype=bool)
    new_run[1:] = (skeys[1:] != skeys[:-1]).any(axis=1)
    run_id = np.cumsum(new_run) - 1
    counts = np.bincount(run_id)
    if (counts > 2).any():
        raise MeshError("facet shared by more than two elements (non-conforming)")
    boundary_rows = np.sort(order[counts[run_id] == 1])
    facets = []
    for idx in boundary_rows:
        ei, li = divmod(int(idx), nf)
        facets.append(_make_facet(dim, nodes, elements[ei], local_faces[li]))
    return tuple(facets)


def _make_facet(dim, nodes, elem, local_face) -> BoundaryFacet:
    idx = tuple(int(elem[j]) for j in local_face)
    pts = nodes[list(idx)]
    centroid = pts.mean(axis=0)
    elem_centroid = nodes[elem].mean(axis=0)
    if dim == 1:
        normal = np.array([1.0])
    elif dim == 2:
        t = pts[1] - pts[0]
        normal = np.array([t[1], -t[0]])
    else:
        # triangle faces and tensor quad faces both span pts[1]-pts[0], pts[2]-pts[0]
        normal = np.cross(pts[1] - pts[0], pts[2] - pts[0])
    nrm = np.linalg.norm(normal)
    if nrm < 1e-300:
        raise MeshError("degenerate boundary facet")
    normal = normal / nrm
    if normal @ (centroid - elem_centroid) < 0:
        normal = -normal
    return BoundaryFacet(
        nodes=idx, centroid=tuple(centroid.tolist()), normal=tuple(normal.tolist())
    )


def facet_measure(mesh: Mesh, facet: BoundaryFacet) -> float:
    """Length (2D) or area (3D) of a boundary facet; 1 for endpoints in 1D."""
    pts = mesh.nodes[list(facet.nodes)]
    if mesh.dim == 1:
        return 1.0
    if mesh.dim == 2:
        return float(np.linalg.norm(pts[1] - pts[0]))
    area = np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
    # triangle: half the parallelogram; tensor quad face: the full rectangle
    return float(0.5 * area) if len(facet.nodes) == 3 else float(area)


# ---------------------------------------------------------------------------
# builders


def mesh_interval(a: float, b: float, n: int, classifier=None) -> Mesh:
    """n equal segments on (a, b)."""
    if n < 1:
        raise MeshError(f"need at least one subdivision, got n={n}")
    if not a < b:
        raise MeshError(f"empty interval ({a}, {b})")
    nodes = np.linspace(a, b, n + 1)[:, None]
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return _finish(1, "segment", nodes, elements, classifier)


def mesh_box2(
    ax: float,
    bx: float,
    ay: float,
    by: float,
    nx: int,
    ny: int,
    element: str = "quad",
    classifier=None,
) -> Mesh:
    """Structured mesh of (ax,bx) x (ay,by): tensor quads or their triangle split."""
    if nx < 1 or ny < 1:
        raise MeshError("subdivision counts must be positive")
    if not (ax < bx and ay < by):
        raise MeshError("degenerate box")
    xs = np.linspace(ax, bx, nx + 1)
    ys = np.linspace(ay, by, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])  # iy*(nx+1) + ix

    def nid(ix, iy):
        return iy * (nx + 1) + ix

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ix, iy = ix.ravel(), iy.ravel()
    n00 = nid(ix, iy)
    n10 = nid(ix + 1, iy)
    n01 = nid(ix, iy + 1)
    n11 = nid(ix + 1, iy + 1)
    if element == "quad":
        elements = np.column_stack([n00, n10, n01, n11])
        return _finish(2, "quad", nodes, elements, classifier)
    if element == "triangle":
        tris = np.empty((2 * nx * ny, 3), dtype=np.intp)
        tris[0::2] = np.column_stack([n00, n10, n11])
        tris[1::2] = np.column_stack([n00, n11, n01])
        return _finish(2, "triangle", nodes, tris, classifier)
    raise MeshError(f"unknown 2D element {element!r}")


def mesh_box3(
    bounds: list[tuple[float, float]],
    counts: list[int],
    classifier=None,
) -> Mesh:
    """Structured hex mesh of a 3D box; bounds and counts per axis."""
    if len(bounds) != 3 or len(counts) != 3:
        raise MeshError("mesh_box3 needs 3 bounds and 3 counts")
    if any(n < 1 for n in counts):
        raise MeshError("subdivision counts must be positive")
    for a, b in bounds:
        if not a < b:
            raise MeshError("degenerate box")
    axes = [np.linspace(a, b, n + 1) for (a, b), n in zip(bounds, counts)]
    nx, ny, nz = counts
    Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(ix, iy, iz):
        return (iz * (ny + 1) + iy) * (nx + 1) + ix

    ix, iy, iz = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    ix, iy, iz = ix.ravel(order="F"), iy.ravel(order="F"), iz.ravel(order="F")
    corners = [nid(ix + dx, iy + dy, iz + dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)]
    elements = np.column_stack(corners)
    return _finish(3, "hex", nodes, elements, classifier)


def mesh_polygon(base: BaseSpec, refine_level: int, classifier=None) -> Mesh:
    """Fan triangulation of a convex polygon from the origin, uniformly refined.

    Each refinement round splits every triangle into four by edge midpoints,
    halving h_max exactly.
    """
    if base.kind != "polygon":
        raise MeshError("mesh_polygon needs a polygon base")
    if refine_level < 0:
        raise MeshError("refine_level must be nonnegative")
    verts = base.vertices
    nv = verts.shape[0]
    nodes = np.vstack([np.zeros((1, 2)), verts])
    tris = np.array(
        [[0, 1 + i, 1 + (i + 1) % nv] for i in range(nv)], dtype=np.intp
    )
    for _ in range(refine_level):
        nodes, tris = _refine_triangles(nodes, tris)
    return _finish(2, "triangle", nodes, tris, classifier)


def _refine_triangles(nodes: np.ndarray, tris: np.ndarray):
    node_list = [nodes]
    next_id = nodes.shape[0]
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        nonlocal next_id
        key = (a, b) if a < b else (b, a)
        idx = midpoint.get(key)
        if idx is None:
            idx = next_id
            midpoint[key] = idx
            next_id += 1
            node_list.append(0.5 * (nodes[a] + nodes[b]))
        return idx

    out = np.empty((4 * tris.shape[0], 3), dtype=np.intp)
    for t in range(tris.shape[0]):
        v0, v1, v2 = (int(v) for v in tris[t])
        m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        out[4 * t + 0] = (v0, m01, m20)
        out[4 * t + 1] = (v1, m12, m01)
        out[4 * t + 2] = (v2, m20, m12)
        out[4 * t + 3] = (m01, m12, m20)
    new_nodes = np.vstack([nodes, np.array(node_list[1:])])
    return new_nodes, out


def extrude(base_mesh: Mesh, interval: tuple[float, float], n: int, classifier=None) -> Mesh:
    """Extrude a triangle mesh along a third axis into tetrahedra.

    Every prism is cut into three tets using diagonals chosen by sorted global
    indices, which makes the cut agree across neighboring prisms (conforming).
    """
    if base_mesh.element_type != "triangle":
        raise MeshError("extrude needs a triangle base mesh")
    if n < 1:
        raise MeshError("need at least one layer")
    a, b = float(interval[0]), float(interval[1])
    if not a < b:
        raise MeshError(f"empty extrusion interval ({a}, {b})")
    zs = np.linspace(a, b, n + 1)
    nb = base_mesh.n_nodes
    nodes = np.empty(((n + 1) * nb, 3))
    for layer, z in enumerate(zs):
        nodes[layer * nb : (layer + 1) * nb, :2] = base_mesh.nodes
        nodes[layer * nb : (layer + 1) * nb, 2] = z
    tets = np.empty((3 * n * base_mesh.n_elements, 4), dtype=np.intp)
    k = 0
    base_sorted = np.sort(base_mesh.elements, axis=1)
    for layer in range(n):
        off0 = layer * nb
        off1 = (layer + 1) * nb
        for t in range(base_sorted.shape[0]):
            g0, g1, g2 = (int(v) for v in base_sorted[t])
            b0, b1, b2 = off0 + g0, off0 + g1, off0 + g2
            t0, t1, t2 = off1 + g0, off1 + g1, off1 + g2
            tets[k + 0] = (b0, b1, b2, t2)
            tets[k + 1] = (b0, b1, t2, t1)
            tets[k + 2] = (b0, t1, t2, t0)
            k += 3
    # the sort can mirror the base triangle; flip tets to positive volume
    coords = nodes[tets]
    dets = np.linalg.det(coords[:, 1:] - coords[:, :1])
    flip = dets < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    return _finish(3, "tet", nodes, tets, classifier)


# ---------------------------------------------------------------------------
# text dump


def dump_text(mesh: Mesh, stream) -> None:
    """Plain-text mesh dump: nodes, elements, tagged facets, one record per line."""
    stream.write(f"dim {mesh.dim} element_type {mesh.element_type}\n")
    stream.write(f"nodes {mesh.n_nodes}\n")
    for row in mesh.nodes:
        stream.write(" ".join(f"{x:.17g}" for x in row) + "\n")
    stream.write(f"elements {mesh.n_elements}\n")
    for row in mesh.elements:
        stream.write(" ".join(str(int(v)) for v in row) + "\n")
    stream.write(f"facets {len(mesh.boundary_facets)}\n")
    for f in mesh.boundary_facets:
        tag = f.tag if f.tag is not None else "untagged"
        face = f.face_id if f.face_id else "-"
        stream.write(f"{tag} {face} " + " ".join(str(v) for v in f.nodes) + "\n")
