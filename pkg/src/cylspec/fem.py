"""P1/Q1 finite-element assembly of stiffness and mass forms.

One assembler serves every problem in the package: the coefficient is
evaluated at element barycenters (exact for constant-per-element entries,
second-order consistent otherwise), element matrices are built in closed form
(simplex gradients for P1, per-direction tensor factors for Q1 boxes), and
Dirichlet nodes are eliminated so the resulting pencil K x = lambda M x is
symmetric positive definite on the free degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .coefficient import CoefficientField
from .geometry import DIRICHLET
from .mesh import Mesh


class AssemblyError(ValueError):
    pass


class SparseSym:
    """Symmetric sparse matrix stored as the lower triangle in CSR form.

    The full matrix is materialized lazily (lower + strict upper transpose)
    for matrix-vector products; construction symmetrizes exactly, so
    ``A == A.T`` holds bitwise.
    """

    def __init__(self, n: int, indptr, indices, data):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        self._full = None

    @classmethod
    def from_coo(cls, n: int, rows, cols, vals) -> "SparseSym":
        full = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        lower = sp.tril(full, format="csr")
        lower.sort_indices()
        return cls(n, lower.indptr, lower.indices, lower.data)

    @classmethod
    def from_dense(cls, A) -> "SparseSym":
        A = np.asarray(A, dtype=float)
        rows, cols = np.nonzero(A)
        return cls.from_coo(A.shape[0], rows, cols, A[rows, cols])

    @property
    def lower_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n, self.n)
        )

    @property
    def full_csr(self) -> sp.csr_matrix:
        if self._full is None:
            lower = self.lower_csr
            self._full = (lower + sp.triu(lower.T, k=1)).tocsr()
        return self._full

    @property
    def nnz_lower(self) -> int:
        return int(self.data.size)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.full_csr @ x

    def to_dense(self) -> np.ndarray:
        return self.full_csr.toarray()

    def dump_coo(self, stream) -> None:
        """Lower-triangle coordinate dump: one "row col value" line per entry."""
        for i in range(self.n):
            for k in range(self.indptr[i], self.indptr[i + 1]):
                stream.write(f"{i} {self.indices[k]} {self.data[k]:.17g}\n")

    def __repr__(self):
        return f"SparseSym(n={self.n}, nnz_lower={self.nnz_lower})"


@dataclass
class DiscreteOperatorPair:
    """Stiffness/mass pencil on the free (non-Dirichlet) degrees of freedom."""

    K: SparseSym
    M: SparseSym
    free_dofs: np.ndarray  # node index -> reduced index, -1 for Dirichlet nodes
    mesh_ref: str
    c_lower: float = field(default=0.0)  # sampled ellipticity bound of the coefficient

    @property
    def n(self) -> int:
        return self.K.n

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.free_dofs >= 0)

    def extend(self, x: np.ndarray) -> np.ndarray:
        """Free-dof vector -> full nodal vector with zeros on Dirichlet nodes."""
        full = np.zeros(self.free_dofs.shape[0])
        full[self.free_nodes] = x
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full, dtype=float)[self.free_nodes]


def free_node_mask(mesh: Mesh) -> np.ndarray:
    """True for nodes that carry unknowns (not on any Dirichlet facet)."""
    mask = np.ones(mesh.n_nodes, dtype=bool)
    dir_nodes = mesh.tagged_nodes(DIRICHLET)
    mask[dir_nodes] = False
    return mask


# ---------------------------------------------------------------------------
# local element matrices

_FACT = {1: 1.0, 2: 2.0, 3: 6.0}


def _simplex_local(coords: np.ndarray, aval: np.ndarray):
    """Closed-form P1 matrices on simplices.

    coords: (E, d+1, d); aval: (E, d, d) coefficient at barycenters.
    Returns (stiff, mass, measures).
    """
    E, nv, d = coords.shape
    edges = coords[:, 1:, :] - coords[:, :1, :]  # rows are edge vectors
    det = np.linalg.det(edges)
    if not (det > 0).all():
        raise AssemblyError("element with nonpositive measure")
    vol = det / _FACT[d]
    inv = np.linalg.inv(edges)
    grads = np.empty((E, d, nv))
    grads[:, :, 1:] = inv
    grads[:, :, 0] = -inv.sum(axis=2)
    stiff = np.einsum("eai,eab,ebj->eij", grads, aval, grads, optimize=True)
    stiff *= vol[:, None, None]
    stiff = 0.5 * (stiff + stiff.transpose(0, 2, 1))
    mass_ref = (np.ones((nv, nv)) + np.eye(nv)) / ((d + 1) * (d + 2))
    mass = vol[:, None, None] * mass_ref[None, :, :]
    return stiff, mass, vol


_G1 = np.array([[-0.5, -0.5], [0.5, 0.5]])  # int over (0,h) of phi_r' phi_s


def _box_factors(h: np.ndarray):
    """Per-direction 1D element matrices for box cells; h is (E,) spacings."""
    E = h.shape[0]
    k1 = np.empty((E, 2, 2))
    k1[:, 0, 0] = k1[:, 1, 1] = 1.0 / h
    k1[:, 0, 1] = k1[:, 1, 0] = -1.0 / h
    m1 = np.empty((E, 2, 2))
    m1[:, 0, 0] = m1[:, 1, 1] = h / 3.0
    m1[:, 0, 1] = m1[:, 1, 0] = h / 6.0
    g1 = np.broadcast_to(_G1, (E, 2, 2))
    return k1, m1, g1


def _tensor_combine(factors: list[np.ndarray]) -> np.ndarray:
    """Kronecker-combine per-direction (E,2,2) factors into (E, 2^d, 2^d).

    Factor list is ordered x, y, z; local node index has x fastest
    (node = ix + 2*iy + 4*iz), so the slowest tensor axis is the last factor.
    """
    d = len(factors)
    if d == 1:
        return factors[0]
    if d == 2:
        out = np.einsum("eab,ecd->eacbd", factors[1], factors[0], optimize=True)
        return out.reshape(out.shape[0], 4, 4)
    out = np.einsum(
        "eab,ecd,egh->eacgbdh", factors[2], factors[1], factors[0], optimize=True
    )
    return out.reshape(out.shape[0], 8, 8)


def _box_local(coords: np.ndarray, aval: np.ndarray):
    """Closed-form Q1 matrices on axis-aligned boxes (1D segments included)."""
    E, nv, d = coords.shape
    lo = coords[:, 0, :]
    hi = coords[:, nv - 1, :]
    h = hi - lo
    if not (h > 0).all():
        raise AssemblyError("element with nonpositive measure")
    per_dir = [_box_factors(h[:, k]) for k in range(d)]
    mass = _tensor_combine([per_dir[k][1] for k in range(d)])
    stiff = np.zeros_like(mass)
    for a in range(d):
        for b in range(d):
            coeff = aval[:, a, b]
            if not coeff.any():
                continue
            factors = []
            for k in range(d):
                k1, m1, g1 = per_dir[k]
                if k == a == b:
                    factors.append(k1)
                elif k == a:
                    factors.append(g1)
                elif k == b:
                    factors.append(g1.transpose(0, 2, 1))
                else:
                    factors.append(m1)
            stiff += coeff[:, None, None] * _tensor_combine(factors)
    stiff = 0.5 * (stiff + stiff.transpose(0, 2, 1))
    measures = h.prod(axis=1)
    return stiff, mass, measures


def _local_matrices(mesh: Mesh, aval: np.ndarray):
    coords = mesh.nodes[mesh.elements]
    if mesh.element_type in ("segment", "quad", "hex"):
        return _box_local(coords, aval)
    return _simplex_local(coords, aval)


def _coefficient_at_barycenters(mesh: Mesh, A: CoefficientField, xi_offset: int):
    bary = mesh.nodes[mesh.elements].mean(axis=1)
    xi = bary[:, xi_offset:]
    try:
        return A.evaluate(xi)
    except Exception as exc:
        raise AssemblyError(f"coefficient evaluation failed: {exc}") from exc


def assemble(
    mesh: Mesh, A: CoefficientField, xi_offset: int | None = None
) -> DiscreteOperatorPair:
    """Assemble the generalized eigenvalue pencil on the mesh's free nodes.

    ``xi_offset`` is the coordinate index where the cross-section variables
    start; it must equal ``A.m`` (the default).  Dirichlet-tagged nodes are
    eliminated; untagged and Neumann facets are natural and need no work.
    """
    if xi_offset is None:
        xi_offset = A.m
    if xi_offset != A.m:
        raise AssemblyError(
            f"xi_offset={xi_offset} does not match the coefficient's base "
            f"dimension m={A.m}"
        )
    if A.dim != mesh.dim:
        raise AssemblyError(
            f"coefficient is {A.dim}x{A.dim} but the mesh has dim={mesh.dim}"
        )
    aval = _coefficient_at_barycenters(mesh, A, xi_offset)
    stiff, mass, _ = _local_matrices(mesh, aval)

    free_mask = free_node_mask(mesh)
    free_index = np.full(mesh.n_nodes, -1, dtype=np.intp)
    free_index[free_mask] = np.arange(int(free_mask.sum()))
    n_free = int(free_mask.sum())
    if n_free == 0:
        raise AssemblyError("no free degrees of freedom (everything Dirichlet)")

    elts = mesh.elements
    nv = elts.shape[1]
    rows = np.broadcast_to(elts[:, :, None], (elts.shape[0], nv, nv)).ravel()
    cols = np.broadcast_to(elts[:, None, :], (elts.shape[0], nv, nv)).ravel()
    keep = free_mask[rows] & free_mask[cols]
    ri = free_index[rows[keep]]
    ci = free_index[cols[keep]]
    K = SparseSym.from_coo(n_free, ri, ci, stiff.ravel()[keep])
    M = SparseSym.from_coo(n_free, ri, ci, mass.ravel()[keep])
    ref = (
        f"{mesh.element_type}:{mesh.n_nodes}nodes:{mesh.n_elements}elems:"
        f"h={mesh.h_max:.6g}"
    )
    return DiscreteOperatorPair(K=K, M=M, free_dofs=free_index, mesh_ref=ref)


def rayleigh(pair: DiscreteOperatorPair, x: np.ndarray) -> float:
    """The quotient x^T K x / x^T M x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (pair.n,):
        raise AssemblyError(f"vector has shape {x.shape}, expected ({pair.n},)")
    denom = float(x @ pair.M.matvec(x))
    if denom <= 0.0:
        raise AssemblyError("rayleigh quotient of a (numerically) zero vector")
    return float(x @ pair.K.matvec(x)) / denom


def interpolate(mesh: Mesh, f) -> np.ndarray:
    """Nodal values of f restricted to the free nodes.

    ``f`` maps an (N, dim) coordinate array to (N,) values (vectorized) or a
    single coordinate row to a float.  Dirichlet-node values are discarded, so
    pass functions vanishing there if the result feeds a Rayleigh quotient.
    """
    nodes = mesh.nodes
    try:
        vals = np.asarray(f(nodes), dtype=float)
        if vals.shape != (nodes.shape[0],):
            raise TypeError
    except TypeError:
        vals = np.array([float(f(row)) for row in nodes])
    if not np.all(np.isfinite(vals)):
        raise AssemblyError("function produced a non-finite nodal value")
    return vals[free_node_mask(mesh)]


def element_center_gradients(mesh: Mesh, full_values: np.ndarray):
    """Gradient of the FE function at element centers plus element measures.

    Exact for P1 simplices (the gradient is constant); for Q1 boxes this is
    the tensor-product center gradient.  Returns (grads (E, dim), measures (E,)).
    """
    u = np.asarray(full_values, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise AssemblyError("need one value per mesh node")
    coords = mesh.nodes[mesh.elements]
    ue = u[mesh.elements]
    E, nv, d = coords.shape
    if mesh.element_type in ("triangle", "tet"):
        edges = coords[:, 1:, :] - coords[:, :1, :]
        det = np.linalg.det(edges)
        vol = det / _FACT[d]
        inv = np.linalg.inv(edges)
        grads = np.empty((E, d, nv))
        grads[:, :, 1:] = inv
        grads[:, :, 0] = -inv.sum(axis=2)
        g = np.einsum("edv,ev->ed", grads, ue, optimize=True)
        return g, vol
    lo = coords[:, 0, :]
    h = coords[:, nv - 1, :] - lo
    g = np.empty((E, d))
    for k in range(d):
        bit = 1 << k
        plus = [v for v in range(nv) if v & bit]
        minus = [v for v in range(nv) if not v & bit]
        g[:, k] = (ue[:, plus].mean(axis=1) - ue[:, minus].mean(axis=1)) / h[:, k]
    return g, h.prod(axis=1)


def element_measures(mesh: Mesh) -> np.ndarray:
    """Length / area / volume of every element."""
    coords = mesh.nodes[mesh.elements]
    if mesh.element_type in ("triangle", "tet"):
        edges = coords[:, 1:, :] - coords[:, :1, :]
        return np.linalg.det(edges) / _FACT[mesh.dim]
    lo = coords[:, 0, :]
    h = coords[:, coords.shape[1] - 1, :] - lo
    return h.prod(axis=1)


def element_energies(
    mesh: Mesh, full_values: np.ndarray, A: CoefficientField | None = None
):
    """Per-element mass and stiffness energies of a nodal function.

    Returns (mass_e, stiff_e) with stiff_e computed for the coefficient A
    (identity by default), so summing gives the discrete L2 and energy norms.
    """
    u = np.asarray(full_values, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise AssemblyError("need one value per mesh node")
    if A is None:
        aval = np.broadcast_to(np.eye(mesh.dim), (mesh.n_elements, mesh.dim, mesh.dim))
    else:
        aval = _coefficient_at_barycenters(mesh, A, A.m)
    stiff, mass, _ = _local_matrices(mesh, aval)
    ue = u[mesh.elements]
    mass_e = np.einsum("eij,ei,ej->e", mass, ue, ue, optimize=True)
    stiff_e = np.einsum("eij,ei,ej->e", stiff, ue, ue, optimize=True)
    return mass_e, stiff_e
