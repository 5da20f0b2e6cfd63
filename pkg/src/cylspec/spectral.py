"""Spectral drivers: every eigenvalue computation the studies are made of.

The cylinder problem factors into a family of cheaper problems, and each one
gets a driver here: the all-Dirichlet cross-section solve, the half-strip
problem for one base direction with a truncation schedule, full-dimensional
slab values, a direction sweep over the unit sphere of the base, the full
cylinder solve itself (mixed or all-Dirichlet boundary), a certified
upper-bound quotient built from a localized trial vector, and decay profiles
of the first eigenfunction over shrunken bases.

Meshes for related solves share their grids: subdivision counts are derived
per unit length, so integer truncation schedules see nested refinements and
eigenvalue monotonicity in the truncation length holds exactly, not only up
to mesh noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DIRICHLET,
    NEUMANN,
    BaseSpec,
    CrossSectionSpec,
    CylinderSpec,
    Direction,
    base_face,
    classify_boundary_facet,
)
from .coefficient import CoefficientField, conjugate_rotation, reduce_direction
from .mesh import Mesh, extrude, mesh_box2, mesh_box3, mesh_interval, mesh_polygon
from .fem import (
    DiscreteOperatorPair,
    assemble,
    element_center_gradients,
    element_energies,
    element_measures,
    free_node_mask,
    rayleigh,
)
from .eigensolve import EigenResult, smallest_eigenpairs


class SpectralError(RuntimeError):
    """A spectral driver could not set up or certify its computation."""


DEFAULT_L_SCHEDULE = (4.0, 8.0, 16.0, 32.0)
DEFAULT_ANGULAR_RESOLUTION = 2.0 * math.pi / 64.0


@dataclass(frozen=True)
class SolverOptions:
    """Eigensolver knobs shared by every driver.

    ``dof_cap`` bounds the free node count of full-cylinder discretizations;
    exceeding it raises instead of silently grinding through swap.
    """

    tol: float = 1e-10
    seed: int = 42
    max_iter: int | None = None
    dof_cap: int = 400_000


def _opts(solver: SolverOptions | None) -> SolverOptions:
    return solver if solver is not None else SolverOptions()


def _eig(pair: DiscreteOperatorPair, k: int, s: SolverOptions) -> EigenResult:
    return smallest_eigenpairs(pair, k, tol=s.tol, seed=s.seed, max_iter=s.max_iter)


def subdivisions(length: float, target_h: float) -> int:
    """Segment count for an edge of the given length at resolution target_h.

    Integer lengths get length * ceil(1/target_h) segments, so the grids for
    lengths 4, 8, 16, ... are nested and truncation sweeps see exactly
    monotone eigenvalues instead of mesh noise. Non-integer lengths fall back
    to ceil(length / target_h).
    """
    if not (length > 0.0 and target_h > 0.0):
        raise SpectralError("length and target_h must be positive")
    rounded = round(length)
    if rounded >= 1 and abs(length - rounded) <= 1e-9 * max(1.0, abs(length)):
        return int(rounded) * math.ceil(1.0 / target_h - 1e-9)
    return max(1, math.ceil(length / target_h - 1e-9))


def cross_resolution(cross: CrossSectionSpec, target_h: float) -> int:
    """Subdivision count of the longest cross-section interval at target_h."""
    return subdivisions(max(cross.lengths), target_h)


def _cross_counts(cross: CrossSectionSpec, n: int) -> list[int]:
    # proportional counts so every xi-direction sees roughly the same h; the
    # longest interval gets exactly n
    longest = max(cross.lengths)
    return [max(1, round(n * ln / longest)) for ln in cross.lengths]


def _all_dirichlet(centroid, normal) -> str:
    return DIRICHLET


def _neumann_near_zero(tol: float):
    # strip/slab boundary rule: natural condition only on the z1 = 0 face
    def classify(centroid, normal) -> str:
        return NEUMANN if abs(centroid[0]) <= tol else DIRICHLET

    return classify


@dataclass(frozen=True)
class CrossSectionResult:
    """First Dirichlet eigenpair of the cross-section block of a coefficient.

    ``eigenfunction`` holds full nodal values (zeros on the boundary), is
    normalized in the discrete L2 inner product, and is sign-fixed positive.
    ``gap_indicator`` is the discrete L2 norm of the coupling block applied to
    its gradient; a nonzero value predicts that full-cylinder eigenvalues drop
    strictly below ``mu1`` as the base expands.
    """

    mu1: float
    gap_indicator: float
    residual: float
    dofs: int
    eigenfunction: np.ndarray = field(repr=False)
    mesh: Mesh = field(repr=False)
    pair: DiscreteOperatorPair = field(repr=False)


@dataclass(frozen=True)
class ReducedResult:
    """Half-strip eigenvalues for one base direction over a truncation schedule.

    ``values[i]`` is the smallest eigenvalue on the strip of length
    ``lengths[i]``; ``limit_value`` repeats the last computed value (never an
    extrapolation), and ``converged`` records whether the final step changed
    by at most the requested relative tolerance.
    """

    direction: Direction
    lengths: tuple[float, ...]
    values: tuple[float, ...]
    limit_value: float
    converged: bool
    residuals: tuple[float, ...]
    dofs: tuple[int, ...]
    eigenfunction: np.ndarray | None = field(default=None, repr=False)
    mesh: Mesh | None = field(default=None, repr=False)


@dataclass(frozen=True)
class SweepResult:
    """Strip limit values swept over the unit sphere of base directions.

    ``samples`` pairs each probed direction with its limit value, grid points
    first in angle order, then any refinement probes in evaluation order;
    ``min_value`` is the minimum over all samples and ``argmin_direction``
    attains it (grid ties resolved toward the smallest angle).
    """

    samples: tuple[tuple[Direction, float], ...]
    argmin_direction: Direction
    min_value: float
    refined: bool
    results: tuple[ReducedResult, ...] = field(repr=False)


@dataclass(frozen=True)
class DecayProfile:
    """Mass distribution of the first eigenfunction over shrunken bases.

    ``log_slope`` fits log(mass) against (scale - r): exponential
    concentration near the lateral boundary shows up as a markedly negative
    slope. ``concentration_slope`` applies the same fit to
    mass / volume_fraction, which stays flat when the eigenfunction spreads
    uniformly over the base, so it separates genuine concentration from the
    mass a shrinking base loses by volume alone.
    """

    radii: tuple[float, ...]
    masses: tuple[float, ...]
    grad_masses: tuple[float, ...]
    volume_fractions: tuple[float, ...]
    log_slope: float
    concentration_slope: float
    eigenvalue: float
    residual: float
    dofs: int


def solve_cross_section(
    cross: CrossSectionSpec,
    A: CoefficientField,
    n: int,
    solver: SolverOptions | None = None,
) -> CrossSectionResult:
    """All-Dirichlet first eigenpair of the cross-section coefficient block.

    ``n`` subdivides the longest cross-section interval; the others scale
    proportionally. The gap indicator integrates the squared coupling of the
    eigenfunction gradient element by element (gradient at element centers,
    coefficient at barycenters), so it is exactly zero whenever the
    coupling block of ``A`` is.
    """
    if n < 4:
        raise SpectralError(f"need at least 4 subdivisions, got n={n}")
    s = _opts(solver)
    counts = _cross_counts(cross, n)
    if cross.p == 1:
        a, b = cross.intervals[0]
        mesh = mesh_interval(a, b, counts[0], classifier=_all_dirichlet)
    else:
        (ax, bx), (ay, by) = cross.intervals
        mesh = mesh_box2(ax, bx, ay, by, counts[0], counts[1], classifier=_all_dirichlet)
    pair = assemble(mesh, A.cross_section_field(), xi_offset=0)
    eig = _eig(pair, 1, s)
    w = pair.extend(eig.vectors[:, 0])
    gap = _gap_indicator(mesh, A, w) if A.m else 0.0
    return CrossSectionResult(
        mu1=float(eig.values[0]),
        gap_indicator=gap,
        residual=float(eig.residuals[0]),
        dofs=pair.n,
        eigenfunction=w,
        mesh=mesh,
        pair=pair,
    )


def _gap_indicator(mesh: Mesh, A: CoefficientField, w_full: np.ndarray) -> float:
    grads, measures = element_center_gradients(mesh, w_full)
    bary = mesh.nodes[mesh.elements].mean(axis=1)
    coupling_blocks = A.evaluate(bary)[:, : A.m, A.m :]
    coupled = np.einsum("eij,ej->ei", coupling_blocks, grads, optimize=True)
    return float(math.sqrt(np.sum(measures * np.sum(coupled**2, axis=1))))


def gap_condition_holds(
    cs: CrossSectionResult, threshold: float | None = None
) -> bool:
    """Whether the cross-section eigenfunction couples into the base block.

    The default threshold 1e-8 * sqrt(mu1) scales with the problem, so
    rescaling the coefficient does not flip the verdict.
    """
    if threshold is None:
        threshold = 1e-8 * math.sqrt(cs.mu1)
    if threshold <= 0:
        raise SpectralError("threshold must be positive")
    return cs.gap_indicator > threshold


def _strip_mesh(L: float, cross: CrossSectionSpec, target_h: float) -> Mesh:
    nz = subdivisions(L, target_h)
    counts = _cross_counts(cross, cross_resolution(cross, target_h))
    classify = _neumann_near_zero(1e-9 * max(L, cross.diameter))
    if cross.p == 1:
        a, b = cross.intervals[0]
        return mesh_box2(-L, 0.0, a, b, nz, counts[0], classifier=classify)
    bounds = [(-L, 0.0), cross.intervals[0], cross.intervals[1]]
    return mesh_box3(bounds, [nz, counts[0], counts[1]], classifier=classify)


def solve_reduced(
    A: CoefficientField,
    nu: Direction,
    cross: CrossSectionSpec,
    L_schedule=DEFAULT_L_SCHEDULE,
    target_h: float = 0.1,
    rel_tol: float = 1e-4,
    solver: SolverOptions | None = None,
    stop_early: bool = True,
    keep_eigenfunction: bool = False,
) -> ReducedResult:
    """Half-strip eigenvalues for one direction over a truncation schedule.

    Each strip (-L, 0) x cross gets a natural (Neumann) condition on the
    z1 = 0 face and homogeneous Dirichlet elsewhere. The schedule must ascend;
    values must not increase along it beyond solver tolerance (they cannot on
    nested grids, so an increase signals under-resolution and raises).
    ``stop_early`` stops after the first step whose relative change is within
    ``rel_tol``; pass False to force the whole schedule, e.g. for monotonicity
    studies. ``keep_eigenfunction`` retains the last strip mesh and full nodal
    eigenfunction for reuse as a trial-vector source.
    """
    s = _opts(solver)
    schedule = tuple(float(L) for L in L_schedule)
    if not schedule:
        raise SpectralError("L_schedule is empty")
    if any(L <= 0 for L in schedule):
        raise SpectralError("L_schedule entries must be positive")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise SpectralError("L_schedule must be strictly ascending")
    if not 0 < rel_tol < 1:
        raise SpectralError("rel_tol must be in (0, 1)")
    reduced = reduce_direction(A, nu)

    values: list[float] = []
    residuals: list[float] = []
    dofs: list[int] = []
    converged = False
    mesh = None
    w = None
    for L in schedule:
        mesh = _strip_mesh(L, cross, target_h)
        pair = assemble(mesh, reduced, xi_offset=1)
        eig = _eig(pair, 1, s)
        val = float(eig.values[0])
        if values and val > values[-1] + 1e-8 * max(1.0, abs(values[-1])):
            raise SpectralError(
                f"monotonicity violated: value {val:.12g} at L={L:g} exceeds "
                f"{values[-1]:.12g} at L={schedule[len(values) - 1]:g}; "
                "refine target_h"
            )
        prev = values[-1] if values else None
        values.append(val)
        residuals.append(float(eig.residuals[0]))
        dofs.append(pair.n)
        if keep_eigenfunction:
            w = pair.extend(eig.vectors[:, 0])
        converged = prev is not None and abs(val - prev) <= rel_tol * abs(val)
        if converged and stop_early:
            break
    return ReducedResult(
        direction=nu,
        lengths=tuple(schedule[: len(values)]),
        values=tuple(values),
        limit_value=values[-1],
        converged=converged,
        residuals=tuple(residuals),
        dofs=tuple(dofs),
        eigenfunction=w,
        mesh=mesh if keep_eigenfunction else None,
    )


def solve_slab(
    A: CoefficientField,
    nu: Direction,
    cross: CrossSectionSpec,
    K: float,
    target_h: float = 0.1,
    solver: SolverOptions | None = None,
) -> float:
    """Smallest eigenvalue of the full-dimensional slab of thickness K.

    The slab sits behind the plane with outward normal ``nu``: depth
    coordinate in (-K, 0), tangential coordinate in (-K, K), cross-section
    unchanged. Rotating coordinates onto (nu, nu-perp) turns it into an axis
    box, with the coefficient's base block conjugated by the same rotation.
    Natural condition on the depth = 0 face, Dirichlet everywhere else.
    """
    value, _, _ = _slab_solve(A, nu, cross, K, target_h, _opts(solver))
    return value


def _slab_solve(A, nu, cross, K, target_h, s):
    if A.m != 2:
        raise SpectralError("slab problems need a two-dimensional base (m=2)")
    if nu.m != 2:
        raise SpectralError("direction dimension must match the base (m=2)")
    if cross.p != 1:
        raise SpectralError("slab problems need a one-dimensional cross-section")
    if not K > 0:
        raise SpectralError("K must be positive")
    v = nu.array
    rotation = np.array([[v[0], v[1]], [-v[1], v[0]]])
    rotated = conjugate_rotation(A, rotation)
    counts = _cross_counts(cross, cross_resolution(cross, target_h))
    classify = _neumann_near_zero(1e-9 * max(2.0 * K, cross.diameter))
    mesh = mesh_box3(
        [(-K, 0.0), (-K, K), cross.intervals[0]],
        [subdivisions(K, target_h), subdivisions(2.0 * K, target_h), counts[0]],
        classifier=classify,
    )
    pair = assemble(mesh, rotated, xi_offset=2)
    eig = _eig(pair, 1, s)
    return float(eig.values[0]), float(eig.residuals[0]), pair.n


def _sweep_task(args) -> ReducedResult:
    A, direction, cross, schedule, target_h, rel_tol, s = args
    return solve_reduced(
        A,
        direction,
        cross,
        L_schedule=schedule,
        target_h=target_h,
        rel_tol=rel_tol,
        solver=s,
    )


def sweep_directions(
    A: CoefficientField,
    cross: CrossSectionSpec,
    angular_resolution: float = DEFAULT_ANGULAR_RESOLUTION,
    refine: bool = False,
    L_schedule=DEFAULT_L_SCHEDULE,
    target_h: float = 0.1,
    rel_tol: float = 1e-4,
    solver: SolverOptions | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Minimize the strip limit value over unit directions of the base.

    One-dimensional bases have exactly two directions; two-dimensional bases
    get a uniform angle grid with spacing at most ``angular_resolution``.
    Each direction's solve is independent, so ``jobs > 1`` fans them out to a
    process pool; results are gathered in grid order either way, keeping the
    output deterministic. With ``refine`` a golden-section search shrinks the
    bracket around the grid argmin to ``angular_resolution / 16`` and the
    probes join the sample list; the argmin only moves on strict improvement.
    """
    s = _opts(solver)
    schedule = tuple(float(L) for L in L_schedule)
    if A.m == 1:
        directions = [Direction((1.0,)), Direction((-1.0,))]
    elif A.m == 2:
        if not 0.0 < angular_resolution <= 2.0 * math.pi:
            raise SpectralError("angular_resolution must be in (0, 2*pi]")
        count = max(1, int(round(2.0 * math.pi / angular_resolution)))
        directions = [
            Direction.from_angle(2.0 * math.pi * i / count) for i in range(count)
        ]
    else:
        raise SpectralError("direction sweeps support m=1 and m=2 bases")

    tasks = [
        (A, d, cross, schedule, target_h, rel_tol, s) for d in directions
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]

    best = min(range(len(results)), key=lambda i: results[i].limit_value)
    argmin = directions[best]
    min_value = results[best].limit_value
    refined = False

    if refine and A.m == 2 and len(directions) > 1:
        spacing = 2.0 * math.pi / len(directions)
        lo = argmin.angle - spacing
        hi = argmin.angle + spacing
        probes: list[ReducedResult] = []

        def probe(theta: float) -> float:
            r = _sweep_task(
                (A, Direction.from_angle(theta), cross, schedule, target_h, rel_tol, s)
            )
            probes.append(r)
            return r.limit_value

        ratio = (math.sqrt(5.0) - 1.0) / 2.0
        x1 = hi - ratio * (hi - lo)
        x2 = lo + ratio * (hi - lo)
        f1, f2 = probe(x1), probe(x2)
        while hi - lo > angular_resolution / 16.0:
            if f1 <= f2:
                hi, x2, f2 = x2, x1, f1
                x1 = hi - ratio * (hi - lo)
                f1 = probe(x1)
            else:
                lo, x1, f1 = x1, x2, f2
                x2 = lo + ratio * (hi - lo)
                f2 = probe(x2)
        for r in probes:
            if r.limit_value < min_value:
                argmin, min_value = r.direction, r.limit_value
        results.extend(probes)
        refined = True

    samples = tuple((r.direction, r.limit_value) for r in results)
    return SweepResult(
        samples=samples,
        argmin_direction=argmin,
        min_value=float(min_value),
        refined=refined,
        results=tuple(results),
    )


def discretize_full(
    cyl: CylinderSpec,
    A: CoefficientField,
    target_h: float = 0.1,
    bc: str = "mixed",
    mesh_kind: str = "auto",
    dof_cap: int | None = None,
) -> tuple[Mesh, DiscreteOperatorPair]:
    """Mesh the cylinder and assemble its eigenvalue pencil.

    ``bc="mixed"`` tags the lateral boundary (scaled-base sides) Neumann and
    the cross-section boundary Dirichlet; ``bc="dirichlet"`` clamps
    everything. ``mesh_kind="auto"`` uses tensor cells whenever the base is an
    interval or an axis-aligned rectangle and otherwise fan-triangulates the
    polygon and extrudes to tetrahedra; ``"simplicial"`` forces the fan path
    for any polygon.
    """
    if bc not in ("mixed", "dirichlet"):
        raise SpectralError(f"unknown boundary mode {bc!r}")
    if mesh_kind not in ("auto", "simplicial"):
        raise SpectralError(f"unknown mesh kind {mesh_kind!r}")
    if bc == "dirichlet":
        classify = _all_dirichlet
    else:

        def classify(centroid, normal):
            return classify_boundary_facet(cyl, centroid, normal)

    counts = _cross_counts(cyl.cross, cross_resolution(cyl.cross, target_h))
    scale, base = cyl.scale, cyl.base
    if base.kind == "interval":
        a, b = base.bounds
        xa, xb = scale * a, scale * b
        nx = subdivisions(xb - xa, target_h)
        if cyl.p == 1:
            ya, yb = cyl.cross.intervals[0]
            mesh = mesh_box2(xa, xb, ya, yb, nx, counts[0], classifier=classify)
        else:
            mesh = mesh_box3(
                [(xa, xb), cyl.cross.intervals[0], cyl.cross.intervals[1]],
                [nx, counts[0], counts[1]],
                classifier=classify,
            )
    elif mesh_kind == "auto" and base.is_axis_aligned_rectangle():
        lo, hi = base.bounding_box()
        mesh = mesh_box3(
            [
                (scale * lo[0], scale * hi[0]),
                (scale * lo[1], scale * hi[1]),
                cyl.cross.intervals[0],
            ],
            [
                subdivisions(scale * (hi[0] - lo[0]), target_h),
                subdivisions(scale * (hi[1] - lo[1]), target_h),
                counts[0],
            ],
            classifier=classify,
        )
    else:
        scaled = BaseSpec.polygon(scale * base.vertices)
        level = 0
        h0 = mesh_polygon(scaled, 0).h_max
        if h0 > target_h:
            level = max(0, math.ceil(math.log2(h0 / target_h) - 1e-12))
        triangles = mesh_polygon(scaled, level)
        mesh = extrude(triangles, cyl.cross.intervals[0], counts[0], classifier=classify)

    cap = dof_cap if dof_cap is not None else SolverOptions().dof_cap
    free = int(free_node_mask(mesh).sum())
    if free > cap:
        raise SpectralError(
            f"dof cap exceeded: {free} free nodes > {cap}; "
            "coarsen target_h or raise the cap"
        )
    return mesh, assemble(mesh, A)


def solve_full(
    cyl: CylinderSpec,
    A: CoefficientField,
    k: int = 1,
    target_h: float = 0.1,
    bc: str = "mixed",
    solver: SolverOptions | None = None,
    mesh_kind: str = "auto",
) -> EigenResult:
    """The k smallest eigenvalues of the cylinder problem."""
    s = _opts(solver)
    _, pair = discretize_full(
        cyl, A, target_h=target_h, bc=bc, mesh_kind=mesh_kind, dof_cap=s.dof_cap
    )
    return _eig(pair, k, s)


def _tensor_axes(mesh: Mesh) -> list[np.ndarray]:
    if mesh.element_type not in ("quad", "hex"):
        raise SpectralError("tensor interpolation needs a structured box mesh")
    return [np.unique(mesh.nodes[:, d]) for d in range(mesh.dim)]


def _strip_grid_values(mesh: Mesh, full_values: np.ndarray):
    # structured meshes number nodes x-fastest, so nodal values reshape to a
    # grid with reversed axis order; transpose restores [ix, iy(, iz)]
    axes = _tensor_axes(mesh)
    shape = tuple(len(ax) for ax in axes)
    return axes, np.transpose(full_values.reshape(shape[::-1]))


def _grid_interp(axes, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation on a tensor grid, clamped at the edges."""
    pts = np.asarray(pts, dtype=float)
    dim = len(axes)
    cells, weights = [], []
    for j, ax in enumerate(axes):
        i = np.clip(np.searchsorted(ax, pts[:, j], side="right") - 1, 0, len(ax) - 2)
        t = (pts[:, j] - ax[i]) / (ax[i + 1] - ax[i])
        cells.append(i)
        weights.append(np.clip(t, 0.0, 1.0))
    out = np.zeros(pts.shape[0])
    for corner in range(1 << dim):
        w = np.ones(pts.shape[0])
        loc = []
        for j in range(dim):
            if corner >> j & 1:
                w = w * weights[j]
                loc.append(cells[j] + 1)
            else:
                w = w * (1.0 - weights[j])
                loc.append(cells[j])
        out += w * values[tuple(loc)]
    return out


def _bump(t: np.ndarray, a: float) -> np.ndarray:
    # cos^2 taper supported on (-a, a) with unit L2 norm
    out = np.zeros_like(t)
    inside = np.abs(t) < a
    c = 2.0 / math.sqrt(3.0 * a)
    out[inside] = c * np.cos(math.pi * t[inside] / (2.0 * a)) ** 2
    return out


def upper_bound_quotient(
    cyl: CylinderSpec,
    A: CoefficientField,
    nu_face: str,
    K: float,
    target_h: float = 0.1,
    solver: SolverOptions | None = None,
) -> float:
    """Certified upper bound for the smallest mixed eigenvalue from one face.

    Builds a trial vector supported within depth K of the chosen base face:
    the strip eigenfunction for the face normal, read off along the inward
    depth coordinate, tapered tangentially by a unit-norm cos^2 bump of half
    width K (two-dimensional bases only), and interpolated onto the cylinder
    mesh. Its Rayleigh quotient bounds the discrete eigenvalue from above for
    any admissible vector, so the fit checks below guard the bound's quality,
    not its validity: the depth K must fit behind the face, and the bump's
    half width must fit inside the base silhouette (near corners the taper may
    still overhang; overhanging nodes simply do not exist on the mesh, which
    only weakens the bound).
    """
    s = _opts(solver)
    if not K > 0:
        raise SpectralError("K must be positive")
    direction, centroid, _ = base_face(cyl.base, nu_face)
    nu_vec = direction.array
    anchor = cyl.scale * np.asarray(centroid, dtype=float)
    if cyl.base.kind == "interval":
        a, b = cyl.base.bounds
        vertices = np.array([[a], [b]], dtype=float)
    else:
        vertices = cyl.base.vertices
    rel = cyl.scale * vertices - anchor
    depth = float(np.max(-(rel @ nu_vec)))
    pad = 1e-9 * max(1.0, K)
    if K > depth + pad:
        raise SpectralError(
            f"support does not fit: depth K={K:g} exceeds the base extent "
            f"{depth:g} behind face {nu_face!r}"
        )
    tangent = None
    half_width = 1.0 / math.sqrt(max(cyl.m - 1, 1))
    if cyl.m == 2:
        tangent = np.array([-nu_vec[1], nu_vec[0]])
        silhouette = rel @ tangent
        available = float(min(-silhouette.min(), silhouette.max()))
        if half_width * K > available + pad:
            raise SpectralError(
                f"support does not fit: bump half width {half_width * K:g} "
                f"exceeds the base silhouette {available:g} at face {nu_face!r}"
            )

    source = solve_reduced(
        A,
        direction,
        cyl.cross,
        L_schedule=(float(K),),
        target_h=target_h,
        solver=s,
        stop_early=False,
        keep_eigenfunction=True,
    )
    axes, grid = _strip_grid_values(source.mesh, source.eigenfunction)

    mesh, pair = discretize_full(
        cyl, A, target_h=target_h, bc="mixed", dof_cap=s.dof_cap
    )
    X = mesh.nodes[:, : cyl.m]
    z1 = (X - anchor) @ nu_vec
    inside = (z1 >= -K - pad) & (z1 <= pad)
    strip_pts = np.column_stack(
        [np.clip(z1[inside], -K, 0.0), mesh.nodes[inside][:, cyl.m :]]
    )
    trial = _grid_interp(axes, grid, strip_pts)
    if cyl.m == 2:
        t = (X[inside] - anchor) @ tangent
        trial = trial * _bump(t / K, half_width) / math.sqrt(K)
    values = np.zeros(mesh.n_nodes)
    values[inside] = trial
    q = values[free_node_mask(mesh)]
    if not np.any(q != 0.0):
        raise SpectralError("trial vector vanishes at every free node")
    return rayleigh(pair, q)


def _in_scaled_base_bulk(base: BaseSpec, r: float, pts: np.ndarray) -> np.ndarray:
    if base.kind == "interval":
        a, b = base.bounds
        return (pts[:, 0] > r * a) & (pts[:, 0] < r * b)
    normals, offsets = base.edge_constraints()
    return np.all(pts @ normals.T < r * offsets[None, :], axis=1)


def decay_profile(
    cyl: CylinderSpec,
    A: CoefficientField,
    radii,
    target_h: float = 0.1,
    solver: SolverOptions | None = None,
    enforce_gap: bool = True,
) -> DecayProfile:
    """How the first eigenfunction's mass distributes over shrunken bases.

    For each radius r the element masses of u^2 and |grad u|^2 are summed over
    elements whose base barycenter lies in the base scaled by r. The fitted
    slopes quantify concentration; see DecayProfile. ``enforce_gap`` requires
    a nonzero coupling indicator first (the concentration mechanism needs it)
    and exists so control runs without coupling can still produce a profile.
    """
    s = _opts(solver)
    radii = tuple(sorted(float(r) for r in radii))
    if len(radii) < 2:
        raise SpectralError("need at least two radii to fit a slope")
    if radii[0] <= 0.0 or radii[-1] > cyl.scale * (1.0 + 1e-12):
        raise SpectralError("radii must lie in (0, scale]")
    if enforce_gap:
        cs = solve_cross_section(
            cyl.cross, A, cross_resolution(cyl.cross, target_h), solver=s
        )
        if not gap_condition_holds(cs):
            raise SpectralError(
                "decay hypotheses not met: coupling indicator "
                f"{cs.gap_indicator:.3e} is numerically zero"
            )
    mesh, pair = discretize_full(cyl, A, target_h=target_h, bc="mixed", dof_cap=s.dof_cap)
    eig = _eig(pair, 1, s)
    u = pair.extend(eig.vectors[:, 0])
    mass_e, grad_e = element_energies(mesh, u)
    measures = element_measures(mesh)
    total_mass = float(mass_e.sum())
    if abs(total_mass - 1.0) > 1e-10:
        raise SpectralError(f"eigenfunction mass {total_mass:.15g} is not 1")
    bary = mesh.nodes[mesh.elements].mean(axis=1)[:, : cyl.m]
    total_measure = float(measures.sum())
    masses, grads, fractions = [], [], []
    for r in radii:
        member = _in_scaled_base_bulk(cyl.base, r, bary)
        masses.append(float(mass_e[member].sum()))
        grads.append(float(grad_e[member].sum()))
        fractions.append(float(measures[member].sum()) / total_measure)
    for small, big in zip(masses, masses[1:]):
        if big < small - 1e-12:
            raise SpectralError("masses decreased on nested bases")
    if min(masses) <= 0.0:
        raise SpectralError("no eigenfunction mass inside the smallest radius")
    distances = cyl.scale - np.asarray(radii)
    log_slope = float(np.polyfit(distances, np.log(masses), 1)[0])
    concentration_slope = float(
        np.polyfit(distances, np.log(np.asarray(masses) / np.asarray(fractions)), 1)[0]
    )
    return DecayProfile(
        radii=radii,
        masses=tuple(masses),
        grad_masses=tuple(grads),
        volume_fractions=tuple(fractions),
        log_slope=log_slope,
        concentration_slope=concentration_slope,
        eigenvalue=float(eig.values[0]),
        residual=float(eig.residuals[0]),
        dofs=pair.n,
    )
