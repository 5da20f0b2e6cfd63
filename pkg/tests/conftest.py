"""Shared fixtures: acceptance-line recording and a catalog of small pencils.

The catalog collects one representative operator pair per element type plus a
couple of synthetic matrices; every pair stays at or below 300 free dofs so
the dense oracle can grind through all of them.
"""

import math

import numpy as np
import pytest

import cylspec as cyl
from cylspec import fem
from cylspec import mesh as msh

# ---------------------------------------------------------------------------
# acceptance criterion reporting

_criterion_lines = {}


def record_criterion(num, passed, detail=""):
    line = "criterion %d: %s%s" % (num, "PASS" if passed else "FAIL",
                                   "  " + detail if detail else "")
    _criterion_lines[num] = line
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criterion_lines):
        terminalreporter.write_line(_criterion_lines[num])


@pytest.fixture
def criterion():
    return record_criterion


# ---------------------------------------------------------------------------
# shared geometry / coefficient builders

UNIT_CROSS = cyl.CrossSectionSpec(((0.0, 1.0),))


def centered_square(side=1.0):
    h = side / 2.0
    return cyl.BaseSpec.polygon([[-h, -h], [h, -h], [h, h], [-h, h]])


def hexagon_base():
    # flat edge facing +x: first edge's outward normal is exactly (1, 0)
    return cyl.BaseSpec.polygon(
        [[math.cos(math.radians(-30 + 60 * k)),
          math.sin(math.radians(-30 + 60 * k))] for k in range(6)]
    )


def gap_coefficient_1d():
    return cyl.CoefficientField.from_strings(1, [["2", "0.5"], ["0.5", "1"]])


def gap_coefficient_2d():
    return cyl.CoefficientField.from_strings(
        2, [["2", "0", "0.5"], ["0", "2", "0"], ["0.5", "0", "1"]]
    )


def all_dirichlet(centroid, normal):
    return "dirichlet"


def neumann_at_zero(centroid, normal):
    # strip rule: natural condition only on the z1 = 0 face
    return "neumann" if abs(centroid[0]) <= 1e-9 else "dirichlet"


# ---------------------------------------------------------------------------
# operator pair catalog (n <= 300 each)


def _random_dense_pair(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    Kd = B @ B.T + n * np.eye(n)
    C = 0.1 * rng.standard_normal((n, n))
    Md = np.eye(n) + 0.1 * (C + C.T) + 0.1 * np.eye(n)
    return fem.DiscreteOperatorPair(
        K=fem.SparseSym.from_dense(Kd),
        M=fem.SparseSym.from_dense(Md),
        free_dofs=np.arange(n),
        mesh_ref="synthetic dense n=%d" % n,
    )


def _random_banded_pair(n, seed):
    rng = np.random.default_rng(seed)
    diag = 4.0 + rng.uniform(0.0, 1.0, size=n)
    off = -rng.uniform(0.5, 1.0, size=n - 1)
    rows = np.concatenate([np.arange(n), np.arange(1, n)])
    cols = np.concatenate([np.arange(n), np.arange(n - 1)])
    vals = np.concatenate([diag, off])
    K = fem.SparseSym.from_coo(n, rows, cols, vals)
    M = fem.SparseSym.from_coo(
        n, np.arange(n), np.arange(n), 1.0 + 0.5 * rng.uniform(0.0, 1.0, size=n)
    )
    return fem.DiscreteOperatorPair(
        K=K, M=M, free_dofs=np.arange(n), mesh_ref="synthetic banded n=%d" % n
    )


def build_operator_catalog():
    """(name, pair) list covering all element types, n <= 300 each."""
    pairs = []

    one = cyl.CoefficientField.from_strings(0, [["1"]])
    mesh = msh.mesh_interval(0.0, 1.0, 16, classifier=all_dirichlet)
    pairs.append(("segment_laplace_n16", fem.assemble(mesh, one)))

    mesh = msh.mesh_interval(0.0, 1.0, 10, classifier=all_dirichlet)
    pairs.append(("segment_laplace_n10", fem.assemble(mesh, one)))

    wavy = cyl.CoefficientField.from_strings(0, [["1+0.5*sin(3.0*xi1)"]])
    mesh = msh.mesh_interval(0.0, 1.0, 24, classifier=all_dirichlet)
    pairs.append(("segment_variable_n24", fem.assemble(mesh, wavy)))

    # half strip with the coupled 1d coefficient, quad cells
    rc = cyl.reduce_direction(gap_coefficient_1d(), cyl.Direction((1.0,)))
    mesh = msh.mesh_box2(-4.0, 0.0, 0.0, 1.0, 16, 4, classifier=neumann_at_zero)
    pairs.append(("strip_quad", fem.assemble(mesh, rc)))

    # mixed cylinder slice, quad cells via the full discretization
    cyl2 = cyl.CylinderSpec(cyl.BaseSpec.interval(-1.0, 1.0), UNIT_CROSS, 2.0)
    _, pair = cyl.discretize_full(cyl2, gap_coefficient_1d(), target_h=0.25)
    pairs.append(("cylinder_mixed_quad", pair))

    # triangle mesh of a polygon, fully clamped
    plane = cyl.CoefficientField.from_strings(1, [["2", "0.5"], ["0.5", "1"]])
    mesh = msh.mesh_polygon(centered_square(2.0), 2, classifier=all_dirichlet)
    pairs.append(("polygon_triangles", fem.assemble(mesh, plane)))

    # extruded tetrahedra with mixed tags
    cyl3 = cyl.CylinderSpec(centered_square(2.0), UNIT_CROSS, 1.0)
    base_mesh = msh.mesh_polygon(centered_square(2.0), 1)
    mesh = msh.extrude(
        base_mesh, (0.0, 1.0), 3,
        classifier=lambda c, n: cyl.classify_boundary_facet(cyl3, c, n),
    )
    pairs.append(("extruded_tets", fem.assemble(mesh, gap_coefficient_2d())))

    # tensor boxes in 3d via the full discretization
    cyl3b = cyl.CylinderSpec(centered_square(), UNIT_CROSS, 1.0)
    _, pair = cyl.discretize_full(cyl3b, gap_coefficient_2d(), target_h=1.0 / 3.0)
    pairs.append(("cylinder_mixed_hex", pair))

    pairs.append(("random_dense_n40", _random_dense_pair(40, 3)))
    pairs.append(("random_banded_n200", _random_banded_pair(200, 11)))

    for name, pair in pairs:
        assert pair.n <= 300, "%s too large for the dense oracle budget" % name
    return pairs


@pytest.fixture(scope="session")
def operator_catalog():
    return build_operator_catalog()
