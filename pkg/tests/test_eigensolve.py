"""Shift-invert Lanczos vs the dense Jacobi oracle, plus factorization guards."""

import math

import numpy as np
import pytest

from cylspec import eigensolve as eig
from cylspec import fem
from cylspec import mesh as msh
import cylspec as cyl

from conftest import all_dirichlet


def _pair_from_dense(Kd, Md):
    n = Kd.shape[0]
    return fem.DiscreteOperatorPair(
        K=fem.SparseSym.from_dense(Kd),
        M=fem.SparseSym.from_dense(Md),
        free_dofs=np.arange(n),
        mesh_ref="hand built n=%d" % n,
    )


def _identity_sparse(n):
    return fem.SparseSym(n, np.arange(n + 1), np.arange(n), np.ones(n))


# ---------------------------------------------------------------------------
# factorization


def test_factorize_pivots_diagonal():
    fact = eig.factorize(fem.SparseSym.from_dense(np.diag([2.0, 3.0])))
    assert isinstance(fact, eig.BandedCholesky)
    assert np.allclose(fact.pivots, [2.0, 3.0], atol=1e-14)


def test_factorize_pivots_tridiagonal():
    T = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]])
    fact = eig.factorize(fem.SparseSym.from_dense(T))
    # gaussian elimination pivots of the 2,1 tridiagonal chain
    assert np.allclose(fact.pivots, [2.0, 1.5, 4.0 / 3.0], atol=1e-14)


def test_factorize_rejects_indefinite():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(eig.FactorizationError, match="not positive definite"):
        eig.factorize(fem.SparseSym.from_dense(bad))


def test_banded_solve_round_trip():
    rng = np.random.default_rng(5)
    n = 30
    diag = 4.0 + rng.uniform(0.0, 1.0, n)
    off = -rng.uniform(0.2, 0.8, n - 1)
    A = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    fact = eig.factorize(fem.SparseSym.from_dense(A))
    b = rng.standard_normal(n)
    x = fact.solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_sparse_lu_fallback_contract():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    lu = eig.SparseLU(fem.SparseSym.from_dense(A))
    b = np.array([1.0, 2.0])
    assert np.allclose(A @ lu.solve(b), b, atol=1e-12)
    with pytest.raises(eig.FactorizationError, match="banded"):
        lu.pivots


# ---------------------------------------------------------------------------
# solver on hand-built pencils


def test_diagonal_pencil():
    pair = _pair_from_dense(np.diag([2.0, 3.0, 10.0]), np.eye(3))
    res = eig.smallest_eigenpairs(pair, 2)
    assert np.allclose(res.values, [2.0, 3.0], atol=1e-10)
    assert res.k == 2
    assert (res.residuals <= 1e-10).all()


def test_repeated_eigenvalue_pencil():
    pair = _pair_from_dense(np.eye(6), np.eye(6))
    res = eig.smallest_eigenpairs(pair, 3)
    assert np.allclose(res.values, 1.0, atol=1e-10)
    G = res.vectors.T @ pair.M.full_csr @ res.vectors
    assert np.abs(G - np.eye(3)).max() <= 1e-8


def test_interval_pencil_closed_form():
    mesh = msh.mesh_interval(0.0, 1.0, 10, classifier=all_dirichlet)
    pair = fem.assemble(mesh, cyl.CoefficientField.from_strings(0, [["1"]]))
    h = 0.1
    expect = [
        (6.0 / h**2) * (1.0 - math.cos(j * math.pi * h))
        / (2.0 + math.cos(j * math.pi * h))
        for j in (1, 2, 3)
    ]
    res = eig.smallest_eigenpairs(pair, 3)
    assert np.allclose(res.values, expect, rtol=1e-12)
    ora = eig.dense_oracle(pair, 3)
    assert np.allclose(ora.values, expect, rtol=1e-12)


def test_ground_state_is_positive():
    mesh = msh.mesh_interval(0.0, 1.0, 16, classifier=all_dirichlet)
    pair = fem.assemble(mesh, cyl.CoefficientField.from_strings(0, [["1"]]))
    res = eig.smallest_eigenpairs(pair, 1)
    assert (res.vectors[:, 0] > 0).all()


def test_shift_invariance():
    mesh = msh.mesh_interval(0.0, 1.0, 16, classifier=all_dirichlet)
    pair = fem.assemble(mesh, cyl.CoefficientField.from_strings(0, [["1"]]))
    base = eig.smallest_eigenpairs(pair, 3, sigma=0.0)
    shifted = eig.smallest_eigenpairs(pair, 3, sigma=-1.0)
    assert np.allclose(base.values, shifted.values, rtol=1e-10)


def test_solver_is_deterministic():
    rng = np.random.default_rng(9)
    B = rng.standard_normal((25, 25))
    pair = _pair_from_dense(B @ B.T + 25 * np.eye(25), np.eye(25))
    a = eig.smallest_eigenpairs(pair, 2)
    b = eig.smallest_eigenpairs(pair, 2)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.vectors, b.vectors)


# ---------------------------------------------------------------------------
# catalog-wide agreement with the dense oracle


def test_catalog_matches_dense_oracle(operator_catalog):
    failures = []
    for name, pair in operator_catalog:
        k = min(4, pair.n)
        res = eig.smallest_eigenpairs(pair, k, tol=1e-10)
        ora = eig.dense_oracle(pair, k)
        rel = np.abs(res.values - ora.values) / np.abs(ora.values)
        if rel.max() > 1e-8:
            failures.append("%s: rel %.3e" % (name, rel.max()))
        if (res.residuals > 1e-10).any():
            failures.append("%s: residual %.3e" % (name, res.residuals.max()))
        if np.any(np.diff(res.values) < -1e-12 * np.abs(res.values[:-1])):
            failures.append("%s: values not ascending" % name)
        if res.vectors[:, 0].sum() < 0 or ora.vectors[:, 0].sum() < 0:
            failures.append("%s: sign convention broken" % name)
        G = res.vectors.T @ pair.M.full_csr @ res.vectors
        if np.abs(G - np.eye(k)).max() > 1e-8:
            failures.append("%s: not M-orthonormal" % name)
    assert not failures, "; ".join(failures)


# ---------------------------------------------------------------------------
# error contracts


def test_solver_argument_validation():
    pair = _pair_from_dense(np.diag([2.0, 3.0]), np.eye(2))
    with pytest.raises(ValueError, match="at least 1"):
        eig.smallest_eigenpairs(pair, 0)
    with pytest.raises(eig.ConvergenceError, match="n=2"):
        eig.smallest_eigenpairs(pair, 5)
    with pytest.raises(ValueError, match="tol"):
        eig.smallest_eigenpairs(pair, 1, tol=0.0)


def test_convergence_error_carries_residuals():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((40, 40))
    pair = _pair_from_dense(B @ B.T + 40 * np.eye(40), np.eye(40))
    with pytest.raises(eig.ConvergenceError, match="no convergence after") as info:
        eig.smallest_eigenpairs(pair, 3, max_iter=1)
    assert info.value.residuals is not None


def test_dense_oracle_guards():
    n = 2001
    big = fem.DiscreteOperatorPair(
        K=_identity_sparse(n), M=_identity_sparse(n),
        free_dofs=np.arange(n), mesh_ref="synthetic identity",
    )
    with pytest.raises(ValueError, match="n <= 2000"):
        eig.dense_oracle(big, 1)
    small = _pair_from_dense(np.eye(3), np.eye(3))
    with pytest.raises(ValueError, match="1 <= k"):
        eig.dense_oracle(small, 4)
    indefinite = _pair_from_dense(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(eig.FactorizationError, match="M is not positive definite"):
        eig.dense_oracle(indefinite, 1)
