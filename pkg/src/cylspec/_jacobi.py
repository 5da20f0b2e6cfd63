"""Cyclic Jacobi eigenvalue iteration for dense symmetric matrices.

One routine serves two callers: tiny coefficient matrices (dimension <= 4,
ellipticity checks) and the dense reference oracle (up to a couple thousand
rows).  Rotations are applied in round-robin rounds of pairwise-disjoint
pivots so each round is a single vectorized orthogonal update; convergence is
quadratic once the off-diagonal mass is small.
"""

from __future__ import annotations

import numpy as np


class JacobiError(RuntimeError):
    pass


def _round_robin_rounds(n: int) -> list[np.ndarray]:
    """Pairings of {0..n-1} into disjoint pivot pairs, one array (k,2) per round.

    Classic circle method: fix player 0, rotate the rest; n-1 rounds cover all
    unordered pairs exactly once (n padded to even with a bye).
    """
    players = list(range(n))
    if n % 2 == 1:
        players.append(-1)
    half = len(players) // 2
    rounds = []
    for _ in range(len(players) - 1):
        pairs = []
        for i in range(half):
            a, b = players[i], players[-1 - i]
            if a >= 0 and b >= 0:
                pairs.append((min(a, b), max(a, b)))
        rounds.append(np.array(sorted(pairs), dtype=np.intp))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(A: np.ndarray, tol: float = 0.0, max_sweeps: int = 60):
    """All eigenvalues/eigenvectors of a symmetric matrix by cyclic Jacobi.

    Returns ``(values, vectors)`` with values ascending and vectors in columns.
    ``tol`` is relative to the Frobenius norm; 0 means machine precision.

    Raises
    ------
    JacobiError
        If the off-diagonal mass has not converged after ``max_sweeps``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise JacobiError("matrix must be square")
    n = A.shape[0]
    if n == 0:
        return np.empty(0), np.empty((0, 0))
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise JacobiError("matrix must be symmetric")
    S = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 1:
        return S.diagonal().copy(), V
    fro = np.linalg.norm(S)
    if fro == 0.0:
        return np.zeros(n), V
    stop = max(tol, 1e-15) * fro
    rounds = _round_robin_rounds(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(S - np.diag(S.diagonal()))
        if off <= stop:
            vals = S.diagonal().copy()
            order = np.argsort(vals, kind="stable")
            return vals[order], V[:, order]
        for pairs in rounds:
            p, q = pairs[:, 0], pairs[:, 1]
            apq = S[p, q]
            live = np.abs(apq) > 1e-300
            if not live.any():
                continue
            p, q, apq = p[live], q[live], apq[live]
            app, aqq = S[p, p], S[q, q]
            tau = (aqq - app) / (2.0 * apq)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            cc, ss = c[:, None], s[:, None]
            Sp, Sq = S[p, :], S[q, :]
            S[p, :] = cc * Sp - ss * Sq
            S[q, :] = ss * Sp + cc * Sq
            Sp, Sq = S[:, p].copy(), S[:, q].copy()
            S[:, p] = Sp * cc.T - Sq * ss.T
            S[:, q] = Sp * ss.T + Sq * cc.T
            S[p, q] = 0.0
            S[q, p] = 0.0
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = Vp * cc.T - Vq * ss.T
            V[:, q] = Vp * ss.T + Vq * cc.T
    raise JacobiError(f"no convergence after {max_sweeps} sweeps")


def symmetric_eigvals(A: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a small symmetric matrix."""
    vals, _ = jacobi_eigh(A)
    return vals
