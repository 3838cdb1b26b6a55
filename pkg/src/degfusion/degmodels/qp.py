"""Primal active-set solver for small, strictly convex quadratic programs.

Solves::

    min  0.5 x'Hx + c'x
    s.t. A_eq x  = b_eq
         A_in x >= b_in

starting from a feasible point. H must be positive definite; the shape
constrained regression problems in this package always are.
"""

from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import FitError, NumericalError


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    active: np.ndarray  # indices into the inequality rows
    multipliers: np.ndarray  # one per active inequality
    iterations: int


def _empty(n):
    return np.zeros((0, n)), np.zeros(0)


def objective(H, c, x) -> float:
    return float(0.5 * x @ H @ x + c @ x)


def _independent_subset(rows: np.ndarray, candidates, base: np.ndarray, tol=1e-10):
    """Greedily keep candidate rows that are linearly independent of ``base``."""
    n = rows.shape[1]
    basis = np.zeros((n, 0))
    for r in base:
        v = r - basis @ (basis.T @ r)
        nv = np.linalg.norm(v)
        if nv > tol * max(np.linalg.norm(r), 1e-300):
            basis = np.column_stack([basis, v / nv])
    kept = []
    for k in candidates:
        r = rows[k]
        v = r - basis @ (basis.T @ r)
        v -= basis @ (basis.T @ v)
        nv = np.linalg.norm(v)
        if nv > tol * max(np.linalg.norm(r), 1e-300):
            basis = np.column_stack([basis, v / nv])
            kept.append(k)
    return kept


def _kkt(H_coo, A_w, n):
    """Sparse KKT matrix ``[[H, -A'], [A, 0]]``."""
    hr, hc, hv = H_coo
    a = A_w.tocoo()
    size = n + A_w.shape[0]
    rows = np.concatenate([hr, a.row + n, a.col])
    cols = np.concatenate([hc, a.col, a.row + n])
    vals = np.concatenate([hv, a.data, -a.data])
    return sp.csc_matrix((vals, (rows, cols)), shape=(size, size))


def solve_qp(
    H,
    c,
    A_eq=None,
    b_eq=None,
    A_in=None,
    b_in=None,
    x0=None,
    working=None,
    tol: float = 1e-12,
    max_iter: int | None = None,
) -> QPResult:
    """Active-set QP solve from the feasible point ``x0``.

    ``working`` optionally seeds the working set with inequality indices
    active at ``x0``; dependent rows are dropped. Raises ``FitError`` on
    iteration exhaustion and ``NumericalError`` if ``x0`` is infeasible.
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.size
    if A_eq is None:
        A_eq, b_eq = _empty(n)
    if A_in is None:
        A_in, b_in = _empty(n)
    A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float)).reshape(-1, n)
    A_in = np.atleast_2d(np.asarray(A_in, dtype=float)).reshape(-1, n)
    b_eq = np.asarray(b_eq, dtype=float).reshape(-1)
    b_in = np.asarray(b_in, dtype=float).reshape(-1)
    n_eq, n_in = A_eq.shape[0], A_in.shape[0]
    if max_iter is None:
        max_iter = 10 * (n + n_in) + 50

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    scale = max(1.0, float(np.max(np.abs(x), initial=0.0)))
    feas_tol = 1e-9 * scale
    if n_eq and np.max(np.abs(A_eq @ x - b_eq)) > feas_tol:
        raise NumericalError("QP start point violates an equality constraint")
    if n_in and np.min(A_in @ x - b_in) < -feas_tol:
        raise NumericalError("QP start point violates an inequality constraint")

    work = []
    if working is not None:
        work = _independent_subset(A_in, list(working), A_eq)

    # the shape-constrained problems are banded; sparse LU keeps each KKT
    # solve near linear in n
    H_coo = sp.coo_matrix(H)
    H_coo = (H_coo.row, H_coo.col, H_coo.data)
    A_all = sp.csr_matrix(np.vstack([A_eq, A_in]))
    eq_idx = np.arange(n_eq)
    row_norm = np.linalg.norm(A_in, axis=1)
    for it in range(1, max_iter + 1):
        k = n_eq + len(work)
        g = H @ x + c
        A_w = A_all[np.concatenate([eq_idx, n_eq + np.asarray(work, dtype=int)])]
        kkt = _kkt(H_coo, A_w, n)
        rhs = np.concatenate([-g, np.zeros(k)])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                sol = spla.splu(kkt).solve(rhs)
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise NumericalError(f"singular KKT system in QP: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise NumericalError("non-finite KKT solution in QP")
        p = sol[:n]
        lam = sol[n + n_eq:]

        if np.max(np.abs(p), initial=0.0) <= tol * scale:
            if not work or np.min(lam) >= -1e-12 * max(1.0, np.max(np.abs(g))):
                # polish: land exactly on the working constraints
                x = x + p
                return QPResult(
                    x=x,
                    objective=objective(H, c, x),
                    active=np.asarray(work, dtype=int),
                    multipliers=np.asarray(lam),
                    iterations=it,
                )
            work.pop(int(np.argmin(lam)))
            continue

        alpha, blocking = 1.0, None
        if n_in:
            in_work = np.zeros(n_in, dtype=bool)
            in_work[work] = True
            slope = A_in @ p
            # ignore rows (nearly) parallel to the step's null space
            thresh = 1e-10 * row_norm * np.linalg.norm(p)
            cand = np.flatnonzero((~in_work) & (slope < -thresh))
            if cand.size:
                slack = A_in[cand] @ x - b_in[cand]
                steps = np.maximum(slack, 0.0) / -slope[cand]
                j = int(np.argmin(steps))
                if steps[j] < 1.0:
                    alpha, blocking = float(steps[j]), int(cand[j])
        x = x + alpha * p
        if blocking is not None:
            work.append(blocking)

    raise FitError(
        f"active-set QP did not converge in {max_iter} iterations",
        best_params=x,
        residual=objective(H, c, x),
    )
