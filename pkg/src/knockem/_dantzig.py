"""Linear Dantzig-type program: min ||b||_1 s.t. ||c - G b||_inf <= lam.

Solved as the standard split-variable linear program. A row-generation
working set keeps the LPs small: only the constraint rows active near the
optimum enter the solve, violated rows are appended and the LP re-solved
until the full constraint set is feasible. Warm-started row sets make
descending-penalty sweeps cheap. Falls back to the full LP if the working
set fails to close.
"""

import numpy as np
from scipy.optimize import linprog

from .exceptions import SolverError

FEAS_TOL = 1e-8
MAX_ROUNDS = 60
ROWS_PER_ROUND = 12


def _reduced_lp(G, c, lam, rows):
    m = G.shape[0]
    sign = np.where(rows < m, 1.0, -1.0)
    idx = np.where(rows < m, rows, rows - m)
    Grows = sign[:, None] * G[idx]
    brows = lam + sign * c[idx]
    Aub = np.concatenate([Grows, -Grows], axis=1)
    res = linprog(
        np.ones(2 * m), A_ub=Aub, b_ub=brows, bounds=(0, None), method="highs-ds"
    )
    if res.status != 0:
        raise SolverError(f"working-set LP failed: {res.message}")
    return res.x[:m] - res.x[m:]


def solve_full(G, c, lam):
    """One full split-variable LP; reference path for tests and fallback."""
    m = G.shape[0]
    Aub = np.block([[G, -G], [-G, G]])
    bub = np.concatenate([lam + c, lam - c])
    res = linprog(
        np.ones(2 * m), A_ub=Aub, b_ub=bub, bounds=(0, None), method="highs-ds"
    )
    if res.status != 0:
        raise SolverError(f"Dantzig LP infeasible or failed: {res.message}")
    return res.x[:m] - res.x[m:]


def solve(G, c, lam, rows=None):
    """Solve the program; returns (b, rows) with ``rows`` reusable as a warm
    working set for a nearby ``lam``."""
    m = G.shape[0]
    if lam < 0:
        raise SolverError("negative constraint level")
    if np.max(np.abs(c)) <= lam + FEAS_TOL:
        return np.zeros(m), rows if rows is not None else np.empty(0, dtype=int)
    if rows is None or len(rows) == 0:
        viol0 = np.concatenate([c - lam, -c - lam])
        rows = np.argsort(viol0)[-ROWS_PER_ROUND:]
    rows = np.unique(np.asarray(rows, dtype=int))
    for _ in range(MAX_ROUNDS):
        b = _reduced_lp(G, c, lam, rows)
        s = G @ b - c
        viol = np.concatenate([s - lam, -s - lam])
        bad = np.flatnonzero(viol > FEAS_TOL)
        if bad.size == 0:
            return b, rows
        worst = bad[np.argsort(viol[bad])[::-1][:ROWS_PER_ROUND]]
        rows = np.unique(np.concatenate([rows, worst]))
    b = solve_full(G, c, lam)
    active = np.flatnonzero(
        np.abs(np.concatenate([(G @ b - c) - lam, -(G @ b - c) - lam])) < 1e-7
    )
    return b, np.unique(np.concatenate([rows, active]))
