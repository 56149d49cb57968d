"""Exact transportation LP oracle over rational arithmetic.

A two-phase dense simplex with Bland's rule running entirely on
``fractions.Fraction``: every pivot is exact and Bland's rule guarantees
termination, so the returned optimum is the true rational optimum of the
transportation program. Only used by tests as an independent reference for
the float LP solver; written for clarity over speed (d <= 8 or so).
"""

from __future__ import annotations

from fractions import Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


def _pivot(tableau, basis, row, col):
    pivot_val = tableau[row][col]
    tableau[row] = [entry / pivot_val for entry in tableau[row]]
    for r, line in enumerate(tableau):
        if r != row and line[col] != ZERO:
            factor = line[col]
            tableau[r] = [a - factor * b for a, b in zip(line, tableau[row])]
    basis[row] = col


def _bland_min(costs, tableau, basis, n_cols):
    """One simplex phase: minimize the cost row in place, Bland's rule."""
    m = len(tableau)
    while True:
        # Reduced costs: c_j - c_B B^{-1} A_j, computed from scratch each
        # round; exact arithmetic keeps this simple and safe.
        y = [costs[basis[r]] for r in range(m)]
        entering = -1
        for j in range(n_cols):
            reduced = costs[j] - sum(y[r] * tableau[r][j] for r in range(m))
            if reduced < ZERO:
                entering = j
                break
        if entering < 0:
            return
        leaving = -1
        best = None
        for r in range(m):
            if tableau[r][entering] > ZERO:
                ratio = tableau[r][-1] / tableau[r][entering]
                if best is None or ratio < best or (
                    ratio == best and basis[r] < basis[leaving]
                ):
                    best = ratio
                    leaving = r
        if leaving < 0:
            raise RuntimeError("unbounded LP; transportation program cannot be")
        _pivot(tableau, basis, leaving, entering)


def simplex_min(costs, a_matrix, b_vector):
    """Minimize costs . x subject to a_matrix x = b_vector, x >= 0.

    All inputs are Fractions with b >= 0. Returns (optimal value, solution).
    """
    m, n = len(a_matrix), len(costs)
    # Phase 1: artificial columns n..n+m-1 form the starting basis.
    tableau = [list(row) + [ZERO] * m + [b] for row, b in zip(a_matrix, b_vector)]
    for r in range(m):
        tableau[r][n + r] = ONE
    basis = list(range(n, n + m))
    phase1 = [ZERO] * n + [ONE] * m
    _bland_min(phase1, tableau, basis, n + m)
    infeasibility = sum(tableau[r][-1] for r in range(m) if basis[r] >= n)
    if infeasibility != ZERO:
        raise RuntimeError("infeasible LP; marginals must carry equal mass")
    # Drive leftover artificials (stuck at zero) out of the basis.
    for r in range(m):
        if basis[r] >= n:
            for j in range(n):
                if tableau[r][j] != ZERO:
                    _pivot(tableau, basis, r, j)
                    break
    rows_keep = [r for r in range(m) if basis[r] < n]
    tableau = [tableau[r][:n] + [tableau[r][-1]] for r in rows_keep]
    basis = [basis[r] for r in rows_keep]
    phase2 = list(costs)
    _bland_min(phase2, tableau, basis, n)
    solution = [ZERO] * n
    for r, col in enumerate(basis):
        solution[col] = tableau[r][-1]
    value = sum(c * x for c, x in zip(phase2, solution))
    return value, solution


def transport_exact(p, q, cost):
    """Exact optimum of min <cost, X>, X 1 = p, X^T 1 = q, X >= 0.

    p, q are Fraction lists of equal mass; cost is a d x d grid of
    Fractions. The last column constraint is implied and dropped to keep
    the system full rank.
    """
    d = len(p)
    if sum(p) != sum(q):
        raise ValueError("marginals must carry equal mass")
    n = d * d
    a_matrix = []
    b_vector = []
    for i in range(d):
        row = [ZERO] * n
        for j in range(d):
            row[i * d + j] = ONE
        a_matrix.append(row)
        b_vector.append(p[i])
    for j in range(d - 1):
        row = [ZERO] * n
        for i in range(d):
            row[i * d + j] = ONE
        a_matrix.append(row)
        b_vector.append(q[j])
    costs = [cost[i][j] for i in range(d) for j in range(d)]
    value, _ = simplex_min(costs, a_matrix, b_vector)
    return value
