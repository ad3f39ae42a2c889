"""Exact integer matrix helpers (lists of lists of Python ints)."""
from __future__ import annotations

from fractions import Fraction

import numpy as np


def identity(d: int) -> list[list[int]]:
    return [[int(i == j) for j in range(d)] for i in range(d)]


def copy(m):
    return [list(r) for r in m]


def matmul(a, b):
    bt = list(zip(*b))
    return [[sum(x * y for x, y in zip(row, col)) for col in bt] for row in a]


def matvec(m, v):
    return [sum(x * y for x, y in zip(row, v)) for row in m]


def transpose(m):
    return [list(r) for r in zip(*m)]


def det(m) -> int:
    """Bareiss fraction-free determinant."""
    a = copy(m)
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1] if n else 1


def solve_rational(m, rhs):
    """Solve m x = rhs exactly (m square, invertible); rhs is a list of columns."""
    n = len(m)
    aug = [[Fraction(x) for x in m[i]] + [Fraction(c[i]) for c in rhs] for i in range(n)]
    for k in range(n):
        piv = next(r for r in range(k, n) if aug[r][k] != 0)
        aug[k], aug[piv] = aug[piv], aug[k]
        p = aug[k][k]
        aug[k] = [x / p for x in aug[k]]
        for r in range(n):
            if r != k and aug[r][k] != 0:
                f = aug[r][k]
                aug[r] = [x - f * y for x, y in zip(aug[r], aug[k])]
    return [[aug[i][n + j] for i in range(n)] for j in range(len(rhs))]


def inverse_unimodular(m):
    """Inverse of an integer matrix with determinant +-1, as integers."""
    n = len(m)
    cols = solve_rational(m, [[int(i == j) for i in range(n)] for j in range(n)])
    inv = [[cols[j][i] for j in range(n)] for i in range(n)]
    out = []
    for row in inv:
        if any(x.denominator != 1 for x in row):
            raise ValueError("matrix is not unimodular")
        out.append([int(x) for x in row])
    return out


def kernel_lattice(rows, d: int):
    """Z-basis (as columns of a d x k list matrix) of {x in Z^d : r . x = 0 for all rows}.

    Unimodular column reduction: M U is brought to column echelon form and the
    columns of U beyond the pivots span the saturated kernel.  Also returns the
    full unimodular U, whose leading columns complete the basis.
    """
    M = [list(r) for r in rows]
    U = identity(d)
    pivot = 0

    def colop_add(j, i, q):
        # column j -= q * column i
        for r in M:
            r[j] -= q * r[i]
        for r in U:
            r[j] -= q * r[i]

    def colswap(i, j):
        for r in M:
            r[i], r[j] = r[j], r[i]
        for r in U:
            r[i], r[j] = r[j], r[i]

    for r in range(len(M)):
        if pivot >= d:
            break
        while True:
            nz = [j for j in range(pivot, d) if M[r][j] != 0]
            if not nz:
                break
            jmin = min(nz, key=lambda j: abs(M[r][j]))
            colswap(pivot, jmin)
            done = True
            for j in range(pivot + 1, d):
                if M[r][j] != 0:
                    colop_add(j, pivot, M[r][j] // M[r][pivot])
                    if M[r][j] != 0:
                        done = False
            if done:
                pivot += 1
                break
    basis = [[U[i][j] for j in range(pivot, d)] for i in range(d)]
    return basis, U, pivot


def norm_inf(m) -> int:
    return max(sum(abs(x) for x in row) for row in m)


def max_entry(m) -> int:
    return max(abs(x) for row in m for x in row)


def to_float_array(m) -> np.ndarray:
    return np.array([[float(x) for x in row] for row in m], dtype=float)


def is_positive(m) -> bool:
    return all(x > 0 for row in m for x in row)
