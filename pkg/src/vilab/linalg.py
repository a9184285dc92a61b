"""Dense Gaussian elimination over an arbitrary ordered field."""

from __future__ import annotations

from typing import Sequence


class SingularMatrixError(ArithmeticError):
    pass


def solve(a: Sequence[Sequence], b: Sequence) -> list:
    """Solve ``a @ x = b`` by elimination with partial pivoting.

    Works on any scalar type supporting field operations and ``abs``; with
    Fractions the result is exact. Inputs are not modified.
    """
    n = len(a)
    if len(b) != n or any(len(row) != n for row in a):
        raise ValueError("solve needs a square system")
    rows = [list(row) + [rhs] for row, rhs in zip(a, b)]

    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(rows[r][col]))
        if rows[pivot][col] == 0:
            raise SingularMatrixError(f"zero pivot in column {col}")
        rows[col], rows[pivot] = rows[pivot], rows[col]
        head = rows[col]
        for r in range(col + 1, n):
            factor = rows[r][col] / head[col]
            if factor == 0:
                continue
            row = rows[r]
            for c in range(col, n + 1):
                row[c] = row[c] - factor * head[c]

    x = [None] * n
    for r in range(n - 1, -1, -1):
        acc = rows[r][n]
        for c in range(r + 1, n):
            acc = acc - rows[r][c] * x[c]
        x[r] = acc / rows[r][r]
    return x
