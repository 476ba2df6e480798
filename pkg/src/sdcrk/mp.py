"""Arbitrary-precision scalars and small dense helpers built on gmpy2 (MPFR).

All coefficient construction and order analysis runs on ``gmpy2.mpfr``
values.  gmpy2 rounds every operation to the precision of the active
thread-local context, so any routine that manipulates high-precision data
must run inside :func:`working_precision`.  Time integration and stability
sweeps use ordinary 64-bit floats and never touch this module's context.
"""

from __future__ import annotations

import contextlib
import math
import os
from typing import Iterable, Sequence

import gmpy2
from gmpy2 import mpfr

DEFAULT_PRECISION = 256
PRECISION_ENV_VAR = "SDCRK_PRECISION"


def default_precision() -> int:
    """Default working precision in bits, overridable via the environment."""
    raw = os.environ.get(PRECISION_ENV_VAR)
    if raw is None:
        return DEFAULT_PRECISION
    bits = int(raw)
    if bits < 64:
        raise ValueError(f"{PRECISION_ENV_VAR} must be at least 64 bits, got {bits}")
    return bits


@contextlib.contextmanager
def working_precision(bits: int):
    """Run the enclosed block with an MPFR context of ``bits`` precision."""
    if bits < 2:
        raise ValueError(f"precision must be positive, got {bits}")
    previous = gmpy2.get_context()
    gmpy2.set_context(gmpy2.context(precision=bits))
    try:
        yield
    finally:
        gmpy2.set_context(previous)


def decimal_digits(bits: int) -> int:
    """Number of significant decimal digits carried by ``bits`` of mantissa."""
    return int(bits * math.log10(2))


def to_mpfr(x) -> mpfr:
    """Convert ``x`` (number or decimal string) at the active precision."""
    return mpfr(x)


def to_decimal(x: mpfr) -> str:
    """Round-trippable decimal string for an mpfr value."""
    digits = decimal_digits(x.precision) + 3
    return format(x, f".{digits}g")


def precision_of(values: Iterable[mpfr]) -> int:
    """Largest mantissa precision among mpfr values (53 for plain floats)."""
    bits = 53
    for v in values:
        bits = max(bits, getattr(v, "precision", 53))
    return bits


# -- tuple-based linear algebra, enough for s <= O(10) coefficient work --

Vector = tuple
Matrix = tuple


def vector(values) -> Vector:
    return tuple(mpfr(v) for v in values)


def matrix(rows) -> Matrix:
    return tuple(tuple(mpfr(v) for v in row) for row in rows)


def zeros(n: int, m: int) -> Matrix:
    zero = mpfr(0)
    return tuple(tuple(zero for _ in range(m)) for _ in range(n))


def mat_vec(a: Matrix, v: Sequence) -> list:
    return [sum((row[j] * v[j] for j in range(len(v))), mpfr(0)) for row in a]


def vec_dot(u: Sequence, v: Sequence) -> mpfr:
    return sum((u[i] * v[i] for i in range(len(u))), mpfr(0))


def mat_sub(a: Matrix, b: Matrix) -> Matrix:
    return tuple(
        tuple(a[i][j] - b[i][j] for j in range(len(a[i]))) for i in range(len(a))
    )


def row_sums(a: Matrix) -> Vector:
    return tuple(sum(row, mpfr(0)) for row in a)


def transpose(a: Matrix) -> Matrix:
    return tuple(zip(*a))


def lu_doolittle(a: Matrix) -> tuple[Matrix, Matrix]:
    """LU decomposition ``a = L @ U`` with unit lower-triangular ``L``.

    No pivoting; raises if a pivot underflows the working precision.  The
    collocation matrices this is applied to have nonzero leading minors.
    """
    n = len(a)
    low = [[mpfr(0)] * n for _ in range(n)]
    up = [[mpfr(0)] * n for _ in range(n)]
    tiny = mpfr(2) ** (-(gmpy2.get_context().precision - 4))
    for i in range(n):
        low[i][i] = mpfr(1)
        for j in range(i, n):
            up[i][j] = a[i][j] - sum((low[i][k] * up[k][j] for k in range(i)), mpfr(0))
        if abs(up[i][i]) < tiny:
            from .errors import IllConditionedError

            raise IllConditionedError(f"LU pivot {i} vanished at working precision")
        for j in range(i + 1, n):
            low[j][i] = (
                a[j][i] - sum((low[j][k] * up[k][i] for k in range(i)), mpfr(0))
            ) / up[i][i]
    return tuple(tuple(r) for r in low), tuple(tuple(r) for r in up)


def poly_eval(coeffs: Sequence, x):
    """Evaluate a polynomial given ascending coefficients (Horner)."""
    acc = mpfr(0)
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc
