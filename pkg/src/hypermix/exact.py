"""Exact rational linear algebra on object arrays of :class:`fractions.Fraction`.

Only what the rest of the package needs: conversion, Gaussian elimination
for determinants, solves and inverses. Complex rationals are not supported;
exact mode is restricted to rational scalars.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np


def to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)):
        return Fraction(float(value))
    if isinstance(value, complex) or np.iscomplexobj(value):
        if complex(value).imag != 0:
            raise TypeError("exact mode supports rational scalars only")
        return Fraction(complex(value).real)
    return Fraction(value)


def as_fraction_array(a) -> np.ndarray:
    """Convert ``a`` elementwise to Fractions (floats are converted exactly)."""
    arr = np.asarray(a, dtype=object)
    out = np.empty(arr.shape, dtype=object)
    for idx in np.ndindex(arr.shape):
        out[idx] = to_fraction(arr[idx])
    return out


def identity(n: int) -> np.ndarray:
    out = np.full((n, n), Fraction(0), dtype=object)
    for i in range(n):
        out[i, i] = Fraction(1)
    return out


def _eliminate(a: np.ndarray, b: np.ndarray | None):
    """Forward elimination with first-nonzero pivoting, in place.

    Returns the determinant sign/product bookkeeping as the product of pivots.
    """
    n = a.shape[0]
    det = Fraction(1)
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r, col] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            if b is not None:
                b[[col, piv]] = b[[piv, col]]
            det = -det
        p = a[col, col]
        det *= p
        for r in range(col + 1, n):
            f = a[r, col]
            if f == 0:
                continue
            f = f / p
            a[r, col:] = a[r, col:] - f * a[col, col:]
            if b is not None:
                b[r] = b[r] - f * b[col]
    return det


def det(a) -> Fraction:
    m = as_fraction_array(a)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("det needs a square matrix")
    return _eliminate(m.copy(), None)


def solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` exactly; ``b`` may be a vector or a matrix."""
    m = as_fraction_array(a).copy()
    rhs = as_fraction_array(b).copy()
    n = m.shape[0]
    d = _eliminate(m, rhs)
    if d == 0:
        raise ZeroDivisionError("singular matrix")
    x = np.empty(rhs.shape, dtype=object)
    for r in range(n - 1, -1, -1):
        acc = rhs[r]
        for c in range(r + 1, n):
            acc = acc - m[r, c] * x[c]
        x[r] = acc / m[r, r]
    return x


def inverse(a) -> np.ndarray:
    return solve(a, identity(np.asarray(a).shape[0]))


def to_float(a, dtype=float) -> np.ndarray:
    arr = np.asarray(a, dtype=object)
    return np.array([dtype(v) for v in arr.ravel()], dtype=dtype).reshape(arr.shape)
