"""Nilpotent backward-shift blocks, their exponentials and the steering solver.

A :class:`ShiftBlock` of half-dimension ``n`` acts on ``K^{2n}`` by
``S e_1 = 0`` and ``S e_k = e_{k-1}``.  ``E`` is spanned by the first ``n``
basis vectors and ``F`` by the last ``n``; ``P`` projects onto ``E`` along
``F``.  Vectors of ``E`` are passed around as their ``n`` leading
coefficients.

Two arithmetic backends are available everywhere: floats (numpy) and exact
rationals (object arrays of :class:`~fractions.Fraction`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import exact as xq
from .errors import IllConditioned, ZeroParameter

__all__ = [
    "ShiftBlock",
    "SteeringProblem",
    "SteeringSolution",
    "DecayReport",
    "exp_shift",
    "build_a_matrix",
    "scaling_matrix",
    "solve_steering",
    "verify_decay",
    "residual_curve",
]


@dataclass(frozen=True)
class ShiftBlock:
    """Backward shift on ``K^{2n}`` with the split ``E + F``."""

    n: int
    field: str = "real"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"half-dimension must be a positive integer, got {self.n!r}")
        if self.field not in ("real", "complex"):
            raise ValueError(f"field must be 'real' or 'complex', got {self.field!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n

    def shift_matrix(self, exact: bool = False) -> np.ndarray:
        if exact:
            s = np.full((self.dim, self.dim), Fraction(0), dtype=object)
            for k in range(1, self.dim):
                s[k - 1, k] = Fraction(1)
            return s
        return np.eye(self.dim, k=1)

    def projection(self) -> np.ndarray:
        p = np.zeros((self.dim, self.dim))
        p[: self.n, : self.n] = np.eye(self.n)
        return p

    def embed(self, u) -> np.ndarray:
        """Zero-pad the ``n`` coefficients of ``u`` to a full ``2n``-vector."""
        u = np.asarray(u)
        if u.shape != (self.n,):
            raise ValueError(f"expected {self.n} coefficients, got shape {u.shape}")
        out = np.zeros(self.dim, dtype=u.dtype)
        out[: self.n] = u
        return out


def _taylor_coeffs(z, count: int, exact: bool) -> list:
    """``[z^m / m! for m < count]`` built by recurrence."""
    if exact:
        z = xq.to_fraction(z)
        out = [Fraction(1)]
    else:
        out = [1.0 + 0 * z]
    for m in range(1, count):
        out.append(out[-1] * z / m)
    return out


def exp_shift(block: ShiftBlock, z, exact: bool = False) -> np.ndarray:
    """Exact exponential ``e^{zS}`` of the block shift.

    The series terminates after ``2n`` terms, so there is no cutoff error:
    ``M[j, k] = z^(k-j) / (k-j)!`` for ``k >= j`` and zero below the diagonal.
    """
    d = block.dim
    coeffs = _taylor_coeffs(z, d, exact)
    if exact:
        m = np.full((d, d), Fraction(0), dtype=object)
    else:
        dtype = complex if (np.iscomplexobj(z) or block.field == "complex") else float
        m = np.zeros((d, d), dtype=dtype)
    for j in range(d):
        for k in range(j, d):
            m[j, k] = coeffs[k - j]
    return m


def build_a_matrix(n: int, z, exact: bool = False) -> np.ndarray:
    """Hankel matrix with entries ``z^(j+k-1) / (j+k-1)!`` (1-based ``j, k``)."""
    coeffs = _taylor_coeffs(z, 2 * n, exact)
    if exact:
        a = np.empty((n, n), dtype=object)
    else:
        a = np.empty((n, n), dtype=complex if np.iscomplexobj(z) else float)
    for j in range(n):
        for k in range(n):
            a[j, k] = coeffs[j + k + 1]
    return a


def scaling_matrix(n: int, z, exact: bool = False) -> np.ndarray:
    """Diagonal ``D_{n,z} = diag(1, z, ..., z^(n-1))``."""
    if exact:
        z = xq.to_fraction(z)
        d = np.full((n, n), Fraction(0), dtype=object)
        for i in range(n):
            d[i, i] = z**i
        return d
    return np.diag([z**i for i in range(n)])


@lru_cache(maxsize=None)
def _a1_inverse_exact(n: int) -> np.ndarray:
    return xq.inverse(build_a_matrix(n, 1, exact=True))


@lru_cache(maxsize=None)
def _a1_inverse_float(n: int) -> np.ndarray:
    # rounded once from the exact inverse; a float LU of A_{n,1} loses digits fast
    return xq.to_float(_a1_inverse_exact(n))


@dataclass(frozen=True)
class SteeringProblem:
    block: ShiftBlock
    z: complex
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.z == 0:
            raise ZeroParameter("steering needs z != 0")
        for name in ("u", "v"):
            arr = np.asarray(getattr(self, name))
            if arr.dtype == object:
                arr = arr.copy()
            if arr.shape != (self.block.n,):
                raise ValueError(
                    f"{name} must hold {self.block.n} coefficients, got shape {arr.shape}"
                )
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class SteeringSolution:
    """Steering vector ``x`` and its image ``e^{zS} x``.

    ``residual`` is the relative residual of ``P e^{zS} x = v`` measured
    against ``|e^{zS}| |x|``; the upper half of ``image`` is ``v`` by
    construction, the lower half is computed from the tail of ``x`` only.
    """

    x: np.ndarray
    image: np.ndarray
    tail_u: np.ndarray
    tail_v: np.ndarray
    residual: float
    z: complex
    exact: bool = False

    @property
    def n(self) -> int:
        return self.x.shape[0] // 2


def _rhs_scaled(n, z, u, v):
    """``D_{n,z}^{-1} w^z``: bounded in ``z`` for ``|z| >= eps``."""
    y = []
    for j in range(1, n + 1):
        acc = v[n - j] * z ** (1 - j)
        for k in range(n - j + 1, n + 1):
            acc = acc - z ** (k - n) * u[k - 1] / math.factorial(k + j - n - 1)
        y.append(acc)
    return y


def _image_tail(n, z, x, coeffs):
    tail = []
    for j in range(1, n + 1):
        acc = 0 * x[0]
        for l in range(n + j, 2 * n + 1):
            acc = acc + coeffs[l - n - j] * x[l - 1]
        tail.append(acc)
    return tail


def solve_steering(problem: SteeringProblem, tol: float = 1e-9, exact: bool = False) -> SteeringSolution:
    """Find the unique ``x`` with ``P x = u`` and ``P e^{zS} x = v``.

    The tail ``x_{n+1..2n}`` solves ``A_{n,z} xbar = w^z``.  In float mode the
    solve goes through ``A_{n,z} = z D A_{n,1} D``: scale the right-hand side
    by ``D^{-1}``, apply the (exactly precomputed) inverse of ``A_{n,1}``,
    rescale.  Exact mode does the same algebra in rationals.

    Raises
    ------
    ZeroParameter
        If ``z == 0``.
    IllConditioned
        If the float solve leaves a relative residual above ``tol``.
    """
    block, n = problem.block, problem.block.n
    z = problem.z
    if z == 0:
        raise ZeroParameter("steering needs z != 0")
    if exact:
        z = xq.to_fraction(z)
        u = list(xq.as_fraction_array(problem.u))
        v = list(xq.as_fraction_array(problem.v))
        y = _rhs_scaled(n, z, u, v)
        s = _a1_inverse_exact(n).dot(np.array(y, dtype=object))
        xbar = [s[j - 1] / z**j for j in range(1, n + 1)]
        x = np.array(u + xbar, dtype=object)
        image = exp_shift(block, z, exact=True).dot(x)
        tail = image[n:]
        residual = 0.0 if all(image[:n] == np.array(v, dtype=object)) else math.inf
        return SteeringSolution(
            x=x,
            image=image,
            tail_u=np.array([abs(t) for t in xbar], dtype=object),
            tail_v=np.array([abs(t) for t in tail], dtype=object),
            residual=residual,
            z=z,
            exact=True,
        )

    cplx = (
        np.iscomplexobj(z)
        or np.iscomplexobj(problem.u)
        or np.iscomplexobj(problem.v)
        or block.field == "complex"
    )
    dtype = complex if cplx else float
    z = dtype(z)
    u = problem.u.astype(dtype)
    v = problem.v.astype(dtype)
    y = np.array(_rhs_scaled(n, z, u, v), dtype=dtype)
    s = _a1_inverse_float(n) @ y
    xbar = np.array([s[j - 1] * z ** (-j) for j in range(1, n + 1)], dtype=dtype)
    x = np.concatenate([u, xbar])
    coeffs = _taylor_coeffs(z, 2 * n, False)
    tail = np.array(_image_tail(n, z, x, coeffs), dtype=dtype)
    image = np.concatenate([v, tail])

    m = exp_shift(block, z)
    r = (m[:n] @ x) - v
    scale = np.max(np.abs(m[:n]) @ np.abs(x)) + np.max(np.abs(v), initial=0.0)
    residual = float(np.max(np.abs(r)) / scale) if scale > 0 else 0.0
    if residual > tol:
        raise IllConditioned(f"relative residual {residual:.3e} exceeds {tol:.1e} (n={n}, z={z})")
    return SteeringSolution(
        x=x,
        image=image,
        tail_u=np.abs(xbar),
        tail_v=np.abs(tail),
        residual=residual,
        z=z,
    )


@dataclass
class DecayReport:
    """Sup-over-sample tail magnitudes scaled by ``|z|^j`` and fitted slopes.

    ``sup_u[i, j]`` is ``max_pairs |x_{n+j+1}|`` at ``z_samples[i]``; ``sup_v``
    likewise for the image.  ``c`` is the largest observed
    ``|tail_j| * |z|^j`` over everything.
    """

    n: int
    z_samples: np.ndarray
    sup_u: np.ndarray
    sup_v: np.ndarray
    c_u: np.ndarray
    c_v: np.ndarray
    slopes_u: np.ndarray
    slopes_v: np.ndarray
    c: float = field(default=0.0)

    def rows(self):
        for i, z in enumerate(self.z_samples):
            for j in range(self.n):
                yield {
                    "z_abs": float(abs(z)),
                    "j": j + 1,
                    "sup_tail_x": float(self.sup_u[i, j]),
                    "sup_tail_image": float(self.sup_v[i, j]),
                }


def _fit_slope(zabs, mags):
    if np.any(mags <= 0) or len(zabs) < 2:
        return math.nan
    return float(np.polyfit(np.log(zabs), np.log(mags), 1)[0])


def verify_decay(block: ShiftBlock, bound_set, eps: float, z_samples, tol: float = 1e-9) -> DecayReport:
    """Measure how steering tails decay with ``|z|``.

    For every sampled ``z`` the tail entries ``|x_{n+j}|`` and
    ``|(e^{zS}x)_{n+j}|`` are maximised over ``bound_set`` (pairs ``(u, v)``)
    and a log-log slope is fitted per ``j``; the bound predicts ``-j``.
    """
    zs = np.asarray(list(z_samples))
    if np.any(np.abs(zs) < eps):
        raise ValueError(f"all |z| must be >= eps={eps}")
    pairs = list(bound_set)
    n = block.n
    sup_u = np.zeros((len(zs), n))
    sup_v = np.zeros((len(zs), n))
    for i, z in enumerate(zs):
        for u, v in pairs:
            sol = solve_steering(SteeringProblem(block, z, np.asarray(u), np.asarray(v)), tol=tol)
            sup_u[i] = np.maximum(sup_u[i], sol.tail_u)
            sup_v[i] = np.maximum(sup_v[i], sol.tail_v)
    zabs = np.abs(zs)
    powers = zabs[:, None] ** np.arange(1, n + 1)[None, :]
    c_u = np.max(sup_u * powers, axis=0) if len(zs) else np.zeros(n)
    c_v = np.max(sup_v * powers, axis=0) if len(zs) else np.zeros(n)
    slopes_u = np.array([_fit_slope(zabs, sup_u[:, j]) for j in range(n)])
    slopes_v = np.array([_fit_slope(zabs, sup_v[:, j]) for j in range(n)])
    return DecayReport(
        n=n,
        z_samples=zs,
        sup_u=sup_u,
        sup_v=sup_v,
        c_u=c_u,
        c_v=c_v,
        slopes_u=slopes_u,
        slopes_v=slopes_v,
        c=float(max(np.max(c_u, initial=0.0), np.max(c_v, initial=0.0))),
    )


def residual_curve(block: ShiftBlock, u, v, z_samples, tol: float = 1e-9):
    """``(|z|, ||x^z - u||_inf, ||e^{zS} x^z - v||_inf)`` for each sample."""
    u = np.asarray(u)
    v = np.asarray(v)
    eu, ev = block.embed(u), block.embed(v)
    out = []
    for z in z_samples:
        sol = solve_steering(SteeringProblem(block, z, u, v), tol=tol)
        out.append((float(abs(z)), float(np.max(np.abs(sol.x - eu))), float(np.max(np.abs(sol.image - ev)))))
    return out
