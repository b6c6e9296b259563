"""Commuting shift tuples on product grids and multi-parameter steering.

The grid ``M = N_1 x ... x N_k`` with ``N_j = {1..2n_j}`` is flattened
row-major (last axis fastest); 1-based multi-indices map to
0-based storage by subtracting one per axis.  ``T_j`` lowers the ``j``-th
coordinate by one and kills basis vectors with ``m_j = 1``; with this layout
``T_j`` is the Kronecker product ``I x .. x S_j x .. x I``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np
import scipy.sparse as sp

from . import exact as xq
from .errors import CapExceeded, IndexOutOfRange, NoLargeCoordinate
from .jordan import ShiftBlock, SteeringProblem, exp_shift, solve_steering

DEFAULT_CAP = 4096
DEFAULT_TAU = 10.0


@dataclass(frozen=True)
class TensorTuple:
    dims: tuple
    operators: tuple
    field: str = "real"
    cap: int = DEFAULT_CAP

    @property
    def k(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple:
        return tuple(2 * n for n in self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def flat_index(self, m) -> int:
        """Flat storage index of the 1-based multi-index ``m``."""
        m = tuple(int(v) for v in m)
        if len(m) != self.k or any(not 1 <= mj <= sj for mj, sj in zip(m, self.shape)):
            raise IndexOutOfRange(f"multi-index {m} outside grid {self.shape}")
        return int(np.ravel_multi_index(tuple(v - 1 for v in m), self.shape))

    def multi_index(self, i: int) -> tuple:
        return tuple(int(v) + 1 for v in np.unravel_index(i, self.shape))

    def basis_vector(self, m, dtype=float) -> np.ndarray:
        e = np.zeros(self.size, dtype=dtype)
        e[self.flat_index(m)] = 1
        return e

    def e_indices(self) -> list:
        """Flat indices of ``M_0 = Q_1 x ... x Q_k`` (the block spanning ``E``)."""
        return [self.flat_index(m) for m in itertools.product(*(range(1, n + 1) for n in self.dims))]

    def embed_e(self, coeffs) -> np.ndarray:
        """Full-grid vector from an array of shape ``dims`` of ``E``-coefficients."""
        coeffs = np.asarray(coeffs)
        if coeffs.shape != tuple(self.dims):
            raise ValueError(f"E-coefficients must have shape {tuple(self.dims)}, got {coeffs.shape}")
        out = np.zeros(self.shape, dtype=coeffs.dtype)
        out[tuple(slice(0, n) for n in self.dims)] = coeffs
        return out.reshape(-1)

    def e_coeffs(self, vec, atol: float = 0.0) -> np.ndarray:
        vec = np.asarray(vec)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a grid vector of length {self.size}, got shape {vec.shape}")
        grid = vec.reshape(self.shape)
        block = grid[tuple(slice(0, n) for n in self.dims)]
        rest = grid.copy()
        rest[tuple(slice(0, n) for n in self.dims)] = 0
        if np.any(np.abs(rest) > atol):
            raise ValueError("vector is not supported on M_0")
        return block.copy()

    def blocks(self) -> list:
        return [ShiftBlock(n, self.field) for n in self.dims]


def _shift_sparse(n: int):
    return sp.eye(2 * n, k=1, format="csr", dtype=np.int64)


def build_tensor_tuple(dims, cap: int = DEFAULT_CAP, field: str = "real") -> TensorTuple:
    """Sparse ``T_j = I x .. x S_j x .. x I`` on the grid with half-dims ``dims``."""
    dims = tuple(int(n) for n in dims)
    if not dims or any(n < 1 for n in dims):
        raise ValueError(f"dims must be a non-empty tuple of positive integers, got {dims}")
    size = math.prod(2 * n for n in dims)
    if size > cap:
        raise CapExceeded(f"grid dimension {size} exceeds cap {cap}")
    ops = []
    for j in range(len(dims)):
        factors = [
            _shift_sparse(n) if l == j else sp.identity(2 * n, format="csr", dtype=np.int64)
            for l, n in enumerate(dims)
        ]
        ops.append(reduce(lambda a, b: sp.kron(a, b, format="csr"), factors).tocsr())
    for a, b in itertools.combinations(ops, 2):
        comm = (a @ b - b @ a).tocsr()
        comm.eliminate_zeros()
        if comm.nnz:
            raise AssertionError("shift operators failed to commute")
    return TensorTuple(dims=dims, operators=tuple(ops), field=field, cap=cap)


@dataclass(frozen=True)
class KernelSubspace:
    """Basis of ``kappa(n, T)`` given as flat grid indices."""

    n: tuple
    basis: tuple

    def verify(self, tt: TensorTuple) -> bool:
        """Membership certificate: each ``e_m`` equals ``T^n e_{m+n}`` and
        ``T_j^{2 n_j} e_{m+n} = 0`` for every ``j``."""
        for i in self.basis:
            m = tt.multi_index(i)
            y = tt.basis_vector(tuple(a + b for a, b in zip(m, self.n)), dtype=np.int64)
            img = y
            for op, nj in zip(tt.operators, self.n):
                for _ in range(nj):
                    img = op @ img
            if not np.array_equal(img, tt.basis_vector(m, dtype=np.int64)):
                return False
            for op, nj in zip(tt.operators, self.n):
                w = y
                for _ in range(2 * nj):
                    w = op @ w
                if np.any(w):
                    return False
        return True


def compute_kappa(tt: TensorTuple, n) -> KernelSubspace:
    """``kappa(n, T) = T_1^{n_1}..T_k^{n_k}( cap_j ker T_j^{2 n_j} )``.

    For the shift tuple this is ``span{e_m : m_j <= n_j}``.
    """
    n = tuple(int(v) for v in n)
    if len(n) != tt.k or any(not 1 <= a <= b for a, b in zip(n, tt.dims)):
        raise IndexOutOfRange(f"n={n} must satisfy 1 <= n_j <= {tt.dims}")
    basis = tuple(tt.flat_index(m) for m in itertools.product(*(range(1, a + 1) for a in n)))
    return KernelSubspace(n=n, basis=basis)


def _degree(tt: TensorTuple) -> int:
    return sum(2 * n - 1 for n in tt.dims)


def _linear_combination(tt: TensorTuple, z, exact: bool):
    if len(z) != tt.k:
        raise ValueError(f"need {tt.k} parameters, got {len(z)}")
    if exact:
        zs = [xq.to_fraction(v) for v in z]
        coo = [op.tocoo() for op in tt.operators]
        entries = []
        for zj, c in zip(zs, coo):
            if zj != 0:
                entries.extend((int(r), int(col), zj * int(val)) for r, col, val in zip(c.row, c.col, c.data))
        return entries
    dtype = complex if (np.iscomplexobj(np.asarray(z)) or tt.field == "complex") else float
    out = sp.csr_matrix((tt.size, tt.size), dtype=dtype)
    for zj, op in zip(z, tt.operators):
        out = out + zj * op.astype(dtype)
    return out.tocsr()


def _exact_matvec(entries, size, x):
    out = np.full(x.shape, Fraction(0), dtype=object)
    for r, c, val in entries:
        out[r] = out[r] + val * x[c]
    return out


def apply_exp_linear_combination(tt: TensorTuple, z, x, exact: bool = False) -> np.ndarray:
    """``e^{<z,T>} x`` by Horner's rule on the terminating series.

    ``x`` may be a vector or a matrix (columns are transformed).
    """
    deg = _degree(tt)
    if exact:
        entries = _linear_combination(tt, z, True)
        x = xq.as_fraction_array(x)
        y = x.copy()
        for m in range(deg, 0, -1):
            y = x + _exact_matvec(entries, tt.size, y) / m
        return y
    lin = _linear_combination(tt, z, False)
    x = np.asarray(x)
    dtype = np.result_type(x.dtype, lin.dtype)
    x = x.astype(dtype)
    y = x.copy()
    for m in range(deg, 0, -1):
        y = x + (lin @ y) / m
    return y


def exp_linear_combination(tt: TensorTuple, z, exact: bool = False) -> np.ndarray:
    """Dense ``e^{<z,T>}``; the series stops at degree ``sum(2 n_j - 1)``."""
    if tt.size > tt.cap:
        raise CapExceeded(f"grid dimension {tt.size} exceeds cap {tt.cap}")
    if exact:
        return apply_exp_linear_combination(tt, z, xq.identity(tt.size), exact=True)
    return apply_exp_linear_combination(tt, z, np.eye(tt.size))


# --------------------------------------------------------------------------
# steering


@dataclass
class _FactorPieces:
    """Per-factor vectors used to assemble tensor steering sequences.

    ``to_zero[q]`` steers ``(e_q, 0)`` and ``from_zero[q]`` steers ``(0, e_q)``;
    each entry is a pair ``(x, e^{zS} x)``.
    """

    to_zero: list
    from_zero: list


def _factor_pieces(block: ShiftBlock, z, large: bool, tol: float) -> _FactorPieces:
    n = block.n
    to_zero, from_zero = [], []
    if large:
        for q in range(n):
            e = np.zeros(n)
            e[q] = 1.0
            s1 = solve_steering(SteeringProblem(block, z, e, np.zeros(n)), tol=tol)
            s2 = solve_steering(SteeringProblem(block, z, np.zeros(n), e), tol=tol)
            to_zero.append((s1.x, s1.image))
            from_zero.append((s2.x, s2.image))
    else:
        fwd = exp_shift(block, z)
        back = exp_shift(block, -z)
        for q in range(n):
            e = np.zeros(block.dim, dtype=fwd.dtype)
            e[q] = 1.0
            to_zero.append((e, fwd @ e))
            from_zero.append((back @ e, e))
    return _FactorPieces(to_zero, from_zero)


@dataclass
class TensorSteering:
    """Outcome of :func:`steer_tensor` over a finite parameter sequence."""

    z_seq: list
    tau: float
    xs: list
    images: list
    residual_x: np.ndarray
    residual_image: np.ndarray
    large_coordinates: list
    failures: list = field(default_factory=list)

    def decreasing_tail(self) -> bool:
        """Both residual curves strictly decrease over the final third."""
        size = len(self.z_seq)
        start = size - max(2, math.ceil(size / 3))
        start = max(start, 0)
        ok = True
        for curve in (self.residual_x, self.residual_image):
            tail = curve[start:]
            if np.any(~np.isfinite(tail)):
                return False
            ok &= bool(np.all(np.diff(tail) < 0) or np.all(tail == 0))
        return ok


def steer_tensor(tt: TensorTuple, u, v, z_seq, tau: float = DEFAULT_TAU, tol: float = 1e-9) -> TensorSteering:
    """Build ``x_m`` with ``x_m -> u`` and ``e^{<z_m,T>} x_m -> v``.

    ``u`` and ``v`` are full grid vectors supported on ``M_0``.  Each basis
    vector ``e_m`` of ``E`` is steered to ``(e_m, 0)`` and ``(0, e_m)``
    factor by factor: coordinates with ``|z_j| >= tau`` use the one-block
    steering solver, the others use ``e_q`` (resp. ``e^{-z_j S_j} e_q``).
    The pieces are combined linearly.  The image is assembled from per-factor
    images, which avoids the cancellation a dense ``e^{<z,T>}`` would suffer
    at large ``|z|``.

    Indices where no coordinate reaches ``tau`` are recorded in ``failures``
    (with ``NaN`` residuals) instead of raising.
    """
    u_c = tt.e_coeffs(u)
    v_c = tt.e_coeffs(v)
    blocks = tt.blocks()
    u_full = np.asarray(u)
    v_full = np.asarray(v)
    xs, images, res_x, res_i, larges, failures = [], [], [], [], [], []
    support = [
        (m, u_c[m], v_c[m])
        for m in itertools.product(*(range(n) for n in tt.dims))
        if u_c[m] != 0 or v_c[m] != 0
    ]
    for idx, z in enumerate(z_seq):
        z = tuple(z)
        if len(z) != tt.k:
            raise ValueError(f"parameter {z} has {len(z)} coordinates, expected {tt.k}")
        large = [abs(zj) >= tau for zj in z]
        larges.append([j for j, flag in enumerate(large) if flag])
        if not any(large):
            failures.append((idx, str(NoLargeCoordinate(f"no |z_j| >= {tau} at index {idx}"))))
            xs.append(None)
            images.append(None)
            res_x.append(math.nan)
            res_i.append(math.nan)
            continue
        pieces = [_factor_pieces(b, zj, lg, tol) for b, zj, lg in zip(blocks, z, large)]
        dtype = np.result_type(*(p.to_zero[0][1].dtype for p in pieces), u_full.dtype, v_full.dtype)
        x = np.zeros(tt.size, dtype=dtype)
        img = np.zeros(tt.size, dtype=dtype)
        for m, cu, cv in support:
            if cu != 0:
                x += cu * reduce(np.kron, [p.to_zero[q][0] for p, q in zip(pieces, m)])
                img += cu * reduce(np.kron, [p.to_zero[q][1] for p, q in zip(pieces, m)])
            if cv != 0:
                x += cv * reduce(np.kron, [p.from_zero[q][0] for p, q in zip(pieces, m)])
                img += cv * reduce(np.kron, [p.from_zero[q][1] for p, q in zip(pieces, m)])
        xs.append(x)
        images.append(img)
        res_x.append(float(np.max(np.abs(x - u_full), initial=0.0)))
        res_i.append(float(np.max(np.abs(img - v_full), initial=0.0)))
    return TensorSteering(
        z_seq=[tuple(z) for z in z_seq],
        tau=tau,
        xs=xs,
        images=images,
        residual_x=np.array(res_x),
        residual_image=np.array(res_i),
        large_coordinates=larges,
        failures=failures,
    )


# --------------------------------------------------------------------------
# transfer to an arbitrary commuting tuple


@dataclass
class KernelTransfer:
    """Finite invariant subspace spanned by ``h_l = A^{2n-l} y`` for ``l`` in ``M``.

    ``J`` maps the grid basis ``e_l`` to ``h_l`` and intertwines:
    ``A_j J = J T_j``.  The kernel element itself is ``x = h_n = A^n y``.
    """

    n: tuple
    tuple_model: TensorTuple
    J: np.ndarray

    @property
    def element(self) -> np.ndarray:
        return self.J[:, self.tuple_model.flat_index(self.n)]

    def intertwining_error(self, ops) -> float:
        return max(
            float(np.max(np.abs(a @ self.J - self.J @ t.toarray()), initial=0.0))
            for a, t in zip(ops, self.tuple_model.operators)
        )

    def steer(self, to_value: bool, z_seq, tau: float = DEFAULT_TAU):
        """Sequences ``(J u_m, J e^{<z,T>} u_m)`` with ``(x, 0)`` or ``(0, x)`` as limit.

        ``to_value=True`` gives ``u_m -> 0`` and image ``-> x``.
        """
        tt = self.tuple_model
        e_n = tt.basis_vector(self.n)
        zero = np.zeros(tt.size)
        res = steer_tensor(tt, zero, e_n, z_seq, tau) if to_value else steer_tensor(tt, e_n, zero, z_seq, tau)
        out = []
        for x, img in zip(res.xs, res.images):
            out.append(None if x is None else (self.J @ x, self.J @ img))
        return out


def _power(ops, exps, y):
    for op, e in zip(ops, exps):
        for _ in range(e):
            y = op @ y
    return y


def kernel_transfer(ops, y, n) -> KernelTransfer:
    """Model ``x = A_1^{n_1}..A_k^{n_k} y`` (with ``A_j^{2n_j} y = 0``) on a shift grid."""
    ops = [np.asarray(a.toarray() if sp.issparse(a) else a) for a in ops]
    n = tuple(int(v) for v in n)
    y = np.asarray(y)
    for a, nj in zip(ops, n):
        if np.any(np.abs(_power([a], [2 * nj], y)) > 0):
            raise ValueError("preimage is not annihilated by A_j^(2 n_j)")
    tt = build_tensor_tuple(n)
    cols = []
    for i in range(tt.size):
        l = tt.multi_index(i)
        cols.append(_power(ops, [2 * nj - lj for nj, lj in zip(n, l)], y))
    return KernelTransfer(n=n, tuple_model=tt, J=np.stack(cols, axis=1))
