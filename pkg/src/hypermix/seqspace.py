"""Truncated l1 model of the exponential operator group built from a biorthogonal system.

Concrete setting: ``x_n`` is the ``n``-th unit vector of l1, ``f_k(x) = d_k x_k``
with nonzero diagonal values ``d_k = f_k(x_k)``, ``p(x) = sup_k |f_k(x)|``,
``q`` is the l1 norm and the disk ``D`` is the l1 unit ball.  Then
``p <= c q`` with ``c = max |d_k|`` and every operator of the form
``sum a_n f_{alpha(n)}(x) x_{beta(n)}`` satisfies ``q(Tx) <= ||a||_1 p(x)``.

Multi-indices ``n in Z_+^k`` are enumerated by a graded-lexicographic
bijection; the model keeps every multi-index of grade ``<= G``.  The
operators ``A_j`` lower the grade by one, so the kept span is invariant and
the truncation is an exact restriction.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from . import exact as xq
from .errors import DependentFunctionals, IncompleteGrade, NonpositiveEpsilon


# --------------------------------------------------------------------------
# graded bijection Z_+^k <-> Z_+


def _compositions(total: int, parts: int) -> int:
    """Number of ``n in Z_+^parts`` with ``|n| = total``."""
    if parts == 0:
        return 1 if total == 0 else 0
    return math.comb(total + parts - 1, parts - 1)


@dataclass(frozen=True)
class GradedIndex:
    """Graded-lexicographic enumeration of ``Z_+^k``.

    All multi-indices of grade ``g`` precede grade ``g + 1``; inside a grade
    the order is lexicographic.  For ``k = 2``:
    ``(0,0) -> 0, (0,1) -> 1, (1,0) -> 2, (0,2) -> 3, ...``
    """

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @staticmethod
    def grade(n) -> int:
        return int(sum(n))

    def count_below(self, g: int) -> int:
        """Number of multi-indices with grade ``< g``."""
        return math.comb(g - 1 + self.k, self.k) if g > 0 else 0

    def count_up_to(self, g: int) -> int:
        return math.comb(g + self.k, self.k)

    def forward(self, n) -> int:
        n = tuple(int(v) for v in n)
        if len(n) != self.k or any(v < 0 for v in n):
            raise ValueError(f"{n} is not in Z_+^{self.k}")
        g = sum(n)
        rank = self.count_below(g)
        rem = g
        for pos, val in enumerate(n[:-1]):
            parts_left = self.k - pos - 1
            for smaller in range(val):
                rank += _compositions(rem - smaller, parts_left)
            rem -= val
        return rank

    def inverse(self, i: int) -> tuple:
        i = int(i)
        if i < 0:
            raise ValueError("index must be non-negative")
        g = 0
        while self.count_up_to(g) <= i:
            g += 1
        i -= self.count_below(g)
        out = []
        rem = g
        for pos in range(self.k - 1):
            parts_left = self.k - pos - 1
            val = 0
            while True:
                block = _compositions(rem - val, parts_left)
                if i < block:
                    break
                i -= block
                val += 1
            out.append(val)
            rem -= val
        out.append(rem)
        return tuple(out)

    def table(self, size: int) -> list:
        return [self.inverse(i) for i in range(size)]


def gamma_bijection(k: int) -> GradedIndex:
    return GradedIndex(k)


# --------------------------------------------------------------------------
# biorthogonalization


@dataclass
class Biorthogonal:
    """``g`` rows and ``x`` columns with ``g_n(x_k) = 0`` for ``n != k``.

    ``alpha[n, j]`` (``j < n``) are the triangular corrections
    ``g_n = f_n + sum_j alpha[n, j] f_j``; ``beta`` plays the same role for
    ``x_k = y_k + sum_j beta[k, j] y_j``.  ``order`` lists which candidate
    was picked as ``y_k``.
    """

    g: np.ndarray
    x: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    order: list

    def residual(self) -> float:
        gram = self.g @ self.x
        off = gram - np.diag(np.diag(gram))
        return float(np.max(np.abs(off), initial=0.0))


def biorthogonalize(functionals, candidates, pivot: str = "first", rtol: float = 1e-12) -> Biorthogonal:
    """Inductive biorthogonalization of linearly independent functionals.

    Step ``n`` solves for ``alpha[n, :n]`` so that ``g_n`` vanishes on the
    ``y`` already chosen, then picks a fresh candidate ``y_n`` with
    ``g_n(y_n) != 0`` (the first one above ``rtol`` by default, or the one of
    largest ``|g_n(y)| / |y|`` with ``pivot="max"``).  A second triangular
    pass turns the ``y`` into ``x`` with ``g_n(x_k) = 0`` for ``n != k``.
    """
    f = np.asarray(functionals)
    y_all = np.asarray(candidates)
    d = f.shape[1]
    if f.shape[0] != d:
        raise ValueError("need exactly d functionals on a d-dimensional space")
    if y_all.shape[0] != d:
        raise ValueError("candidate columns must live in the same space")
    if np.linalg.matrix_rank(y_all) < d:
        raise ValueError("candidates do not span the space")
    dtype = np.result_type(f.dtype, y_all.dtype, float)
    alpha = np.zeros((d, d), dtype=dtype)
    g = np.zeros((d, d), dtype=dtype)
    chosen: list[int] = []
    scale = np.max(np.abs(f)) * np.max(np.abs(y_all))
    for n in range(d):
        if n:
            ys = y_all[:, chosen]
            lhs = (f[:n] @ ys).T  # row m: (f_0(y_m), ..., f_{n-1}(y_m))
            rhs = -(f[n] @ ys)
            alpha[n, :n] = np.linalg.solve(lhs, rhs)
        g[n] = f[n] + alpha[n, :n] @ f[:n]
        vals = g[n] @ y_all
        free = [i for i in range(y_all.shape[1]) if i not in chosen]
        weights = {i: abs(vals[i]) / max(np.linalg.norm(y_all[:, i]), 1e-300) for i in free}
        ok = [i for i in free if weights[i] > rtol * scale]
        if not ok:
            raise DependentFunctionals(f"g_{n} vanishes on every remaining candidate")
        pick = ok[0] if pivot == "first" else max(ok, key=weights.get)
        chosen.append(pick)
    ys = y_all[:, chosen]
    gy = g @ ys  # upper triangular: g_n(y_m) = 0 for m < n
    beta = np.zeros((d, d), dtype=dtype)
    x = ys.astype(dtype).copy()
    for kk in range(1, d):
        # g_n(y_k) + sum_{j<k} beta_kj g_n(y_j) = 0 for n < k
        beta[kk, :kk] = np.linalg.solve(gy[:kk, :kk], -gy[:kk, kk])
        x[:, kk] = ys[:, kk] + ys[:, :kk] @ beta[kk, :kk]
    return Biorthogonal(g=g, x=x, alpha=alpha, beta=beta, order=chosen)


# --------------------------------------------------------------------------
# alpha recursion


@dataclass(frozen=True)
class AlphaSequence:
    """``alpha_0 = 1``, ``alpha_{m+1} = slack * 2^m alpha_m / eps_m``, kept in log2."""

    log2: tuple
    eps: tuple
    slack: Fraction = Fraction(1)

    def __len__(self):
        return len(self.log2)

    def ratio(self, m: int, exact: bool = False):
        """``alpha_m / alpha_{m+1}``; only ratios reach the operators."""
        if exact:
            return xq.to_fraction(self.eps[m]) / (self.slack * 2**m)
        return float(self.eps[m]) / (float(self.slack) * 2.0**m)

    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp2(np.array(self.log2))


def build_alpha_sequence(eps, grades: int, slack=1) -> AlphaSequence:
    """``alpha_0 .. alpha_M`` with ``M = grades`` from ``eps_0 .. eps_{M-1}``."""
    eps = tuple(eps)[:grades]
    if len(eps) < grades:
        raise ValueError(f"need {grades} eps values, got {len(eps)}")
    if any(not e > 0 for e in eps):
        raise NonpositiveEpsilon("every eps_m must be positive")
    slack = xq.to_fraction(slack)
    if slack < 1:
        raise ValueError("slack must be >= 1 to respect the growth condition")
    logs = [0.0]
    for m, e in enumerate(eps):
        logs.append(logs[-1] + m - math.log2(float(e)) + math.log2(float(slack)))
    return AlphaSequence(log2=tuple(logs), eps=eps, slack=slack)


# --------------------------------------------------------------------------
# sparse operators of series shape


@dataclass
class SparseOperator:
    """Operator on the truncated span given as ``(row, column, value)`` triples."""

    size: int
    entries: list

    def to_dense(self, exact: bool = False) -> np.ndarray:
        if exact:
            out = np.full((self.size, self.size), Fraction(0), dtype=object)
        else:
            out = np.zeros((self.size, self.size), dtype=np.result_type(*[type(v) for _, _, v in self.entries] or [float]))
        for r, c, v in self.entries:
            out[r, c] = out[r, c] + (v if exact else float(v))
        return out

    def to_scipy(self) -> sp.csr_matrix:
        if not self.entries:
            return sp.csr_matrix((self.size, self.size))
        r, c, v = zip(*self.entries)
        return sp.csr_matrix((np.array([float(t) for t in v]), (r, c)), shape=(self.size, self.size))

    def apply(self, x):
        """Apply with whatever scalar type ``x`` carries (Fractions stay exact)."""
        x = np.asarray(x)
        if x.dtype == object:
            out = np.full(x.shape, Fraction(0), dtype=object)
            for r, c, v in self.entries:
                out[r] = out[r] + xq.to_fraction(v) * x[c]
            return out
        return self.to_scipy() @ x

    def __matmul__(self, x):
        return self.apply(x)


def build_operator_from_series(model: "SeqSpaceModel", a, alpha_map, beta_map, exact: bool = False) -> SparseOperator:
    """``T x = sum_n a_n f_{alpha(n)}(x) x_{beta(n)}`` as a sparse matrix.

    With ``x_m = e_m`` and ``f_k(x) = d_k x_k`` the ``n``-th term contributes
    ``a_n d_{alpha(n)}`` at row ``beta(n)``, column ``alpha(n)``.
    """
    entries = []
    for i, an in enumerate(a):
        if an == 0:
            continue
        col, row = int(alpha_map(i)), int(beta_map(i))
        if not (0 <= col < model.size and 0 <= row < model.size):
            raise IndexError(f"term {i} maps outside the truncation")
        d = model.diag(col, exact)
        entries.append((row, col, (xq.to_fraction(an) if exact else an) * d))
    return SparseOperator(model.size, entries)


# --------------------------------------------------------------------------
# the model


@dataclass
class SeqSpaceModel:
    """Truncated model with ``k`` parameters and all grades ``<= grade``.

    Attributes
    ----------
    gamma : GradedIndex
    f_values : tuple
        Diagonal values ``d_i = f_i(x_i)`` in enumeration order.
    alpha : AlphaSequence
    x_norms : tuple
        ``q(x_n)``, all equal to one for unit vectors.
    """

    k: int
    grade: int
    gamma: GradedIndex
    f_values: tuple
    alpha: AlphaSequence
    x_norms: tuple
    exact: bool = False
    _ops: list = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.gamma.count_up_to(self.grade)

    @property
    def boundary_grade(self) -> int:
        """Top kept grade; ``eps`` at this grade would need grade + 1 and is not formed."""
        return self.grade

    @property
    def a(self) -> float:
        """Operator bound ``q(A_j x) <= a p(x)``: ``C = (sum_m 2^-m)^k = 2^k``."""
        return float(2**self.k)

    @property
    def c(self) -> float:
        """``p <= c q`` on the disk span."""
        return float(max(abs(complex(d)) for d in self.f_values))

    def diag(self, i: int, exact: bool = False):
        d = self.f_values[i]
        return xq.to_fraction(d) if exact else d

    def p(self, x) -> float:
        d = np.array([complex(v) for v in self.f_values])
        return float(np.max(np.abs(d * np.asarray(x, dtype=complex)), initial=0.0))

    def q(self, x) -> float:
        return float(np.sum(np.abs(np.asarray(x, dtype=complex)) * np.array(self.x_norms, dtype=float)))

    def coefficient(self, j: int, n, exact: bool = False):
        """``c_{j,n} = alpha_|n| / (alpha_{|n|+1} f_{gamma(n+e_j)}(x_{gamma(n+e_j)}))``."""
        g = sum(n)
        up = list(n)
        up[j] += 1
        return self.alpha.ratio(g, exact) / self.diag(self.gamma.forward(up), exact)

    def coefficients(self, exact: bool = False):
        """Yield ``(j, n, c_{j,n})`` for every term that stays inside the truncation."""
        for i in range(self.gamma.count_up_to(self.grade - 1)):
            n = self.gamma.inverse(i)
            for j in range(self.k):
                yield j, n, self.coefficient(j, n, exact)

    def operators(self, exact: bool | None = None) -> list:
        return build_A_operators(self, exact=self.exact if exact is None else exact)

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "grade": self.grade,
            "size": self.size,
            "boundary_grade": self.boundary_grade,
            "gamma": [list(t) for t in self.gamma.table(self.size)],
            "f_values": [_num(v) for v in self.f_values],
            "eps": [_num(v) for v in self.alpha.eps],
            "slack": _num(self.alpha.slack),
            "log2_alpha": list(self.alpha.log2),
            "coefficients": [[j, list(n), float(c)] for j, n, c in self.coefficients()],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, exact: bool = False) -> "SeqSpaceModel":
        data = json.loads(text)
        model = build_model(
            data["k"],
            data["grade"],
            f_values=[_parse_num(v) for v in data["f_values"]],
            slack=_parse_num(data["slack"]),
            exact=exact,
        )
        if [list(t) for t in model.gamma.table(model.size)] != data["gamma"]:
            raise ValueError("gamma table does not match the graded enumeration")
        if not np.allclose(model.alpha.log2, data["log2_alpha"], rtol=1e-12, atol=1e-12):
            raise ValueError("stored alpha values disagree with the recursion")
        return model


def _num(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else v.numerator
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def _parse_num(v):
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, list):
        return complex(v[0], v[1])
    return v


def epsilon_sequence(gamma: GradedIndex, f_values, grade: int) -> list:
    """``eps_m = min{|f_{gamma(n)}(x_{gamma(n)})| : |n| = m + 1}`` for ``m < grade``."""
    out = []
    for m in range(grade):
        lo, hi = gamma.count_below(m + 1), gamma.count_up_to(m + 1)
        vals = [f_values[i] for i in range(lo, hi)]
        if any(isinstance(v, Fraction) for v in vals) or all(isinstance(v, int) for v in vals):
            out.append(min(abs(xq.to_fraction(v)) for v in vals))
        else:
            out.append(min(abs(v) for v in vals))
    return out


def build_model(k: int, grade: int, f_values=None, slack=1, exact: bool = False, size: int | None = None) -> SeqSpaceModel:
    """Populate the truncated model.

    ``size`` (optional) must equal the number of multi-indices of grade
    ``<= grade``; any other value is not a grade boundary.
    """
    gamma = GradedIndex(k)
    total = gamma.count_up_to(grade)
    if size is not None and size != total:
        raise IncompleteGrade(f"size {size} is not a grade boundary (grade {grade} needs {total})")
    if f_values is None:
        f_values = [1] * total
    f_values = tuple(f_values)
    if len(f_values) != total:
        raise IncompleteGrade(f"{len(f_values)} diagonal values for {total} basis vectors")
    if any(v == 0 for v in f_values):
        raise ValueError("diagonal values f_n(x_n) must be nonzero")
    eps = epsilon_sequence(gamma, f_values, grade)
    alpha = build_alpha_sequence(eps, grade, slack)
    return SeqSpaceModel(
        k=k,
        grade=grade,
        gamma=gamma,
        f_values=f_values,
        alpha=alpha,
        x_norms=tuple([1.0] * total),
        exact=exact,
    )


def model_for_size(k: int, size: int, **kwargs) -> SeqSpaceModel:
    gamma = GradedIndex(k)
    g = 0
    while gamma.count_up_to(g) < size:
        g += 1
    if gamma.count_up_to(g) != size:
        raise IncompleteGrade(f"N={size} is not a grade boundary for k={k}")
    return build_model(k, g, **kwargs)


def build_A_operators(model: SeqSpaceModel, exact: bool = False) -> list:
    """``A_j x = sum_n c_{j,n} f_{gamma(n+e_j)}(x) x_{gamma(n)}`` for ``j = 1..k``."""
    gamma = model.gamma
    inner = gamma.count_up_to(model.grade - 1) if model.grade > 0 else 0
    out = []
    for j in range(model.k):
        coeffs = []
        cols = []
        for i in range(inner):
            n = gamma.inverse(i)
            up = list(n)
            up[j] += 1
            coeffs.append(model.coefficient(j, n, exact))
            cols.append(gamma.forward(up))
        out.append(
            build_operator_from_series(model, coeffs, cols.__getitem__, lambda i: i, exact=exact)
        )
    return out


# --------------------------------------------------------------------------
# the exponential group


def _log_exp_tail(s: float, m: int) -> float:
    """``log sum_{i > m} s^i / i!`` (``-inf`` when ``s == 0``)."""
    if s == 0:
        return -math.inf
    logs = []
    i = m + 1
    while True:
        t = i * math.log(s) - math.lgamma(i + 1)
        logs.append(t)
        if i > s and t < max(logs) - 50:
            break
        i += 1
    top = max(logs)
    return top + math.log(sum(math.exp(t - top) for t in logs))


@dataclass
class GroupApplyResult:
    value: np.ndarray
    bound: float
    terms: int
    exact_termination: bool


def _lin_comb(ops, z):
    dtype = complex if np.iscomplexobj(np.asarray(z)) else float
    size = ops[0].size
    out = sp.csr_matrix((size, size), dtype=dtype)
    for zj, op in zip(z, ops):
        out = out + zj * op.to_scipy().astype(dtype)
    return out.tocsr()


def exp_group_apply(model: SeqSpaceModel, z, x, tol: float = 1e-10, ops=None) -> GroupApplyResult:
    """``e^{<z,A>} x`` by grade-wise partial sums with a certified tail.

    After the grade-``m`` partial sum the remainder is bounded in ``q`` by
    ``(p(x)/c) sum_{i>m} (a c ||z||_1)^i / i!``.  Summation stops once that
    bound is below ``tol``, or when the terms vanish identically (the
    truncated operators are nilpotent), in which case the bound is zero.
    """
    z = tuple(z)
    if len(z) != model.k:
        raise ValueError(f"need {model.k} parameters")
    if tol <= 0:
        raise ValueError("tol must be positive")
    ops = model.operators(exact=False) if ops is None else ops
    lin = _lin_comb(ops, z)
    x = np.asarray(x)
    dtype = np.result_type(x.dtype, lin.dtype, float)
    total = x.astype(dtype).copy()
    term = total.copy()
    s = model.a * model.c * float(np.sum(np.abs(z)))
    px_over_c = model.p(x) / model.c
    m = 0
    while True:
        if px_over_c == 0 or s == 0:
            return GroupApplyResult(total, 0.0, m, True)
        log_tail = _log_exp_tail(s, m) + math.log(px_over_c)
        if log_tail < math.log(tol):
            return GroupApplyResult(total, math.exp(log_tail), m, False)
        m += 1
        term = (lin @ term) / m
        if not np.any(term):
            return GroupApplyResult(total, 0.0, m, True)
        total = total + term


def continuity_bound(model: SeqSpaceModel, z, x) -> float:
    """``(p(x)/c)(e^{a c ||z||_1} - 1)``: bound on ``q(e^{<z,A>}x - x)``."""
    s = model.a * model.c * float(np.sum(np.abs(np.asarray(z))))
    return model.p(x) / model.c * math.expm1(s)


def cauchy_riemann_probe(model: SeqSpaceModel, x, coordinate: int, axis: int, z0, h0: float = 0.05, halvings: int = 4, ops=None):
    """Central-difference Cauchy-Riemann residuals of ``z_axis -> f(e^{<z,A>}x)``.

    ``f`` is the coordinate functional ``f_coordinate``.  For a holomorphic
    map the residual ``|D_x F + i D_y F|`` behaves like ``h^2 |F'''| / 3``,
    so it should drop by about four per halving of ``h``.  Returns the list
    of ``(h, residual)`` and successive ratios.
    """
    ops = model.operators(exact=False) if ops is None else ops
    z0 = np.asarray(z0, dtype=complex)
    d = model.diag(coordinate)

    def F(zv):
        res = exp_group_apply(model, zv, x, tol=1e-15, ops=ops)
        return d * res.value[coordinate]

    rows = []
    h = h0
    for _ in range(halvings + 1):
        step = np.zeros(model.k, dtype=complex)
        step[axis] = h
        dx = (F(z0 + step) - F(z0 - step)) / (2 * h)
        dy = (F(z0 + 1j * step) - F(z0 - 1j * step)) / (2 * h)
        rows.append((h, float(abs(dx + 1j * dy))))
        h /= 2
    ratios = [rows[i][1] / rows[i + 1][1] for i in range(len(rows) - 1)]
    return rows, ratios


# --------------------------------------------------------------------------
# kernel data of the truncated tuple


@dataclass(frozen=True)
class SeqKernelElement:
    """Basis vector ``x_{gamma(n)}`` with preimage ``y`` and power ``m = n + 1``."""

    index: int
    power: tuple
    preimage: np.ndarray


def minimal_power(n) -> tuple:
    """Smallest ``m`` with ``x_{gamma(n)} in kappa(m, A)``, namely ``n + (1,..,1)``.

    ``kappa`` uses the joint kernel of the ``A_j^{2 m_j}``, which contains
    ``x_{gamma(n+m)}`` exactly when ``n_j < m_j`` for every ``j``.
    """
    return tuple(int(v) + 1 for v in n)


def kernel_elements(model: SeqSpaceModel) -> list:
    """Basis vectors of the truncated span lying in ``KER`` of the truncated tuple.

    ``x_{gamma(n)}`` is reached with the power of :func:`minimal_power`; its
    preimage sits at grade ``|n| + |m| = 2|n| + k``, which must be kept.  Every fixed ``x_{gamma(n)}`` is captured once the grade is large.
    """
    gamma = model.gamma
    out = []
    for i in range(model.size):
        n = gamma.inverse(i)
        m = minimal_power(n)
        if sum(n) + sum(m) > model.grade:
            continue
        top = tuple(a + b for a, b in zip(n, m))
        # A^m x_{gamma(top)} picks up one ratio per grade step
        scale = 1.0
        g = sum(top)
        for step in range(sum(m)):
            scale *= model.alpha.ratio(g - 1 - step)
        y = np.zeros(model.size)
        y[gamma.forward(top)] = 1.0 / scale
        out.append(SeqKernelElement(index=i, power=m, preimage=y))
    return out


def kernel_rank_brute_force(model: SeqSpaceModel) -> int:
    """Rank of the span of all ``kappa(m, A)`` from kernels and images.

    The ``A_j`` are monomial (each basis vector goes to a nonzero multiple of
    one basis vector or to zero), so kernels and images only depend on the
    nonzero pattern.  Working with the 0/1 pattern keeps the rank test free of
    the tiny weights ``alpha_g / alpha_{g+1}``.
    """
    import scipy.linalg as sla

    pats = [(op.to_dense() != 0).astype(float) for op in model.operators(exact=False)]
    vecs = []
    top = model.grade + 1
    for m in itertools.product(range(1, top + 1), repeat=model.k):
        stack = np.vstack([np.linalg.matrix_power(a, 2 * mj) for a, mj in zip(pats, m)])
        ker = sla.null_space(stack)
        if ker.size == 0:
            continue
        img = ker
        for a, mj in zip(pats, m):
            img = np.linalg.matrix_power(a, mj) @ img
        vecs.append(img)
    if not vecs:
        return 0
    return int(np.linalg.matrix_rank(np.hstack(vecs), tol=1e-8))
