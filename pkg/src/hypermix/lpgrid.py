"""Cell-centered grid models of ``L_p([0,1]^k)`` (``0 < p < 1``) and ``L_0(R^k)``.

* ``q_p(h) = int |h|^p`` and ``d_p(f, g) = q_p(f - g)``.
* ``q_0(h) = sum_n 2^-n / mu(Omega_n) int_{Omega_n} |h| / (1 + |h|)`` with
  ``Omega_n = [-n-1, n+1]^k``; the series is cut after ``n_max`` windows and
  the dropped part is at most ``2^-n_max``.
* Dilations ``T_j f(x) = f(.., x_j / 2, ..)`` on the unit cube and
  translations ``T_t f(x) = f(x - t)`` on a box standing in for ``R^k``.
  Fields vanish outside their box; translations extend the box instead of
  wrapping.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch, SupportEscape


@dataclass
class GridField:
    """Samples at cell centers of the box ``prod [lo_i, hi_i]``."""

    values: np.ndarray
    lo: tuple
    hi: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        if len(self.lo) != self.values.ndim or len(self.hi) != self.values.ndim:
            raise ValueError("extent does not match the number of axes")
        if any(n < 8 for n in self.values.shape):
            raise ValueError("need at least 8 cells per axis")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("extent must be positive")

    @property
    def k(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> tuple:
        return tuple((b - a) / n for a, b, n in zip(self.lo, self.hi, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def centers(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.lo[axis] + (np.arange(self.shape[axis]) + 0.5) * h

    def mesh(self):
        return np.meshgrid(*(self.centers(i) for i in range(self.k)), indexing="ij")

    def same_grid(self, other: "GridField") -> bool:
        return self.shape == other.shape and np.allclose(self.lo, other.lo) and np.allclose(self.hi, other.hi)

    def with_values(self, values) -> "GridField":
        return GridField(values, self.lo, self.hi)

    @classmethod
    def from_function(cls, func, shape, lo, hi) -> "GridField":
        proto = cls(np.zeros(shape), lo, hi)
        return proto.with_values(func(*proto.mesh()))

    # -- storage: raw little-endian samples plus a JSON header
    def save(self, path) -> None:
        path = Path(path)
        header = {
            "dims": list(self.shape),
            "lo": list(self.lo),
            "hi": list(self.hi),
            "dtype": self.values.dtype.newbyteorder("<").str,
            "order": "C",
        }
        path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True))
        self.values.astype(header["dtype"]).tofile(path.with_suffix(".bin"))

    @classmethod
    def load(cls, path) -> "GridField":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        vals = np.fromfile(path.with_suffix(".bin"), dtype=np.dtype(header["dtype"]))
        return cls(vals.reshape(header["dims"]), header["lo"], header["hi"])


def unit_cube_field(func, res: int, k: int) -> GridField:
    return GridField.from_function(func, (res,) * k, (0.0,) * k, (1.0,) * k)


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class LpMetric:
    """``p`` in ``[0, 1)``; for ``p = 0`` the windows ``Omega_n``, ``n <= n_max``."""

    p: float
    n_max: int = 14

    def __post_init__(self):
        if not 0 <= self.p < 1:
            raise ValueError("p must lie in [0, 1)")

    def window(self, n: int) -> float:
        return float(n + 1)

    def weight(self, n: int, k: int) -> float:
        return 2.0**-n / (2.0 * (n + 1)) ** k

    @property
    def tail_bound(self) -> float:
        """Upper bound on the windows ``n > n_max`` dropped from ``q_0``."""
        return 2.0**-self.n_max if self.p == 0 else 0.0


def escape_radius(eps: float) -> int:
    """``R`` with ``sum_{n > R} 2^-n = 2^-R <= eps / 2``."""
    return int(math.ceil(math.log2(2.0 / eps)))


def q_value(metric: LpMetric, h: GridField) -> float:
    a = np.abs(h.values)
    if metric.p > 0:
        return float(np.sum(a**metric.p) * h.cell_volume)
    integrand = a / (1.0 + a)
    mesh = h.mesh()
    box = np.max(np.stack([np.abs(m) for m in mesh]), axis=0)
    total = 0.0
    for n in range(metric.n_max + 1):
        inside = box < metric.window(n)
        total += metric.weight(n, h.k) * float(np.sum(integrand[inside])) * h.cell_volume
    return total


def metric_distance(metric: LpMetric, f: GridField, g: GridField) -> float:
    """``d_p(f, g)`` by a midpoint Riemann sum; ``g`` may be the scalar ``0``."""
    if isinstance(g, (int, float)) and g == 0:
        return q_value(metric, f)
    if not f.same_grid(g):
        raise GridMismatch(f"grids differ: {f.shape} on {f.lo}..{f.hi} vs {g.shape} on {g.lo}..{g.hi}")
    return q_value(metric, f.with_values(f.values - g.values))


# --------------------------------------------------------------------------
# dilations on the unit cube


def _pullback_axis(values: np.ndarray, axis: int, factor: float) -> np.ndarray:
    """Values at ``x_axis * factor`` by linear interpolation between cell centers."""
    n = values.shape[axis]
    centers = (np.arange(n) + 0.5) / n
    pos = centers * factor * n - 0.5  # fractional index of the pulled-back point
    pos = np.clip(pos, 0.0, n - 1.0)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    w = pos - i0
    v = np.moveaxis(values, axis, 0)
    shape = (-1,) + (1,) * (v.ndim - 1)
    out = v[i0] * (1 - w).reshape(shape) + v[i1] * w.reshape(shape)
    return np.moveaxis(out, 0, axis)


def dilation_apply(j: int, f: GridField, power: int = 1) -> GridField:
    """``T_j^power f``: pull back through ``x_j -> x_j / 2^power`` in one interpolation."""
    if not (np.allclose(f.lo, 0.0) and np.allclose(f.hi, 1.0)):
        raise ValueError("dilations act on the unit cube")
    if power < 0:
        raise ValueError("power must be non-negative")
    if power == 0:
        return f.with_values(f.values.copy())
    return f.with_values(_pullback_axis(f.values, j, 2.0**-power))


def clear_region(f: GridField, delta: float, mode: str = "slabs") -> GridField:
    """Zero ``f`` on ``[0, delta)^k`` (``corner``) or on ``U_j {x_j < delta}`` (``slabs``)."""
    masks = [m < delta for m in f.mesh()]
    if mode == "corner":
        region = np.logical_and.reduce(masks)
    elif mode == "slabs":
        region = np.logical_or.reduce(masks)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = f.values.copy()
    out[region] = 0
    return f.with_values(out)


@dataclass
class DensityProbeRow:
    delta: float
    distance: float
    annihilating_power: list  # per axis; None when no power up to the limit works
    in_ker: bool


def kernel_density_probe(targets, eps: float, p: float = 0.5, mode: str = "slabs", max_power: int | None = None) -> list:
    """Approximate each target by a function vanishing near the origin.

    ``delta = 2^-m`` is the largest dyadic size with ``d_p(f, f~) < eps``.
    For each axis the smallest grid power ``T_j^r`` with ``T_j^r f~ = 0`` is
    recorded; ``f~`` is certified in the kernel data of the tuple when every
    axis has one.  Clearing only the corner does not give that for ``k >= 2``
    since ``T_j`` leaves the other coordinates alone.
    """
    metric = LpMetric(p)
    rows = []
    for f in targets:
        res = min(f.shape)
        limit = int(math.log2(res))
        if max_power is None:
            max_power_f = limit + 2
        else:
            max_power_f = max_power
        if not np.any(f.values):
            rows.append(DensityProbeRow(1.0, 0.0, [0] * f.k, True))
            continue
        chosen = None
        for m in range(1, limit + 1):
            delta = 2.0**-m
            ft = clear_region(f, delta, mode)
            dist = metric_distance(metric, f, ft)
            if dist < eps:
                chosen = (delta, ft, dist)
                break
        if chosen is None:
            rows.append(DensityProbeRow(math.nan, math.nan, [None] * f.k, False))
            continue
        delta, ft, dist = chosen
        powers = []
        for j in range(f.k):
            r_found = None
            for r in range(1, max_power_f + 1):
                if not np.any(dilation_apply(j, ft, r).values):
                    r_found = r
                    break
            powers.append(r_found)
        rows.append(DensityProbeRow(delta, dist, powers, all(r is not None for r in powers)))
    return rows


def dilation_operator_bound(p: float, res: int = 64, trials: int = 50, seed: int = 0) -> float:
    """Empirical ``sup q_p(T_j f) / q_p(f)`` on random grid fields (continuum value ``2``)."""
    rng = np.random.default_rng(seed)
    metric = LpMetric(p)
    best = 0.0
    for _ in range(trials):
        f = GridField(rng.normal(size=(res,)), (0.0,), (1.0,))
        best = max(best, q_value(metric, dilation_apply(0, f)) / q_value(metric, f))
    return best


def dilation_group_apply(f: GridField, t, p: float, tol: float = 1e-8, bound: float | None = None):
    """``e^{<t,T>} f`` by partial sums; the tail estimate is heuristic.

    ``q_p`` is ``p``-homogeneous and subadditive, and ``q_p(T_j g) <= b q_p(g)``
    with ``b = 2`` in the continuum, so the remainder after ``m`` terms is at
    most ``q_p(f) sum_{n>m} (b sum_j |t_j|^p)^n / (n!)^p``.  On the grid ``b``
    is replaced by ``max(2, empirical bound)``.
    """
    t = tuple(t)
    metric = LpMetric(p)
    b = max(2.0, dilation_operator_bound(p) if bound is None else bound)
    s = b * sum(abs(v) ** p for v in t)
    qf = q_value(metric, f)
    total = f.values.astype(float).copy()
    term = f
    n = 0

    def tail(m):
        acc, i = 0.0, m + 1
        while True:
            val = math.exp(i * math.log(s) - p * math.lgamma(i + 1)) if s > 0 else 0.0
            acc += val
            if val < 1e-18 * max(acc, 1e-300) or val == 0.0:
                return acc * qf
            i += 1

    while True:
        est = tail(n)
        if est < tol:
            return f.with_values(total), est, n
        n += 1
        nxt = np.zeros_like(total)
        for j, tj in enumerate(t):
            if tj:
                nxt += tj * dilation_apply(j, term).values
        term = f.with_values(nxt / n)
        total += term.values


# --------------------------------------------------------------------------
# translations on a box standing in for R^k


def translate(f: GridField, t, extend: bool = True) -> GridField:
    """``T_t f(x) = f(x - t)``.

    Shifts by whole cells move samples; fractional parts are resolved by
    linear interpolation between the two neighboring whole-cell shifts.  With
    ``extend`` the box grows to hold the shifted support; otherwise a shift
    that would push nonzero samples out of the box raises ``SupportEscape``.
    """
    t = np.broadcast_to(np.asarray(t, dtype=float), (f.k,))
    h = np.array(f.spacing)
    cells = t / h
    whole = np.floor(cells + 1e-9).astype(int)
    frac = cells - whole
    frac[np.abs(frac) < 1e-9] = 0.0
    # pieces: product over axes of (1 - frac, shift whole) and (frac, shift whole + 1)
    pad_lo = [max(0, -int(w)) for w in whole]
    pad_hi = [max(0, int(w) + (1 if fr > 0 else 0)) for w, fr in zip(whole, frac)]
    if not extend:
        pad_lo = [0] * f.k
        pad_hi = [0] * f.k
    shape = tuple(n + a + b for n, a, b in zip(f.shape, pad_lo, pad_hi))
    lo = tuple(l - a * hh for l, a, hh in zip(f.lo, pad_lo, h))
    hi = tuple(u + b * hh for u, b, hh in zip(f.hi, pad_hi, h))
    out = np.zeros(shape, dtype=np.result_type(f.values.dtype, float))
    for choice in itertools.product((0, 1), repeat=f.k):
        weight = 1.0
        offs = []
        for ax, c in enumerate(choice):
            if c == 0:
                weight *= 1.0 - frac[ax]
                offs.append(int(whole[ax]))
            else:
                weight *= frac[ax]
                offs.append(int(whole[ax]) + 1)
        if weight == 0.0:
            continue
        src = f.values
        dst_slices, src_slices = [], []
        for ax, o in enumerate(offs):
            start = pad_lo[ax] + o
            a0, a1 = max(start, 0), min(start + f.shape[ax], shape[ax])
            if a1 <= a0:
                break
            dst_slices.append(slice(a0, a1))
            src_slices.append(slice(a0 - start, a1 - start))
        else:
            if not extend:
                kept = np.zeros_like(src, dtype=bool)
                kept[tuple(src_slices)] = True
                if np.any(src[~kept] != 0):
                    raise SupportEscape("shift pushes the support out of the box")
            out[tuple(dst_slices)] += weight * src[tuple(src_slices)]
            continue
        if not extend and np.any(src != 0):
            raise SupportEscape("shift pushes the support out of the box")
    return GridField(out, lo, hi)


def bump(x, *rest):
    """``exp(-1 / (1 - |x|^2))`` on the unit ball, zero outside."""
    r2 = x**2
    for y in rest:
        r2 = r2 + y**2
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def standard_bump(k: int = 1, cells_per_unit: int = 32, half_width: float = 2.0) -> GridField:
    n = int(2 * half_width * cells_per_unit)
    return GridField.from_function(bump, (n,) * k, (-half_width,) * k, (half_width,) * k)


@dataclass
class TranslationReport:
    eps: float
    escape_radius: int
    metric: LpMetric
    rows: list  # (|t|, d0(T_t f), d0(T_-t f), upper bounds)
    continuity: list  # (|s - t|, d0(T_s f, T_t f))
    group_law_error: float

    @property
    def below_eps_beyond_escape(self) -> bool:
        return all(up_p < self.eps and up_m < self.eps for mag, _, _, up_p, up_m in self.rows if mag > self.escape_radius + 1)

    @property
    def continuity_monotone(self) -> bool:
        d = [v for _, v in self.continuity]
        return all(b < a for a, b in zip(d, d[1:]))


def _common_grid(f: GridField, g: GridField):
    """Zero-pad two fields with equal spacing onto their joint box."""
    h = np.array(f.spacing)
    lo = np.minimum(f.lo, g.lo)
    hi = np.maximum(f.hi, g.hi)
    shape = tuple(int(round(v)) for v in (hi - lo) / h)

    def place(x):
        out = np.zeros(shape)
        start = [int(round(v)) for v in (np.array(x.lo) - lo) / h]
        out[tuple(slice(s, s + n) for s, n in zip(start, x.shape))] = x.values
        return GridField(out, tuple(lo), tuple(hi))

    return place(f), place(g)


def translation_group_check(f: GridField, t_seq, eps: float = 1e-3, halvings: int = 6, n_max: int | None = None) -> TranslationReport:
    """Escape of ``T_{+-t_n} f`` in ``d_0`` and strong continuity.

    ``d_0`` is evaluated with windows up to ``n_max`` (default: escape radius
    plus three) and reported with the certified upper bound
    ``computed + 2^-n_max``.
    """
    R = escape_radius(eps)
    metric = LpMetric(0.0, n_max=R + 3 if n_max is None else n_max)
    rows = []
    for t in t_seq:
        tp = translate(f, t)
        tm = translate(f, -np.asarray(t, dtype=float))
        dp, dm = q_value(metric, tp), q_value(metric, tm)
        rows.append((float(np.linalg.norm(np.atleast_1d(t))), dp, dm, dp + metric.tail_bound, dm + metric.tail_bound))
    # strong continuity at t0 = first shift: s = t0 + 2^i cells, i = halvings..0
    h = np.array(f.spacing)
    t0 = np.zeros(f.k)
    base = translate(f, t0)
    cont = []
    for i in range(halvings, -1, -1):
        step = h * (2**i)
        moved = translate(f, t0 + step)
        a, b = _common_grid(base, moved)
        cont.append((float(np.linalg.norm(step)), metric_distance(metric, a, b)))
    # group law with whole-cell shifts
    s1 = h * 7
    s2 = h * -3
    lhs = translate(translate(f, s1), s2)
    rhs = translate(f, s1 + s2)
    a, b = _common_grid(lhs, rhs)
    err = float(np.max(np.abs(a.values - b.values)))
    return TranslationReport(eps=eps, escape_radius=R, metric=metric, rows=rows, continuity=cont, group_law_error=err)
