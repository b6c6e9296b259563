"""Symbol criteria for adjoint multipliers on the Hardy space and the U/V example.

The adjoint ``M_alpha^*`` of a multiplier with nonconstant bounded symbol
is hypercyclic exactly when ``alpha(D)`` meets the unit circle (the
Godefroy-Shapiro criterion).  The image of the open disk under a
nonconstant analytic map is open and connected, so it meets the circle
precisely when it has points of modulus below and above one.  Sampled
images can therefore witness an intersection robustly (a "straddle"),
while points very close to the circle only witness that the closure
touches it.
"""
from __future__ import annotations

import cmath
import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sla
import sympy

from . import exact as xq
from .errors import ConstantSymbol, DegreeTooHigh, Inconclusive

BAND = 1e-6


# --------------------------------------------------------------------------
# symbols


@dataclass
class Symbol:
    """Analytic symbol given by Taylor coefficients, a callable, or image samples.

    Exactly one of ``coeffs``, ``func`` and ``values`` is set.  ``values``
    holds sampled images ``alpha(z)`` (``points`` optionally holds the ``z``).
    """

    coeffs: tuple | None = None
    func: object = None
    values: np.ndarray | None = None
    points: np.ndarray | None = None
    name: str = "alpha"
    declared_bounded: bool = True

    def __post_init__(self):
        given = sum(x is not None for x in (self.coeffs, self.func, self.values))
        if given != 1:
            raise ValueError("give exactly one of coeffs, func, values")
        if self.coeffs is not None:
            c = list(self.coeffs)
            while len(c) > 1 and c[-1] == 0:
                c.pop()
            self.coeffs = tuple(c)
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=complex)

    @classmethod
    def polynomial(cls, coeffs, name: str = "alpha") -> "Symbol":
        return cls(coeffs=tuple(coeffs), name=name)

    @classmethod
    def from_samples(cls, values, points=None, name: str = "alpha") -> "Symbol":
        return cls(values=values, points=points, name=name)

    @property
    def degree(self) -> int:
        if self.coeffs is None:
            raise TypeError("degree is only defined for polynomial symbols")
        return len(self.coeffs) - 1

    def is_constant(self) -> bool:
        if self.coeffs is not None:
            return self.degree < 1
        if self.values is not None:
            return bool(np.all(self.values == self.values.flat[0]))
        return False

    def require_nonconstant(self):
        if self.is_constant():
            raise ConstantSymbol(f"symbol {self.name} is constant")

    def __call__(self, z):
        if self.coeffs is not None:
            z = np.asarray(z, dtype=complex)
            out = np.zeros_like(z)
            for c in reversed(self.coeffs):
                out = out * z + complex(c)
            return out
        if self.func is not None:
            return self.func(np.asarray(z, dtype=complex))
        raise TypeError("a sampled symbol cannot be evaluated at new points")

    def compose(self, outer, name: str) -> "Symbol":
        """``outer(alpha)`` as a sampled or callable symbol."""
        if self.values is not None:
            return Symbol.from_samples(outer(self.values), self.points, name)
        return Symbol(func=lambda z, f=self: outer(f(z)), name=name)


def disk_grid(radial: int = 64, angular: int = 256, layers: int = 8) -> np.ndarray:
    """Polar samples of the open unit disk plus boundary layers ``1 - 10^-s``."""
    if radial < 64 or angular < 256:
        raise ValueError("grid must be at least 64 x 256")
    radii = np.concatenate([np.arange(radial) / radial, 1.0 - 10.0 ** -np.arange(1, layers + 1)])
    theta = 2 * np.pi * np.arange(angular) / angular
    return (radii[:, None] * np.exp(1j * theta)[None, :]).ravel()


# --------------------------------------------------------------------------
# the criterion


@dataclass
class GSResult:
    """Sampled circle test for a symbol image.

    ``meets_unit_circle`` refers to the closure of the image (a straddle or a
    sample inside the band ``| |w| - 1 | < band``); ``gs_verdict`` is the
    robust statement that the open image itself meets the circle, which only a
    straddle can witness.
    """

    meets_unit_circle: bool
    image_inside_open_disk: bool
    image_avoids_closed_disk: bool
    gs_verdict: bool
    witnesses: dict = field(default_factory=dict)
    min_modulus: float = math.nan
    max_modulus: float = math.nan

    def to_dict(self) -> dict:
        return {
            "meets_unit_circle": self.meets_unit_circle,
            "image_inside_open_disk": self.image_inside_open_disk,
            "image_avoids_closed_disk": self.image_avoids_closed_disk,
            "gs_verdict": self.gs_verdict,
            "min_modulus": self.min_modulus,
            "max_modulus": self.max_modulus,
            "witnesses": {k: [_c(v) for v in pair] for k, pair in self.witnesses.items()},
        }


def _c(z):
    if z is None:
        return None
    z = complex(z)
    return [z.real, z.imag]


def check_gs_criterion(symbol: Symbol, grid=None, band: float = BAND) -> GSResult:
    """Decide the circle flags from a sampled image.

    Raises
    ------
    ConstantSymbol
        For constant symbols.
    Inconclusive
        If every sampled modulus lies in the band around one.
    """
    symbol.require_nonconstant()
    if symbol.values is not None:
        w = symbol.values.ravel()
        z = symbol.points.ravel() if symbol.points is not None else np.full(w.shape, np.nan + 0j)
    else:
        z = disk_grid() if grid is None else (disk_grid(*grid) if isinstance(grid, tuple) else np.asarray(grid))
        w = np.asarray(symbol(z), dtype=complex).ravel()
    mod = np.abs(w)
    dev = mod - 1.0
    if np.all(np.abs(dev) < band):
        raise Inconclusive("all sampled moduli lie within the band around 1")
    wit = {}
    lo, hi = int(np.argmin(mod)), int(np.argmax(mod))
    in_band = np.abs(dev) < band
    straddle = bool(dev[lo] < -band and dev[hi] > band)
    if straddle:
        wit["below"] = (z[lo], w[lo])
        wit["above"] = (z[hi], w[hi])
    if np.any(in_band):
        i = int(np.argmin(np.abs(dev)))
        wit["near_circle"] = (z[i], w[i])
    meets = straddle or bool(np.any(in_band))
    if not meets:
        # closest approach, for reporting
        i = int(np.argmin(np.abs(dev)))
        wit["closest"] = (z[i], w[i])
    inside = bool(np.all(mod < 1.0))
    avoids = bool(np.all(mod > 1.0))
    if inside:
        wit["max_modulus"] = (z[hi], w[hi])
    if avoids:
        wit["min_modulus"] = (z[lo], w[lo])
    return GSResult(
        meets_unit_circle=meets,
        image_inside_open_disk=inside,
        image_avoids_closed_disk=avoids,
        gs_verdict=straddle,
        witnesses=wit,
        min_modulus=float(mod[lo]),
        max_modulus=float(mod[hi]),
    )


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class PlaneDomain:
    """``triangle-U``, ``lens-V``, ``disk`` (center, radius) or ``polygon`` (vertices).

    ``shift`` translates the domain: membership of ``w`` is tested at ``w - shift``.
    """

    kind: str
    params: tuple = ()
    shift: complex = 0j

    def __post_init__(self):
        if self.kind not in ("triangle-U", "lens-V", "disk", "polygon"):
            raise ValueError(f"unknown domain kind {self.kind!r}")

    def shifted(self, by) -> "PlaneDomain":
        return PlaneDomain(self.kind, self.params, self.shift + complex(by))


U_DOMAIN = PlaneDomain("triangle-U")
V_DOMAIN = PlaneDomain("lens-V")


def _in_u(a: Fraction, b: Fraction) -> bool:
    return a < 0 and b - a < 1 and b + a > -1


def _in_v(a: Fraction, b: Fraction) -> bool:
    # |a| < 1 - sqrt(1 - b^2)  <=>  1 - |a| > 0 and (1 - |a|)^2 > 1 - b^2
    if not (0 < b < 1):
        return False
    s = 1 - abs(a)
    return s > 0 and s * s > 1 - b * b


def _point_in_polygon(a, b, verts) -> bool:
    inside = False
    n = len(verts)
    for i in range(n):
        (x1, y1), (x2, y2) = verts[i], verts[(i + 1) % n]
        if (y1 > b) != (y2 > b):
            xc = x1 + (b - y1) * (x2 - x1) / (y2 - y1)
            if a < xc:
                inside = not inside
    return inside


def domain_membership(domain: PlaneDomain, point) -> bool:
    """Exact evaluation of the defining inequalities (floats are read exactly)."""
    w = complex(point) - domain.shift
    a, b = Fraction(w.real), Fraction(w.imag)
    if domain.kind == "triangle-U":
        return _in_u(a, b)
    if domain.kind == "lens-V":
        return _in_v(a, b)
    if domain.kind == "disk":
        c, r = domain.params
        c = complex(c)
        da, db = a - Fraction(c.real), b - Fraction(c.imag)
        return da * da + db * db < Fraction(r) ** 2
    verts = [(Fraction(complex(v).real), Fraction(complex(v).imag)) for v in domain.params]
    return _point_in_polygon(a, b, verts)


def membership_mask(domain: PlaneDomain, w) -> np.ndarray:
    """Vectorized float membership (used for sampling; exact checks use :func:`domain_membership`)."""
    w = np.asarray(w, dtype=complex) - domain.shift
    a, b = w.real, w.imag
    if domain.kind == "triangle-U":
        return (a < 0) & (b - a < 1) & (b + a > -1)
    if domain.kind == "lens-V":
        s = 1 - np.abs(a)
        return (b > 0) & (b < 1) & (s > 0) & (s * s > 1 - b * b)
    if domain.kind == "disk":
        c, r = domain.params
        return np.abs(w - c) < r
    return np.array([_point_in_polygon(x, y, [(complex(v).real, complex(v).imag) for v in domain.params]) for x, y in zip(a, b)])


def sample_domain(domain: PlaneDomain, count: int, rng) -> np.ndarray:
    """Uniform samples by rejection from the bounding box."""
    if domain.kind == "triangle-U":
        box = (-1.0, 0.0, -1.0, 1.0)
    elif domain.kind == "lens-V":
        box = (-1.0, 1.0, 0.0, 1.0)
    elif domain.kind == "disk":
        c, r = domain.params
        c = complex(c)
        box = (c.real - r, c.real + r, c.imag - r, c.imag + r)
    else:
        vs = np.array([complex(v) for v in domain.params])
        box = (vs.real.min(), vs.real.max(), vs.imag.min(), vs.imag.max())
    out = []
    have = 0
    local = PlaneDomain(domain.kind, domain.params)
    while have < count:
        n = max(2 * (count - have), 1024)
        w = rng.uniform(box[0], box[1], n) + 1j * rng.uniform(box[2], box[3], n)
        w = w[membership_mask(local, w)]
        out.append(w)
        have += len(w)
    return np.concatenate(out)[:count] + domain.shift


# --------------------------------------------------------------------------
# the four facts


@dataclass
class DomainFacts:
    fact_i: bool
    fact_ii: bool
    fact_iii: bool
    fact_iv: bool
    witnesses: dict
    samples: int
    violations: dict

    @property
    def all_pass(self) -> bool:
        return self.fact_i and self.fact_ii and self.fact_iii and self.fact_iv

    def to_dict(self) -> dict:
        return {
            "fact_i_(1+U)_meets_circle": self.fact_i,
            "fact_ii_exp(U)_in_disk": self.fact_ii,
            "fact_iii_(1+V)_avoids_disk": self.fact_iii,
            "fact_iv_exp(V)_meets_circle": self.fact_iv,
            "samples": self.samples,
            "violations": self.violations,
            "witnesses": {k: str(v) for k, v in self.witnesses.items()},
        }


def verify_domain_facts(samples: int = 100_000, seed: int = 0, u_shift: float = 0.0) -> DomainFacts:
    """Check the four facts exactly at constructed witnesses and on random samples.

    (i)   ``z = e^{-i pi/6} - 1`` lies in ``U`` and ``|1 + z| = 1``.
    (ii)  ``|e^z| = e^a < 1`` on ``U`` (every point has ``a < 0``).
    (iii) ``(1 + a)^2 + b^2 > 1`` on ``V``.
    (iv)  ``i/2`` lies in ``V`` and ``|e^{i/2}| = 1``.

    ``u_shift`` moves ``U`` to ``U + u_shift`` in (i) and (ii).
    """
    rng = np.random.default_rng(seed)
    sh = sympy.nsimplify(u_shift)
    # (i) exact witness
    z1 = sympy.exp(-sympy.I * sympy.pi / 6) - 1
    a1, b1 = sympy.re(z1), sympy.im(z1)
    # z1 + sh lies in U + sh exactly when z1 lies in U
    in_u = bool(a1 < 0) and bool(b1 - a1 < 1) and bool(b1 + a1 > -1)
    on_circle = sympy.simplify(sympy.Abs(1 + z1 + sh) - 1) == 0
    w_i = in_u and on_circle
    # (ii) exact: membership forces a < 0 hence e^a < 1; samples double check
    us = sample_domain(U_DOMAIN.shifted(u_shift), samples, rng)
    viol_ii = int(np.sum(np.abs(np.exp(us)) >= 1.0))
    # on U + s the real part is below s, so e^a < 1 is guaranteed only for s <= 0
    exact_ii = u_shift <= 0
    # (iii) exact on the lens: (1+a)^2 + b^2 - 1 = (1+a)^2 - (1 - b^2) > 0 since 1 + a >= 1 - |a| > sqrt(1 - b^2)
    vs = sample_domain(V_DOMAIN, samples, rng)
    viol_iii = 0
    for w in vs:
        a, b = Fraction(w.real), Fraction(w.imag)
        if not (_in_v(a, b) and (1 + a) ** 2 + b * b > 1):
            viol_iii += 1
    viol_iii += int(np.sum(np.abs(1 + vs) <= 1.0))
    # (iv) exact witness
    b4 = sympy.Rational(1, 2)
    in_v = bool(0 < b4 < 1) and bool(0 < 1 - sympy.sqrt(1 - b4**2))
    unit = sympy.simplify(sympy.Abs(sympy.exp(sympy.I * b4)) - 1) == 0
    return DomainFacts(
        fact_i=bool(w_i),
        fact_ii=viol_ii == 0 and exact_ii,
        fact_iii=viol_iii == 0,
        fact_iv=bool(in_v and unit),
        witnesses={"i": z1, "iv": sympy.I * b4},
        samples=samples,
        violations={"ii": viol_ii, "iii": viol_iii},
    )


# --------------------------------------------------------------------------
# truncated adjoint multipliers


def build_adjoint_multiplier(symbol: Symbol, N: int, exact: bool = False) -> np.ndarray:
    """Truncated ``M_alpha^*`` on span ``{1, z, .., z^{N-1}}``.

    This is the conjugate transpose of the lower-triangular Toeplitz matrix of
    the Taylor coefficients.  Constant symbols are allowed here (linear
    algebra only).
    """
    if symbol.coeffs is None:
        raise TypeError("need a polynomial symbol")
    if symbol.degree >= N:
        raise DegreeTooHigh(f"degree {symbol.degree} >= N = {N}")
    if exact:
        m = np.full((N, N), Fraction(0), dtype=object)
        for d, c in enumerate(symbol.coeffs):
            c = xq.to_fraction(c)
            for j in range(N - d):
                m[j, j + d] = c  # real rationals: conjugation is trivial
        return m
    m = np.zeros((N, N), dtype=complex)
    for d, c in enumerate(symbol.coeffs):
        idx = np.arange(N - d)
        m[idx, idx + d] = np.conj(complex(c))
    return m


def kernel_vector(w, N: int) -> np.ndarray:
    return np.conj(complex(w)) ** np.arange(N)


def kernel_eigencheck(symbol: Symbol, w, N: int) -> float:
    """``||M* k_w - conj(alpha(w)) k_w|| / ||k_w||`` with truncated kernel ``k_w``."""
    if abs(w) >= 1:
        raise ValueError("|w| must be < 1")
    k = kernel_vector(w, N)
    m = build_adjoint_multiplier(symbol, N)
    r = m @ k - np.conj(symbol(w)) * k
    return float(np.linalg.norm(r) / np.linalg.norm(k))


def exp_taylor(coeffs, N: int) -> np.ndarray:
    """First ``N`` Taylor coefficients of ``e^alpha`` (``n f_n = sum_k k a_k f_{n-k}``)."""
    a = np.zeros(N, dtype=complex)
    c = np.asarray(coeffs, dtype=complex)[:N]
    a[: len(c)] = c
    f = np.zeros(N, dtype=complex)
    f[0] = cmath.exp(a[0])
    for n in range(1, N):
        f[n] = sum(k * a[k] * f[n - k] for k in range(1, n + 1)) / n
    return f


def exp_consistency(symbol: Symbol, N: int):
    """Compare ``expm(build(alpha))`` with ``build(e^alpha mod z^N)``.

    Truncated upper-triangular Toeplitz matrices form an algebra isomorphic to
    ``C[z]/z^N``, so the two agree up to rounding; the dropped tail
    ``sum_{n >= N} |(e^alpha)_n|`` is returned as the bound together with
    a rounding allowance.
    """
    m = build_adjoint_multiplier(symbol, N)
    dense = sla.expm(m)
    long = exp_taylor(symbol.coeffs, 4 * N + 64)
    built = build_adjoint_multiplier(Symbol.polynomial(tuple(long[:N])), N)
    residual = float(np.max(np.abs(dense - built)))
    tail = float(np.sum(np.abs(long[N:])))
    scale = float(np.max(np.abs(dense)))
    return residual, tail + 1e-12 * max(scale, 1.0) * N


# --------------------------------------------------------------------------
# the four-cell scenario


@dataclass
class ScenarioReport:
    facts: DomainFacts
    cells: dict
    witnesses: list

    @property
    def pattern(self) -> tuple:
        return tuple(self.cells[k]["verdict"] for k in ("I+A", "e^A", "I+B", "e^B"))

    def to_dict(self) -> dict:
        return {
            "facts": self.facts.to_dict(),
            "cells": self.cells,
            "pattern": list(self.pattern),
            "note": "sampled image geometry; Riemann maps are not constructed",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def witnesses_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["cell", "kind", "image_re", "image_im", "modulus"])
        for cell, kind, w in self.witnesses:
            wr.writerow([cell, kind, repr(w.real), repr(w.imag), repr(abs(w))])
        return buf.getvalue()


HYPERCYCLIC = "hypercyclic-type"
NOT_HYPERCYCLIC = "not"


def b2cp_scenario(u_shift: float = 0.0, samples: int = 100_000, seed: int = 0, alpha=None, beta=None) -> ScenarioReport:
    """Four-cell table for ``I+A``, ``e^A``, ``I+B``, ``e^B``.

    ``A = M_alpha^*`` and ``B = M_beta^*`` where ``alpha`` maps onto ``U`` and
    ``beta`` onto ``V``.  The proxy symbols are uniform samples of the two
    domains; ``alpha``/``beta`` override them (e.g. to test rejection of
    constant proxies).
    """
    rng = np.random.default_rng(seed)
    facts = verify_domain_facts(samples=samples, seed=seed, u_shift=u_shift)
    if alpha is None:
        alpha = Symbol.from_samples(sample_domain(U_DOMAIN.shifted(u_shift), samples, rng), name="alpha")
    if beta is None:
        beta = Symbol.from_samples(sample_domain(V_DOMAIN, samples, rng), name="beta")
    alpha.require_nonconstant()
    beta.require_nonconstant()
    composed = {
        "I+A": alpha.compose(lambda w: 1 + w, "1+alpha"),
        "e^A": alpha.compose(np.exp, "exp(alpha)"),
        "I+B": beta.compose(lambda w: 1 + w, "1+beta"),
        "e^B": beta.compose(np.exp, "exp(beta)"),
    }
    cells, witnesses = {}, []
    for name, sym in composed.items():
        res = check_gs_criterion(sym)
        verdict = HYPERCYCLIC if res.gs_verdict else NOT_HYPERCYCLIC
        if res.gs_verdict:
            reason = "image meets the unit circle"
        elif res.image_inside_open_disk:
            reason = "image inside the open unit disk"
        elif res.image_avoids_closed_disk:
            reason = "image avoids the closed unit disk"
        else:
            reason = "image touches the circle only in the closure"
        cells[name] = {"verdict": verdict, "reason": reason, **res.to_dict()}
        for kind, (_, w) in res.witnesses.items():
            witnesses.append((name, kind, complex(w)))
    return ScenarioReport(facts=facts, cells=cells, witnesses=witnesses)
