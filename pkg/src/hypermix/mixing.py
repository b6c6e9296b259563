"""Sampled mixing certificates and the projective orbit-coverage experiment.

Open sets are modeled by norm balls.  A certificate records, for each
parameter ``t`` of a grid, a witness ``x`` with ``x in U`` and
``T_t x in V``, built by steering the projections of the two centers onto
the span of the kernel data of the generators.  It is numerical evidence on
finitely many samples, not a proof.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sla

from . import exact as xq
from .errors import NotReachable
from .tensor import (
    DEFAULT_TAU,
    TensorTuple,
    apply_exp_linear_combination,
    build_tensor_tuple,
    kernel_transfer,
    steer_tensor,
)

NORMS = {
    "q": lambda v: float(np.sum(np.abs(v))),
    "p": lambda v: float(np.max(np.abs(v), initial=0.0)),
}


@dataclass(frozen=True)
class OpenBall:
    """``{x : ||x - center|| < radius}``; ``norm_tag`` is ``'q'`` (l1) or ``'p'`` (sup)."""

    center: np.ndarray
    radius: float
    norm_tag: str = "q"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.norm_tag not in NORMS:
            raise ValueError(f"unknown norm tag {self.norm_tag!r}")
        object.__setattr__(self, "center", np.asarray(self.center))

    def distance(self, x) -> float:
        return NORMS[self.norm_tag](np.asarray(x) - self.center)

    def contains(self, x) -> bool:
        return self.distance(x) < self.radius

    def to_dict(self) -> dict:
        return {"center": _vec(self.center), "radius": self.radius, "norm": self.norm_tag}


def _vec(v):
    v = np.asarray(v)
    if np.iscomplexobj(v):
        return [[float(a.real), float(a.imag)] for a in v]
    return [float(a) for a in v]


def _mag(t) -> float:
    return float(np.linalg.norm(np.atleast_1d(np.asarray(t, dtype=complex))))


def _t_json(t):
    t = np.atleast_1d(np.asarray(t))
    return _vec(t)


# --------------------------------------------------------------------------
# groups


class ShiftTupleGroup:
    """``t -> e^{<t,T>}`` for the shift tuple on the grid of ``dims``.

    The kernel span is ``E`` (the ``M_0`` block).  Witnesses are re-verified
    with the exact rational applier, which removes the cancellation a float
    evaluation of ``e^{<t,T>}`` suffers at large ``|t|``.
    """

    def __init__(self, dims, tau: float = DEFAULT_TAU, field: str = "real"):
        self.tuple: TensorTuple = build_tensor_tuple(dims, field=field)
        self.tau = tau
        self.k = self.tuple.k
        self.dim = self.tuple.size

    def kernel_basis(self) -> np.ndarray:
        cols = [self.tuple.basis_vector(m) for m in map(self.tuple.multi_index, self.tuple.e_indices())]
        return np.stack(cols, axis=1)

    def apply(self, t, x) -> np.ndarray:
        t = tuple(np.atleast_1d(t))
        if all(np.isreal(v) for v in t) and not np.iscomplexobj(x):
            val = apply_exp_linear_combination(self.tuple, [Fraction(float(np.real(v))) for v in t], x, exact=True)
            return xq.to_float(val)
        return apply_exp_linear_combination(self.tuple, t, x)

    def steer(self, u, v, t_list) -> list:
        res = steer_tensor(self.tuple, u, v, [tuple(np.atleast_1d(t)) for t in t_list], tau=self.tau)
        return [None if x is None else (x, img) for x, img in zip(res.xs, res.images)]


class MatrixGroup:
    """``t -> expm(sum t_j A_j)`` for commuting matrices (negative controls and small demos)."""

    def __init__(self, generators):
        gens = [np.atleast_2d(np.asarray(a)) for a in (generators if isinstance(generators, (list, tuple)) else [generators])]
        self.generators = gens
        self.k = len(gens)
        self.dim = gens[0].shape[0]

    def apply(self, t, x) -> np.ndarray:
        t = np.atleast_1d(t)
        return sla.expm(sum(tj * a for tj, a in zip(t, self.generators))) @ np.asarray(x)

    def kernel_basis(self) -> np.ndarray:
        """Orthonormal basis of ``span U_n A^n(ker A^{2n})`` (single generator)."""
        if self.k != 1:
            raise NotImplementedError("kernel data is only computed for one generator")
        a = self.generators[0]
        d = self.dim
        cols = []
        for n in range(1, d + 1):
            an = np.linalg.matrix_power(a, n)
            ker = sla.null_space(np.linalg.matrix_power(a, 2 * n))
            if ker.size:
                cols.append(an @ ker)
        if not cols:
            return np.zeros((d, 0))
        allc = np.hstack(cols)
        if not np.any(np.abs(allc) > 1e-12):
            return np.zeros((d, 0))
        return sla.orth(allc, rcond=1e-10)

    def steer(self, u, v, t_list) -> list:
        raise NotImplementedError("no constructive steering for a generic matrix group")


class SeqSpaceGroup:
    """The truncated sequence-space group, steered through finite shift-grid models.

    Each kernel element ``x_{gamma(n)} = A^m y`` carries a ``KernelTransfer``
    ``J`` with ``A_j J = J T_j``; steering the grid basis vector ``e_m`` and
    mapping by ``J`` steers ``(x, 0)`` and ``(0, x)``.
    """

    def __init__(self, model, tau: float = DEFAULT_TAU):
        from .seqspace import kernel_elements

        self.model = model
        self.k = model.k
        self.dim = model.size
        self.tau = tau
        self.ops = [op.to_dense() for op in model.operators(exact=False)]
        self.elements = kernel_elements(model)
        self.transfers = [kernel_transfer(self.ops, e.preimage, e.power) for e in self.elements]

    def kernel_basis(self) -> np.ndarray:
        if not self.elements:
            return np.zeros((self.dim, 0))
        return np.stack([tr.element for tr in self.transfers], axis=1)

    def apply(self, t, x) -> np.ndarray:
        from .seqspace import exp_group_apply

        return exp_group_apply(self.model, tuple(np.atleast_1d(t)), x, tol=1e-13).value

    def steer(self, u, v, t_list) -> list:
        basis = self.kernel_basis()
        cu = np.linalg.lstsq(basis, u, rcond=None)[0]
        cv = np.linalg.lstsq(basis, v, rcond=None)[0]
        t_list = [tuple(np.atleast_1d(t)) for t in t_list]
        out = [[np.zeros(self.dim), np.zeros(self.dim)] for _ in t_list]
        ok = [True] * len(t_list)
        for tr, a, b in zip(self.transfers, cu, cv):
            for coef, to_value in ((a, False), (b, True)):
                if coef == 0:
                    continue
                seq = tr.steer(to_value, t_list, self.tau)
                for i, pair in enumerate(seq):
                    if pair is None:
                        ok[i] = False
                        continue
                    out[i][0] = out[i][0] + coef * pair[0]
                    out[i][1] = out[i][1] + coef * pair[1]
        return [tuple(o) if flag else None for o, flag in zip(out, ok)]


# --------------------------------------------------------------------------
# certificates


@dataclass
class Witness:
    t: tuple
    x: np.ndarray
    image: np.ndarray
    dist_u: float
    dist_v: float

    def to_dict(self) -> dict:
        return {
            "t": _t_json(self.t),
            "x": _vec(self.x),
            "image": _vec(self.image),
            "dist_u": self.dist_u,
            "dist_v": self.dist_v,
        }


@dataclass
class MixingCertificate:
    """Sampled evidence that ``T_t(U)`` meets ``V`` for every grid ``t`` beyond ``r``.

    ``r`` is the smallest grid magnitude from which every sample succeeds
    (``None`` when the largest sample fails or nothing succeeds).
    """

    U: OpenBall
    V: OpenBall
    t_grid: list
    witnesses: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    tau: float | None = None

    @property
    def r(self):
        return _threshold(self.t_grid, {tuple(np.atleast_1d(w.t)) for w in self.witnesses})

    @property
    def empty(self) -> bool:
        return not self.witnesses

    def reverify(self, group) -> bool:
        """Recompute every witness image from scratch and recheck both balls."""
        for w in self.witnesses:
            img = group.apply(w.t, w.x)
            if not (self.U.contains(w.x) and self.V.contains(img)):
                return False
        return True

    def restrict(self, indices) -> "MixingCertificate":
        """Certificate along a sub-grid (``indices`` into ``t_grid``)."""
        keep = [tuple(np.atleast_1d(self.t_grid[i])) for i in indices]
        keys = set(keep)
        return MixingCertificate(
            U=self.U,
            V=self.V,
            t_grid=[self.t_grid[i] for i in indices],
            witnesses=[w for w in self.witnesses if tuple(np.atleast_1d(w.t)) in keys],
            failures=[f for f in self.failures if tuple(np.atleast_1d(f[0])) in keys],
            tau=self.tau,
        )

    def distance_profile(self) -> list:
        """``(|t|, dist to center(V))`` of each witness in grid order."""
        return [(_mag(w.t), w.dist_v) for w in self.witnesses]

    def to_dict(self) -> dict:
        return {
            "kind": "sampled evidence, not a proof",
            "U": self.U.to_dict(),
            "V": self.V.to_dict(),
            "tau": self.tau,
            "t_grid": [_t_json(t) for t in self.t_grid],
            "r": self.r,
            "witnesses": [w.to_dict() for w in self.witnesses],
            "failures": [{"t": _t_json(t), "reason": reason} for t, reason in self.failures],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _threshold(t_grid, good: set):
    ordered = sorted(t_grid, key=_mag)
    r = None
    for t in reversed(ordered):
        if tuple(np.atleast_1d(t)) in good:
            r = _mag(t)
        else:
            break
    return r


def _project(basis: np.ndarray, c: np.ndarray) -> np.ndarray:
    if basis.shape[1] == 0:
        return np.zeros_like(c)
    coef = np.linalg.lstsq(basis, c, rcond=None)[0]
    return basis @ coef


def certify_mixing(group, kernel_basis, U: OpenBall, V: OpenBall, t_grid) -> MixingCertificate:
    """Build witnesses ``x in U`` with ``T_t x in V`` for each ``t`` in ``t_grid``.

    The centers are projected onto the kernel span and the projections are
    steered.  With an empty kernel basis there is nothing to steer; the only
    candidate tried is ``x = T_{-t} center(V)`` (which lands on the center of
    ``V`` exactly), and it counts when it lies in ``U``.

    Raises
    ------
    NotReachable
        If the kernel span is nonempty but too far from one of the centers.
    """
    basis = np.asarray(kernel_basis)
    if basis.ndim == 1:
        basis = basis[:, None]
    t_grid = list(t_grid)
    cert = MixingCertificate(U=U, V=V, t_grid=t_grid, tau=getattr(group, "tau", None))
    if basis.shape[1] == 0:
        for t in t_grid:
            x = group.apply(-np.atleast_1d(t), V.center)
            img = group.apply(t, x)
            _record(cert, t, x, img)
        return cert
    pu = _project(basis, U.center)
    pv = _project(basis, V.center)
    if U.distance(pu) >= U.radius:
        raise NotReachable(f"kernel span is {U.distance(pu):.3g} from center(U), radius {U.radius}")
    if V.distance(pv) >= V.radius:
        raise NotReachable(f"kernel span is {V.distance(pv):.3g} from center(V), radius {V.radius}")
    seq = group.steer(pu, pv, t_grid)
    for t, pair in zip(t_grid, seq):
        if pair is None:
            cert.failures.append((t, "steering unavailable (no large coordinate)"))
            continue
        x, _ = pair
        img = group.apply(t, x)
        _record(cert, t, x, img)
    return cert


def _record(cert: MixingCertificate, t, x, img):
    du, dv = cert.U.distance(x), cert.V.distance(img)
    if du < cert.U.radius and dv < cert.V.radius:
        cert.witnesses.append(Witness(t=t, x=x, image=img, dist_u=du, dist_v=dv))
    else:
        cert.failures.append((t, f"dist_u={du:.3g}, dist_v={dv:.3g}"))


@dataclass
class HereditaryReport:
    t_seq: list
    tail_index: list  # per pair; None when the last sample fails
    certificates: list

    @property
    def all_tails(self) -> bool:
        return all(m is not None for m in self.tail_index)


def hereditary_check(group, t_seq, pair_samples, kernel_basis=None) -> HereditaryReport:
    """Per sampled pair, the first index ``M`` from which every ``t_m`` has a witness."""
    t_seq = list(t_seq)
    mags = [_mag(t) for t in t_seq]
    if any(b <= a for a, b in zip(mags, mags[1:])):
        raise ValueError("t_seq magnitudes must be strictly increasing")
    basis = group.kernel_basis() if kernel_basis is None else kernel_basis
    tails, certs = [], []
    for U, V in pair_samples:
        cert = certify_mixing(group, basis, U, V, t_seq)
        good = {tuple(np.atleast_1d(w.t)) for w in cert.witnesses}
        flags = [tuple(np.atleast_1d(t)) in good for t in t_seq]
        tail = None
        for m in range(len(flags) - 1, -1, -1):
            if not flags[m]:
                break
            tail = m
        tails.append(tail)
        certs.append(cert)
    return HereditaryReport(t_seq=t_seq, tail_index=tails, certificates=certs)


def random_ball_pairs(group, count: int, radius: float, rng, norm_tag: str = "q", off_kernel: float = 0.1):
    """Ball pairs centered near the kernel span (within ``off_kernel`` in the ball norm)."""
    basis = group.kernel_basis()
    pairs = []
    for _ in range(count):
        balls = []
        for _ in range(2):
            c = basis @ rng.uniform(-1, 1, basis.shape[1])
            noise = rng.normal(size=group.dim)
            noise -= _project(basis, noise)
            nn = NORMS[norm_tag](noise)
            if nn > 0:
                c = c + noise * (off_kernel * rng.uniform(0, 1) / nn)
            balls.append(OpenBall(c, radius, norm_tag))
        pairs.append(tuple(balls))
    return pairs


def log_grid(k: int, decades=(1, 5), per_decade: int = 2, directions=None, rng=None) -> list:
    """Parameters ``s * d`` with ``s`` log-spaced and ``d`` unit directions in ``R^k``.

    Directions default to the diagonal ``(1,..,1)/sqrt(k)`` and its negative,
    so both signs of the group are sampled.
    """
    if directions is None:
        d = np.ones(k) / math.sqrt(k)
        directions = [d, -d]
    mags = np.logspace(decades[0], decades[1], (decades[1] - decades[0]) * per_decade + 1)
    out = []
    for s in mags:
        for d in directions:
            out.append(tuple(float(v) for v in s * np.asarray(d)))
    return out


# --------------------------------------------------------------------------
# projective orbit coverage


@dataclass
class CoverageResult:
    fraction: float
    cells: int
    hit: int
    mesh: tuple


def sphere_cell(points: np.ndarray, mesh=(64, 128)) -> np.ndarray:
    """Equal-area cell index: uniform bins in ``z`` and in the azimuth."""
    nz, nphi = mesh
    z = np.clip(points[:, 2], -1.0, 1.0)
    iz = np.minimum(((z + 1.0) / 2.0 * nz).astype(int), nz - 1)
    phi = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2 * np.pi)
    ip = np.minimum((phi / (2 * np.pi) * nphi).astype(int), nphi - 1)
    return iz * nphi + ip


def orbit_coverage_3d(A, x, t_max: float, samples: int, mesh=(64, 128)) -> CoverageResult:
    """Fraction of sphere cells hit by ``+-e^{tA}x / |e^{tA}x|``, ``0 <= t <= t_max``.

    The orbit is propagated with one step matrix ``expm(h A)`` and renormalized
    after every step, so it never overflows.  Only sample points are binned.
    """
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    if A.shape != (3, 3) or x.shape != (3,):
        raise ValueError("need a 3x3 generator and a 3-vector")
    if not np.any(x):
        raise ValueError("x must be nonzero")
    if mesh[0] * mesh[1] < 1000:
        raise ValueError("mesh must have at least 1000 cells")
    h = t_max / max(samples - 1, 1)
    step = sla.expm(h * A)
    pts = np.empty((samples, 3))
    y = x / np.linalg.norm(x)
    # advance in blocks of powers to cut Python overhead
    block = 256
    powers = [np.eye(3)]
    for _ in range(block - 1):
        powers.append(step @ powers[-1])
    powers = np.stack(powers)  # (block, 3, 3)
    jump = step @ powers[-1]
    i = 0
    while i < samples:
        cnt = min(block, samples - i)
        chunk = powers[:cnt] @ y
        norms = np.linalg.norm(chunk, axis=1, keepdims=True)
        pts[i : i + cnt] = chunk / norms
        y = jump @ y
        y /= np.linalg.norm(y)
        i += cnt
    cells = np.unique(np.concatenate([sphere_cell(pts, mesh), sphere_cell(-pts, mesh)]))
    total = mesh[0] * mesh[1]
    return CoverageResult(fraction=len(cells) / total, cells=total, hit=len(cells), mesh=tuple(mesh))
