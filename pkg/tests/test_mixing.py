import json

import numpy as np
import pytest

from hypermix.errors import NotReachable
from hypermix.mixing import (
    MatrixGroup,
    OpenBall,
    SeqSpaceGroup,
    ShiftTupleGroup,
    certify_mixing,
    hereditary_check,
    log_grid,
    orbit_coverage_3d,
    random_ball_pairs,
    sphere_cell,
)
from hypermix.seqspace import build_model


@pytest.fixture(scope="module")
def g22():
    return ShiftTupleGroup((2, 2))


def _first(group):
    c = np.zeros(group.dim)
    c[0] = 1.0
    return c


# ---------------------------------------------------------------- balls


def test_ball_rejects_bad_radius_and_norm():
    with pytest.raises(ValueError):
        OpenBall(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        OpenBall(np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        OpenBall(np.zeros(2), 1.0, "l7")


def test_ball_norms():
    b = OpenBall(np.zeros(3), 1.0, "q")
    assert b.distance([0.5, -0.5, 0.25]) == 1.25
    assert not b.contains([0.5, -0.5, 0.0])  # open ball: boundary excluded
    s = OpenBall(np.zeros(3), 1.0, "p")
    assert s.distance([0.5, -0.5, 0.25]) == 0.5
    assert s.contains([0.5, -0.5, 0.25])


# ---------------------------------------------------------------- certificates


def test_shift_tuple_certificate_from_100(g22):
    U = V = OpenBall(_first(g22), 0.5)
    grid = log_grid(2, decades=(2, 5), per_decade=2)
    cert = certify_mixing(g22, g22.kernel_basis(), U, V, grid)
    assert not cert.failures
    assert cert.r is not None and cert.r <= 100 * (1 + 1e-9)
    for w in cert.witnesses:
        assert w.dist_u < 0.5 and w.dist_v < 0.5
    assert cert.reverify(g22)


def test_certificate_reverify_detects_tampering(g22):
    U = V = OpenBall(_first(g22), 0.5)
    cert = certify_mixing(g22, g22.kernel_basis(), U, V, [(100.0, 100.0)])
    cert.witnesses[0].x[-1] += 1e3
    assert not cert.reverify(g22)


def test_identity_group_never_mixes():
    g = MatrixGroup(np.zeros((2, 2)))
    U = OpenBall(np.array([0.0, 0.0]), 0.5)
    V = OpenBall(np.array([3.0, 0.0]), 0.5)
    cert = certify_mixing(g, g.kernel_basis(), U, V, log_grid(1, decades=(0, 4)))
    assert cert.empty
    assert cert.r is None
    assert len(cert.failures) == len(cert.t_grid)


def test_rotation_preserves_modulus():
    g = MatrixGroup(np.array([[1j]]))
    U = OpenBall(np.array([1.0 + 0j]), 0.1)
    V = OpenBall(np.array([2.0 + 0j]), 0.1)
    ts = list(np.linspace(0.0, 50.0, 101))
    cert = certify_mixing(g, g.kernel_basis(), U, V, ts)
    assert cert.empty and cert.r is None
    # oracle: |e^{it} u| = |u| <= 1.1 < 1.9 for every u in U
    for t in ts:
        u = 1.0 + 0.099 * np.exp(1j * t)
        assert abs(g.apply(t, np.array([u]))[0] - 2.0) > 0.1


def test_not_reachable(g22):
    c = np.zeros(16)
    c[-1] = 1.0  # e_(4,4) is far from E
    with pytest.raises(NotReachable):
        certify_mixing(g22, g22.kernel_basis(), OpenBall(c, 0.5), OpenBall(_first(g22), 0.5), [(100.0, 100.0)])
    with pytest.raises(NotReachable):
        certify_mixing(g22, g22.kernel_basis(), OpenBall(_first(g22), 0.5), OpenBall(c, 0.5), [(100.0, 100.0)])


def test_random_pairs_certified(g22, rng):
    pairs = random_ball_pairs(g22, 5, 0.5, rng)
    grid = log_grid(2, decades=(2, 4), per_decade=2)
    for U, V in pairs:
        cert = certify_mixing(g22, g22.kernel_basis(), U, V, grid)
        assert cert.r is not None and cert.r <= 100 * (1 + 1e-9)
        assert cert.reverify(g22)


def test_sup_norm_balls(g22, rng):
    pairs = random_ball_pairs(g22, 3, 0.3, rng, norm_tag="p")
    for U, V in pairs:
        cert = certify_mixing(g22, g22.kernel_basis(), U, V, log_grid(2, decades=(3, 4)))
        assert cert.r is not None
        assert cert.reverify(g22)


def test_restriction_to_subprogression(g22, rng):
    U, V = random_ball_pairs(g22, 1, 0.5, rng)[0]
    grid = log_grid(2, decades=(2, 5), per_decade=2)
    cert = certify_mixing(g22, g22.kernel_basis(), U, V, grid)
    full_r = cert.r
    for start, step in ((0, 2), (1, 3), (2, 4)):
        sub = cert.restrict(range(start, len(grid), step))
        assert sub.r is not None and sub.r >= full_r - 1e-9
        assert len(sub.witnesses) == len(sub.t_grid)


def test_distance_profile_non_increasing(g22, rng):
    pairs = random_ball_pairs(g22, 5, 0.5, rng, off_kernel=0.0)
    grid = log_grid(2, decades=(1, 5), per_decade=2, directions=[np.ones(2) / np.sqrt(2)])
    for U, V in pairs:
        prof = certify_mixing(g22, g22.kernel_basis(), U, V, grid).distance_profile()
        beyond = [d for t, d in prof if t >= 100]
        assert all(b <= a * (1 + 1e-6) + 1e-12 for a, b in zip(beyond, beyond[1:]))


def test_certificate_json(g22):
    U = V = OpenBall(_first(g22), 0.5)
    cert = certify_mixing(g22, g22.kernel_basis(), U, V, [(10.0, 10.0), (1e3, 1e3)])
    data = json.loads(cert.to_json())
    assert data["kind"] == "sampled evidence, not a proof"
    assert data["tau"] == 10
    assert data["U"]["radius"] == 0.5
    assert len(data["witnesses"]) + len(data["failures"]) == 2


def test_seqspace_group_certificate(rng):
    g = SeqSpaceGroup(build_model(1, 5))
    basis = g.kernel_basis()
    c = basis[:, 0]
    U = OpenBall(c, 0.5)
    V = OpenBall(-c, 0.5)
    cert = certify_mixing(g, basis, U, V, [(1e2,), (1e3,), (1e4,)])
    assert cert.r is not None
    assert cert.reverify(g)


# ---------------------------------------------------------------- hereditary


def test_hereditary_along_ray(g22, rng):
    pairs = random_ball_pairs(g22, 20, 0.5, rng)
    d = np.ones(2) / np.sqrt(2)
    t_seq = [tuple(m * 20.0 * d) for m in range(1, 16)]
    rep = hereditary_check(g22, t_seq, pairs)
    assert rep.all_tails


def test_hereditary_alternating_signs(g22, rng):
    pairs = random_ball_pairs(g22, 10, 0.5, rng)
    t_seq = [tuple((-1) ** m * 10.0 ** (1 + m / 3) * np.array([1.0, 0.5])) for m in range(12)]
    rep = hereditary_check(g22, t_seq, pairs)
    assert rep.all_tails


def test_hereditary_identity_fails():
    g = MatrixGroup(np.zeros((2, 2)))
    pair = (OpenBall(np.zeros(2), 0.5), OpenBall(np.array([3.0, 0.0]), 0.5))
    rep = hereditary_check(g, [(10.0**m,) for m in range(5)], [pair])
    assert rep.tail_index == [None]
    assert not rep.all_tails


def test_hereditary_requires_increasing(g22):
    with pytest.raises(ValueError):
        hereditary_check(g22, [(10.0, 10.0), (5.0, 5.0)], [])


# ---------------------------------------------------------------- coverage


def test_sphere_cells_equal_area():
    # uniform points on the sphere spread evenly over the mesh
    r = np.random.default_rng(3)
    p = r.normal(size=(400000, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    counts = np.bincount(sphere_cell(p, (16, 32)), minlength=512)
    assert counts.min() > 0.75 * counts.mean()
    assert counts.max() < 1.25 * counts.mean()


def test_coverage_zero_generator():
    res = orbit_coverage_3d(np.zeros((3, 3)), np.array([1.0, 2.0, 3.0]), 10.0, 1000)
    assert res.hit == 2
    assert res.fraction == 2 / (64 * 128)


def test_coverage_rotation_stays_on_great_circle():
    a = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    res = orbit_coverage_3d(a, np.array([1.0, 0.0, 0.0]), 20.0, 20000)
    # the equator meets one or two z-bands only
    assert res.hit <= 2 * 128
    assert res.fraction <= 2 / 64


@pytest.mark.parametrize("seed", range(3))
def test_coverage_random_small(seed):
    r = np.random.default_rng(seed)
    res = orbit_coverage_3d(r.normal(size=(3, 3)), r.normal(size=3), 100.0, 20000)
    assert res.fraction <= 0.2


def test_coverage_validation():
    with pytest.raises(ValueError):
        orbit_coverage_3d(np.eye(3), np.zeros(3), 1.0, 10)
    with pytest.raises(ValueError):
        orbit_coverage_3d(np.eye(2), np.ones(2), 1.0, 10)
    with pytest.raises(ValueError):
        orbit_coverage_3d(np.eye(3), np.ones(3), 1.0, 10, mesh=(10, 10))
