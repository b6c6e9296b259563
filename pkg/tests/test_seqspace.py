import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from hypermix.errors import DependentFunctionals, IncompleteGrade, NonpositiveEpsilon
from hypermix.seqspace import (
    GradedIndex,
    SeqSpaceModel,
    biorthogonalize,
    build_A_operators,
    build_alpha_sequence,
    build_model,
    build_operator_from_series,
    cauchy_riemann_probe,
    continuity_bound,
    exp_group_apply,
    kernel_elements,
    kernel_rank_brute_force,
    model_for_size,
)


# ---------------------------------------------------------------- gamma


def _graded_lex_oracle(k, grade):
    """All multi-indices of grade <= grade: sort by (|n|, n)."""
    pts = [n for n in itertools.product(range(grade + 1), repeat=k) if sum(n) <= grade]
    return sorted(pts, key=lambda n: (sum(n), n))


def test_gamma_k1_identity():
    g = GradedIndex(1)
    assert [g.forward((i,)) for i in range(20)] == list(range(20))


def test_gamma_k2_first_values():
    g = GradedIndex(2)
    assert [g.forward(n) for n in [(0, 0), (0, 1), (1, 0), (0, 2)]] == [0, 1, 2, 3]


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_gamma_matches_sort_oracle(k):
    oracle = _graded_lex_oracle(k, 5)
    g = GradedIndex(k)
    assert g.table(len(oracle)) == oracle


@given(st.integers(1, 5), st.data())
def test_gamma_roundtrip(k, data):
    n = tuple(data.draw(st.lists(st.integers(0, 9), min_size=k, max_size=k)))
    g = GradedIndex(k)
    assert g.inverse(g.forward(n)) == n
    i = data.draw(st.integers(0, 3000))
    assert g.forward(g.inverse(i)) == i


def test_gamma_roundtrip_1000_random(rng):
    for k in (2, 3, 5):
        g = GradedIndex(k)
        for _ in range(1000 // 3):
            n = tuple(int(v) for v in rng.integers(0, 12, k))
            assert g.inverse(g.forward(n)) == n


# ---------------------------------------------------------------- biorthogonal systems


def test_biorthogonal_identity():
    b = biorthogonalize(np.eye(4), np.eye(4))
    np.testing.assert_allclose(b.g, np.eye(4))
    np.testing.assert_allclose(b.x, np.eye(4))
    assert not np.any(b.alpha)


def test_biorthogonal_upper_triangular_rows():
    f = np.array([[1.0, 2.0, -1.0], [0.0, 1.0, 3.0], [0.0, 0.0, 1.0]])
    b = biorthogonalize(f, np.eye(3))
    # oracle: g_n = f_n + sum_{j<n} alpha_nj f_j must vanish on e_0..e_{n-1};
    # forward substitution on the transposed lower-triangular system
    for n in range(3):
        lhs = f[:n, :n].T
        want = np.linalg.solve(lhs, -f[n, :n]) if n else np.zeros(0)
        np.testing.assert_allclose(b.alpha[n, :n], want, atol=1e-14)
    gram = b.g @ b.x
    np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0, atol=1e-14)
    assert np.all(np.abs(np.diag(gram)) > 0)


@given(st.integers(0, 2**32 - 1))
def test_biorthogonal_random(seed):
    r = np.random.default_rng(seed)
    f = r.normal(size=(5, 5))
    y = r.normal(size=(5, 5))
    if min(np.linalg.svd(f, compute_uv=False)) < 1e-3 or min(np.linalg.svd(y, compute_uv=False)) < 1e-3:
        return
    b = biorthogonalize(f, y)
    scale = np.max(np.abs(b.g)) * np.max(np.abs(b.x))
    assert b.residual() <= 1e-10 * max(scale, 1.0)
    assert np.all(np.abs(np.diag(b.g @ b.x)) > 0)


def test_biorthogonal_pivot_max():
    r = np.random.default_rng(1)
    f, y = r.normal(size=(4, 4)), r.normal(size=(4, 4))
    b = biorthogonalize(f, y, pivot="max")
    assert b.residual() < 1e-10


def test_biorthogonal_dependent():
    f = np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(DependentFunctionals):
        biorthogonalize(f, np.eye(3))


# ---------------------------------------------------------------- alpha


def test_alpha_eps_one():
    a = build_alpha_sequence([1] * 8, 8)
    np.testing.assert_allclose(a.log2, [m * (m - 1) / 2 for m in range(9)])


def test_alpha_eps_two():
    a = build_alpha_sequence([2] * 3, 3)
    np.testing.assert_allclose(a.values(), [1, 0.5, 0.5, 1])


def test_alpha_empty():
    a = build_alpha_sequence([], 0)
    assert a.log2 == (0.0,)


def test_alpha_rejects_nonpositive():
    with pytest.raises(NonpositiveEpsilon):
        build_alpha_sequence([1, 0, 1], 3)
    with pytest.raises(NonpositiveEpsilon):
        build_alpha_sequence([1, -2], 2)


def test_alpha_growth_condition_log_space():
    eps = [0.5, 3.0, 0.25, 1.0, 7.0, 0.1]
    for slack in (1, 2):
        a = build_alpha_sequence(eps, 6, slack=slack)
        for m in range(6):
            # alpha_{m+1} >= 2^m alpha_m / eps_m
            assert a.log2[m + 1] >= a.log2[m] + m - math.log2(eps[m]) - 1e-12


def test_alpha_large_grades_do_not_overflow():
    a = build_alpha_sequence([1] * 80, 80)
    assert math.isfinite(a.log2[-1])
    assert a.ratio(79) == 2.0**-79


# ---------------------------------------------------------------- operators


def test_series_zero_operator():
    m = build_model(1, 4)
    op = build_operator_from_series(m, [0.0] * 5, lambda i: i, lambda i: i)
    assert not np.any(op.to_dense())


def test_series_rank_one():
    m = build_model(1, 4, f_values=[3.0, 1, 1, 1, 1])
    op = build_operator_from_series(m, [1.0], lambda i: 0, lambda i: 0)
    dense = op.to_dense()
    want = np.zeros((5, 5))
    want[0, 0] = 3.0  # f_0(x) x_0 with f_0 = 3 * coordinate 0
    np.testing.assert_array_equal(dense, want)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_series_bound(seed):
    r = np.random.default_rng(seed)
    m = build_model(2, 4, f_values=list(r.uniform(0.5, 2.0, 15)))
    a = r.normal(size=30)
    a /= np.sum(np.abs(a))
    alpha_map = lambda i: int(r_map[i][0])
    beta_map = lambda i: int(r_map[i][1])
    r_map = r.integers(0, m.size, (30, 2))
    op = build_operator_from_series(m, a, alpha_map, beta_map)
    for _ in range(200):
        x = r.normal(size=m.size)
        assert m.q(op @ x) <= np.sum(np.abs(a)) * m.p(x) * (1 + 1e-9)


def test_incomplete_grade():
    with pytest.raises(IncompleteGrade):
        model_for_size(2, 7)
    with pytest.raises(IncompleteGrade):
        build_model(2, 2, size=5)
    assert model_for_size(2, 6).grade == 2


def test_a1_is_weighted_backward_shift():
    m = build_model(1, 6)
    a = m.operators()[0].to_dense()
    want = np.zeros((7, 7))
    for i in range(6):
        want[i, i + 1] = 2.0**-i
    np.testing.assert_allclose(a, want)


@pytest.mark.parametrize("k,grade", [(1, 5), (2, 5), (3, 4)])
def test_a_kills_bottom_and_maps_up_basis(k, grade):
    r = np.random.default_rng(k)
    g = GradedIndex(k)
    diag = list(r.uniform(0.5, 2.0, g.count_up_to(grade)))
    m = build_model(k, grade, f_values=diag)
    ops = m.operators()
    for j, op in enumerate(ops):
        e0 = np.zeros(m.size)
        e0[0] = 1.0
        assert not np.any(op @ e0)
        for i in range(m.size):
            n = g.inverse(i)
            e = np.zeros(m.size)
            e[i] = 1.0
            out = op @ e
            if n[j] == 0:
                assert not np.any(out)
            else:
                low = list(n)
                low[j] -= 1
                want = np.zeros(m.size)
                want[g.forward(low)] = 2.0 ** (m.alpha.log2[sum(low)] - m.alpha.log2[sum(low) + 1])
                np.testing.assert_allclose(out, want, rtol=1e-12)


def test_product_rule_two_steps():
    m = build_model(2, 6)
    a1, a2 = (op.to_dense() for op in m.operators())
    g = m.gamma
    for i in range(m.size):
        n = g.inverse(i)
        if n[0] >= 1 and n[1] >= 1:
            e = np.zeros(m.size)
            e[i] = 1
            low = (n[0] - 1, n[1] - 1)
            want = np.zeros(m.size)
            want[g.forward(low)] = 2.0 ** (m.alpha.log2[sum(n) - 2] - m.alpha.log2[sum(n)])
            np.testing.assert_allclose(a1 @ (a2 @ e), want, rtol=1e-12)
            np.testing.assert_allclose(a2 @ (a1 @ e), want, rtol=1e-12)


@pytest.mark.parametrize("k,grade", [(1, 6), (2, 6), (3, 5)])
def test_commutation_exact(k, grade):
    r = np.random.default_rng(grade)
    g = GradedIndex(k)
    diag = [Fraction(int(v), 3) for v in r.integers(1, 7, g.count_up_to(grade))]
    m = build_model(k, grade, f_values=diag, exact=True)
    dense = [op.to_dense(exact=True) for op in m.operators(exact=True)]
    for a, b in itertools.combinations(dense, 2):
        assert np.array_equal(a.dot(b), b.dot(a))


def test_coefficient_bounds_strict_with_slack():
    m = build_model(2, 6, f_values=list(np.linspace(0.5, 3.0, 28)), slack=2)
    total = [0.0, 0.0]
    for j, n, c in m.coefficients():
        assert 0 < abs(c) < 2.0 ** -sum(n)
        total[j] += abs(c)
    assert all(t <= 2**m.k for t in total)


def test_coefficient_bounds_equality_choice():
    # with equality in the alpha recursion the bound is attained at the minimizing diagonal
    m = build_model(2, 6)
    attained = False
    for _, n, c in m.coefficients():
        assert 0 < abs(c) <= 2.0 ** -sum(n)
        attained |= abs(c) == 2.0 ** -sum(n)
    assert attained


@pytest.mark.parametrize("k", [1, 2, 3])
def test_coefficient_total_below_c(k):
    m = build_model(k, 12 // k, slack=Fraction(3, 2))
    for j in range(k):
        assert sum(abs(c) for jj, _, c in m.coefficients() if jj == j) <= m.a


# ---------------------------------------------------------------- the group


def test_exp_at_zero():
    m = build_model(2, 4)
    x = np.arange(m.size, dtype=float)
    res = exp_group_apply(m, (0.0, 0.0), x)
    np.testing.assert_array_equal(res.value, x)
    assert res.bound == 0.0


@pytest.mark.parametrize("k,grade", [(1, 20), (2, 6), (3, 3)])
def test_exp_matches_dense_oracle(k, grade, rng):
    g = GradedIndex(k)
    m = build_model(k, grade, f_values=list(rng.uniform(0.5, 2.0, g.count_up_to(grade))))
    assert m.size <= 64
    ops = m.operators()
    for _ in range(5):
        z = rng.normal(size=k) + 1j * rng.normal(size=k)
        x = rng.normal(size=m.size)
        res = exp_group_apply(m, z, x, tol=1e-10)
        lin = sum(zj * op.to_dense() for zj, op in zip(z, ops))
        oracle = sla.expm(lin) @ x
        assert np.max(np.abs(res.value - oracle)) <= 1e-10 + 1e-12 * np.max(np.abs(oracle))


def test_tail_bound_certifies_truncation(rng):
    m = build_model(1, 30)
    ops = m.operators()
    x = rng.normal(size=m.size)
    z = (1.3,)
    res = exp_group_apply(m, z, x, tol=1e-6)
    full = sla.expm(z[0] * ops[0].to_dense()) @ x
    assert m.q(full - res.value) <= res.bound + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_group_law(seed):
    r = np.random.default_rng(seed)
    m = build_model(2, 6, f_values=list(r.uniform(0.5, 2.0, 28)))
    tol = 1e-10
    for _ in range(10):
        z = r.normal(size=2)
        w = r.normal(size=2)
        x = r.normal(size=m.size)
        lhs = exp_group_apply(m, z, exp_group_apply(m, w, x, tol).value, tol).value
        rhs = exp_group_apply(m, z + w, x, tol).value
        assert m.q(lhs - rhs) <= 2 * tol + 1e-12 * m.q(rhs)


def test_uniform_continuity_bound(rng):
    m = build_model(2, 6, f_values=list(rng.uniform(0.5, 2.0, 28)))
    for _ in range(100):
        z = rng.normal(size=2) + 1j * rng.normal(size=2)
        z *= rng.uniform(0, 2) / np.sum(np.abs(z))
        x = rng.normal(size=m.size)
        val = exp_group_apply(m, z, x, tol=1e-12).value
        assert m.q(val - x) <= continuity_bound(m, z, x) + 1e-12


def test_cauchy_riemann_probe(rng):
    m = build_model(2, 6, f_values=list(rng.uniform(0.5, 2.0, 28)))
    x = rng.normal(size=m.size)
    rows, ratios = cauchy_riemann_probe(m, x, coordinate=2, axis=0, z0=(0.3 + 0.2j, -0.4j))
    assert len(ratios) == 4
    assert all(3.0 <= q <= 5.0 for q in ratios)


# ---------------------------------------------------------------- kernel data


@pytest.mark.parametrize("k,grade", [(1, 7), (2, 6), (3, 5), (2, 9)])
def test_kernel_rank_matches_brute_force(k, grade):
    m = build_model(k, grade)
    elems = kernel_elements(m)
    assert len(elems) == kernel_rank_brute_force(m)
    assert len(elems) == sum(1 for i in range(m.size) if 2 * sum(m.gamma.inverse(i)) + k <= grade)


def test_kernel_elements_are_images_of_annihilated_vectors():
    m = build_model(2, 7, f_values=list(np.linspace(1, 3, 36)))
    ops = [op.to_dense() for op in m.operators()]
    for e in kernel_elements(m):
        img = e.preimage
        ann = e.preimage
        for a, mj in zip(ops, e.power):
            img = np.linalg.matrix_power(a, mj) @ img
            ann = np.linalg.matrix_power(a, 2 * mj) @ e.preimage
            assert not np.any(ann)
        want = np.zeros(m.size)
        want[e.index] = 1.0
        np.testing.assert_allclose(img, want, rtol=1e-12)


def test_kernel_exhausts_each_basis_vector():
    # every fixed x_gamma(n) enters the kernel span once the grade reaches 2|n| + k
    k = 2
    for i in range(10):
        n = GradedIndex(k).inverse(i)
        need = 2 * sum(n) + k
        assert i not in {e.index for e in kernel_elements(build_model(k, need - 1))} or need - 1 < 0
        assert i in {e.index for e in kernel_elements(build_model(k, need))}


# ---------------------------------------------------------------- serialization


def test_json_roundtrip():
    m = build_model(2, 4, f_values=[Fraction(v, 2) for v in range(1, 16)], slack=2)
    text = m.to_json()
    back = SeqSpaceModel.from_json(text)
    assert back.size == m.size
    assert back.f_values == m.f_values
    np.testing.assert_allclose(back.alpha.log2, m.alpha.log2)
    for a, b in zip(back.operators(), m.operators()):
        np.testing.assert_array_equal(a.to_dense(), b.to_dense())
    assert back.to_json() == text


def test_boundary_grade_reported():
    import json

    m = build_model(2, 5)
    data = json.loads(m.to_json())
    assert data["boundary_grade"] == 5
    assert len(data["eps"]) == 5
