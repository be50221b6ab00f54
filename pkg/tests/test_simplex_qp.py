import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdstrack.simplex_qp import (EXACT_MARGIN, FAST_MARGIN, ConstraintSpec, DegeneratePayoffError,
                                 alpha_bound, as_affinity, barycenter, dominant_distribution,
                                 fast_cdsc, kkt_residual, lambda_max, local_maximizer, objective,
                                 replicator_step)
from oracles import (brute_force_local_maximizers, lambda_max_eigh, numeric_replicator, penalized,
                     random_affinity)


def spec_for(n, Q, alpha=1.0):
    return ConstraintSpec(n, tuple(Q), alpha)


def affinities(max_n=8, min_n=2):
    @st.composite
    def build(draw):
        n = draw(st.integers(min_n, max_n))
        seed = draw(st.integers(0, 2 ** 32 - 1))
        density = draw(st.sampled_from([0.3, 0.6, 1.0]))
        rng = np.random.default_rng(seed)
        A = random_affinity(rng, n, density)
        k = draw(st.integers(1, n))
        Q = sorted(rng.choice(n, k, replace=False).tolist())
        return A, Q
    return build()


# ---------------------------------------------------------------- objective

def test_objective_triangle_barycenter(triangle):
    assert objective(triangle, spec_for(3, [0, 1, 2]), barycenter(3)) == pytest.approx(2 / 3)


def test_objective_pure_vertex_is_zero():
    A = random_affinity(np.random.default_rng(0), 5)
    for i in range(5):
        e = np.eye(5)[i]
        assert objective(A, spec_for(5, range(5)), e) == 0.0


def test_objective_penalized_off_constraint(triangle):
    x = np.array([0.0, 0.5, 0.5])
    assert objective(triangle, spec_for(3, [0], 2.0), x) == pytest.approx(-0.5)
    B = penalized(triangle, [0], 2.0)
    assert x @ B @ x == pytest.approx(-0.5)


def test_objective_dimension_mismatch(triangle):
    with pytest.raises(ValueError):
        objective(triangle, spec_for(3, [0]), np.ones(4) / 4)


def test_constraint_spec_validation():
    with pytest.raises(ValueError):
        ConstraintSpec(3, (), 1.0)
    with pytest.raises(ValueError):
        ConstraintSpec(3, (3,), 1.0)
    with pytest.raises(ValueError):
        ConstraintSpec(3, (0,), 0.0)
    s = ConstraintSpec(4, (2, 0, 2), 1.0)
    assert s.Q == (0, 2)
    assert s.mask.tolist() == [0.0, 1.0, 0.0, 1.0]


def test_as_affinity_rejects_bad_matrices():
    with pytest.raises(ValueError):
        as_affinity([[0, 1], [0.5, 0]])
    with pytest.raises(ValueError):
        as_affinity([[1, 0], [0, 0]])
    with pytest.raises(ValueError):
        as_affinity([[0, -1], [-1, 0]])
    A = as_affinity([[0, 1], [1, 0]])
    assert not A.flags.writeable


# ---------------------------------------------------------------- alpha

def test_alpha_exact_triangle(triangle):
    lam = lambda_max_eigh(triangle[1:, 1:])
    assert lam == pytest.approx(1.0)
    assert alpha_bound(triangle, [0], "exact") == pytest.approx(lam + EXACT_MARGIN * (1 + lam), abs=1e-9)


def test_alpha_empty_complement(triangle):
    assert alpha_bound(triangle, [0, 1, 2], "exact") == EXACT_MARGIN
    assert alpha_bound(triangle, [0, 1, 2], "fast") == FAST_MARGIN


def test_alpha_fast_star():
    A = np.zeros((4, 4))
    A[0, 1:] = A[1:, 0] = 1.0
    sub = np.delete(np.delete(A, 3, 0), 3, 1)
    assert lambda_max_eigh(sub) == pytest.approx(np.sqrt(2))
    a = alpha_bound(A, [3], "fast")
    assert a == 2.0 + FAST_MARGIN
    assert a > np.sqrt(2)


def test_alpha_unknown_mode(triangle):
    with pytest.raises(ValueError):
        alpha_bound(triangle, [0], "slow")


@given(affinities(max_n=12))
def test_alpha_bounds_exceed_spectral_radius(case):
    A, Q = case
    rest = [i for i in range(len(A)) if i not in Q]
    lam = lambda_max_eigh(A[np.ix_(rest, rest)])
    exact, fast = alpha_bound(A, Q, "exact"), alpha_bound(A, Q, "fast")
    assert exact > lam
    assert fast > lam
    assert fast - FAST_MARGIN >= exact - EXACT_MARGIN * (1 + lam) - 1e-9


@given(st.integers(0, 10 ** 6), st.integers(1, 30))
def test_lambda_max_brackets_eigh(seed, n):
    B = random_affinity(np.random.default_rng(seed), n, 0.5)
    lo, hi = lambda_max(B)
    lam = lambda_max_eigh(B)
    assert lo - 1e-8 <= lam <= hi + 1e-8


# ---------------------------------------------------------------- replicator

def test_replicator_hand_example(triangle):
    # with Q = V the shift is the only use of alpha; as alpha -> 0 the update
    # is plain replicator dynamics on A
    x = np.array([0.5, 0.25, 0.25])
    y = replicator_step(triangle, spec_for(3, [0, 1, 2], 1e-12), x)
    assert y == pytest.approx([0.4, 0.3, 0.3], abs=1e-10)
    a = alpha_bound(triangle, [0, 1, 2])
    y = replicator_step(triangle, spec_for(3, [0, 1, 2], a), x)
    assert y == pytest.approx(numeric_replicator(triangle, [0, 1, 2], a, x), abs=1e-15)
    assert y == pytest.approx([0.4, 0.3, 0.3], abs=1e-4)


def test_replicator_barycenter_fixed_on_complete_graph():
    A = 0.7 * (np.ones((5, 5)) - np.eye(5))
    x = barycenter(5)
    assert replicator_step(A, spec_for(5, range(5)), x) == pytest.approx(x)


def test_replicator_pure_strategy_rest_point(triangle):
    e = np.array([0.0, 1.0, 0.0])
    assert replicator_step(triangle, spec_for(3, [1], 2.0), e).tolist() == e.tolist()


def test_replicator_degenerate_payoff():
    A = np.zeros((2, 2))
    # alpha shift keeps x'Mx = alpha > 0 for a zero graph
    assert replicator_step(A, spec_for(2, [0], 1.0), np.array([0.5, 0.5])) == pytest.approx([2 / 3, 1 / 3])
    with pytest.raises(DegeneratePayoffError):
        # a payoff of -alpha on the lone off-constraint vertex cancels the shift
        replicator_step(A, spec_for(2, [0], 1.0), np.array([0.0, 1.0]))


@given(affinities(max_n=50), st.integers(0, 2 ** 32 - 1))
def test_replicator_preserves_simplex(case, seed):
    A, Q = case
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(len(A)))
    s = spec_for(len(A), Q, alpha_bound(A, Q))
    y = replicator_step(A, s, x)
    assert abs(y.sum() - 1) <= 1e-9
    assert np.all(y >= 0)
    assert y == pytest.approx(numeric_replicator(A, Q, s.alpha, x), abs=1e-12)


@given(affinities(max_n=10), st.integers(0, 2 ** 32 - 1), st.floats(0.5, 20.0))
def test_shift_preserves_support_sequence(case, seed, c):
    # adding c to every payoff entry does not change which coordinates are alive
    A, Q = case
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(len(A)))
    x[rng.random(len(A)) < 0.3] = 0.0
    # mass on Q keeps x'Mx = f + alpha positive
    x[Q[0]] += 0.1
    x /= x.sum()
    alpha = alpha_bound(A, Q)
    s1, s2 = spec_for(len(A), Q, alpha), spec_for(len(A), Q, alpha + c)
    B = penalized(A, Q, alpha)
    y1 = y2 = x
    for _ in range(10):
        y1 = replicator_step(A, s1, y1)
        M = B + alpha + c
        y2 = y2 * (M @ y2) / (y2 @ M @ y2)
        assert np.array_equal(y1 > 0, y2 > 0)


@given(affinities(max_n=10))
def test_replicator_objective_nondecreasing(case):
    A, Q = case
    s = spec_for(len(A), Q, alpha_bound(A, Q))
    x = barycenter(len(A))
    f = objective(A, s, x)
    for _ in range(200):
        x = replicator_step(A, s, x)
        g = objective(A, s, x)
        assert g >= f - 1e-12
        f = g


# ---------------------------------------------------------------- KKT and dominant distributions

def test_kkt_barycenter_complete_graph():
    A = np.ones((4, 4)) - np.eye(4)
    assert kkt_residual(A, spec_for(4, range(4)), barycenter(4)) == pytest.approx(0.0, abs=1e-15)


def test_kkt_pure_vertex_triangle(triangle):
    assert kkt_residual(triangle, spec_for(3, range(3)), np.eye(3)[0]) == 1.0


def test_dominant_distribution_triangle(triangle):
    assert dominant_distribution(triangle, spec_for(3, range(3)), np.eye(3)[0]) == 1


def test_dominant_distribution_disconnected_edges():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = 1.0
    assert dominant_distribution(A, spec_for(4, range(4)), np.array([0.5, 0.5, 0, 0])) is None


def test_dominant_distribution_none_at_local_max():
    A = random_affinity(np.random.default_rng(3), 8)
    s = spec_for(8, range(8), 1e-4)
    r = local_maximizer(A, s)
    assert r.converged
    assert dominant_distribution(A, s, r.x, tol=1e-6) is None


@given(affinities(max_n=10), st.integers(0, 2 ** 32 - 1))
def test_returned_vertex_is_dominant(case, seed):
    # y dominates x when y'(A - aI_Q)x > x'(A - aI_Q)x; for y = e_i
    # outside the support the left side is (Ax)_i
    A, Q = case
    n = len(A)
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.ones(n))
    x[rng.random(n) < 0.5] = 0.0
    if x.sum() == 0:
        x[Q[0]] = 1.0
    x /= x.sum()
    s = spec_for(n, Q, alpha_bound(A, Q))
    B = penalized(A, Q, s.alpha)
    f = x @ B @ x
    i = dominant_distribution(A, s, x)
    off = [j for j in range(n) if x[j] <= 1e-8]
    if i is None:
        assert all(np.eye(n)[j] @ B @ x <= f for j in off)
    else:
        assert i in off
        assert np.eye(n)[i] @ B @ x > f
        best = max((np.eye(n)[j] @ B @ x - f, -j) for j in off)
        assert -best[1] == i


@given(affinities(max_n=9))
def test_no_dominant_vertex_at_kkt_point(case):
    A, Q = case
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = fast_cdsc(A, Q)
    if not r.converged:
        return
    s = spec_for(len(A), Q, r.alpha)
    B = penalized(A, Q, r.alpha)
    f = r.x @ B @ r.x
    for j in range(len(A)):
        if r.x[j] <= 1e-8:
            assert np.eye(len(A))[j] @ B @ r.x <= f + 1e-6


# ---------------------------------------------------------------- local_maximizer

def test_local_maximizer_k3_from_perturbed_barycenter():
    A = np.ones((3, 3)) - np.eye(3)
    x0 = np.array([0.34, 0.33, 0.33])
    r = local_maximizer(A, spec_for(3, range(3), 1e-4), x0)
    assert r.converged
    assert r.x == pytest.approx(barycenter(3), abs=1e-6)
    assert r.objective == pytest.approx(2 / 3, abs=1e-9)


def test_local_maximizer_path_plus_isolated():
    A = np.zeros((3, 3))
    A[0, 1] = A[1, 0] = 1.0
    Q = [0, 1, 2]
    r = local_maximizer(A, spec_for(3, Q, alpha_bound(A, Q)))
    assert r.converged
    assert set(r.support.tolist()) == {0, 1}
    assert r.objective == pytest.approx(0.5, abs=1e-9)
    best = max(brute_force_local_maximizers(A, Q, alpha_bound(A, Q)), key=lambda s: s[0])
    assert best[1] == (0, 1)


def test_local_maximizer_single_vertex():
    r = local_maximizer(np.zeros((1, 1)), spec_for(1, [0], 1.0))
    assert r.x.tolist() == [1.0]
    assert r.objective == 0.0


def test_local_maximizer_zero_graph_gives_constraint_barycenter():
    r = local_maximizer(np.zeros((4, 4)), spec_for(4, [1, 3], 1.0))
    assert r.x.tolist() == [0.0, 0.5, 0.0, 0.5]
    assert r.objective == 0.0


def test_local_maximizer_rejects_bad_start(triangle):
    with pytest.raises(ValueError):
        local_maximizer(triangle, spec_for(3, [0]), np.array([0.5, 0.6, -0.1]))


def test_local_maximizer_flags_nonconvergence():
    A = random_affinity(np.random.default_rng(1), 30)
    with pytest.warns(RuntimeWarning):
        r = local_maximizer(A, spec_for(30, [0], alpha_bound(A, [0])), max_iter=2, polish_every=0)
    assert not r.converged


@given(affinities(max_n=12))
def test_support_theorem(case):
    A, Q = case
    s = spec_for(len(A), Q, alpha_bound(A, Q, "exact"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = local_maximizer(A, s)
    if r.converged:
        assert set(r.support.tolist()) & set(Q)
        assert r.kkt_residual <= 1e-6
        assert r.objective == pytest.approx(objective(A, s, r.x), abs=1e-9)


# ---------------------------------------------------------------- fast_cdsc

def test_fast_cdsc_triangle_with_pendant():
    A = np.zeros((4, 4))
    A[:3, :3] = 1.0 - np.eye(3)
    A[0, 3] = A[3, 0] = 0.1
    r = fast_cdsc(A, [3])
    assert r.converged
    assert 3 in r.support
    best = max((s for s in brute_force_local_maximizers(A, [3], r.alpha) if 3 in s[1]),
               key=lambda s: s[0])
    assert tuple(r.support.tolist()) == best[1]
    assert r.objective == pytest.approx(best[0], abs=1e-9)


def test_fast_cdsc_isolated_constraint_vertex():
    A = np.zeros((4, 4))
    A[0, 1] = A[1, 0] = A[1, 2] = A[2, 1] = 1.0
    r = fast_cdsc(A, [3])
    assert r.x.tolist() == [0.0, 0.0, 0.0, 1.0]
    assert r.objective == 0.0
    assert r.iterations == 0 or r.converged


def test_fast_cdsc_rejects_empty_constraint(triangle):
    with pytest.raises(ValueError):
        fast_cdsc(triangle, [])


@given(affinities(max_n=10))
def test_fast_cdsc_contract(case):
    A, Q = case
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = fast_cdsc(A, Q, record=True)
    s = spec_for(len(A), Q, r.alpha)
    assert abs(r.x.sum() - 1) <= 1e-9 and np.all(r.x >= 0)
    assert r.objective >= objective(A, s, barycenter(len(A), Q)) - 1e-12
    assert r.objective == pytest.approx(objective(A, s, r.x), abs=1e-9)
    h = r.history
    assert all(b > a for a, b in zip(h, h[1:]))
    if r.converged:
        assert r.kkt_residual <= 1e-6
        assert set(r.support.tolist()) & set(Q)


@given(affinities(max_n=9))
def test_fast_cdsc_returns_a_local_maximizer(case):
    A, Q = case
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = fast_cdsc(A, Q)
    if not r.converged:
        return
    if r.objective == 0.0:
        # constraint vertices without neighbours: a maximizer, but not a
        # strict one, so the oracle does not list it
        S = r.support
        assert not A[np.ix_(S, np.arange(len(A)))].any()
        return
    sols = brute_force_local_maximizers(A, Q, r.alpha)
    assert any(sup == tuple(r.support.tolist()) and abs(f - r.objective) <= 1e-6
               for f, sup, _ in sols)


@given(affinities(max_n=9))
def test_fast_cdsc_single_constraint_matches_brute_force(case):
    A, Q = case
    Q = Q[:1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        r = fast_cdsc(A, Q)
    sols = [s for s in brute_force_local_maximizers(A, Q, r.alpha) if set(s[1]) & set(Q)]
    if not sols:
        # isolated query: only the non-strict maximizer e_q exists
        assert not A[Q[0]].any() and r.objective == 0.0
        return
    assert r.objective == pytest.approx(max(s[0] for s in sols), abs=1e-6)


def test_fast_and_full_solvers_agree_on_sparse_graph():
    rng = np.random.default_rng(5)
    A = random_affinity(rng, 200, 0.02)
    a = alpha_bound(A, [7], "fast")
    fast = fast_cdsc(A, [7], alpha=a)
    full = local_maximizer(A, spec_for(200, [7], a))
    assert fast.converged and full.converged
    assert fast.objective == pytest.approx(full.objective, abs=1e-4)
