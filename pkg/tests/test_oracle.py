import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from topkdefer.costs import CostSpec
from topkdefer.errors import ValidationError
from topkdefer.oracle import (bayes_top1, bayes_topk, empirical_consistency_check, exhaustive_topk,
                              gamma_inverse, gamma_inverse_is_monotone,
                              minimizability_gap_conditional, numerical_conditional_infimum, tau_bar)

costs = arrays(np.float64, st.integers(1, 10), elements=st.floats(0, 3))


def test_bayes_top1_examples():
    assert bayes_top1([0.2, 0.5, 0.1]) == 2
    assert bayes_top1([0.4, 0.4, 0.4]) == 0


@given(costs)
def test_top1_is_first_of_topk(e):
    assert bayes_top1(e) == bayes_topk(e, 1)[0]


@given(costs)
def test_topk_full_and_prefix(e):
    assert sorted(bayes_topk(e, e.size).tolist()) == list(range(e.size))
    for k in range(1, e.size):
        np.testing.assert_array_equal(bayes_topk(e, k), bayes_topk(e, k + 1)[:k])


def test_topk_matches_exhaustive_six_choose_three(rng):
    for _ in range(100):
        e = rng.uniform(size=6)
        assert tuple(sorted(bayes_topk(e, 3).tolist())) == exhaustive_topk(e, 3)


@given(arrays(np.float64, st.integers(1, 8), elements=st.sampled_from([0.0, 0.5, 1.0, 1.5])))
def test_topk_optimal_with_ties(e):
    # ties allowed: compare summed costs, and the index set when the optimum is unique
    for k in range(1, e.size + 1):
        ours = bayes_topk(e, k)
        best = exhaustive_topk(e, k)
        assert math.fsum(e[ours]) == math.fsum(e[list(best)])
        assert tuple(sorted(ours.tolist())) == best  # stable sort and lexicographic search agree


def test_topk_range_error():
    with pytest.raises(ValueError):
        bayes_topk([1.0, 2.0], 3)


def test_tau_bar_definition(rng):
    e = rng.uniform(size=7)
    np.testing.assert_allclose(tau_bar(e), [math.fsum(np.delete(e, j)) for j in range(7)], rtol=1e-14)


# --- minimizability gap ----------------------------------------------------------------

def test_gap_u2_example():
    assert minimizability_gap_conditional([0.5, 0.3, 0.2], 2).value == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("N", [2, 3, 7])
def test_gap_u1_uniform_entropy(N):
    assert minimizability_gap_conditional(np.full(N, 1.0 / N), 1).value == pytest.approx(math.log(N))


def test_gap_u1_two_entries_numeric():
    t = np.array([0.7, 0.3])
    assert abs(minimizability_gap_conditional(t, 1).value - numerical_conditional_infimum(t, 1)) < 1e-4


@pytest.mark.parametrize("u", [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 4.0])
def test_gap_closed_form_vs_numeric(rng, u):
    for _ in range(15):
        t = rng.uniform(0, 3, size=int(rng.integers(2, 7)))
        closed = minimizability_gap_conditional(t, u)
        assert not closed.degenerate
        assert abs(closed.value - numerical_conditional_infimum(t, u, restarts=3)) < 1e-4


def test_gap_branch_continuity(rng):
    for _ in range(50):
        t = rng.uniform(0, 3, size=int(rng.integers(2, 7)))
        at2 = minimizability_gap_conditional(t, 2).value
        assert abs(minimizability_gap_conditional(t, 2 - 1e-6, ).value - at2) < 1e-3
        assert abs(minimizability_gap_conditional(t, 2 + 1e-6).value - at2) < 1e-3
        at1 = minimizability_gap_conditional(t, 1).value
        assert abs(minimizability_gap_conditional(t, 1 - 1e-6).value - at1) < 1e-3
        assert abs(minimizability_gap_conditional(t, 1 + 1e-6).value - at1) < 1e-3


def test_gap_degenerate_zero_vector():
    g = minimizability_gap_conditional(np.zeros(4), 1)
    assert g.value == 0.0 and g.degenerate


def test_gap_single_entry_is_zero():
    assert minimizability_gap_conditional([2.0], 1).value == 0.0


def test_gap_validation():
    with pytest.raises(ValidationError):
        minimizability_gap_conditional([-1.0, 2.0], 1)
    with pytest.raises(ValidationError):
        minimizability_gap_conditional([1.0, 2.0], -0.5)


# --- inverse transform ---------------------------------------------------------------

@pytest.mark.parametrize("u", [0.0, 0.3, 0.7, 1.0, 2.0])
def test_gamma_inverse_zero_at_zero(u):
    assert gamma_inverse(0.0, u, 3, 8) == 0.0


def test_gamma_inverse_linear_branch():
    for v in np.linspace(0, 1, 11):
        assert gamma_inverse(v, 2, 3, 16) == 3 * v / 16


def test_gamma_inverse_u1_at_one():
    assert gamma_inverse(1.0, 1, 2, 5) == pytest.approx(2 * math.log(2), rel=1e-15)


def test_gamma_inverse_power_branch_limits():
    # near v = 0 and v = 1 the power branch approaches its limits 0 and k / N
    assert gamma_inverse(1e-9, 0.5, 2, 6) == pytest.approx(0.0, abs=1e-8)
    assert gamma_inverse(1 - 1e-9, 0.5, 2, 6) == pytest.approx(2 / 6, abs=1e-6)
    assert gamma_inverse(1.0, 0.5, 2, 6) == 2 / 6


@pytest.mark.parametrize("u", [0.0, 1.0, 2.0])
def test_gamma_inverse_monotone_main_branches(u):
    for k, N in [(1, 2), (2, 8), (5, 16)]:
        assert gamma_inverse_is_monotone(u, k, N)


def test_gamma_inverse_power_branch_monotone_only_for_small_n():
    # the power branch as printed rises above k/N and comes back down once N >= 5
    assert gamma_inverse_is_monotone(0.5, 1, 2)
    assert gamma_inverse_is_monotone(0.5, 1, 4)
    assert not gamma_inverse_is_monotone(0.5, 1, 5)
    peak = max(gamma_inverse(v, 0.5, 1, 16) for v in np.linspace(0, 1, 1001))
    assert peak > 1 / 16


def test_gamma_inverse_errors():
    with pytest.raises(ValueError):
        gamma_inverse(1.5, 1, 1, 4)
    with pytest.raises(ValueError):
        gamma_inverse(0.5, 1.5, 1, 4)
    with pytest.raises(ValueError):
        gamma_inverse(0.5, 1, 0, 4)


# --- empirical consistency -------------------------------------------------------------

def test_consistency_well_separated_inputs():
    # one dominant label per input, distinct runner-up, and a single unreliable expert
    n, J, I = 3, 1, 12
    post = np.zeros((I, n))
    for i in range(I):
        post[i, [i % n, (i + 1) % n, (i + 2) % n]] = [0.9, 0.08, 0.02]
    err = np.full((I, J), 0.5)
    spec = CostSpec.standard(n, [0.1])
    rep = empirical_consistency_check(post, err, spec, ks=[1, 2, 3], steps=2000)
    assert all(rep.agreement[k] == 1.0 for k in (1, 2, 3))
    assert rep.converged
    assert all(abs(v) < 1e-12 for v in rep.excess_true_risk.values())


def test_consistency_report_lines_and_k1(rng):
    n, J, I = 3, 2, 10
    post = rng.dirichlet(np.ones(n), size=I)
    err = rng.uniform(0.05, 0.6, size=(I, J))
    spec = CostSpec.standard(n, [0.05, 0.02])
    rep = empirical_consistency_check(post, err, spec, ks=[1], steps=3000, seed=1)
    assert len(rep.lines()) == 2
    assert rep.surrogate_excess >= -1e-9
    assert rep.agreement[1] >= 0.9
