import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from topkdefer.cardinality import (LAMBDA_GRID, CardinalityContext, cardinality_loss,
                                   cardinality_loss_table, cardinality_losses, cardinality_weights,
                                   normalize_cardinality_losses)
from topkdefer.costs import agent_predictions
from topkdefer.errors import ConfigError, ValidationError
from topkdefer.policy import full_ranking


def test_lambda_grid():
    assert LAMBDA_GRID[:5] == (1e-9, 0.01, 0.05, 0.25, 0.5)
    np.testing.assert_allclose(LAMBDA_GRID[5:], np.arange(1.0, 6.51, 0.5))


def test_context_validation():
    with pytest.raises(ConfigError):
        CardinalityContext("median", 0.0, np.zeros(3), 2)
    with pytest.raises(ConfigError):
        CardinalityContext("top-k", -1.0, np.zeros(3), 2)
    with pytest.raises(ConfigError):
        CardinalityContext("top-k", 0.0, np.zeros(3), 2, xi="square")
    with pytest.raises(ConfigError):
        CardinalityContext("top-k", 0.0, [0.0, -0.1], 1)


def test_lambda_zero_top_label_first_is_free():
    n = 3
    agents = agent_predictions(n, np.array([2]))
    ctx = CardinalityContext("top-k", 0.0, [0, 0, 0, 0.1], n)
    h = np.array([0.0, 3.0, 1.0, 2.0])
    assert cardinality_loss(full_ranking(h), 1, 1, agents, ctx, h) == 0.0


def test_zero_beta_reduces_to_metric(rng):
    for _ in range(50):
        n, J = 4, 2
        agents = agent_predictions(n, rng.integers(0, n, size=J))
        h = rng.normal(size=n + J)
        rank = full_ranking(h)
        y = int(rng.integers(n))
        a = CardinalityContext("majority-vote", 1.0, np.zeros(n + J), n)
        b = CardinalityContext("majority-vote", 0.0, np.zeros(n + J), n)
        np.testing.assert_array_equal(cardinality_losses(rank, y, agents, a, h),
                                      cardinality_losses(rank, y, agents, b, h))


def test_full_set_costs_all_fees(rng):
    n, J = 3, 3
    experts = rng.integers(0, n, size=J)
    agents = agent_predictions(n, experts)
    beta = np.r_[np.zeros(n), [0.05, 0.04, 0.03]]
    h = rng.normal(size=n + J)
    for lam in (0.5, 2.0):
        for xi, fn in (("identity", lambda t: t), ("log1p", np.log1p)):
            ctx = CardinalityContext("top-k", lam, beta, n, xi=xi)
            # the label entity y is always in the full set, so d = 0
            assert cardinality_loss(full_ranking(h), n + J, 1, agents, ctx, h) == pytest.approx(lam * fn(0.12))


def test_errors():
    ctx = CardinalityContext("top-k", 0.0, np.zeros(3), 3)
    with pytest.raises(ValueError):
        cardinality_loss([0, 1, 2], 4, 0, np.arange(3), ctx, np.zeros(3))
    with pytest.raises(ValidationError):
        cardinality_loss([0, 1, 1], 1, 0, np.arange(3), ctx, np.zeros(3))


def random_case(rng, metric, lam, xi="identity"):
    n, J = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    agents = agent_predictions(n, rng.integers(0, n, size=J))
    beta = np.r_[np.zeros(n), rng.uniform(0, 0.1, size=J)]
    h = rng.normal(size=n + J)
    return full_ranking(h), int(rng.integers(n)), agents, CardinalityContext(metric, lam, beta, n, xi), h


@pytest.mark.parametrize("xi", ["identity", "log1p"])
def test_cost_term_non_decreasing_in_v(rng, xi):
    for _ in range(50):
        rank, y, agents, ctx, h = random_case(rng, "top-k", 2.0, xi)
        d = cardinality_losses(rank, y, agents, CardinalityContext("top-k", 0.0, ctx.beta, ctx.n_classes), h)
        assert np.all(np.diff(cardinality_losses(rank, y, agents, ctx, h) - d) >= -1e-15)


def test_top_k_metric_non_increasing_when_lambda_zero(rng):
    for _ in range(100):
        rank, y, agents, ctx, h = random_case(rng, "top-k", 0.0)
        assert np.all(np.diff(cardinality_losses(rank, y, agents, ctx, h)) <= 0)


@pytest.mark.parametrize("metric", ["top-k", "majority-vote", "weighted-vote"])
def test_batched_table_matches_per_example(rng, metric):
    n, J, B = 4, 3, 25
    ctx = CardinalityContext(metric, 1.5, np.r_[np.zeros(n), [0.05, 0.04, 0.03]], n)
    S = rng.normal(size=(B, n + J))
    S[0] = 0.0  # all-tied row
    y = rng.integers(0, n, size=B)
    agents = agent_predictions(n, rng.integers(0, n, size=(B, J)))
    T = cardinality_loss_table(S, y, agents, ctx)
    for i in range(B):
        np.testing.assert_allclose(T[i], cardinality_losses(full_ranking(S[i]), int(y[i]), agents[i], ctx, S[i]),
                                   rtol=0, atol=1e-15)


def test_normalize_examples():
    np.testing.assert_array_equal(normalize_cardinality_losses([2.0, 4.0]), [0.0, 1.0])
    np.testing.assert_array_equal(normalize_cardinality_losses([3.0, 3.0, 3.0]), 0.0)
    np.testing.assert_array_equal(cardinality_weights([2.0, 4.0, 3.0]), [1.0, 0.0, 0.5])
    with pytest.raises(ValidationError):
        normalize_cardinality_losses([])


@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(0, 100)))
def test_normalize_preserves_argmin_argmax(x):
    z = normalize_cardinality_losses(x)
    assert np.all((z >= 0) & (z <= 1))
    if x.max() > x.min():
        # compare values, not indices: scaling can round a subnormal gap into a tie
        assert z[np.argmin(x)] == 0.0 and z[np.argmax(x)] == 1.0
        assert np.all(np.diff(z[np.argsort(x, kind="stable")]) >= 0)
