"""Cardinality-aware deferral loss used to train the set-size model ``k(x)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .metrics import METRICS, d_majority_vote, d_topk, d_weighted_vote, prefix_budgets, prefix_errors

LAMBDA_GRID = (1e-9, 0.01, 0.05, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5,
               5.0, 5.5, 6.0, 6.5)

XI_FUNCTIONS = {
    "identity": lambda t: t,
    "log1p": np.log1p,
}


@dataclass(frozen=True, eq=False)
class CardinalityContext:
    """Everything the cardinality loss needs besides the example itself.

    ``beta`` is the per-entity consultation cost (length ``n + J``), normally the
    ``beta`` of the deferral :class:`~topkdefer.costs.CostSpec`.
    """

    metric: str
    lam: float
    beta: np.ndarray
    n_classes: int
    xi: str = "identity"
    renormalize: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.xi not in XI_FUNCTIONS:
            raise ConfigError(f"unknown xi {self.xi!r}; expected one of {sorted(XI_FUNCTIONS)}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be a finite non-negative number, got {self.lam}")
        beta = np.array(self.beta, dtype=np.float64).reshape(-1)
        if np.any(beta < 0) or not np.all(np.isfinite(beta)):
            raise ConfigError("beta must be finite and non-negative")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "lam", float(self.lam))

    def xi_fn(self, t):
        return XI_FUNCTIONS[self.xi](t)


def _metric(ctx: CardinalityContext, selected, y, agent_preds, h) -> int:
    if ctx.metric == "top-k":
        return d_topk(selected, y, agent_preds)
    if ctx.metric == "majority-vote":
        return d_majority_vote(selected, y, agent_preds, ctx.n_classes)
    return d_weighted_vote(selected, h, y, agent_preds, ctx.n_classes, ctx.renormalize)


def _check_ranking(ranking, N: int) -> np.ndarray:
    ranking = np.asarray(ranking, dtype=np.int64)
    if ranking.shape != (N,) or not np.array_equal(np.sort(ranking), np.arange(N)):
        raise ValidationError("ranking must be a permutation of all entities")
    return ranking


def cardinality_loss(ranking, v: int, y: int, agent_preds, ctx: CardinalityContext, h) -> float:
    """``d(first v ranked entities) + lam * xi(sum of their beta)``."""
    N = ctx.beta.size
    ranking = _check_ranking(ranking, N)
    if not 1 <= v <= N:
        raise ValueError(f"v={v} outside 1..{N}")
    selected = ranking[:v]
    d = _metric(ctx, selected, y, agent_preds, h)
    return float(d + ctx.lam * ctx.xi_fn(ctx.beta[selected].sum()))


def cardinality_losses(ranking, y: int, agent_preds, ctx: CardinalityContext, h) -> np.ndarray:
    """``cardinality_loss`` for every level ``v = 1..N`` of one example."""
    N = ctx.beta.size
    ranking = _check_ranking(ranking, N)
    return np.array([cardinality_loss(ranking, v, y, agent_preds, ctx, h)
                     for v in range(1, N + 1)])


def cardinality_loss_table(scores, y, agent_preds, ctx: CardinalityContext) -> np.ndarray:
    """Batched ``cardinality_losses``; the ranking of row ``i`` is taken from ``scores[i]``."""
    d = prefix_errors(scores, y, agent_preds, ctx.n_classes, ctx.metric, ctx.renormalize)
    return d + ctx.lam * ctx.xi_fn(prefix_budgets(scores, ctx.beta))


def normalize_cardinality_losses(losses) -> np.ndarray:
    """Min-max scale along the last axis; constant rows map to zeros."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape[-1] == 0:
        raise ValidationError("cannot normalize an empty loss vector")
    lo = losses.min(axis=-1, keepdims=True)
    span = losses.max(axis=-1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (losses - lo) / safe, 0.0)


def cardinality_weights(losses) -> np.ndarray:
    """Surrogate weights ``1 - normalized loss``, one per cardinality level."""
    return 1.0 - normalize_cardinality_losses(losses)
