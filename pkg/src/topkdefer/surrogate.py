"""Comp-sum surrogates, the k-independent deferral surrogate and their gradients.

For a score vector ``h`` over ``N`` entities, the comp-sum loss of target ``t`` is
``Psi_u(sum_{j != t} exp(h_j - h_t))``. Writing ``m_t = logsumexp(h) - h_t``
(the negative log-softmax) gives ``1 + v = exp(m_t)`` and therefore

* ``u == 1``: ``Phi_t = m_t``
* ``u != 1``: ``Phi_t = expm1((1 - u) * m_t) / (1 - u)``

which is how every loss below is evaluated.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .cardinality import CardinalityContext, cardinality_losses, cardinality_weights
from .costs import complementary_costs
from .errors import ValidationError
from .policy import full_ranking


def _check_u(u: float) -> float:
    u = float(u)
    if not np.isfinite(u) or u < 0:
        raise ValidationError(f"surrogate parameter u must be finite and >= 0, got {u}")
    return u


def psi_outer(u: float, v):
    """Outer transform: ``log(1 + v)`` at ``u = 1``, else ``((1 + v)^(1-u) - 1) / (1 - u)``."""
    u = _check_u(u)
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("psi_outer is defined for v >= 0 only")
    if u == 1.0:
        out = np.log1p(v)
    else:
        out = np.expm1((1.0 - u) * np.log1p(v)) / (1.0 - u)
    return float(out) if out.ndim == 0 else out


def _margin_terms(h: np.ndarray) -> np.ndarray:
    return logsumexp(h, axis=-1, keepdims=True) - h


def _psi_of_margin(m: np.ndarray, u: float) -> np.ndarray:
    if u == 1.0:
        return m
    return np.expm1((1.0 - u) * m) / (1.0 - u)


def comp_sum_losses(h, u: float = 1.0) -> np.ndarray:
    """``Phi_u(h, ., t)`` for every target ``t`` along the last axis."""
    u = _check_u(u)
    h = np.asarray(h, dtype=np.float64)
    return _psi_of_margin(_margin_terms(h), u)


def comp_sum_loss(h, target: int, u: float = 1.0) -> float:
    h = np.asarray(h, dtype=np.float64)
    if not 0 <= target < h.shape[-1]:
        raise IndexError(f"target {target} out of range for {h.shape[-1]} entities")
    return float(comp_sum_losses(h, u)[..., target])


def weighted_comp_sum(h, weights, u: float = 1.0) -> np.ndarray | float:
    """``sum_t weights_t * Phi_u(h, ., t)`` along the last axis."""
    h = np.asarray(h, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if h.shape != weights.shape:
        raise ValidationError(f"score shape {h.shape} != weight shape {weights.shape}")
    out = np.sum(weights * comp_sum_losses(h, u), axis=-1)
    return float(out) if out.ndim == 0 else out


def weighted_comp_sum_grad(h, weights, u: float = 1.0) -> np.ndarray:
    """Gradient of :func:`weighted_comp_sum` with respect to ``h``.

    ``dPhi_t/dh = exp((1-u) m_t) * (softmax(h) - e_t)``, so the weighted sum is
    ``softmax(h) * sum_t g_t - g`` with ``g_t = weights_t * exp((1-u) m_t)``.
    """
    u = _check_u(u)
    h = np.asarray(h, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if h.shape != weights.shape:
        raise ValidationError(f"score shape {h.shape} != weight shape {weights.shape}")
    m = _margin_terms(h)
    g = weights if u == 1.0 else weights * np.exp((1.0 - u) * m)
    p = np.exp(-m)
    return p * g.sum(axis=-1, keepdims=True) - g


def deferral_surrogate(h, costs, u: float = 1.0):
    """k-independent top-k deferral surrogate ``sum_j tau_j * Phi_u(h, ., j)``.

    There is deliberately no ``k`` argument: the same value serves every
    cardinality at deployment time.
    """
    return weighted_comp_sum(h, complementary_costs(costs), u)


def deferral_surrogate_grad(h, costs, u: float = 1.0) -> np.ndarray:
    return weighted_comp_sum_grad(h, complementary_costs(costs), u)


def topk_true_loss(h, costs, k: int) -> float:
    """Sum of the costs of the ``k`` highest-scoring entities."""
    h = np.asarray(h, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    N = h.shape[-1]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside 1..{N}")
    return float(costs[full_ranking(h)[:k]].sum())


def upper_bound_rhs(h, costs, k: int, u: float = 1.0) -> float:
    """``sum_j tau_j Phi_u(h, ., j) - (N - 1 - k) * sum_j c_j``."""
    costs = np.asarray(costs, dtype=np.float64)
    N = costs.shape[-1]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside 1..{N}")
    return float(deferral_surrogate(h, costs, u) - (N - 1 - k) * costs.sum())


def _card_weights(full_ranking_, y, agent_preds, ctx, h):
    losses = cardinality_losses(full_ranking_, y, agent_preds, ctx, h)
    return cardinality_weights(losses)


def cardinality_surrogate(full_ranking_, card_scores, y: int, agent_preds,
                          ctx: CardinalityContext, h, u: float = 1.0) -> float:
    """``sum_v (1 - normalized card loss at level v) * Phi_u(card_scores, ., v)``.

    ``full_ranking_`` is the complete entity ranking induced by the frozen scorer
    output ``h``; level ``v`` (0-based column ``v - 1``) keeps its first ``v``
    entries.
    """
    w = _card_weights(full_ranking_, y, agent_preds, ctx, h)
    return weighted_comp_sum(card_scores, w, u)


def cardinality_surrogate_grad(full_ranking_, card_scores, y: int, agent_preds,
                               ctx: CardinalityContext, h, u: float = 1.0) -> np.ndarray:
    w = _card_weights(full_ranking_, y, agent_preds, ctx, h)
    return weighted_comp_sum_grad(card_scores, w, u)
