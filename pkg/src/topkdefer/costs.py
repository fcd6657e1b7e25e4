"""Augmented entity costs.

The entity set has ``n + J`` members. In the Python API entities are 0-based:
``0..n-1`` predict the matching class label and ``n..n+J-1`` defer to expert
``j - n``. Labels are 0-based as well. Serialized formats (CSV, YAML) use 1-based
indices and are converted at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError


def _as_cost_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or infinite entries")
    if np.any(arr < 0):
        raise ValidationError(f"{name} contains negative entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Per-entity misclassification weights ``alpha`` and consultation costs ``beta``."""

    alpha: np.ndarray
    beta: np.ndarray
    n_classes: int

    def __post_init__(self):
        alpha = _as_cost_array(self.alpha, "alpha")
        beta = _as_cost_array(self.beta, "beta")
        if alpha.shape != beta.shape:
            raise ValidationError(
                f"alpha and beta lengths differ ({alpha.size} vs {beta.size})"
            )
        if not 1 <= int(self.n_classes) <= alpha.size:
            raise ValidationError(
                f"n_classes={self.n_classes} incompatible with {alpha.size} entities"
            )
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "n_classes", int(self.n_classes))

    @property
    def n_entities(self) -> int:
        return self.alpha.size

    @property
    def n_experts(self) -> int:
        return self.alpha.size - self.n_classes

    @classmethod
    def standard(cls, n_classes: int, expert_beta: Sequence[float],
                 expert_alpha: float | Sequence[float] = 1.0) -> "CostSpec":
        """Unit label penalties, free label predictions, and the given expert fees."""
        expert_beta = np.asarray(expert_beta, dtype=float)
        expert_alpha = np.broadcast_to(np.asarray(expert_alpha, dtype=float),
                                       expert_beta.shape)
        alpha = np.concatenate([np.ones(n_classes), expert_alpha])
        beta = np.concatenate([np.zeros(n_classes), expert_beta])
        return cls(alpha, beta, n_classes)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "beta": self.beta.tolist()}

    def __eq__(self, other):
        if not isinstance(other, CostSpec):
            return NotImplemented
        return (self.n_classes == other.n_classes
                and np.array_equal(self.alpha, other.alpha)
                and np.array_equal(self.beta, other.beta))

    __hash__ = None


def agent_predictions(n_classes: int, expert_preds) -> np.ndarray:
    """Labels ``a_j(x)`` announced by every entity.

    ``expert_preds`` has shape ``(..., J)``; the result has shape ``(..., n + J)``
    with the label entities first.
    """
    expert_preds = np.asarray(expert_preds, dtype=np.int64)
    labels = np.broadcast_to(np.arange(n_classes), expert_preds.shape[:-1] + (n_classes,))
    return np.concatenate([labels, expert_preds], axis=-1)


def augmented_cost(j: int, y: int, expert_preds, spec: CostSpec) -> float:
    """Cost ``alpha_j * 1{a_j(x) != y} + beta_j`` of entity ``j`` on one example."""
    N = spec.n_entities
    if not 0 <= j < N:
        raise IndexError(f"entity index {j} out of range for {N} entities")
    expert_preds = np.asarray(expert_preds)
    if expert_preds.shape != (spec.n_experts,):
        raise ValidationError(
            f"expected {spec.n_experts} expert predictions, got shape {expert_preds.shape}"
        )
    pred = j if j < spec.n_classes else int(expert_preds[j - spec.n_classes])
    return float(spec.alpha[j] * (pred != y) + spec.beta[j])


def cost_matrix(y, expert_preds, spec: CostSpec) -> np.ndarray:
    """Augmented costs for a batch: ``y`` is ``(B,)``, ``expert_preds`` is ``(B, J)``."""
    y = np.asarray(y, dtype=np.int64)
    expert_preds = np.asarray(expert_preds, dtype=np.int64)
    if expert_preds.shape[-1] != spec.n_experts:
        raise ValidationError(
            f"expected {spec.n_experts} expert columns, got {expert_preds.shape[-1]}"
        )
    wrong = agent_predictions(spec.n_classes, expert_preds) != y[..., None]
    return spec.alpha * wrong + spec.beta


def cost_vector(y: int, expert_preds, spec: CostSpec) -> np.ndarray:
    return cost_matrix(np.asarray(y), np.asarray(expert_preds), spec)


def complementary_costs(costs) -> np.ndarray:
    """``tau_j = sum_{i != j} c_i`` along the last axis."""
    costs = np.asarray(costs, dtype=np.float64)
    return costs.sum(axis=-1, keepdims=True) - costs


def complementary_cost(j: int, costs) -> float:
    costs = np.asarray(costs, dtype=np.float64)
    if not 0 <= j < costs.shape[-1]:
        raise IndexError(f"entity index {j} out of range for {costs.shape[-1]} entities")
    return float(costs.sum() - costs[j])


def expected_cost_vector(posterior, expert_error, spec: CostSpec,
                         atol: float = 1e-9) -> np.ndarray:
    """Expected augmented costs given ``P(Y | x)`` and expert error probabilities.

    Label entity ``j`` costs ``alpha_j * (1 - P(Y=j|x)) + beta_j``; expert entity
    ``n + m`` costs ``alpha * P(m(x) != Y | x) + beta``. Works on a single example or
    a batch (leading axes).
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    expert_error = np.asarray(expert_error, dtype=np.float64)
    if posterior.shape[-1] != spec.n_classes:
        raise ValidationError(
            f"posterior has {posterior.shape[-1]} classes, spec has {spec.n_classes}"
        )
    if expert_error.shape[-1] != spec.n_experts:
        raise ValidationError(
            f"expected {spec.n_experts} expert error probabilities, got {expert_error.shape[-1]}"
        )
    if np.any(posterior < -atol) or not np.allclose(posterior.sum(axis=-1), 1.0, rtol=0, atol=atol):
        raise ValidationError("posterior is not a probability vector")
    if np.any((expert_error < 0) | (expert_error > 1)):
        raise ValidationError("expert error probabilities must lie in [0, 1]")
    err = np.concatenate([1.0 - posterior, expert_error], axis=-1)
    return spec.alpha * err + spec.beta
