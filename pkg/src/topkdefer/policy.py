"""Top-k and adaptive Top-k(x) entity selection.

Selections are arrays of 0-based entity indices ordered by decreasing score.
Equal scores are resolved in favour of the smaller entity index.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _check_scores(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim < 1 or h.shape[-1] == 0:
        raise ValidationError("score vector must be non-empty")
    if not np.all(np.isfinite(h)):
        raise ValidationError("scores must be finite")
    return h


def full_ranking(h) -> np.ndarray:
    """All entities sorted by decreasing score (stable, so ties keep index order)."""
    h = _check_scores(h)
    return np.argsort(-h, axis=-1, kind="stable")


def topk_set(h, k: int) -> np.ndarray:
    """Indices of the ``k`` highest-scoring entities, best first."""
    h = _check_scores(h)
    N = h.shape[-1]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} outside 1..{N}")
    return full_ranking(h)[..., :k]


def cardinality_choice(card_scores) -> np.ndarray | int:
    """Selected set size ``k(x)``: 1 + argmax of the cardinality scores."""
    card_scores = _check_scores(card_scores)
    k = np.argmax(card_scores, axis=-1) + 1
    return int(k) if np.ndim(k) == 0 else k


def adaptive_topk(h, card_scores) -> np.ndarray:
    """Top-``k(x)`` set for one input, ``k(x)`` chosen by the cardinality scores."""
    h = _check_scores(h)
    card_scores = _check_scores(card_scores)
    if h.ndim != 1 or card_scores.shape != h.shape:
        raise ValidationError("adaptive_topk expects two score vectors of equal length")
    return topk_set(h, cardinality_choice(card_scores))


def selection_mask(h, sizes) -> np.ndarray:
    """Boolean ``(B, N)`` membership mask of the top-``sizes[i]`` set of each row."""
    h = _check_scores(h)
    B, N = h.shape
    sizes = np.broadcast_to(np.asarray(sizes, dtype=np.int64), (B,))
    if np.any((sizes < 1) | (sizes > N)):
        raise ValueError(f"set sizes must lie in 1..{N}")
    rank = np.empty_like(h, dtype=np.int64)
    order = full_ranking(h)
    np.put_along_axis(rank, order, np.arange(N)[None, :].repeat(B, axis=0), axis=-1)
    return rank < sizes[:, None]
