"""Set-aggregation metrics and budget accounting for deferral policies."""
from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .errors import ValidationError
from .policy import cardinality_choice, full_ranking

METRICS = ("top-k", "majority-vote", "weighted-vote")

CURVE_HEADER = (
    "policy", "k_or_lambda", "u", "acc_topk", "acc_maj", "acc_wvl",
    "budget_mean", "cardinality_mean", "n_samples", "seed",
)


def d_topk(selected, y: int, agent_preds) -> int:
    """1 unless some selected entity announces the true label."""
    agent_preds = np.asarray(agent_preds)
    return int(not np.any(agent_preds[np.asarray(selected)] == y))


def _vote(selected, agent_preds, weights, n_classes: int) -> int:
    tally = np.zeros(n_classes)
    for j in selected:
        tally[agent_preds[j]] += weights[j]
    return int(np.argmax(tally))  # first maximum: smallest class index wins ties


def d_majority_vote(selected, y: int, agent_preds, n_classes: int) -> int:
    agent_preds = np.asarray(agent_preds)
    yhat = _vote(np.asarray(selected), agent_preds, np.ones(agent_preds.size), n_classes)
    return int(yhat != y)


def d_weighted_vote(selected, h, y: int, agent_preds, n_classes: int,
                    renormalize: bool = False) -> int:
    """Vote weighted by ``softmax(h)``.

    The softmax runs over all entities. ``renormalize=True`` restricts it to the
    selected ones; both choices rescale every vote by the same constant, so the
    winning label is identical.
    """
    agent_preds = np.asarray(agent_preds)
    selected = np.asarray(selected)
    h = np.asarray(h, dtype=np.float64)
    if renormalize:
        w = np.zeros_like(h)
        w[selected] = softmax(h[selected])
    else:
        w = softmax(h)
    return int(_vote(selected, agent_preds, w, n_classes) != y)


def prefix_errors(scores, y, agent_preds, n_classes: int, metric: str,
                  renormalize: bool = False) -> np.ndarray:
    """Metric value ``d`` of every top-v prefix of the score ranking.

    Returns ``(B, N)``; column ``v - 1`` holds ``d`` for the top-``v`` set.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    agent_preds = np.asarray(agent_preds, dtype=np.int64)
    order = full_ranking(scores)
    ranked_preds = np.take_along_axis(agent_preds, order, axis=-1)
    if metric == "top-k":
        hit = ranked_preds == y[:, None]
        return 1 - np.maximum.accumulate(hit, axis=1).astype(np.int64)
    if metric == "majority-vote":
        w = np.ones(ranked_preds.shape)
    elif metric == "weighted-vote":
        if renormalize:
            # prefix renormalization divides every tally of a prefix by one constant
            w = np.take_along_axis(np.exp(scores - scores.max(axis=1, keepdims=True)), order, axis=-1)
        else:
            w = np.take_along_axis(softmax(scores, axis=1), order, axis=-1)
    else:
        raise ValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")
    votes = (ranked_preds[..., None] == np.arange(n_classes)) * w[..., None]
    tally = np.cumsum(votes, axis=1)
    yhat = np.argmax(tally, axis=-1)
    return (yhat != y[:, None]).astype(np.int64)


def prefix_budgets(scores, beta) -> np.ndarray:
    """Cumulative consultation cost of every top-v prefix, shape ``(B, N)``."""
    order = full_ranking(scores)
    return np.cumsum(np.asarray(beta, dtype=np.float64)[order], axis=-1)


@dataclass(frozen=True)
class EvalReport:
    acc_topk: float
    acc_maj: float
    acc_wvl: float
    budget_mean: float
    cardinality_mean: float
    n_samples: int

    def as_row(self, policy: str, k_or_lambda, u: float, seed: int) -> dict:
        row = {"policy": policy, "k_or_lambda": k_or_lambda, "u": u}
        row.update(asdict(self))
        row["seed"] = seed
        return row


def evaluate(scores, y, agent_preds, beta, n_classes: int, k: int | None = None,
             card_scores=None, renormalize: bool = False) -> EvalReport:
    """Accuracies, mean budget and mean set size of a fixed-k or adaptive policy.

    Pass exactly one of ``k`` (fixed cardinality) or ``card_scores`` (``(B, N)``
    cardinality-model outputs).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValidationError("evaluate needs a non-empty (B, N) score matrix")
    B, N = scores.shape
    if (k is None) == (card_scores is None):
        raise ValidationError("pass exactly one of k or card_scores")
    if k is not None:
        if not 1 <= k <= N:
            raise ValueError(f"k={k} outside 1..{N}")
        sizes = np.full(B, int(k))
    else:
        sizes = np.asarray(cardinality_choice(np.asarray(card_scores, dtype=np.float64)))
        if sizes.shape != (B,):
            raise ValidationError("card_scores must have one row per sample")
    col = (sizes - 1)[:, None]
    accs = {}
    for metric in METRICS:
        d = prefix_errors(scores, y, agent_preds, n_classes, metric, renormalize)
        accs[metric] = 1.0 - float(np.take_along_axis(d, col, axis=1).mean())
    budget = np.take_along_axis(prefix_budgets(scores, beta), col, axis=1)
    return EvalReport(
        acc_topk=accs["top-k"],
        acc_maj=accs["majority-vote"],
        acc_wvl=accs["weighted-vote"],
        budget_mean=float(budget.mean()),
        cardinality_mean=float(sizes.mean()),
        n_samples=int(B),
    )


def write_curves(path, rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_HEADER, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _fmt(row[key]) for key in CURVE_HEADER})


def _fmt(value):
    return repr(value) if isinstance(value, float) else value


def read_curves(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_HEADER:
            raise ValidationError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)
