"""Mini-batch training of the entity scorer and of the cardinality model.

Both objectives are weighted comp-sum losses over the model's output scores:
the scorer uses the complementary costs ``tau`` as weights, the cardinality
model uses ``1 - normalized cardinality loss``. One loop serves both.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cardinality import CardinalityContext, cardinality_loss_table, cardinality_weights
from .costs import CostSpec, complementary_costs, cost_matrix, agent_predictions
from .errors import NumericalError, ValidationError
from .models import ScoreModel, model_inputs
from .surrogate import weighted_comp_sum, weighted_comp_sum_grad

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "momentum", "adam")
SCHEDULES = ("constant", "cosine")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        for k, g in grads.items():
            params[k] -= lr * g


class Momentum:
    def __init__(self, lr: float, beta: float = 0.9):
        self.lr, self.beta = lr, beta
        self.velocity = {}

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        for k, g in grads.items():
            v = self.velocity.get(k)
            v = g.copy() if v is None else self.beta * v + g
            self.velocity[k] = v
            params[k] -= lr * v


class Adam:
    """Adam with optional decoupled weight decay (AdamW)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, 0.0) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            if self.weight_decay:
                params[k] -= lr * self.weight_decay * params[k]
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float, weight_decay: float = 0.0):
    if name == "sgd":
        return SGD(lr)
    if name == "momentum":
        return Momentum(lr)
    if name == "adam":
        return Adam(lr, weight_decay=weight_decay)
    raise ValidationError(f"unknown optimizer {name!r}; expected one of {OPTIMIZERS}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    tol: float = 0.0
    schedule: str = "constant"
    weight_decay: float = 0.0
    val_fraction: float = 0.2

    def __post_init__(self):
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ValidationError("learning rate must be finite and non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in SCHEDULES:
            raise ValidationError(f"unknown schedule {self.schedule!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must lie in [0, 1)")


@dataclass
class TrainResult:
    model: ScoreModel
    trace: list[tuple[int, str, float]] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def write_trace(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "split", "loss"])
            for epoch, split, loss in self.trace:
                writer.writerow([epoch, split, repr(float(loss))])


def batch_objective(model: ScoreModel, inputs, weights, u: float):
    """Mean weighted comp-sum loss of a batch and its parameter gradients."""
    scores, cache = model.forward(inputs)
    B = scores.shape[0]
    loss = float(np.sum(weighted_comp_sum(scores, weights, u))) / B
    grads = model.backward(cache, weighted_comp_sum_grad(scores, weights, u) / B)
    return loss, grads


def mean_objective(model: ScoreModel, inputs, weights, u: float) -> float:
    scores = model.predict(inputs)
    return float(np.mean(weighted_comp_sum(scores, weights, u)))


def split_indices(n: int, val_fraction: float, seed: int):
    """Seeded train/validation split; an empty validation part if the fraction is 0."""
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_val = int(round(val_fraction * n))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit_weighted(model: ScoreModel, inputs, weights, u: float, config: TrainConfig,
                 val_inputs=None, val_weights=None) -> TrainResult:
    """Minimise the mean weighted comp-sum loss with seeded mini-batches.

    Keeps the parameters of the epoch with the lowest validation loss (training
    loss when there is no validation part). Raises :class:`NumericalError` on a
    non-finite loss or gradient.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.shape[0]
    if n == 0:
        raise ValidationError("cannot train on an empty dataset")
    has_val = val_weights is not None and len(val_weights) > 0
    rng = np.random.default_rng([config.seed, 11])
    opt = make_optimizer(config.optimizer, config.lr, config.weight_decay)
    n_batches = math.ceil(n / config.batch_size)
    total_steps = max(1, config.epochs * n_batches)

    def take(x, idx):
        return x[idx]

    def record(epoch):
        train_loss = mean_objective(model, inputs, weights, u)
        if not math.isfinite(train_loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        result.trace.append((epoch, "train", train_loss))
        sel = train_loss
        if has_val:
            sel = mean_objective(model, val_inputs, val_weights, u)
            result.trace.append((epoch, "val", sel))
        return train_loss, sel

    result = TrainResult(model=model)
    prev_train, best = record(0)
    best_params = {k: v.copy() for k, v in model.params.items()}
    step = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for b in range(n_batches):
            idx = perm[b * config.batch_size:(b + 1) * config.batch_size]
            loss, grads = batch_objective(model, take(inputs, idx), weights[idx], u)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError(f"non-finite loss or gradient at epoch {epoch}, batch {b}")
            lr = config.lr
            if config.schedule == "cosine":
                lr = 0.5 * config.lr * (1.0 + math.cos(math.pi * step / total_steps))
            opt.step(model.params, grads, lr)
            step += 1
        train_loss, sel = record(epoch)
        if sel < best:
            best = sel
            best_params = {k: v.copy() for k, v in model.params.items()}
            result.best_epoch = epoch
        if config.tol > 0 and abs(prev_train - train_loss) < config.tol:
            result.stopped_early = True
            log.info("stopping at epoch %d: loss change below %g", epoch, config.tol)
            break
        prev_train = train_loss
    model.params = best_params
    model.meta["epoch"] = result.best_epoch
    return result


def train_scorer(dataset, spec: CostSpec, model: ScoreModel, u: float,
                 config: TrainConfig) -> TrainResult:
    """Fit the entity scorer on the k-independent deferral surrogate.

    No cardinality enters: the returned scorer is evaluated at any ``k``.
    Tabular models are keyed by sample id, so they train on every sample and
    select epochs on the training loss.
    """
    tau = complementary_costs(cost_matrix(dataset.y, dataset.expert_preds, spec))
    inputs = model_inputs(model, dataset)
    if model.family == "tabular" or config.val_fraction == 0:
        return fit_weighted(model, inputs, tau, u, config)
    tr, va = split_indices(len(dataset), config.val_fraction, config.seed)
    return fit_weighted(model, inputs[tr], tau[tr], u, config, inputs[va], tau[va])


def cardinality_targets(dataset, scorer: ScoreModel, ctx: CardinalityContext) -> np.ndarray:
    """Per-sample surrogate weights ``1 - normalized card loss`` over levels ``1..N``."""
    scores = scorer.predict(model_inputs(scorer, dataset))
    agents = agent_predictions(ctx.n_classes, dataset.expert_preds)
    losses = cardinality_loss_table(scores, dataset.y, agents, ctx)
    return cardinality_weights(losses)


def train_cardinality(dataset, scorer: ScoreModel, card_model: ScoreModel,
                      ctx: CardinalityContext, u: float, config: TrainConfig) -> TrainResult:
    """Fit ``k(x)`` against a frozen scorer; the scorer's parameters are not touched."""
    weights = cardinality_targets(dataset, scorer, ctx)
    inputs = model_inputs(card_model, dataset)
    if card_model.family == "tabular" or config.val_fraction == 0:
        return fit_weighted(card_model, inputs, weights, u, config)
    tr, va = split_indices(len(dataset), config.val_fraction, config.seed)
    return fit_weighted(card_model, inputs[tr], weights[tr], u, config, inputs[va], weights[va])
