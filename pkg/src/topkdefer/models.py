"""Score models with hand-written backward passes.

Every model maps a batch of inputs to ``(B, n_out)`` scores. ``forward`` returns
the scores plus a cache that ``backward`` turns into parameter gradients given
``dL/dscores``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

FAMILIES = ("tabular", "linear", "mlp1")
ACTIVATIONS = ("tanh", "relu")


class ScoreModel:
    family = ""

    def __init__(self, n_out: int, params: dict[str, np.ndarray], meta: dict | None = None):
        self.n_out = int(n_out)
        self.params = params
        self.meta = dict(meta or {})

    def forward(self, inputs):
        raise NotImplementedError

    def backward(self, cache, grad_scores) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def predict(self, inputs) -> np.ndarray:
        return self.forward(inputs)[0]

    def copy(self) -> "ScoreModel":
        clone = type(self).__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.meta = dict(self.meta)
        return clone

    def config(self) -> dict:
        return {"n_out": self.n_out}

    # -- checkpoints: one JSON document, header first, floats round-trip via repr
    def save(self, path, **header) -> None:
        doc = {
            "header": {"family": self.family, **self.config(), **self.meta, **header},
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in sorted(self.params.items())},
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @staticmethod
    def load(path) -> "ScoreModel":
        doc = json.loads(Path(path).read_text())
        header = doc["header"]
        params = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        family = header.get("family")
        if family == "tabular":
            model = TabularModel.__new__(TabularModel)
            model.ids = np.array(header["ids"], dtype=np.int64)
        elif family == "linear":
            model = LinearModel.__new__(LinearModel)
        elif family == "mlp1":
            model = MLPModel.__new__(MLPModel)
            model.activation = header["activation"]
        else:
            raise ValidationError(f"{path}: unknown model family {family!r}")
        model.n_out = int(header["n_out"])
        model.params = params
        model.meta = {k: v for k, v in header.items()
                      if k not in ("family", "n_out", "ids", "activation", "dim", "hidden")}
        return model


class TabularModel(ScoreModel):
    """One free score vector per sample id."""

    family = "tabular"

    def __init__(self, ids, n_out: int, rng: np.random.Generator | None = None, scale: float = 0.01):
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(ids)
        self.ids = ids[order]
        rng = np.random.default_rng(0) if rng is None else rng
        super().__init__(n_out, {"table": rng.normal(scale=scale, size=(ids.size, n_out))})

    def rows(self, sample_ids) -> np.ndarray:
        sample_ids = np.asarray(sample_ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, sample_ids)
        pos = np.minimum(pos, self.ids.size - 1)
        if not np.array_equal(self.ids[pos], sample_ids):
            raise ValidationError("tabular model queried with unknown sample ids")
        return pos

    def forward(self, sample_ids):
        rows = self.rows(sample_ids)
        return self.params["table"][rows], rows

    def backward(self, rows, grad_scores):
        g = np.zeros_like(self.params["table"])
        np.add.at(g, rows, grad_scores)
        return {"table": g}

    def config(self):
        return {"n_out": self.n_out, "ids": self.ids.tolist()}


class LinearModel(ScoreModel):
    family = "linear"

    def __init__(self, dim: int, n_out: int, rng: np.random.Generator | None = None, scale: float = 0.01):
        rng = np.random.default_rng(0) if rng is None else rng
        super().__init__(n_out, {"W": rng.normal(scale=scale, size=(dim, n_out)),
                                 "b": np.zeros(n_out)})

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        return X @ self.params["W"] + self.params["b"], X

    def backward(self, X, grad_scores):
        return {"W": X.T @ grad_scores, "b": grad_scores.sum(axis=0)}

    def config(self):
        return {"n_out": self.n_out, "dim": int(self.params["W"].shape[0])}


class MLPModel(ScoreModel):
    """One hidden layer: ``act(X W1 + b1) W2 + b2``."""

    family = "mlp1"

    def __init__(self, dim: int, n_out: int, hidden: int = 64, activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.activation = activation
        params = {
            "W1": rng.normal(scale=1.0 / np.sqrt(dim), size=(dim, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(scale=1.0 / np.sqrt(hidden), size=(hidden, n_out)),
            "b2": np.zeros(n_out),
        }
        super().__init__(n_out, params)

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        pre = X @ self.params["W1"] + self.params["b1"]
        act = np.tanh(pre) if self.activation == "tanh" else np.maximum(pre, 0.0)
        return act @ self.params["W2"] + self.params["b2"], (X, pre, act)

    def backward(self, cache, grad_scores):
        X, pre, act = cache
        d_act = grad_scores @ self.params["W2"].T
        d_pre = d_act * (1.0 - act ** 2) if self.activation == "tanh" else d_act * (pre > 0)
        return {
            "W1": X.T @ d_pre,
            "b1": d_pre.sum(axis=0),
            "W2": act.T @ grad_scores,
            "b2": grad_scores.sum(axis=0),
        }

    def config(self):
        dim, hidden = self.params["W1"].shape
        return {"n_out": self.n_out, "dim": int(dim), "hidden": int(hidden),
                "activation": self.activation}


def build_model(family: str, n_out: int, dim: int | None = None, ids=None,
                hidden: int = 64, activation: str = "tanh",
                rng: np.random.Generator | None = None) -> ScoreModel:
    if family == "tabular":
        if ids is None:
            raise ValidationError("tabular family needs the training sample ids")
        return TabularModel(ids, n_out, rng)
    if dim is None:
        raise ValidationError(f"{family} family needs the input dimension")
    if family == "linear":
        return LinearModel(dim, n_out, rng)
    if family == "mlp1":
        return MLPModel(dim, n_out, hidden, activation, rng)
    raise ValidationError(f"unknown model family {family!r}; expected one of {FAMILIES}")


def model_inputs(model: ScoreModel, dataset):
    """Sample ids for tabular models, feature rows otherwise."""
    return dataset.sample_id if model.family == "tabular" else dataset.features
