"""Experiment configuration: nested defaults, YAML files and ``key.path=value`` overrides."""
from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import yaml

from .cardinality import LAMBDA_GRID, CardinalityContext
from .costs import CostSpec
from .data import DEFAULT_EXPERT_BETA, ExpertPool, make_gaussian_mixture
from .errors import ConfigError
from .metrics import METRICS
from .training import TrainConfig

DEFAULTS: dict = {
    "seed": 0,
    "output_dir": "out",
    "data": {"n_classes": 10, "dim": 12, "separation": 2.2, "n_train": 4000, "n_test": 2000},
    "experts": {"n_experts": 6, "classes_per_expert": 5, "p": 0.94},
    # null alpha/beta: unit label penalties, free labels, DEFAULT_EXPERT_BETA for experts
    "costs": {"alpha": None, "beta": None},
    "surrogate": {"u": 1.0},
    "scorer": {
        "family": "mlp1", "hidden": 64, "activation": "tanh",
        "train": {"epochs": 40, "batch_size": 256, "lr": 0.003, "optimizer": "adam",
                  "schedule": "constant", "weight_decay": 0.0, "val_fraction": 0.2, "tol": 0.0},
    },
    "cardinality": {
        "family": "mlp1", "hidden": 32, "activation": "tanh",
        "metrics": list(METRICS), "lambdas": list(LAMBDA_GRID), "xi": "identity",
        "renormalize": False,
        "train": {"epochs": 30, "batch_size": 256, "lr": 0.003, "optimizer": "adam",
                  "schedule": "cosine", "weight_decay": 1e-5, "val_fraction": 0.2, "tol": 0.0},
    },
    "policy": {"fixed_k": None},  # null: every k in 1..n+J
}


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b.c=value`` with the value parsed as YAML (so ``3``, ``0.5``, ``[1, 2]`` work)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from exc
    if isinstance(value, str):
        # YAML 1.1 reads "1e6" (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    return key.strip().split("."), value


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _merge(cfg, loaded)
    for item in overrides:
        keys, value = parse_override(item)
        nested: dict = value
        for k in reversed(keys):
            nested = {k: nested}
        cfg = _merge(cfg, nested)
    return cfg


# --- builders -------------------------------------------------------------------

def cost_spec(cfg: dict) -> CostSpec:
    n = int(cfg["data"]["n_classes"])
    J = int(cfg["experts"]["n_experts"])
    alpha, beta = cfg["costs"]["alpha"], cfg["costs"]["beta"]
    if beta is None:
        expert_beta = (DEFAULT_EXPERT_BETA if J == len(DEFAULT_EXPERT_BETA)
                       else np.linspace(0.05, 0.03, J))
        beta = [0.0] * n + list(expert_beta)
    if alpha is None:
        alpha = [1.0] * (n + J)
    if len(alpha) != n + J or len(beta) != n + J:
        raise ConfigError(f"costs.alpha and costs.beta need {n + J} entries (n_classes + n_experts)")
    return CostSpec(alpha, beta, n)


def expert_pool(cfg: dict) -> ExpertPool:
    e = cfg["experts"]
    return ExpertPool.overlapping(int(cfg["data"]["n_classes"]), int(e["n_experts"]),
                                  int(e["classes_per_expert"]), float(e["p"]), seed=int(cfg["seed"]))


def distribution(cfg: dict):
    d = cfg["data"]
    return make_gaussian_mixture(int(d["n_classes"]), int(d["dim"]), float(d["separation"]),
                                 seed=int(cfg["seed"]))


def train_config(section: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig(seed=seed, **section)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


def cardinality_context(cfg: dict, metric: str, lam: float, spec: CostSpec) -> CardinalityContext:
    c = cfg["cardinality"]
    return CardinalityContext(metric, float(lam), spec.beta, spec.n_classes, c["xi"],
                              bool(c["renormalize"]))


def fixed_ks(cfg: dict, N: int) -> list[int]:
    ks = cfg["policy"]["fixed_k"]
    ks = list(range(1, N + 1)) if ks is None else [int(k) for k in ks]
    if any(not 1 <= k <= N for k in ks):
        raise ConfigError(f"policy.fixed_k entries must lie in 1..{N}")
    return ks
