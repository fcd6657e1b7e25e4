import inspect

import numpy as np
import pytest

from topkdefer.cardinality import CardinalityContext
from topkdefer.costs import CostSpec, cost_matrix, complementary_costs, agent_predictions
from topkdefer.data import Dataset, ExpertPool, GaussianMixture, generate_dataset
from topkdefer.errors import NumericalError, ValidationError
from topkdefer.metrics import prefix_budgets
from topkdefer.models import LinearModel, MLPModel, ScoreModel, TabularModel, build_model, model_inputs
from topkdefer.oracle import bayes_topk
from topkdefer.policy import topk_set
from topkdefer.training import (SGD, Adam, Momentum, TrainConfig, batch_objective, fit_weighted,
                                train_cardinality, train_scorer)


def small_problem(seed=0, size=300, n=4, J=2, dim=5):
    dist = GaussianMixture(n, dim, 2.0, seed=seed)
    pool = ExpertPool.overlapping(n, J, 2, 0.9, seed=seed)
    ds = generate_dataset(dist, pool, size, np.random.default_rng(seed))
    spec = CostSpec.standard(n, np.linspace(0.05, 0.03, J))
    return ds, spec


def models_for(family, rng, dim, N, ids):
    if family == "mlp1-relu":
        return MLPModel(dim, N, 8, "relu", rng)
    return build_model(family, N, dim=dim, ids=ids, hidden=8, rng=rng)


@pytest.mark.parametrize("family", ["tabular", "linear", "mlp1", "mlp1-relu"])
@pytest.mark.parametrize("u", [0.5, 1.0, 2.0])
def test_batched_objective_gradient_finite_differences(family, u):
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(20):
        B, dim, N = int(rng.integers(2, 9)), int(rng.integers(1, 5)), int(rng.integers(2, 6))
        X = rng.normal(size=(B, dim))
        ids = np.arange(B) * 3 + 1
        W = rng.uniform(size=(B, N))
        model = models_for(family, np.random.default_rng(trial), dim, N, ids)
        for v in model.params.values():
            v += rng.normal(scale=0.5, size=v.shape)
        inputs = ids if family == "tabular" else X
        _, grads = batch_objective(model, inputs, W, u)
        for name, p in model.params.items():
            fd = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + 1e-6
                plus = batch_objective(model, inputs, W, u)[0]
                p[i] = old - 1e-6
                minus = batch_objective(model, inputs, W, u)[0]
                p[i] = old
                fd[i] = (plus - minus) / 2e-6
            if family == "mlp1-relu":
                # kinks: skip entries whose hidden pre-activation sits within the step of zero
                pre = X @ model.params["W1"] + model.params["b1"]
                if np.min(np.abs(pre)) < 1e-4:
                    continue
            err = np.max(np.abs(grads[name] - fd) / np.maximum(1.0, np.abs(fd)))
            worst = max(worst, err)
    assert worst < 1e-5


def test_optimizer_steps():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -1.0])}
    SGD(0.1).step(p, g)
    np.testing.assert_allclose(p["w"], [0.95, -1.9])
    p = {"w": np.array([1.0, -2.0])}
    Adam(0.1).step(p, g)
    # first bias-corrected Adam step moves each coordinate by lr * sign(g)
    np.testing.assert_allclose(p["w"], [0.9, -1.9], rtol=1e-6)
    p = {"w": np.array([1.0])}
    m = Momentum(0.1, beta=0.5)
    m.step(p, {"w": np.array([1.0])})
    m.step(p, {"w": np.array([1.0])})
    np.testing.assert_allclose(p["w"], [1.0 - 0.1 - 0.15])
    p = {"w": np.array([2.0])}
    Adam(0.1, weight_decay=0.5).step(p, {"w": np.array([0.0])})
    np.testing.assert_allclose(p["w"], [2.0 - 0.1 * 0.5 * 2.0])


def test_config_validation():
    for bad in ({"lr": -1.0}, {"batch_size": 0}, {"optimizer": "lbfgs"}, {"schedule": "step"},
                {"val_fraction": 1.0}, {"lr": float("nan")}):
        with pytest.raises(ValidationError):
            TrainConfig(**bad)


def test_train_scorer_has_no_k():
    assert "k" not in inspect.signature(train_scorer).parameters


def run_scorer(family="linear", seed=0, **kw):
    ds, spec = small_problem()
    model = build_model(family, spec.n_entities, dim=ds.features.shape[1], ids=ds.sample_id,
                        hidden=8, rng=np.random.default_rng(seed))
    cfg = TrainConfig(epochs=kw.pop("epochs", 5), batch_size=64, lr=kw.pop("lr", 0.01), seed=seed, **kw)
    return train_scorer(ds, spec, model, 1.0, cfg), ds, spec


@pytest.mark.parametrize("family", ["tabular", "linear", "mlp1"])
def test_determinism(family):
    a, _, _ = run_scorer(family, seed=3)
    b, _, _ = run_scorer(family, seed=3)
    assert a.trace == b.trace
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])


@pytest.mark.parametrize("opt", ["sgd", "momentum", "adam"])
def test_zero_learning_rate_leaves_parameters(opt):
    ds, spec = small_problem()
    model = LinearModel(ds.features.shape[1], spec.n_entities, np.random.default_rng(0))
    before = {k: v.copy() for k, v in model.params.items()}
    res = train_scorer(ds, spec, model, 1.0, TrainConfig(epochs=3, lr=0.0, optimizer=opt))
    for k in before:
        np.testing.assert_array_equal(model.params[k], before[k])
    train = [loss for _, split, loss in res.trace if split == "train"]
    assert len(set(train)) == 1


def test_first_epoch_decreases_objective():
    decreased = 0
    trials = 40
    for seed in range(trials):
        ds, spec = small_problem(seed=seed, size=256)
        X = (ds.features - ds.features.mean(0)) / ds.features.std(0)
        tau = complementary_costs(cost_matrix(ds.y, ds.expert_preds, spec))
        model = LinearModel(X.shape[1], spec.n_entities, np.random.default_rng(seed))
        res = fit_weighted(model, X, tau, 1.0, TrainConfig(epochs=1, lr=1e-3, batch_size=32, seed=seed))
        decreased += res.trace[1][2] < res.trace[0][2]
    assert decreased >= 0.95 * trials


def test_trace_final_below_initial_and_written(tmp_path):
    res, _, _ = run_scorer("mlp1", epochs=10)
    train = [loss for _, split, loss in res.trace if split == "train"]
    assert train[-1] < train[0]
    path = tmp_path / "trace.csv"
    res.write_trace(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,split,loss"
    assert lines[1].startswith("0,train,")
    assert any(",val," in line for line in lines)


def test_model_selection_keeps_best_validation_epoch():
    res, _, _ = run_scorer("mlp1", epochs=12, lr=0.05)
    val = {e: loss for e, split, loss in res.trace if split == "val"}
    assert res.best_epoch == min(val, key=lambda e: (val[e], e))


def test_tabular_single_sample_recovers_cost_ranking():
    spec = CostSpec.standard(3, [0.2, 0.05])
    ds = Dataset([0], np.zeros((1, 1)), [1], [[1, 2]])
    model = TabularModel([0], spec.n_entities, np.random.default_rng(0))
    train_scorer(ds, spec, model, 1.0, TrainConfig(epochs=10_000, lr=0.01, batch_size=1, val_fraction=0.0))
    c = cost_matrix(ds.y, ds.expert_preds, spec)[0]
    h = model.predict([0])[0]
    for k in range(1, 6):
        assert sorted(topk_set(h, k).tolist()) == sorted(bayes_topk(c, k).tolist())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_inputs_abort():
    ds, spec = small_problem(size=64)
    ds.features[3, 0] = np.inf
    model = LinearModel(ds.features.shape[1], spec.n_entities, np.random.default_rng(0))
    with pytest.raises(NumericalError):
        train_scorer(ds, spec, model, 1.0, TrainConfig(epochs=1, val_fraction=0.0))


def test_checkpoint_round_trip(tmp_path):
    ds, spec = small_problem(size=40)
    for family in ("tabular", "linear", "mlp1"):
        m = build_model(family, spec.n_entities, dim=ds.features.shape[1], ids=ds.sample_id,
                        hidden=6, activation="relu", rng=np.random.default_rng(1))
        p = tmp_path / f"{family}.json"
        m.save(p, seed=4, epoch=2)
        back = ScoreModel.load(p)
        assert back.family == family and back.meta["seed"] == 4
        np.testing.assert_array_equal(back.predict(model_inputs(back, ds)), m.predict(model_inputs(m, ds)))
        back.save(tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == p.read_bytes()


def test_tabular_unknown_id():
    m = TabularModel([1, 2], 3)
    with pytest.raises(ValidationError):
        m.predict([5])


def card_setup():
    ds, spec = small_problem(size=400)
    scorer = LinearModel(ds.features.shape[1], spec.n_entities, np.random.default_rng(0))
    train_scorer(ds, spec, scorer, 1.0, TrainConfig(epochs=5, lr=0.01))
    return ds, spec, scorer


def mean_level(ds, spec, scorer, lam):
    ctx = CardinalityContext("top-k", lam, spec.beta, spec.n_classes)
    card = LinearModel(ds.features.shape[1], spec.n_entities, np.random.default_rng(1))
    train_cardinality(ds, scorer, card, ctx, 1.0, TrainConfig(epochs=30, lr=0.02, val_fraction=0.0))
    return np.argmax(card.predict(ds.features), axis=1) + 1


def test_cardinality_leaves_scorer_untouched():
    ds, spec, scorer = card_setup()
    before = {k: v.copy() for k, v in scorer.params.items()}
    mean_level(ds, spec, scorer, 1.0)
    for k in before:
        np.testing.assert_array_equal(scorer.params[k], before[k])


def test_cardinality_lambda_extremes():
    ds, spec, scorer = card_setup()
    budgets = prefix_budgets(scorer.predict(ds.features), spec.beta)
    big = mean_level(ds, spec, scorer, 1e3)
    chosen = budgets[np.arange(len(ds)), big - 1]
    # a huge fee weight picks a cheapest level on (nearly) every input
    assert np.mean(chosen <= budgets.min(axis=1) + 1e-12) >= 0.95
    zero = mean_level(ds, spec, scorer, 0.0)
    assert zero.mean() > big.mean()
    assert zero.mean() > spec.n_entities / 2
