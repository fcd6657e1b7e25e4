"""Command-line front end: ``generate``, ``train``, ``sweep`` and ``verify``.

Exit codes: 0 success, 1 validation/config error, 2 numerical failure (including
failed verify checks), 3 IO error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .costs import agent_predictions
from .data import Dataset, generate_dataset
from .errors import NumericalError, ValidationError
from .metrics import evaluate, write_curves
from .models import ScoreModel, build_model, model_inputs
from .training import train_cardinality, train_scorer
from .verify import FAULTS, run_all

log = logging.getLogger("topkdefer")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class CheckFailure(Exception):
    pass


def _paths(cfg):
    root = Path(cfg["output_dir"])
    return {"root": root, "data": root / "data", "ckpt": root / "checkpoints",
            "traces": root / "traces", "curves": root / "curves.csv"}


def card_name(metric: str, index: int) -> str:
    return f"card_{metric}_{index:02d}"


def _load_split(paths, split: str) -> Dataset:
    path = paths["data"] / f"{split}.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset {path}; run `topkdefer generate` first")
    return Dataset.from_csv(path)


def cmd_generate(cfg) -> None:
    paths = _paths(cfg)
    paths["data"].mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    dist, pool = cfgmod.distribution(cfg), cfgmod.expert_pool(cfg)
    rng = np.random.default_rng([seed, 1])
    n_train, n_test = int(cfg["data"]["n_train"]), int(cfg["data"]["n_test"])
    generate_dataset(dist, pool, n_train, rng, 0).to_csv(paths["data"] / "train.csv")
    generate_dataset(dist, pool, n_test, rng, n_train).to_csv(paths["data"] / "test.csv")
    log.info("wrote %d train and %d test samples to %s", n_train, n_test, paths["data"])


def _build(section, n_out, train, seed, salt):
    return build_model(section["family"], n_out, dim=train.features.shape[1], ids=train.sample_id,
                       hidden=int(section["hidden"]), activation=section["activation"],
                       rng=np.random.default_rng([seed, salt]))


def cmd_train(cfg, skip_cardinality: bool = False) -> None:
    paths = _paths(cfg)
    train = _load_split(paths, "train")
    seed, u = int(cfg["seed"]), float(cfg["surrogate"]["u"])
    spec = cfgmod.cost_spec(cfg)
    if train.expert_preds.shape[1] != spec.n_experts:
        raise ValidationError("dataset expert columns do not match experts.n_experts")
    N = spec.n_entities
    paths["ckpt"].mkdir(parents=True, exist_ok=True)
    paths["traces"].mkdir(parents=True, exist_ok=True)

    scorer = _build(cfg["scorer"], N, train, seed, 2)
    res = train_scorer(train, spec, scorer, u, cfgmod.train_config(cfg["scorer"]["train"], seed))
    scorer.save(paths["ckpt"] / "scorer.json", seed=seed, u=u)
    res.write_trace(paths["traces"] / "scorer.csv")
    log.info("scorer: best epoch %d, final train loss %.5f", res.best_epoch, res.trace[-1][2])
    if skip_cardinality:
        return
    card_cfg = cfg["cardinality"]
    for metric in card_cfg["metrics"]:
        for i, lam in enumerate(card_cfg["lambdas"]):
            ctx = cfgmod.cardinality_context(cfg, metric, lam, spec)
            model = _build(card_cfg, N, train, seed, 3)
            r = train_cardinality(train, scorer, model, ctx, u,
                                  cfgmod.train_config(card_cfg["train"], seed))
            name = card_name(metric, i)
            model.save(paths["ckpt"] / f"{name}.json", seed=seed, u=u, metric=metric,
                       lam=float(lam), xi=ctx.xi)
            r.write_trace(paths["traces"] / f"{name}.csv")
            log.info("%s (lambda=%g): best epoch %d", name, lam, r.best_epoch)


def _load_ckpt(path) -> ScoreModel:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run `topkdefer train` first")
    return ScoreModel.load(path)


def cmd_sweep(cfg, fixed_only: bool = False) -> list[dict]:
    """Evaluate one scorer checkpoint at every fixed k and every adaptive point."""
    paths = _paths(cfg)
    test = _load_split(paths, "test")
    seed, u = int(cfg["seed"]), float(cfg["surrogate"]["u"])
    spec = cfgmod.cost_spec(cfg)
    scorer = _load_ckpt(paths["ckpt"] / "scorer.json")
    if scorer.n_out != spec.n_entities:
        raise ValidationError("scorer checkpoint does not match the configured entity count")
    scores = scorer.predict(model_inputs(scorer, test))
    agents = agent_predictions(spec.n_classes, test.expert_preds)
    renorm = bool(cfg["cardinality"]["renormalize"])
    common = (scores, test.y, agents, spec.beta, spec.n_classes)
    rows = []
    for k in cfgmod.fixed_ks(cfg, spec.n_entities):
        rep = evaluate(*common, k=k, renormalize=renorm)
        rows.append(rep.as_row("fixed", k, u, seed))
    if not fixed_only:
        for metric in cfg["cardinality"]["metrics"]:
            for i, lam in enumerate(cfg["cardinality"]["lambdas"]):
                card = _load_ckpt(paths["ckpt"] / f"{card_name(metric, i)}.json")
                rep = evaluate(*common, card_scores=card.predict(model_inputs(card, test)),
                               renormalize=renorm)
                rows.append(rep.as_row(f"adaptive-{metric}", float(lam), u, seed))
    write_curves(paths["curves"], rows)
    log.info("wrote %d curve points to %s", len(rows), paths["curves"])
    return rows


def cmd_verify(cfg, fault: str = "none") -> None:
    results = run_all(int(cfg["seed"]), fault, float(cfg["surrogate"]["u"]))
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed")
    if failed:
        raise CheckFailure(f"{failed} check suite(s) failed")


class _Parser(argparse.ArgumentParser):
    # usage errors (e.g. a missing --seed) are validation errors, not numerical ones
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topkdefer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed_required):
        p.add_argument("--config", type=Path, help="YAML config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, required=seed_required)
        p.add_argument("--output-dir", type=Path)

    common(sub.add_parser("generate", help="write train/test dataset CSVs"), False)
    p = sub.add_parser("train", help="train the scorer and cardinality models")
    common(p, True)
    p.add_argument("--skip-cardinality", action="store_true")
    p = sub.add_parser("sweep", help="write budget-accuracy curves CSV")
    common(p, True)
    p.add_argument("--fixed-only", action="store_true")
    p = sub.add_parser("verify", help="run randomised theory checks")
    common(p, False)
    p.add_argument("--inject-fault", choices=FAULTS, default="none")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.output_dir is not None:
            cfg["output_dir"] = str(args.output_dir)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.skip_cardinality)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.fixed_only)
        else:
            cmd_verify(cfg, args.inject_fault)
    except (NumericalError, FloatingPointError, CheckFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
