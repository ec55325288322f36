"""Command-line surface: gen-synth, eval, train, grad-check, dg-report, run-suite.

Every subcommand prints its resolved configuration (seed included) before
running and is deterministic given its inputs and flags: identical
invocations produce byte-identical output files.  Exit codes: 0 success,
1 usage or validation error, 2 failed numeric check.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import experiments, synth, training
from .core import RankingProblem, read_label_csv
from .decomposability import DecompConfig
from .metrics import evaluate_all
from .relevance import RelevanceSpec
from .surrogates import (LossResult, SurrogateConfig, finite_diff_check,
                         sigmoid_rank_baseline, sup_ap_loss, sup_hap_loss,
                         sup_ndcg_loss, sup_rk_loss)

LOSS_OPS = {
    "sup-ap": (sup_ap_loss, "binary"),
    "sup-rk": (sup_rk_loss, "binary"),
    "sup-hap": (sup_hap_loss, "graded"),
    "sup-ndcg": (sup_ndcg_loss, "graded"),
    "smooth-ap": (sigmoid_rank_baseline, "binary"),
}

# test hook: corrupts analytic gradients so the harness must flag them
_SABOTAGE_ENV = "RANKBOUND_GRADCHECK_SABOTAGE"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x)
    except ValueError:
        raise UsageError(f"expected a comma-separated float list, got {text!r}")


def _print_config(name: str, items: dict) -> None:
    print(f"[{name}] resolved config:")
    for k in sorted(items):
        print(f"  {k} = {items[k]}")


def build_parser() -> _Parser:
    p = _Parser(prog="rankbound",
                description="ranking metrics, upper-bound rank surrogates "
                            "and decomposability diagnostics")
    sub = p.add_subparsers(dest="command", metavar="command")

    g = sub.add_parser("gen-synth",
                       help="generate a synthetic hierarchical dataset")
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--branching", type=str, default="2,4",
                   help="fan-out per level, comma separated")
    g.add_argument("--per-class", type=int, default=16)
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--spreads", type=str, default="1.0,0.4",
                   help="center spread per level, strictly decreasing")
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-features", required=True)
    g.add_argument("--out-labels", required=True)

    e = sub.add_parser("eval", help="evaluate all metrics on an embedding file")
    e.add_argument("--embeddings", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--relevance", default="hierarchical",
                   choices=["hierarchical", "weighted_ap", "ndcg", "binary"])
    e.add_argument("--alpha", type=float, default=1.0)
    e.add_argument("--weights", type=str, default=None,
                   help="weighted_ap level weights, comma separated")
    e.add_argument("--k", type=str, default="1,2,4,8")
    e.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train an encoder from a config file")
    t.add_argument("--config", required=True,
                   help="flat key = value file; # starts a comment")
    t.add_argument("--out", required=True, help="output directory")

    c = sub.add_parser("grad-check",
                       help="compare analytic gradients to finite differences")
    c.add_argument("--loss", required=True, choices=sorted(LOSS_OPS))
    c.add_argument("--n", type=int, default=24)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=8)
    c.add_argument("--tol", type=float, default=1e-4)

    d = sub.add_parser("dg-report",
                       help="measure the decomposability gap and its bounds")
    d.add_argument("--batch-sizes", type=str, default="32,64,128,256")
    d.add_argument("--with-dg", default="none", choices=["none", "pair", "proxy"])
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--epochs", type=int, default=6)
    d.add_argument("--out", required=True)

    r = sub.add_parser("run-suite", help="run a named experiment grid")
    r.add_argument("--name", required=True,
                   choices=list(experiments.EXPERIMENT_NAMES))
    r.add_argument("--seeds", type=str, default="0,1,2")
    r.add_argument("--epochs", type=int, default=12)
    r.add_argument("--out", required=True, help="output CSV path")
    return p


# -- handlers ---------------------------------------------------------------

def _cmd_gen_synth(args) -> int:
    cfg = synth.SynthConfig(depth=args.depth, branching=_ints(args.branching),
                            per_class=args.per_class, dim=args.dim,
                            spreads=_floats(args.spreads), noise=args.noise,
                            seed=args.seed)
    _print_config("gen-synth", vars(args))
    feats, labels = synth.generate(cfg)
    synth.write_dataset(args.out_features, args.out_labels, feats, labels)
    print(f"wrote {feats.shape[0]} x {feats.shape[1]} features to "
          f"{args.out_features} and labels to {args.out_labels}")
    return 0


def _cmd_eval(args) -> int:
    _print_config("eval", vars(args))
    feats = synth.read_features(args.embeddings)
    _, labels = read_label_csv(args.labels)
    if len(labels) != feats.shape[0]:
        raise ValueError("label rows do not match the feature file")
    weights = _floats(args.weights) if args.weights else None
    spec = RelevanceSpec(kind=args.relevance, alpha=args.alpha, weights=weights)
    report = evaluate_all(feats, labels, spec, _ints(args.k))
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["metric", "level", "k", "value"])
        w.writerows(report.csv_rows())
    print(f"evaluated {report.num_queries} queries "
          f"({report.num_skipped} without positives skipped); "
          f"report written to {args.out}")
    return 0


_CONFIG_KEYS = {
    "train_features": str, "train_labels": str,
    "test_features": str, "test_labels": str,
    "encoder": str, "hidden": int, "embed_dim": int, "batch_size": int,
    "samples_per_class": int, "epochs": int, "lr": float, "beta1": float,
    "beta2": float, "adam_eps": float, "optimizer": str, "surrogate": str,
    "dg": str, "lam": float, "pos_margin": float, "neg_margin": float,
    "proxy_temperature": float, "tau": float, "rho": float,
    "saturation_eps": float, "tau_star": float, "rk_k_values": _ints,
    "relevance.kind": str, "relevance.alpha": float,
    "relevance.weights": _floats, "seed": int, "eval_k": _ints,
}
_REQUIRED_KEYS = ("train_features", "train_labels", "test_features",
                  "test_labels")


def read_config_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _CONFIG_KEYS[key](val)
    for key in _REQUIRED_KEYS:
        if key not in values:
            raise ValueError(f"config is missing required key {key!r}")
    return values


def train_config_from_values(values: dict) -> training.TrainConfig:
    base = training.TrainConfig()
    relevance = RelevanceSpec(
        kind=values.get("relevance.kind", "hierarchical"),
        alpha=values.get("relevance.alpha", 1.0),
        weights=values.get("relevance.weights"))
    sur_cfg = SurrogateConfig(
        tau=values.get("tau", 0.01), rho=values.get("rho", 100.0),
        saturation_eps=values.get("saturation_eps", 1e-2),
        tau_star=values.get("tau_star", 0.01),
        k_values=values.get("rk_k_values", (1, 2, 4, 8)))
    decomp = DecompConfig(
        kind=values.get("dg", "none"), lam=values.get("lam", 0.1),
        pos_margin=values.get("pos_margin", 0.9),
        neg_margin=values.get("neg_margin", 0.6),
        proxy_temperature=values.get("proxy_temperature", 0.05))
    simple = {k: values[k] for k in
              ("encoder", "hidden", "embed_dim", "batch_size",
               "samples_per_class", "epochs", "lr", "beta1", "beta2",
               "adam_eps", "optimizer", "surrogate", "seed", "eval_k")
              if k in values}
    return replace(base, relevance=relevance, surrogate_cfg=sur_cfg,
                   decomp=decomp, **simple)


def _cmd_train(args) -> int:
    values = read_config_file(args.config)
    cfg = train_config_from_values(values)
    resolved = {k: getattr(cfg, k) for k in
                ("encoder", "hidden", "embed_dim", "batch_size",
                 "samples_per_class", "epochs", "lr", "beta1", "beta2",
                 "adam_eps", "optimizer", "surrogate", "relevance",
                 "surrogate_cfg", "decomp", "seed", "eval_k")}
    _print_config("train", {**{k: values[k] for k in _REQUIRED_KEYS},
                            **resolved})
    train_set = synth.read_dataset(values["train_features"],
                                   values["train_labels"])
    test_set = synth.read_dataset(values["test_features"],
                                  values["test_labels"])
    log = training.train(train_set, test_set, cfg)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "trainlog.csv")
    with open(log_path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(log.csv_rows())
    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    training.write_checkpoint(ckpt_path, log.checkpoint)
    final = log.final
    print(f"finished {cfg.epochs} epochs; "
          f"final train {log.target_metric} = {final.train_metric!r}, "
          f"test {log.target_metric} = "
          f"{final.test_report.mean(log.target_metric)!r}")
    print(f"wrote {log_path} and {ckpt_path}")
    return 0


def _random_problem(kind: str, n: int, rng: np.random.Generator) -> RankingProblem:
    scores = rng.uniform(-1.0, 1.0, size=n)
    if kind == "binary":
        rel = (rng.random(n) < 0.4).astype(float)
    else:
        rel = rng.choice([0.0, 0.25, 0.5, 1.0], size=n,
                         p=[0.5, 0.2, 0.2, 0.1])
    if rel.sum() == 0:
        rel[int(rng.integers(n))] = 1.0
    return RankingProblem.graded(scores, rel)


def _cmd_grad_check(args) -> int:
    _print_config("grad-check", vars(args))
    op, kind = LOSS_OPS[args.loss]
    if os.environ.get(_SABOTAGE_ENV):
        inner = op

        def op(problems, cfg):  # noqa: F811 - deliberate test corruption
            res = inner(problems, cfg)
            return LossResult(value=res.value,
                              grad_scores=tuple(-g for g in res.grad_scores))

    rng = np.random.default_rng(args.seed)
    cfg = SurrogateConfig()
    worst = 0.0
    for trial in range(args.trials):
        problem = _random_problem(kind, args.n, rng)
        err = finite_diff_check(op, problem, cfg)
        worst = max(worst, err)
        print(f"trial {trial}: max relative gradient error {err!r}")
    status = "PASS" if worst <= args.tol else "FAIL"
    print(f"{status}: worst error {worst!r} vs tolerance {args.tol!r}")
    return 0 if worst <= args.tol else 2


def _cmd_dg_report(args) -> int:
    _print_config("dg-report", vars(args))
    rows = experiments.dg_report(batch_sizes=_ints(args.batch_sizes),
                                 with_dg=args.with_dg, seed=args.seed,
                                 epochs=args.epochs)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(rows)
    print(f"wrote {args.out}")
    return 0


def _cmd_run_suite(args) -> int:
    _print_config("run-suite", vars(args))
    experiments.run_experiment_suite(args.name, args.out,
                                     seeds=_ints(args.seeds),
                                     epochs=args.epochs)
    print(f"wrote {args.out}")
    return 0


_HANDLERS = {
    "gen-synth": _cmd_gen_synth,
    "eval": _cmd_eval,
    "train": _cmd_train,
    "grad-check": _cmd_grad_check,
    "dg-report": _cmd_dg_report,
    "run-suite": _cmd_run_suite,
}


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
