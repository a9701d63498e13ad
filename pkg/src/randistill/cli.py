"""Config-driven experiment runner.

``randistill run config.json`` executes the configured methods for every
seed and writes ``results.csv`` (seed, method, split, accuracy,
mean_loglik, kl_perf), ``summary.json`` (mean and across-seed stderr per
method and split), per-seed distillation histories, and a verbatim copy of
the config into the output directory.  ``randistill check --suite
analytic|nn|e2e`` replays the self-check suites.

Exit codes: 0 success, 1 check failure, 2 invalid config, 3 training
diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import distillation, methods, nn
from .evaluation import csv_row
from .families import FamilyError, FamilySpec, sample_family
from .nn import TrainingDivergedError
from .rng import child_seed

SPLIT_ORDER = ("heldout_ptr", "heldout_randomized", "test")


class ConfigError(ValueError):
    pass


def _opt_from(doc: dict, defaults: nn.OptConfig) -> nn.OptConfig:
    known = {
        "learning_rate",
        "beta1",
        "beta2",
        "eps",
        "epochs",
        "batch_size",
        "weight_decay",
        "seed",
        "algorithm",
    }
    bad = set(doc) - known
    if bad:
        raise ConfigError(f"unknown optimizer keys: {sorted(bad)}")
    return replace(defaults, **doc)


def _distill_from(doc: dict) -> distillation.DistillConfig:
    doc = dict(doc)
    kwargs = {}
    if "lambda" in doc:
        kwargs["lam"] = float(doc.pop("lambda"))
    for key in ("penalty", "critic_epochs_per_step", "predictive_steps", "batch_size", "reinit_critic"):
        if key in doc:
            kwargs[key] = doc.pop(key)
    for key, output in (
        ("rep_spec", "linear"),
        ("pred_head_spec", "logit"),
        ("critic_spec", "logit"),
        ("z_embed_spec", "linear"),
    ):
        if key in doc:
            kwargs[key] = nn.MlpSpec(tuple(doc.pop(key)), output=output)
    base = distillation.DistillConfig()
    if "opt" in doc:
        kwargs["opt"] = _opt_from(doc.pop("opt"), base.opt)
    if "critic_opt" in doc:
        kwargs["critic_opt"] = _opt_from(doc.pop("critic_opt"), base.critic_opt)
    if doc:
        raise ConfigError(f"unknown distill keys: {sorted(doc)}")
    return distillation.DistillConfig(**kwargs)


class ExperimentConfig:
    """Validated view of a run config document."""

    def __init__(self, doc: dict):
        try:
            fam = dict(doc["family"])
            self.family_kind = fam.pop("kind")
            self.train_a = float(doc.get("train_a", fam.get("a", 0.0)))
            self.test_a = float(doc.get("test_a", self.train_a))
            fam.pop("a", None)
            self.family_extra = fam
            self.n_train = int(doc["n_train"])
            self.n_test = int(doc["n_test"])
            raw_methods = doc["method"]
            self.methods = [raw_methods] if isinstance(raw_methods, str) else list(raw_methods)
            self.k_folds = int(doc.get("k_folds", 5))
            self.seeds = [int(s) for s in doc["seeds"]]
            self.output_dir = Path(doc["output_dir"])
        except KeyError as exc:
            raise ConfigError(f"missing config key: {exc.args[0]}") from exc
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.n_train < 10 or self.n_test < 1:
            raise ConfigError("n_train/n_test too small")
        unknown = set(self.methods) - set(methods.METHODS)
        if unknown:
            raise ConfigError(f"unknown methods: {sorted(unknown)}")
        if self.family_kind != "BinaryGaussian":
            raise ConfigError(
                "experiment runner supports the BinaryGaussian family; "
                "other families are exercised through the library API and check suites"
            )
        base_fit = nn.OptConfig(learning_rate=1e-2, epochs=100, batch_size=1000)
        self.weight_spec = nn.MlpSpec(tuple(doc.get("weight_model", {}).get("layer_sizes", (1, 16, 1))))
        self.weight_opt = _opt_from(
            {k: v for k, v in doc.get("weight_opt", {}).items()}, base_fit
        )
        self.erm_opt = _opt_from({k: v for k, v in doc.get("erm_opt", {}).items()}, base_fit)
        self.distill = _distill_from(doc.get("distill", {}))

    def train_spec(self) -> FamilySpec:
        return FamilySpec(self.family_kind, a=self.train_a, **self.family_extra)

    def test_spec(self) -> FamilySpec:
        return FamilySpec(self.family_kind, a=self.test_a, **self.family_extra)


def run_one_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[list[str]], dict[str, list]]:
    """(results rows, method -> distill history) for one seed."""
    train = sample_family(cfg.train_spec(), cfg.n_train, child_seed(seed, 100))
    test = sample_family(cfg.test_spec(), cfg.n_test, child_seed(seed, 200))
    rows: list[list[str]] = []
    histories: dict[str, list] = {}
    for method in cfg.methods:
        if method == "erm":
            result = methods.run_erm(train, test, seed, opt=cfg.erm_opt)
        elif method == "reweight_nurd":
            result = methods.run_reweight_nurd(
                train,
                test,
                seed,
                k_folds=cfg.k_folds,
                weight_spec=cfg.weight_spec,
                weight_opt=cfg.weight_opt,
                cfg=cfg.distill,
            )
        elif method == "generative_nurd":
            result = methods.run_generative_nurd(train, test, seed, cfg=cfg.distill)
        else:
            result = methods.run_oracle_linear(train, test, seed)
        for split in SPLIT_ORDER:
            if split in result.reports:
                rows.append(csv_row(result.reports[split], seed, method, split))
        if result.distill is not None:
            histories[method] = result.distill.history
    return rows, histories


def _summarize(rows: list[list[str]]) -> dict:
    groups: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        groups.setdefault((row[1], row[2]), []).append(float(row[3]))
    summary = {}
    for (method, split), accs in sorted(groups.items()):
        arr = np.asarray(accs)
        stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        summary.setdefault(method, {})[split] = {
            "mean_accuracy": float(arr.mean()),
            "stderr": stderr,
            "n_seeds": int(arr.size),
        }
    return summary


def _run_seed_star(args):
    return run_one_seed(*args)


def cmd_run(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    try:
        doc = json.loads(config_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.out:
        doc["output_dir"] = args.out
    if args.seed_override:
        doc["seeds"] = [int(s) for s in args.seed_override.split(",")]
    try:
        cfg = ExperimentConfig(doc)
    except (ConfigError, FamilyError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(config_path, out / config_path.name)

    try:
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                per_seed = list(pool.map(_run_seed_star, [(cfg, s) for s in cfg.seeds]))
        else:
            per_seed = [run_one_seed(cfg, s) for s in cfg.seeds]
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3

    rows = [row for seed_rows, _ in per_seed for row in seed_rows]
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "method", "split", "accuracy", "mean_loglik", "kl_perf"])
        writer.writerows(rows)
    for (seed_rows, histories), seed in zip(per_seed, cfg.seeds):
        for method, history in histories.items():
            distillation.write_history_csv(history, out / f"history_{method}_seed{seed}.csv")
    (out / "summary.json").write_text(json.dumps(_summarize(rows), indent=2, sort_keys=True))
    print(f"wrote {out / 'results.csv'} ({len(rows)} rows)")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    from . import checks

    items = checks.run_suite(args.suite, Path(args.out) if args.out else None)
    failed = 0
    for item in items:
        status = "PASS" if item.passed else "FAIL"
        failed += not item.passed
        print(f"[{status}] {item.name}: {item.detail}")
    print(f"{len(items) - failed}/{len(items)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--seed-override", help="comma-separated seeds replacing the config's")
    p_run.add_argument("--out", help="output directory override")
    p_run.add_argument("--workers", type=int, default=1, help="seed-level worker processes")
    p_run.set_defaults(func=cmd_run)

    p_check = sub.add_parser("check", help="run a self-check suite")
    p_check.add_argument("--suite", required=True, choices=("analytic", "nn", "e2e"))
    p_check.add_argument("--out", help="directory for plot-ready CSV exports")
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
