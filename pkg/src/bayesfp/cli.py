"""Command-line interface: ``fit``, ``predict``, ``evaluate`` and ``simulate``."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .data import FAMILIES, DataError, Dataset, load_csv, split
from .evidence import EvidenceEvaluator, Model, PriorConfig
from .metrics import (CensoringModel, METRIC_KEYS, classification_metrics, clean, concordance_index,
                      default_grid, integrated_brier_score, regression_metrics)
from .posterior import (PREDICT_MODES, classify, predict, renormalize, report_dict, summary_from_report,
                        survival_curve)
from .search import FP_OPERATORS, INTERACTION_OPERATORS, OperatorProbs, SearchConfig, run_parallel
from .simulation import (ScenarioGrid, aggregate, best_posterior_trace, load_predictors, run_scenario,
                         write_aggregate, write_results, write_trace)

log = logging.getLogger("bayesfp")

EXIT_CONFIG = 2
EXIT_RUNTIME = 1

SECTIONS = {
    "data": {"path", "schema", "response", "status", "family"},
    "split": {"train_fraction", "train_size", "seed", "stratify_on_status"},
    "search": {
        "population_size", "q", "d", "I", "s0", "s1", "s2", "fp_degree", "interactions",
        "iterations", "evolution_period", "last_evolution",
        "n_init", "n_expl", "n_final", "n_populations",
        "operators", "rho_jump", "eps", "L", "w_min", "delta", "n_chains", "seed", "pinned",
    },
    "predict": {"mode", "test_path"},
    "simulation": {"predictors", "grid", "replicates", "seed", "ideal"},
}
TOP_LEVEL = set(SECTIONS) | {"out", "ideal", "name"}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class RunConfig:
    raw: Dict[str, Any]
    search: SearchConfig
    out: str
    predict_mode: str = "model-averaged"
    ideal: bool = False

    @property
    def data(self) -> Dict[str, Any]:
        return self.raw.get("data", {})


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: Dict[str, Any], assignment: str) -> None:
    """``section.key=value`` with JSON-parsed values (bare words stay strings)."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a section")
    node[parts[-1]] = _parse_scalar(value)


def _check_keys(cfg: Dict[str, Any]) -> None:
    for key in cfg:
        if key not in TOP_LEVEL:
            raise ConfigError(f"unknown config key {key!r}")
    for section, allowed in SECTIONS.items():
        body = cfg.get(section)
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key in body:
            if key not in allowed:
                raise ConfigError(f"unknown config key {section}.{key}")


def build_search_config(section: Dict[str, Any], ideal_pins: Sequence[str] = ()) -> SearchConfig:
    s = dict(section)
    interactions = bool(s.pop("interactions", False))
    prior_kw = {}
    for src, dst in (("q", "q"), ("d", "d"), ("s0", "s0"), ("s1", "s1"), ("s2", "s2")):
        if src in s:
            v = s.pop(src)
            prior_kw[dst] = float("inf") if dst == "d" and v in (None, "inf") else v
    order_cap = s.pop("I", 4 if interactions else 1)
    try:
        prior = PriorConfig(interactions=interactions, order_cap=int(order_cap), **prior_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"search prior: {exc}") from None
    ops = s.pop("operators", None)
    if ops is None:
        operators = INTERACTION_OPERATORS if interactions else FP_OPERATORS
    else:
        try:
            operators = OperatorProbs(**ops)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"search.operators: {exc}") from None
    kw: Dict[str, Any] = {"prior": prior, "operators": operators}
    if "L" in s:
        kw["greedy_steps"] = s.pop("L")
    pinned = tuple(s.pop("pinned", ())) + tuple(ideal_pins)
    kw["pinned"] = tuple(dict.fromkeys(pinned))
    schedule = {k: s.pop(k) for k in ("iterations", "evolution_period", "last_evolution") if k in s}
    kw.update(s)
    try:
        if schedule:
            if len(schedule) != 3:
                raise ConfigError("search: iterations, evolution_period and last_evolution go together")
            return SearchConfig.from_schedule(schedule["iterations"], schedule["evolution_period"],
                                              schedule["last_evolution"], **kw)
        return SearchConfig(**kw)
    except TypeError as exc:
        raise ConfigError(f"search: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"search: {exc}") from None


def load_config(path: Optional[str], overrides: Sequence[str] = (), seed: Optional[int] = None,
                chains: Optional[int] = None, out: Optional[str] = None, ideal: bool = False,
                interactions: bool = False) -> RunConfig:
    raw: Dict[str, Any] = {}
    if path:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        base = os.path.dirname(os.path.abspath(path))
        for section, key in (("data", "path"), ("simulation", "predictors"), ("predict", "test_path")):
            v = raw.get(section, {}).get(key) if isinstance(raw.get(section), dict) else None
            if isinstance(v, str) and not os.path.isabs(v):
                raw[section][key] = os.path.normpath(os.path.join(base, v))
    raw = copy.deepcopy(raw)
    for assignment in overrides:
        apply_override(raw, assignment)
    if seed is not None:
        raw.setdefault("search", {})["seed"] = seed
    if chains is not None:
        raw.setdefault("search", {})["n_chains"] = chains
    if interactions:
        raw.setdefault("search", {})["interactions"] = True
    if out is not None:
        raw["out"] = out
    if ideal:
        raw["ideal"] = True
    _check_keys(raw)
    family = raw.get("data", {}).get("family", "gaussian")
    if family not in FAMILIES:
        raise ConfigError(f"data.family: unknown family {family!r}; expected one of {FAMILIES}")
    mode = raw.get("predict", {}).get("mode", "model-averaged")
    if mode not in PREDICT_MODES:
        raise ConfigError(f"predict.mode: must be one of {PREDICT_MODES}")
    search = build_search_config(raw.get("search", {}))
    return RunConfig(raw, search, raw.get("out", "out"), mode, bool(raw.get("ideal", False)))


def _config_seed(rc: RunConfig) -> int:
    return int(rc.search.seed)


# ---------------------------------------------------------------------------
# Data helpers
# ---------------------------------------------------------------------------

def load_dataset(rc: RunConfig, path: Optional[str] = None) -> Dataset:
    d = rc.data
    for key in ("path", "schema", "response"):
        if key not in d:
            raise ConfigError(f"data.{key} is required")
    return load_csv(path or d["path"], d["schema"], d["response"], d.get("family", "gaussian"), d.get("status"))


def train_test(rc: RunConfig, ds: Dataset):
    sp = rc.raw.get("split")
    if not sp:
        return ds, None
    if "train_size" in sp:
        fraction = (int(sp["train_size"]) + 0.5) / ds.n
    elif "train_fraction" in sp:
        fraction = float(sp["train_fraction"])
    else:
        raise ConfigError("split needs train_size or train_fraction")
    seed = int(sp.get("seed", _config_seed(rc)))
    train, test = split(ds, fraction, seed, bool(sp.get("stratify_on_status", False)))
    return train, test.with_shifts(train.shifts)


def workers_for(n_chains: int) -> int:
    return max(1, min(n_chains, os.cpu_count() or 1))


def fit_summary(rc: RunConfig, train: Dataset):
    evaluator = EvidenceEvaluator(train, rc.search.prior)
    visits = run_parallel(train, rc.search, workers=workers_for(rc.search.n_chains), evaluator=evaluator)
    groups = {c.name: c.group for c in train.columns}
    return renormalize(visits, groups), evaluator


def metric_block(summary, train: Dataset, test: Dataset, mode: str, refit=None):
    """Predictions and the family-appropriate metrics on ``test``."""
    metrics = {k: None for k in METRIC_KEYS}
    family = train.family
    pred = predict(summary, test, family, mode, refit=refit)
    columns = {"prediction": pred}
    if family == "gaussian":
        rmse, mae, corr = regression_metrics(pred, test.response.y)
        metrics.update(rmse=clean(rmse), mae=clean(mae), corr=clean(corr))
    elif family == "bernoulli":
        cls = classify(pred)
        columns["class"] = cls
        acc, fnr, fpr = classification_metrics(cls, test.response.y)
        metrics.update(acc=clean(acc), fnr=clean(fnr), fpr=clean(fpr))
    else:
        cens = CensoringModel(train.response.y, train.response.status)
        grid = default_grid(test.response.y, test.response.status)
        surv = survival_curve(summary, train, test, grid, mode)
        metrics["ibs"] = clean(integrated_brier_score(surv, test.response.y, test.response.status, cens, grid))
        metrics["cindex"] = clean(concordance_index(pred, test.response.y, test.response.status, cens))
    return columns, metrics


def inclusion_table(summary) -> str:
    """Plain-text inclusion table split into linear and nonlinear effects."""
    linear, nonlinear = [], []
    for f, p in sorted(summary.inclusion.items(), key=lambda kv: (-kv[1], str(kv[0]))):
        if p < 0.1:
            continue
        is_linear = f.order == 1 and f.fp_classes == (0,)
        (linear if is_linear else nonlinear).append((str(f), p))
    lines = [f"{'Linear effect':<40} {'Inclusion':>9}"]
    lines += [f"{name:<40} {p:9.4f}" for name, p in linear]
    lines += ["", f"{'Nonlinear effect':<40} {'Inclusion':>9}"]
    lines += [f"{name:<40} {p:9.4f}" for name, p in nonlinear]
    lines += ["", f"{'Variable':<40} {'Inclusion':>9}"]
    for v, p in sorted(summary.variable_inclusion.items(), key=lambda kv: (-kv[1], kv[0])):
        if p >= 0.1:
            lines.append(f"{v:<40} {p:9.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Output transaction: everything or nothing
# ---------------------------------------------------------------------------

class Outputs:
    """Collects files under ``out`` and removes them all if the command fails."""

    def __init__(self, out: str):
        self.out = out
        self.written: List[str] = []

    def path(self, name: str) -> str:
        os.makedirs(self.out, exist_ok=True)
        p = os.path.join(self.out, name)
        self.written.append(p)
        return p

    def write_json(self, name: str, obj) -> str:
        p = self.path(name)
        with open(p, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=False)
            fh.write("\n")
        return p

    def write_text(self, name: str, text: str) -> str:
        p = self.path(name)
        with open(p, "w") as fh:
            fh.write(text)
        return p

    def write_columns(self, name: str, columns: Dict[str, np.ndarray]) -> str:
        p = self.path(name)
        keys = list(columns)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for row in zip(*(columns[k] for k in keys)):
                w.writerow([repr(float(v)) for v in row])
        return p

    def rollback(self) -> None:
        for p in self.written:
            if os.path.exists(p):
                os.remove(p)


def _report_extra(rc: RunConfig, train: Dataset) -> dict:
    return {
        "family": train.family,
        "n_train": train.n,
        "shifts": train.shifts,
        "config": rc.raw,
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(rc: RunConfig, outputs: Outputs) -> dict:
    ds = load_dataset(rc)
    train, _ = train_test(rc, ds)
    summary, _ = fit_summary(rc, train)
    report = report_dict(summary, _report_extra(rc, train))
    outputs.write_json("report.json", report)
    outputs.write_text("inclusion.txt", inclusion_table(summary))
    return report


def cmd_evaluate(rc: RunConfig, outputs: Outputs) -> dict:
    ds = load_dataset(rc)
    train, test = train_test(rc, ds)
    if test is None:
        raise ConfigError("evaluate needs a split section")
    summary, evaluator = fit_summary(rc, train)
    columns, metrics = metric_block(summary, train, test, rc.predict_mode, refit=evaluator)
    report = report_dict(summary, _report_extra(rc, train))
    report["metrics"] = metrics
    outputs.write_json("report.json", report)
    outputs.write_text("inclusion.txt", inclusion_table(summary))
    outputs.write_columns("predictions.csv", columns)
    outputs.write_json("metrics.json", metrics)
    return metrics


def cmd_predict(rc: RunConfig, report_path: str, test_path: Optional[str], outputs: Outputs) -> dict:
    with open(report_path) as fh:
        report = json.load(fh)
    ds = load_dataset(rc)
    train, split_test = train_test(rc, ds)
    if report.get("family", train.family) != train.family:
        raise DataError(f"report family {report.get('family')!r} does not match data family {train.family!r}")
    test_path = test_path or rc.raw.get("predict", {}).get("test_path")
    if test_path:
        test = load_dataset(rc, test_path)
    elif split_test is not None:
        test = split_test
    else:
        raise ConfigError("predict needs --test, predict.test_path or a split section")
    summary = summary_from_report(report)
    needed = {p for m, _ in summary.models for f in m.features for p in f.predictors}
    missing = sorted(needed - set(test.names))
    if missing:
        raise DataError(f"test data lacks columns used by the report: {missing}")
    test = test.with_shifts(report.get("shifts", train.shifts))
    refit = EvidenceEvaluator(train, rc.search.prior)
    columns, metrics = metric_block(summary, train, test, rc.predict_mode, refit=refit)
    outputs.write_columns("predictions.csv", columns)
    outputs.write_json("metrics.json", metrics)
    return metrics


def cmd_simulate(rc: RunConfig, grid_name: Optional[str], outputs: Outputs) -> list:
    sim = rc.raw.get("simulation", {})
    if "predictors" not in sim:
        raise ConfigError("simulation.predictors is required")
    grid = ScenarioGrid.named(grid_name or sim.get("grid", "default"), int(sim.get("replicates", 10)),
                              int(sim.get("seed", _config_seed(rc))))
    ideal = rc.ideal or bool(sim.get("ideal", False))
    results = run_scenario(load_predictors(sim["predictors"]), grid, rc.search, ideal)
    write_results(results, outputs.path("scenario_results.csv"))
    write_trace(best_posterior_trace(results), outputs.path("best_posterior_trace.csv"))
    agg = aggregate(results)
    write_aggregate(agg, outputs.path("aggregate.json"))
    return agg


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override search.seed")
    common.add_argument("--chains", type=int, help="override search.n_chains")
    common.add_argument("--out", help="output directory")
    common.add_argument("--ideal", action="store_true", help="pin the true model into every population")
    common.add_argument("--interactions", action="store_true", help="enable multiplication of features")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. search.q=10")
    common.add_argument("--quiet", action="store_true", help="only log warnings")

    parser = argparse.ArgumentParser(prog="bayesfp", description="Bayesian fractional polynomial search")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="search models and write report.json")
    sub.add_parser("evaluate", parents=[common], help="fit on the training split and score the test split")
    p = sub.add_parser("predict", parents=[common], help="predict from an existing report")
    p.add_argument("--report", required=True, help="report.json from fit")
    p.add_argument("--test", help="CSV with the same schema as the training data")
    s = sub.add_parser("simulate", parents=[common], help="run the ART simulation scenarios")
    s.add_argument("--grid", choices=("default", "full"), help="noise grid")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        rc = load_config(args.config, args.overrides, args.seed, args.chains, args.out, args.ideal,
                         args.interactions)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outputs = Outputs(rc.out)
    try:
        if args.command == "fit":
            cmd_fit(rc, outputs)
        elif args.command == "evaluate":
            cmd_evaluate(rc, outputs)
        elif args.command == "predict":
            cmd_predict(rc, args.report, args.test, outputs)
        else:
            cmd_simulate(rc, args.grid, outputs)
    except ConfigError as exc:
        outputs.rollback()
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValueError, OSError) as exc:
        outputs.rollback()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except BaseException:
        outputs.rollback()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
