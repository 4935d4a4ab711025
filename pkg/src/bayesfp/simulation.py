"""Simulation study on the ART design: response generation, scenario runs and aggregation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import Dataset, ResponseSpec, load_csv
from .evidence import EvidenceEvaluator, Model
from .metrics import SelectionTruth, selection_rates
from .posterior import renormalize
from .search import SearchConfig, run_parallel
from .transforms import evaluate_feature, parse_feature

log = logging.getLogger(__name__)

TRUE_FEATURES = (
    "x1^(0.5)", "x1", "x3^(-0.5)", "x3^(-0.5)*log(x3)", "x4a",
    "x5^(-1)", "log(x6)", "x8", "x10",
)
FULL_GRID = (100.0, 50.0, 25.0, 10.0, 1.0, 0.1, 0.01) + tuple(10.0 ** -k for k in range(3, 11))
DEFAULT_GRID = (10.0, 1.0, 0.01, 1e-4, 1e-10)

ART_SCHEMA = {
    "x1": "continuous",
    "x2": "binary",
    "x3": "continuous",
    "x4": {"kind": "categorical", "levels": ["1", "2", "3"], "names": ["x4a", "x4b"]},
    "x5": "continuous",
    "x6": "continuous",
    "x7": "continuous",
    "x8": "binary",
    "x9": {"kind": "categorical", "levels": ["1", "2", "3"], "names": ["x9a", "x9b"]},
    "x10": "continuous",
}

RESULT_COLUMNS = ("sigma2", "replicate", "tpr_f", "fdr_f", "tpr_v", "fdr_v", "best_lp", "true_lp")


@dataclass(frozen=True)
class TrueModelSpec:
    """The data-generating model: listed features, every coefficient equal to one."""

    features: tuple = TRUE_FEATURES

    @property
    def parsed(self):
        return tuple(parse_feature(t) for t in self.features)

    @property
    def model(self) -> Model:
        return Model(self.parsed)

    def mean(self, ds: Dataset) -> np.ndarray:
        out = np.zeros(ds.n)
        for f in self.parsed:
            out += evaluate_feature(f, ds)
        return out

    def truth(self) -> SelectionTruth:
        return SelectionTruth(self.parsed)


@dataclass(frozen=True)
class ScenarioGrid:
    variances: tuple = DEFAULT_GRID
    replicates: int = 10
    seed: int = 1

    def __post_init__(self):
        if any(v <= 0 for v in self.variances):
            raise ValueError("noise variances must be positive")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")

    @classmethod
    def named(cls, name: str, replicates: int = 10, seed: int = 1) -> "ScenarioGrid":
        grids = {"default": DEFAULT_GRID, "full": FULL_GRID}
        if name not in grids:
            raise ValueError(f"grid must be one of {sorted(grids)}")
        return cls(grids[name], replicates, seed)


def load_predictors(path: str) -> Dataset:
    """ART predictor matrix with a placeholder response."""
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh))]
    missing = [c for c in ART_SCHEMA if c not in header]
    if missing:
        raise ValueError(f"predictor file lacks ART columns {missing}")
    return load_csv(path, ART_SCHEMA, None)


def generate_response(predictors: Dataset, sigma2: float, seed, truth: TrueModelSpec = TrueModelSpec()) -> Dataset:
    """Replace the response with the true mean plus N(0, sigma2) noise."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    for name in ("x1", "x3", "x4a", "x5", "x6", "x8", "x10"):
        if name not in predictors:
            raise ValueError(f"predictors lack ART column {name!r}")
    rng = np.random.default_rng(seed)
    y = truth.mean(predictors) + math.sqrt(sigma2) * rng.standard_normal(predictors.n)
    return Dataset(predictors.columns, ResponseSpec("gaussian", y))


@dataclass
class ReplicateResult:
    sigma2: float
    replicate: int
    tpr_f: float
    fdr_f: float
    tpr_v: float
    fdr_v: float
    best_lp: float
    true_lp: float
    true_in_log: bool = False
    mpm: List[str] = field(default_factory=list)

    def row(self):
        return [getattr(self, c) for c in RESULT_COLUMNS]


def run_replicate(predictors: Dataset, sigma2: float, k: int, r: int, grid: ScenarioGrid,
                  cfg: SearchConfig, ideal: bool, truth: TrueModelSpec = TrueModelSpec()) -> ReplicateResult:
    ds = generate_response(predictors, sigma2, [grid.seed, k, r])
    rcfg = replace(cfg, seed=int(np.random.SeedSequence([grid.seed, k, r]).generate_state(1)[0]),
                   pinned=truth.features if ideal else cfg.pinned)
    evaluator = EvidenceEvaluator(ds, rcfg.prior)
    visits = run_parallel(ds, rcfg, evaluator=evaluator)
    groups = {c.name: c.group for c in ds.columns}
    summary = renormalize(visits, groups)
    t = truth.truth()
    tpr_f, fdr_f = selection_rates(summary.mpm, t, "functional")
    # variable level compares source variables, so x4a counts as x4
    sel_vars = {groups.get(p, p) for f in summary.mpm.features for p in f.predictors}
    true_vars = {groups.get(p, p) for p in t.variables}
    tp = len(sel_vars & true_vars)
    tpr_v, fdr_v = tp / len(true_vars), (len(sel_vars) - tp) / max(len(sel_vars), 1)
    _, best = visits.best()
    true_lp = evaluator.evaluate(truth.model).log_posterior
    return ReplicateResult(sigma2, r, tpr_f, fdr_f, tpr_v, fdr_v, best.log_posterior, true_lp,
                           truth.model.signature in visits, [str(f) for f in summary.mpm.features])


def run_scenario(predictors, grid: ScenarioGrid, cfg: SearchConfig, ideal: bool = False,
                 truth: TrueModelSpec = TrueModelSpec()) -> List[ReplicateResult]:
    """Every (variance, replicate) pair; the design is fixed and only the noise is redrawn."""
    if isinstance(predictors, str):
        predictors = load_predictors(predictors)
    out = []
    for k, sigma2 in enumerate(grid.variances):
        for r in range(grid.replicates):
            res = run_replicate(predictors, sigma2, k, r, grid, cfg, ideal, truth)
            log.info("sigma2=%g replicate %d: tpr_f=%.2f fdr_f=%.2f best=%.3f true=%.3f",
                     sigma2, r, res.tpr_f, res.fdr_f, res.best_lp, res.true_lp)
            out.append(res)
    return out


def aggregate(results: Sequence[ReplicateResult]) -> List[dict]:
    """Mean selection rates per variance, in grid order."""
    order: List[float] = []
    groups: Dict[float, List[ReplicateResult]] = {}
    for r in results:
        if r.sigma2 not in groups:
            order.append(r.sigma2)
        groups.setdefault(r.sigma2, []).append(r)
    out = []
    for s in order:
        rs = groups[s]
        out.append({
            "sigma2": s,
            "replicates": len(rs),
            "tpr_functional": float(np.mean([r.tpr_f for r in rs])),
            "fdr_functional": float(np.mean([r.fdr_f for r in rs])),
            "tpr_variable": float(np.mean([r.tpr_v for r in rs])),
            "fdr_variable": float(np.mean([r.fdr_v for r in rs])),
            "true_model_visited": float(np.mean([r.true_in_log for r in rs])),
        })
    return out


def best_posterior_trace(results: Sequence[ReplicateResult]) -> List[tuple]:
    """Per variance: best visited log posterior (max over replicates) and the true model's on that replicate."""
    best: Dict[float, ReplicateResult] = {}
    for r in results:
        if r.sigma2 not in best or r.best_lp > best[r.sigma2].best_lp:
            best[r.sigma2] = r
    return [(s, r.best_lp, r.true_lp) for s, r in best.items()]


def write_results(results: Sequence[ReplicateResult], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r.row()])


def write_trace(trace: Sequence[tuple], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma2", "best_lp", "true_lp"])
        for row in trace:
            w.writerow([repr(float(v)) for v in row])


def write_aggregate(agg: Sequence[dict], path: str) -> None:
    with open(path, "w") as fh:
        json.dump({"scenarios": list(agg)}, fh, indent=2)
        fh.write("\n")
