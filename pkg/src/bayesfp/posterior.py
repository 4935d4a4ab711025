"""Renormalised model posteriors, inclusion probabilities and model-averaged prediction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .evidence import Evidence, EvidenceEvaluator, Model, PriorConfig
from .likelihoods import FitResult
from .transforms import DomainError, Feature, evaluate_feature, parse_feature

PREDICT_MODES = ("model-averaged", "mpm", "best")
REPORT_INCLUSION_FLOOR = 0.1


class PosteriorError(ValueError):
    pass


@dataclass
class PosteriorSummary:
    """Models of the visit log with their renormalised weights (descending)."""

    models: List[Tuple[Model, float]]
    evidence: Dict[str, Evidence]
    inclusion: Dict[Feature, float]
    variable_inclusion: Dict[str, float]
    mpm: Model
    best: Model
    groups: Dict[str, str] = field(default_factory=dict)

    def weight_of(self, m: Model) -> float:
        for mm, w in self.models:
            if mm.signature == m.signature:
                return w
        return 0.0


def _group(name: str, groups: Mapping[str, str]) -> str:
    return groups.get(name, name)


def renormalize(visits, groups: Optional[Mapping[str, str]] = None) -> PosteriorSummary:
    """Log-sum-exp renormalisation over every logged model.

    ``visits`` is a :class:`~bayesfp.search.VisitLog` or any iterable of
    ``(Model, Evidence)`` pairs. ``groups`` maps column names to variable
    names (for example expanded categorical indicators to their source).
    """
    groups = dict(groups or {})
    items = list(visits.items()) if hasattr(visits, "items") else list(visits)
    if not items:
        raise PosteriorError("no valid models visited")
    lps = np.array([ev.log_posterior for _, ev in items], dtype=float)
    finite = np.isfinite(lps)
    if not finite.any():
        raise PosteriorError("no valid models visited")
    weights = np.zeros(len(items))
    weights[finite] = np.exp(lps[finite] - logsumexp(lps[finite]))
    weights /= weights.sum()
    order = sorted(range(len(items)), key=lambda i: (-weights[i], items[i][0].signature))
    models = [(items[i][0], float(weights[i])) for i in order]
    evidence = {items[i][0].signature: items[i][1] for i in order}
    inclusion: Dict[Feature, float] = {}
    variable: Dict[str, float] = {}
    for m, w in models:
        for f in m.features:
            inclusion[f] = inclusion.get(f, 0.0) + w
        for v in {_group(p, groups) for f in m.features for p in f.predictors}:
            variable[v] = variable.get(v, 0.0) + w
    inclusion = {f: min(p, 1.0) for f, p in inclusion.items()}
    variable = {v: min(p, 1.0) for v, p in variable.items()}
    best = models[0][0]
    summary = PosteriorSummary(models, evidence, inclusion, variable, Model(), best, groups)
    summary.mpm = median_probability_model(summary)
    return summary


def median_probability_model(summary_or_inclusion) -> Model:
    """Features whose inclusion probability is strictly above one half."""
    inc = getattr(summary_or_inclusion, "inclusion", summary_or_inclusion)
    return Model(f if isinstance(f, Feature) else parse_feature(f) for f, p in inc.items() if p > 0.5)


def _linear_predictor(fit: FitResult, m: Model, ds) -> np.ndarray:
    beta = np.asarray(fit.coefficients)
    out = np.full(ds.n, beta[0] if fit.has_intercept else 0.0)
    offset = 1 if fit.has_intercept else 0
    for k, f in enumerate(m.features):
        try:
            col = evaluate_feature(f, ds)
        except DomainError as exc:
            raise DomainError(f"cannot evaluate feature {f} on new data: {exc}") from None
        out = out + beta[offset + k] * col
    return out


def _weighted_models(summary: PosteriorSummary, mode: str, min_weight: float):
    if mode not in PREDICT_MODES:
        raise ValueError(f"mode must be one of {PREDICT_MODES}")
    if mode == "best":
        return [(summary.best, 1.0)]
    if mode == "mpm":
        return [(summary.mpm, 1.0)]
    return [(m, w) for m, w in summary.models if w > min_weight]


def _fit_for(summary: PosteriorSummary, m: Model, refit: Optional[EvidenceEvaluator]) -> FitResult:
    ev = summary.evidence.get(m.signature)
    if ev is not None and ev.fit is not None:
        return ev.fit
    if refit is None:
        raise PosteriorError(f"no fitted coefficients for model [{m.signature}]; pass a training evaluator")
    return refit.fit(m)


def predict(
    summary: PosteriorSummary,
    ds_new,
    family: Optional[str] = None,
    mode: str = "model-averaged",
    refit: Optional[EvidenceEvaluator] = None,
    min_weight: float = 1e-12,
) -> np.ndarray:
    """Model-averaged (or single-model) prediction on ``ds_new``.

    Gaussian gives the mean response, Bernoulli the probability of class 1
    and time-to-event the log relative risk. ``ds_new`` must carry the
    training shifts (see :meth:`Dataset.with_shifts`). Models with weight at
    or below ``min_weight`` are skipped; pass 0 to use every model.
    """
    family = family or ds_new.family
    chosen = _weighted_models(summary, mode, min_weight)
    total = sum(w for _, w in chosen)
    out = np.zeros(ds_new.n)
    for m, w in chosen:
        lp = _linear_predictor(_fit_for(summary, m, refit), m, ds_new)
        if family == "bernoulli":
            lp = 0.5 * (1.0 + np.tanh(0.5 * lp))
        out += w * lp
    return out / total


def classify(prob: np.ndarray) -> np.ndarray:
    return (np.asarray(prob) >= 0.5).astype(int)


def breslow_baseline(lp_train, times, status) -> Tuple[np.ndarray, np.ndarray]:
    """Baseline cumulative hazard at the distinct event times."""
    times = np.asarray(times, float)
    status = np.asarray(status, float)
    risk = np.exp(np.asarray(lp_train, float))
    event_times = np.unique(times[status == 1])
    hazard = np.empty(len(event_times))
    for k, t in enumerate(event_times):
        hazard[k] = status[times == t].sum() / risk[times >= t].sum()
    return event_times, np.cumsum(hazard)


def _step_eval(knots, values, grid, at_zero=0.0):
    idx = np.searchsorted(knots, grid, side="right") - 1
    return np.where(idx >= 0, values[np.maximum(idx, 0)], at_zero)


def survival_curve(
    summary: PosteriorSummary,
    ds_train,
    ds_new,
    grid: Sequence[float],
    mode: str = "model-averaged",
    min_weight: float = 1e-12,
) -> np.ndarray:
    """Survival matrix (subjects x grid) averaged over model weights.

    Each model uses its own Breslow baseline computed on ``ds_train`` at its
    fitted coefficients. Beyond the last training event the curve stays flat.
    """
    if ds_train.family != "timetoevent":
        raise PosteriorError("survival curves need a time-to-event response")
    grid = np.asarray(grid, float)
    chosen = _weighted_models(summary, mode, min_weight)
    total = sum(w for _, w in chosen)
    refit = EvidenceEvaluator(ds_train, PriorConfig())
    out = np.zeros((ds_new.n, len(grid)))
    for m, w in chosen:
        fit = _fit_for(summary, m, refit)
        lp_tr = _linear_predictor(fit, m, ds_train)
        knots, cumhaz = breslow_baseline(lp_tr, ds_train.response.y, ds_train.response.status)
        base = _step_eval(knots, cumhaz, grid)
        lp_new = _linear_predictor(fit, m, ds_new)
        out += w * np.exp(-np.outer(np.exp(lp_new), base))
    return out / total


def report_dict(summary: PosteriorSummary, extra: Optional[dict] = None) -> dict:
    """JSON-ready report; zero-weight models are dropped and inclusions below 0.1 truncated."""
    models = []
    for m, w in summary.models:
        if w <= 0.0:
            continue
        ev = summary.evidence[m.signature]
        models.append({
            "features": [str(f) for f in m.features],
            "log_marglik": ev.log_marglik,
            "log_prior": ev.log_prior,
            "weight": w,
        })
    inc = sorted(((str(f), p) for f, p in summary.inclusion.items() if p >= REPORT_INCLUSION_FLOOR),
                 key=lambda kv: (-kv[1], kv[0]))
    var = sorted(((v, p) for v, p in summary.variable_inclusion.items() if p >= REPORT_INCLUSION_FLOOR),
                 key=lambda kv: (-kv[1], kv[0]))
    out = {
        "models": models,
        "inclusion": dict(inc),
        "variable_inclusion": dict(var),
        "mpm": [str(f) for f in summary.mpm.features],
        "best": [str(f) for f in summary.best.features],
    }
    if extra:
        out.update(extra)
    return out


def summary_from_report(report: Mapping) -> PosteriorSummary:
    """Rebuild a summary (without fits) from a report written by :func:`report_dict`."""
    items = []
    for entry in report["models"]:
        m = Model(parse_feature(t) for t in entry["features"])
        lm = entry["log_marglik"]
        items.append((m, Evidence(float(entry["log_prior"]), float(lm), None)))
    return renormalize(items)


def write_report(path: str, report: Mapping) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, allow_nan=True)
        fh.write("\n")
