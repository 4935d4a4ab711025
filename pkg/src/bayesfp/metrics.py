"""Selection, regression, classification and censored-survival metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .transforms import Feature, parse_feature

UNDEFINED = float("nan")
METRIC_KEYS = ("rmse", "mae", "corr", "acc", "fnr", "fpr", "ibs", "cindex",
               "tpr_functional", "fdr_functional", "tpr_variable", "fdr_variable")


@dataclass(frozen=True)
class SelectionTruth:
    features: FrozenSet[Feature]

    def __init__(self, features: Iterable):
        fs = frozenset(f if isinstance(f, Feature) else parse_feature(f) for f in features)
        object.__setattr__(self, "features", fs)

    @property
    def variables(self) -> FrozenSet[str]:
        return frozenset(p for f in self.features for p in f.predictors)


def selection_rates(selected, truth: SelectionTruth, level: str = "functional") -> Tuple[float, float]:
    """(TPR, FDR) of a selected model; an empty selection has FDR 0."""
    feats = frozenset(getattr(selected, "features", selected))
    if level == "functional":
        sel, true = feats, truth.features
    elif level == "variable":
        sel = frozenset(p for f in feats for p in f.predictors)
        true = truth.variables
    else:
        raise ValueError("level must be 'functional' or 'variable'")
    tp = len(sel & true)
    tpr = tp / len(true) if true else UNDEFINED
    fdr = (len(sel) - tp) / max(len(sel), 1)
    return tpr, fdr


def regression_metrics(yhat, y) -> Tuple[float, float, float]:
    yhat = np.asarray(yhat, float)
    y = np.asarray(y, float)
    if yhat.shape != y.shape:
        raise ValueError("prediction and response lengths differ")
    err = yhat - y
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    if len(y) < 2 or np.std(y) == 0 or np.std(yhat) == 0:
        corr = UNDEFINED
    else:
        corr = float(np.corrcoef(yhat, y)[0, 1])
    return rmse, mae, corr


def classification_metrics(yhat, y) -> Tuple[float, float, float]:
    yhat = np.asarray(yhat).astype(int)
    y = np.asarray(y).astype(int)
    if yhat.shape != y.shape:
        raise ValueError("prediction and response lengths differ")
    acc = float(np.mean(yhat == y))
    pos, neg = y == 1, y == 0
    fnr = float(np.mean(yhat[pos] == 0)) if pos.any() else UNDEFINED
    fpr = float(np.mean(yhat[neg] == 1)) if neg.any() else UNDEFINED
    return acc, fnr, fpr


class CensoringModel:
    """Kaplan-Meier estimate of the censoring survival function (status reversed)."""

    def __init__(self, times, status):
        times = np.asarray(times, float)
        cens = 1.0 - np.asarray(status, float)
        self.knots = np.unique(times[cens == 1])
        surv = np.empty(len(self.knots))
        s = 1.0
        for k, t in enumerate(self.knots):
            at_risk = np.sum(times >= t)
            s *= 1.0 - np.sum(cens[times == t]) / at_risk
            surv[k] = s
        self.values = surv
        # leading 1.0 covers times before the first censoring (and the no-censoring case)
        self._table = np.concatenate([[1.0], surv])

    def __call__(self, t) -> np.ndarray:
        """G(t), right-continuous."""
        return self._table[np.searchsorted(self.knots, np.asarray(t, float), side="right")]

    def left(self, t) -> np.ndarray:
        """G(t-), the left limit."""
        return self._table[np.searchsorted(self.knots, np.asarray(t, float), side="left")]


def concordance_index(lp, times, status, cens: CensoringModel) -> float:
    """IPCW concordance.

    A pair (j, i) is comparable when subject j has an observed event and
    ``T_j < T_i``; it is concordant when j has the larger risk score. Pairs
    carry weight ``1 / G(T_j-)^2`` and risk ties earn half credit.
    """
    lp = np.asarray(lp, float)
    times = np.asarray(times, float)
    status = np.asarray(status, float)
    g = cens.left(times)
    num = den = 0.0
    for j in np.flatnonzero(status == 1):
        if g[j] <= 0:
            continue
        later = times > times[j]
        if not later.any():
            continue
        w = 1.0 / g[j] ** 2
        diff = lp[j] - lp[later]
        num += w * (np.sum(diff > 0) + 0.5 * np.sum(diff == 0))
        den += w * later.sum()
    if den == 0:
        raise ValueError("no comparable pairs")
    return float(num / den)


def default_grid(times, status) -> np.ndarray:
    """0, the sorted distinct event times, and the largest time."""
    times = np.asarray(times, float)
    ev = np.unique(times[np.asarray(status) == 1])
    return np.unique(np.concatenate([[0.0], ev, [times.max()]]))


def brier_curve(surv, times, status, cens: CensoringModel, grid) -> Tuple[np.ndarray, int]:
    """IPCW Brier score at each grid point and the number of zero-G truncations."""
    surv = np.asarray(surv, float)
    times = np.asarray(times, float)
    status = np.asarray(status, float)
    grid = np.asarray(grid, float)
    g_event = cens.left(times)
    g_grid = cens(grid)
    n = len(times)
    out = np.empty(len(grid))
    truncated = 0
    for k, t in enumerate(grid):
        died = (times <= t) & (status == 1)
        alive = times > t
        w = np.zeros(n)
        ok_e = died & (g_event > 0)
        w[ok_e] = 1.0 / g_event[ok_e]
        if g_grid[k] > 0:
            w[alive] = 1.0 / g_grid[k]
        else:
            truncated += int(alive.sum())
        truncated += int((died & (g_event <= 0)).sum())
        out[k] = np.mean(w * (alive.astype(float) - surv[:, k]) ** 2)
    return out, truncated


def integrated_brier_score(surv, times, status, cens: CensoringModel, grid=None,
                           normalize: bool = True) -> float:
    """Trapezoidal integral of the IPCW Brier score over ``grid``.

    With ``normalize`` the integral is divided by the grid's time span, so
    the score is on the Brier scale.
    """
    if grid is None:
        grid = default_grid(times, status)
    grid = np.asarray(grid, float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted")
    if grid[-1] > np.max(times) + 1e-12 or grid[0] < 0:
        raise ValueError("grid must lie within [0, max test time]")
    bs, _ = brier_curve(surv, times, status, cens, grid)
    area = float(trapezoid(bs, grid))
    span = grid[-1] - grid[0]
    return area / span if normalize and span > 0 else area


def empty_metrics() -> dict:
    return {k: None for k in METRIC_KEYS}


def clean(value: Optional[float]):
    """JSON-friendly: NaN becomes None."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)
