"""Model prior, BIC-form marginal likelihood, PIC and a cached model evaluator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .likelihoods import (FitError, FitResult, RankDeficiencyError, fit_cox, fit_gaussian,
                          fit_gaussian_normalized, fit_logistic)
from .transforms import DomainError, Feature, IDENTITY, Transform, evaluate_feature

NEG_INF = -math.inf

DEFAULT_S = (1.0, 1.0 + math.log(2.0), 1.0 + math.log(4.0))


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the model prior.

    Each included feature costs ``exp(-s_k log n)`` per factor, with ``s_k``
    picked by the factor's FP class (identity, plain power, log-multiplied).
    ``q`` bounds the model size, ``d`` the number of terms touching any one
    predictor and ``order_cap`` the number of factors in a feature.
    """

    q: int = 20
    d: float = 16
    s0: float = DEFAULT_S[0]
    s1: float = DEFAULT_S[1]
    s2: float = DEFAULT_S[2]
    interactions: bool = False
    order_cap: int = 1
    allow_f2_without_f1: bool = True

    def __post_init__(self):
        for name in ("s0", "s1", "s2"):
            v = getattr(self, name)
            if not (0.0 < v < math.inf):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.q < 0 or self.d < 1:
            raise ValueError("q must be >= 0 and d >= 1")
        if self.order_cap < 1:
            raise ValueError("order_cap must be >= 1")

    @property
    def max_order(self) -> int:
        return self.order_cap if self.interactions else 1

    def penalty(self, t: Transform) -> float:
        return (self.s0, self.s1, self.s2)[t.fp_class]

    def feature_penalty(self, f: Feature) -> float:
        """Sum of ``s_k`` over the factors of ``f`` (product of the a_k's on the log scale)."""
        s = (self.s0, self.s1, self.s2)
        return sum(s[c] for c in f.fp_classes)


@dataclass(frozen=True)
class Model:
    """Sorted set of features; ``signature`` is its canonical string key."""

    features: Tuple[Feature, ...]
    signature: str = field(init=False, compare=False, repr=False)

    def __init__(self, features: Iterable[Feature] = ()):
        fs = tuple(sorted(set(features)))
        object.__setattr__(self, "features", fs)
        object.__setattr__(self, "signature", " + ".join(f._str for f in fs))

    def __reduce__(self):
        return (Model, (self.features,))

    @property
    def size(self) -> int:
        return len(self.features)

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    def __contains__(self, f):
        return f in self.features


@dataclass
class Evidence:
    log_prior: float
    log_marglik: float
    fit: Optional[FitResult] = None

    @property
    def log_posterior(self) -> float:
        if self.log_prior == NEG_INF or self.log_marglik == NEG_INF:
            return NEG_INF
        return self.log_prior + self.log_marglik


def log_model_prior(m: Model, cfg: PriorConfig, n: int) -> float:
    """Log of the unnormalised prior; ``-inf`` when a constraint is violated."""
    if m.size > cfg.q:
        return NEG_INF
    per_predictor: Dict[str, int] = {}
    total = 0.0
    for f in m.features:
        if f.order > cfg.max_order:
            return NEG_INF
        for name in f.predictors:
            per_predictor[name] = per_predictor.get(name, 0) + 1
            if per_predictor[name] > cfg.d:
                return NEG_INF
        total += cfg.feature_penalty(f)
    if not cfg.allow_f2_without_f1 and not _f2_paired(m):
        return NEG_INF
    return -total * math.log(n)


def _f2_paired(m: Model) -> bool:
    present = set(m.features)
    for f in m.features:
        if f.order == 1 and f.factors[0][1].log_multiplier:
            name, t = f.factors[0]
            if Feature.single(name, Transform(t.power)) not in present:
                return False
    return True


def log_marginal_likelihood(fit: FitResult, m: Model, n: int) -> float:
    """Laplace/BIC evidence ``loglik - |M|/2 log n`` (intercept not counted)."""
    return fit.loglik - 0.5 * m.size * math.log(n)


def pic(fit: FitResult, m: Model, cfg: PriorConfig, n: int) -> float:
    p = m.size + sum(2.0 * cfg.feature_penalty(f) for f in m.features)
    return -2.0 * fit.loglik + p * math.log(n)


class EvidenceEvaluator:
    """Fits models on one dataset and caches the resulting evidence.

    Cache lookups and inserts are plain dict operations; two callers racing
    on the same signature compute identical values, so whichever insert wins
    is correct.
    """

    def __init__(self, ds, prior: PriorConfig, max_iter: int = 100, tol: float = 1e-8):
        self.ds = ds
        self.prior = prior
        self.family = ds.family
        self.max_iter = max_iter
        self.tol = tol
        self.n = ds.n
        self._columns: Dict[Feature, np.ndarray] = {}
        self._unit: Dict[Feature, Tuple[np.ndarray, float]] = {}
        self._cache: Dict[str, Evidence] = {}
        self.n_fits = 0
        self._log_n = math.log(self.n)
        if self.family == "gaussian":
            y = ds.response.y
            self._yy = float(np.dot(y, y))
            self._intercept = (np.full(self.n, 1.0 / math.sqrt(self.n)), math.sqrt(self.n))

    def __len__(self):
        return len(self._cache)

    def column(self, f: Feature) -> np.ndarray:
        col = self._columns.get(f)
        if col is None:
            col = self._columns.setdefault(f, evaluate_feature(f, self.ds))
        return col

    def _unit_column(self, f: Feature) -> Tuple[np.ndarray, float]:
        entry = self._unit.get(f)
        if entry is None:
            col = self.column(f)
            norm = float(np.sqrt(np.dot(col, col)))
            if not (norm > 0 and math.isfinite(norm)):
                raise RankDeficiencyError(f"feature {f} is identically zero or non-finite")
            entry = self._unit.setdefault(f, (col / norm, norm))
        return entry

    def _fit_gaussian(self, m: Model) -> FitResult:
        p = m.size + 1
        A = np.empty((self.n, p + 1), order="F")
        norms = np.empty(p)
        A[:, 0], norms[0] = self._intercept
        for k, f in enumerate(m.features, start=1):
            A[:, k], norms[k] = self._unit_column(f)
        A[:, p] = self.ds.response.y
        return fit_gaussian_normalized(A, norms, self._yy)

    def design(self, m: Model) -> np.ndarray:
        cols = [self.column(f) for f in m.features]
        if self.family != "timetoevent":
            cols.insert(0, np.ones(self.n))
        if not cols:
            return np.empty((self.n, 0))
        return np.column_stack(cols)

    def fit(self, m: Model) -> FitResult:
        r = self.ds.response
        if self.family == "gaussian":
            return self._fit_gaussian(m)
        X = self.design(m)
        if self.family == "bernoulli":
            return fit_logistic(X, r.y, self.max_iter, self.tol)
        return fit_cox(X, r.y, r.status, self.max_iter, self.tol)

    def evaluate(self, m: Model) -> Evidence:
        key = m.signature
        ev = self._cache.get(key)
        if ev is not None:
            return ev
        lp = log_model_prior(m, self.prior, self.n)
        if lp == NEG_INF:
            ev = Evidence(NEG_INF, NEG_INF, None)
        else:
            try:
                fit = self.fit(m)
            except (FitError, DomainError, np.linalg.LinAlgError):
                fit = None
            self.n_fits += 1
            if fit is None or not fit.converged or not math.isfinite(fit.loglik):
                ev = Evidence(lp, NEG_INF, fit)
            else:
                ev = Evidence(lp, log_marginal_likelihood(fit, m, self.n), fit)
        return self._cache.setdefault(key, ev)

    def cached(self, m: Model) -> Optional[Evidence]:
        return self._cache.get(m.signature)


def evaluate_model(m: Model, ds, cfg: PriorConfig, evaluator: Optional[EvidenceEvaluator] = None) -> Evidence:
    """One-shot evaluation; pass an evaluator to share its cache."""
    if evaluator is None:
        evaluator = EvidenceEvaluator(ds, cfg)
    return evaluator.evaluate(m)
