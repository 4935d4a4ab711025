"""Maximum-likelihood fits for the Gaussian, logistic and Cox observation models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

LOG_2PI = float(np.log(2.0 * np.pi))
RANK_TOL = 1e-10
SEPARATION_ETA = 30.0


class FitError(ValueError):
    """The model cannot be fitted (rank deficiency, degenerate data)."""


class RankDeficiencyError(FitError):
    pass


@dataclass
class FitResult:
    coefficients: np.ndarray
    dispersion: float
    loglik: float
    p_effective: int
    converged: bool
    iterations: int = 0
    family: str = "gaussian"

    @property
    def has_intercept(self) -> bool:
        return self.family != "timetoevent"


def _householder_r(X: np.ndarray, extra: Optional[np.ndarray] = None):
    """Householder QR (LAPACK ``geqrf``) of the column-normalised design.

    Returns the triangular factor and the column norms. If ``extra`` is
    given it is appended as a final unscaled column, so the last diagonal
    entry of R is the residual norm of regressing it on the design.
    Raises :class:`RankDeficiencyError` when a diagonal entry of the design
    part collapses relative to the largest one.
    """
    n, p = X.shape
    norms = np.sqrt(np.einsum("ij,ij->j", X, X))
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise RankDeficiencyError("design has an all-zero or non-finite column")
    A = np.empty((n, p + (extra is not None)), order="F")
    np.divide(X, norms, out=A[:, :p])
    if extra is not None:
        A[:, p] = extra
    qr, _, _, info = lapack.dgeqrf(A, overwrite_a=1)
    if info != 0:
        raise FitError(f"QR factorisation failed (info={info})")
    k = min(n, A.shape[1])
    R = np.triu(qr[:k, :])
    d = np.abs(np.diag(R)[:p])
    if d.min() <= RANK_TOL * d.max():
        raise RankDeficiencyError(f"design is rank deficient (min/max |r_jj| = {d.min() / d.max():.2e})")
    return R, norms


def fit_gaussian(X: np.ndarray, y: np.ndarray) -> FitResult:
    """Least squares through a Householder QR; ``loglik`` uses the MLE ``RSS/n``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    norms = np.sqrt(np.einsum("ij,ij->j", X, X))
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise RankDeficiencyError("design has an all-zero or non-finite column")
    A = np.empty((n, p + 1), order="F")
    np.divide(X, norms, out=A[:, :p])
    A[:, p] = y
    return fit_gaussian_normalized(A, norms, float(np.dot(y, y)))


def fit_gaussian_normalized(A: np.ndarray, norms: np.ndarray, yy: float) -> FitResult:
    """Gaussian fit from a Fortran-ordered ``[X / norms | y]`` block, overwritten in place.

    ``yy`` is ``y @ y`` and only sets the degenerate-residual threshold.
    """
    n, p1 = A.shape
    p = p1 - 1
    if n <= p:
        raise FitError(f"need more rows than columns (n={n}, p={p})")
    qr, _, _, info = lapack.dgeqrf(A, overwrite_a=1)
    if info != 0:
        raise FitError(f"QR factorisation failed (info={info})")
    d = np.abs(qr.diagonal()[:p])
    if d.min() <= RANK_TOL * d.max():
        raise RankDeficiencyError(f"design is rank deficient (min/max |r_jj| = {d.min() / d.max():.2e})")
    z, info = lapack.dtrtrs(qr[:p, :p], qr[:p, p])
    if info != 0:
        raise RankDeficiencyError("singular triangular factor")
    beta = z / norms
    rss = float(qr[p, p]) ** 2
    sigma2 = rss / n
    if sigma2 <= (64 * np.finfo(float).eps) ** 2 * yy / n:
        raise FitError("degenerate fit: residual variance is zero")
    loglik = -0.5 * n * (LOG_2PI + math.log(sigma2) + 1.0)
    return FitResult(beta, sigma2, loglik, p - 1, True, 1, "gaussian")


def _log1pexp(eta):
    return np.logaddexp(0.0, eta)


def logistic_loglik(beta, X, y) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - _log1pexp(eta)))


def fit_logistic(X, y, max_iter: int = 100, tol: float = 1e-8) -> FitResult:
    """Newton/IRLS with step halving.

    Stops when the largest relative coefficient change drops below ``tol``.
    When the iterates drift off towards perfect separation (some linear
    predictor beyond +-30 without convergence) the fit is flagged
    ``converged=False``; the reported log-likelihood is that of the last
    iterate, which is bounded above by 0.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if y.min() == y.max():
        raise FitError("both classes must be present")
    _householder_r(X)
    beta = np.zeros(p)
    eta = np.zeros(n)
    ll = float(np.sum(y * eta - _log1pexp(eta)))
    sign = 2.0 * y - 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
        w = np.maximum(mu * (1.0 - mu), 1e-12)
        grad = X.T @ (y - mu)
        H = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        d_eta = X @ step
        t = 1.0
        while True:
            eta_new = eta + t * d_eta
            ll_new = float(np.sum(y * eta_new - _log1pexp(eta_new)))
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)) or t < 1e-10:
                break
            t *= 0.5
        cand = beta + t * step
        change = np.max(np.abs(cand - beta) / (np.abs(beta) + 1e-3))
        beta, eta, ll = cand, eta_new, ll_new
        if change < tol:
            converged = True
            break
        # complete separation: the MLE is at infinity, more steps only push it further
        if np.max(np.abs(eta)) > SEPARATION_ETA and np.all(sign * eta > 0):
            break
    if np.max(np.abs(X @ beta)) > SEPARATION_ETA and (not converged or ll > -1e-6 * n):
        converged = False
    return FitResult(beta, 1.0, float(ll), p - 1, converged, it, "bernoulli")


# ---------------------------------------------------------------------------
# Cox partial likelihood, Breslow ties
# ---------------------------------------------------------------------------

class _RiskSets:
    """Precomputed ordering for Breslow risk-set sums.

    Subjects are sorted by decreasing time so a cumulative sum over the
    sorted order gives, at the last index of each tied block, the sum over
    everyone with ``time >= t``.
    """

    def __init__(self, times, status):
        times = np.asarray(times, dtype=np.float64)
        status = np.asarray(status, dtype=np.float64)
        order = np.argsort(-times, kind="mergesort")
        self.order = order
        t = times[order]
        self.status = status[order]
        # last sorted index among subjects with time >= t_i (end of the tied block)
        self.block_end = np.searchsorted(-t, -t, side="right") - 1
        # first sorted index among subjects with time <= t_i
        self.block_start = np.searchsorted(-t, -t, side="left")
        self.n_events = int(self.status.sum())
        if self.n_events == 0:
            raise FitError("no events: the partial likelihood is empty")


def cox_loglik(beta, X, times, status, risk: Optional[_RiskSets] = None) -> float:
    risk = risk or _RiskSets(times, status)
    Xs = np.asarray(X, dtype=np.float64)[risk.order]
    eta = Xs @ beta if Xs.shape[1] else np.zeros(len(risk.order))
    m = eta.max()
    s0 = np.cumsum(np.exp(eta - m))[risk.block_end]
    d = risk.status
    return float(np.sum(d * (eta - m - np.log(s0))))


def fit_cox(X, times, status, max_iter: int = 100, tol: float = 1e-8) -> FitResult:
    """Newton maximisation of the Breslow partial log-likelihood (no intercept)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    risk = _RiskSets(times, status)
    if p == 0:
        ll = cox_loglik(np.zeros(0), X, times, status, risk)
        return FitResult(np.zeros(0), 1.0, ll, 0, True, 0, "timetoevent")
    _householder_r(X)
    Xs = X[risk.order]
    d = risk.status
    end = risk.block_end

    start = risk.block_start

    def evaluate(beta, derivs=True):
        eta = Xs @ beta
        m = eta.max()
        r = np.exp(eta - m)
        s0 = np.cumsum(r)[end]
        ll = float(np.sum(d * (eta - m - np.log(s0))))
        if not derivs:
            return ll, None, None
        # Breslow cumulative hazard (up to exp(m)) at each subject's own time
        h = d / s0
        cumhaz = np.cumsum(h[::-1])[::-1][start]
        rc = r * cumhaz
        grad = Xs.T @ (d - rc)
        xbar = np.cumsum(r[:, None] * Xs, axis=0)[end] / s0[:, None]
        info = (Xs * rc[:, None]).T @ Xs - (xbar * d[:, None]).T @ xbar
        return ll, grad, info

    beta = np.zeros(p)
    ll, grad, info = evaluate(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            c = linalg.cho_factor(info, check_finite=False)
            step = linalg.cho_solve(c, grad, check_finite=False)
        except linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new, _, _ = evaluate(cand, derivs=False)
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)) or t < 1e-10:
                break
            t *= 0.5
        change = np.max(np.abs(cand - beta) / (np.abs(beta) + 1e-3))
        beta = cand
        ll, grad, info = evaluate(beta)
        if change < tol:
            converged = True
            break
    # monotone likelihood: coefficients run away while the likelihood flattens
    if np.max(np.abs(X @ beta)) > SEPARATION_ETA:
        converged = False
    return FitResult(beta, 1.0, ll, p, converged, it, "timetoevent")


def cox_gradient(beta, X, times, status) -> np.ndarray:
    """Analytic score of the Breslow partial log-likelihood."""
    risk = _RiskSets(times, status)
    Xs = np.asarray(X, dtype=np.float64)[risk.order]
    eta = Xs @ beta
    r = np.exp(eta - eta.max())
    s0 = np.cumsum(r)[risk.block_end]
    s1 = np.cumsum(r[:, None] * Xs, axis=0)[risk.block_end]
    return (risk.status[:, None] * (Xs - s1 / s0[:, None])).sum(axis=0)


def logistic_gradient(beta, X, y) -> np.ndarray:
    eta = X @ beta
    return X.T @ (y - 0.5 * (1.0 + np.tanh(0.5 * eta)))
