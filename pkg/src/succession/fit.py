"""Maximum likelihood from sufficient statistics.

For a finite exponential family the log-likelihood of ``x_{1:t}`` depends on
the data only through the symbol counts, and it is strictly concave in the
natural parameter. The ML estimate solves ``E_theta[phi] = feature_sum / t``
whenever that empirical mean lies strictly inside the convex hull of the
feature rows; otherwise it does not exist and the ML distributions converge to
a limit supported on a face of the hull.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .family import FiniteExpFamily

__all__ = [
    "THETA_CLAMP",
    "MLFit",
    "SufficientStatSummary",
    "summarize",
    "ml_fit",
    "is_interior",
    "observed_information",
    "ml_update_step",
]

THETA_CLAMP = 35.0
MAX_ITER = 100
GRAD_TOL = 1e-11
_LP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SufficientStatSummary:
    """Counts of each symbol plus the matching feature sum.

    Instances are immutable; :meth:`append` returns a new summary, so several
    "what if the next symbol were y" refits never share state.
    """

    counts: np.ndarray
    feature_sum: np.ndarray

    @classmethod
    def from_counts(cls, family: FiniteExpFamily, counts) -> "SufficientStatSummary":
        counts = np.asarray(counts)
        if counts.shape != (family.alphabet_size,):
            raise ValueError(f"counts must have length {family.alphabet_size}")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be non-negative integers")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        fsum = counts @ family.features
        fsum.setflags(write=False)
        return cls(counts, fsum)

    @property
    def t(self) -> int:
        return int(self.counts.sum())

    @property
    def empirical_mean(self) -> np.ndarray:
        if self.t == 0:
            raise ValueError("empirical mean of an empty summary")
        return self.feature_sum / self.t

    def append(self, family: FiniteExpFamily, symbol: int) -> "SufficientStatSummary":
        _check_symbol(family, symbol)
        counts = self.counts.copy()
        counts[symbol] += 1
        counts.setflags(write=False)
        fsum = self.feature_sum + family.features[symbol]
        fsum.setflags(write=False)
        return SufficientStatSummary(counts, fsum)


def _check_symbol(family: FiniteExpFamily, symbol, position=None) -> None:
    if int(symbol) != symbol or not 0 <= symbol < family.alphabet_size:
        where = "" if position is None else f" at position {position}"
        raise ValueError(f"symbol {symbol!r}{where} outside alphabet 0..{family.alphabet_size - 1}")


def summarize(family: FiniteExpFamily, sequence) -> SufficientStatSummary:
    seq = np.asarray(sequence)
    for i, s in enumerate(seq.ravel()):
        _check_symbol(family, s, position=i)
    counts = np.bincount(seq.astype(np.int64).ravel(), minlength=family.alphabet_size)
    return SufficientStatSummary.from_counts(family, counts)


@dataclass(frozen=True)
class MLFit:
    """Result of :func:`ml_fit`.

    ``probs`` is ``p_theta(.)`` for interior fits. For boundary summaries it is
    the limit of the ML distributions (zero off the face containing the
    empirical mean), while ``theta`` is only the final clamped Newton iterate.
    """

    theta: np.ndarray
    mean: np.ndarray
    probs: np.ndarray
    interior: bool
    converged: bool
    iterations: int
    residual: float


def _moments(family, theta, log_base):
    z = theta @ family.features.T + log_base
    log_a = logsumexp(z)
    p = np.exp(z - log_a)
    p /= p.sum()
    mu = p @ family.features
    c = family.features - mu
    cov = (p[:, None] * c).T @ c
    return log_a, p, mu, cov


def _newton(family, mu_hat, theta0, log_base, singular_ok=False):
    """Damped Newton ascent on ``theta . mu_hat - A(theta)``.

    Returns ``(theta, iterations, converged, residual)``. Steps are halved until
    the objective does not decrease; iterates are clamped to the box
    ``|theta_i| <= THETA_CLAMP``.
    """
    theta = np.clip(np.array(theta0, dtype=float), -THETA_CLAMP, THETA_CLAMP)
    log_a, p, mu, cov = _moments(family, theta, log_base)
    obj = theta @ mu_hat - log_a
    resid = np.max(np.abs(mu_hat - mu))
    it = 0
    polish = 0
    converged = resid <= GRAD_TOL
    while it < MAX_ITER:
        if converged:
            # quadratic convergence: a couple of extra full steps reach rounding level
            if polish >= 2 or resid == 0.0:
                break
        it += 1
        g = mu_hat - mu
        if singular_ok:
            step = np.linalg.lstsq(cov, g, rcond=1e-13)[0]
        else:
            try:
                step = np.linalg.solve(cov, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(cov, g, rcond=1e-13)[0]
        lam = 1.0
        accepted = False
        for _ in range(60):
            cand = np.clip(theta + lam * step, -THETA_CLAMP, THETA_CLAMP)
            c_log_a, c_p, c_mu, c_cov = _moments(family, cand, log_base)
            c_obj = cand @ mu_hat - c_log_a
            if c_obj >= obj - 1e-14 * max(1.0, abs(obj)):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        c_resid = np.max(np.abs(mu_hat - c_mu))
        if converged:
            if c_resid >= resid:
                break
            polish += 1
        if np.array_equal(cand, theta):
            break
        theta, obj, mu, cov, resid = cand, c_obj, c_mu, c_cov, c_resid
        converged = converged or resid <= GRAD_TOL
    return theta, it, bool(converged), float(resid)


def _strictly_positive_combination(family, mu_hat, maximize=None):
    """LP over convex weights ``lam`` with ``sum lam phi = mu_hat``.

    With ``maximize=None`` maximises ``min_x lam_x`` (positive iff ``mu_hat`` is
    interior); otherwise maximises ``lam[maximize]``.
    """
    k, d = family.features.shape
    if maximize is None:
        # variables (lam_0..lam_{k-1}, s): maximise s, lam_x - s >= 0
        c = np.zeros(k + 1)
        c[-1] = -1.0
        a_eq = np.zeros((d + 1, k + 1))
        a_eq[:d, :k] = family.features.T
        a_eq[d, :k] = 1.0
        a_ub = np.hstack([-np.eye(k), np.ones((k, 1))])
        res = linprog(c, A_ub=a_ub, b_ub=np.zeros(k), A_eq=a_eq, b_eq=np.append(mu_hat, 1.0),
                      bounds=[(0, None)] * k + [(None, 1.0)], method="highs")
    else:
        c = np.zeros(k)
        c[maximize] = -1.0
        a_eq = np.vstack([family.features.T, np.ones((1, k))])
        res = linprog(c, A_eq=a_eq, b_eq=np.append(mu_hat, 1.0), bounds=[(0, None)] * k, method="highs")
    if res.status != 0:
        raise RuntimeError(f"linear program failed: {res.message}")
    return -res.fun


def _is_interior(family, counts, mu_hat) -> bool:
    if np.all(counts > 0):
        return True
    if family.is_categorical_type:
        return False
    return _strictly_positive_combination(family, mu_hat) > _LP_TOL


def is_interior(family: FiniteExpFamily, summary: SufficientStatSummary) -> bool:
    """True when the empirical mean is strictly inside the hull of the feature rows."""
    if summary.t < 1:
        return False
    return _is_interior(family, summary.counts, summary.empirical_mean)


def _face_support(family, counts, mu_hat) -> np.ndarray:
    """Symbols whose features lie on the smallest face of the hull containing ``mu_hat``."""
    support = counts > 0
    if family.is_categorical_type:
        return support
    for x in np.flatnonzero(~support):
        support[x] = _strictly_positive_combination(family, mu_hat, maximize=x) > _LP_TOL
    return support


def ml_fit(family: FiniteExpFamily, summary: SufficientStatSummary, theta0=None) -> MLFit:
    """Maximum-likelihood fit by damped Newton with the exact Fisher matrix as Hessian.

    Parameters
    ----------
    theta0 : array_like, optional
        Warm start; defaults to zero.
    """
    t = summary.t
    if t < 1:
        raise ValueError("ml_fit needs at least one observation")
    mu_hat = summary.empirical_mean
    start = np.zeros(family.dim) if theta0 is None else theta0
    theta, iters, converged, resid = _newton(family, mu_hat, start, family._log_base)
    if _is_interior(family, summary.counts, mu_hat):
        probs = family.prob_table(theta)
        return MLFit(theta, family.mean_params(theta), probs, True, converged, iters, resid)

    support = _face_support(family, summary.counts, mu_hat)
    log_base = np.where(support, family._log_base, -np.inf)
    face_theta, _, _, _ = _newton(family, mu_hat, np.zeros(family.dim), log_base, singular_ok=True)
    z = face_theta @ family.features.T + log_base
    probs = np.exp(z - logsumexp(z))
    probs /= probs.sum()
    return MLFit(theta, probs @ family.features, probs, False, False, iters, resid)


def observed_information(family: FiniteExpFamily, summary: SufficientStatSummary, theta) -> np.ndarray:
    """``J_t(theta) = -(1/t) sum_i d^2/dtheta^2 log p_theta(x_i)``.

    The per-symbol Hessians are all ``-I(theta)`` in natural coordinates, so
    this equals the Fisher matrix at every ``theta``.
    """
    t = summary.t
    if t < 1:
        raise ValueError("observed information needs at least one observation")
    hess = family.log_prob_hessians(theta)
    return -np.tensordot(summary.counts, hess, axes=1) / t


def ml_update_step(family: FiniteExpFamily, summary: SufficientStatSummary, x_next: int, fit: MLFit | None = None) -> np.ndarray:
    """One natural-gradient step ``theta + J^{-1} d log p_theta(x_next) / t`` from the current ML.

    This is the first-order approximation to refitting with ``x_next``
    appended, not the refit itself.
    """
    if fit is None:
        fit = ml_fit(family, summary)
    if not fit.interior:
        raise ValueError("ml_update_step needs an interior ML estimate")
    _check_symbol(family, x_next)
    j = observed_information(family, summary, fit.theta)
    return fit.theta + np.linalg.solve(j, family.score(fit.theta, x_next)) / summary.t
