"""Sequential predictors: ML plug-in, SNML, weighted SNML, their mixture, and
the first-order expansions that approximate them.

All predictors take the sufficient statistics of ``x_{1:t}`` and return a
:class:`PredictiveDistribution` over the next symbol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._numdiff import central_gradient
from .family import FiniteExpFamily
from .fit import MLFit, SufficientStatSummary, ml_fit, observed_information

__all__ = [
    "BoundaryError",
    "PredictiveDistribution",
    "WeightFunction",
    "ml_predict",
    "snml_predict",
    "wsnml_predict",
    "mixture_predict",
    "expansion_terms",
    "expansion_predict",
    "snml_expansion",
    "wsnml_expansion",
    "trace_identity",
]


class BoundaryError(ValueError):
    """The ML estimate does not exist (empirical mean on the hull boundary)."""


@dataclass(frozen=True)
class PredictiveDistribution:
    probs: np.ndarray
    name: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError(f"{self.name}: invalid probabilities {p}")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"{self.name}: probabilities sum to {p.sum()!r}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __getitem__(self, y):
        return self.probs[y]

    def __len__(self):
        return self.probs.size

    def log_loss(self, y: int) -> float:
        p = self.probs[y]
        return float(-np.log(p)) if p > 0 else float("inf")


def _normalized(values: np.ndarray) -> np.ndarray:
    p = values / values.sum()
    # one more pass absorbs the rounding of the first division
    return p / p.sum()


@dataclass(frozen=True)
class WeightFunction:
    """Positive weight ``w(theta)`` stored through its logarithm.

    Parameters
    ----------
    log_func : callable
        ``theta -> log w(theta)``; must broadcast over leading batch axes.
    log_grad_func : callable, optional
        Closed-form ``theta -> d log w / dtheta``. Central finite differences
        are used when absent.
    """

    log_func: Callable[[np.ndarray], float]
    log_grad_func: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "w"

    @classmethod
    def constant(cls, c: float = 1.0) -> "WeightFunction":
        if not c > 0:
            raise ValueError("constant weight must be positive")
        log_c = float(np.log(c))
        return cls(lambda th: np.full(np.shape(th)[:-1], log_c) if np.ndim(th) > 1 else log_c,
                   lambda th: np.zeros_like(np.asarray(th, dtype=float)),
                   name=f"const({c:g})")

    @classmethod
    def from_callable(cls, func, grad_log=None, name="w") -> "WeightFunction":
        """Wrap a plain ``theta -> w(theta)`` function."""

        def log_func(th):
            val = np.asarray(func(th), dtype=float)
            if np.any(~(val > 0)) or not np.all(np.isfinite(val)):
                raise ValueError(f"weight {name} is not positive and finite at theta={th}")
            return np.log(val) if val.ndim else float(np.log(val))

        return cls(log_func, grad_log, name=name)

    def log(self, theta):
        val = self.log_func(theta)
        if not np.all(np.isfinite(val)):
            raise ValueError(f"weight {self.name} is not positive and finite at theta={theta}")
        return val

    def __call__(self, theta):
        return np.exp(self.log(theta))

    def log_grad(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.log_grad_func is not None:
            return np.asarray(self.log_grad_func(theta), dtype=float)
        return central_gradient(lambda th: float(self.log(th)), theta)

    def squared(self) -> "WeightFunction":
        grad = None if self.log_grad_func is None else (lambda th: 2.0 * np.asarray(self.log_grad_func(th)))
        return WeightFunction(lambda th: 2.0 * self.log_func(th), grad, name=f"({self.name})^2")

    def scaled(self, c: float) -> "WeightFunction":
        if not c > 0:
            raise ValueError("scale must be positive")
        log_c = float(np.log(c))
        return WeightFunction(lambda th: self.log_func(th) + log_c, self.log_grad_func, name=f"{c:g}*{self.name}")


def _fit(family, summary, fit):
    if summary.t < 1:
        raise ValueError("predictors need t >= 1 observations")
    return ml_fit(family, summary) if fit is None else fit


def _interior_fit(family, summary, fit) -> MLFit:
    fit = _fit(family, summary, fit)
    if not fit.interior:
        raise BoundaryError(
            f"ML estimate on the boundary for counts {summary.counts.tolist()}; "
            "the expansion needs p_ML(y) > 0 for every y"
        )
    return fit


def ml_predict(family: FiniteExpFamily, summary: SufficientStatSummary, fit: MLFit | None = None) -> PredictiveDistribution:
    """Plug-in prediction with the ML parameter (its limit on boundary summaries)."""
    fit = _fit(family, summary, fit)
    return PredictiveDistribution(_normalized(fit.probs), "ml", {"interior": fit.interior, "theta": fit.theta})


def _augmented_fits(family, summary, fit):
    warm = fit.theta if fit.interior else None
    return [ml_fit(family, summary.append(family, y), theta0=warm) for y in range(family.alphabet_size)]


def wsnml_predict(family: FiniteExpFamily, summary: SufficientStatSummary, w: WeightFunction | None,
                  fit: MLFit | None = None, name: str = "wsnml") -> PredictiveDistribution:
    """Weighted SNML: ``w(theta^{ML+y}) p_{theta^{ML+y}}(y)`` normalised over ``y``.

    Each ``theta^{ML+y}`` is an exact refit with ``y`` appended. Refits that land
    on the boundary contribute the limiting ML probability of ``y``; the weight
    is then evaluated at the clamped iterate.
    """
    fit = _fit(family, summary, fit)
    refits = _augmented_fits(family, summary, fit)
    k = family.alphabet_size
    log_vals = np.empty(k)
    for y, f in enumerate(refits):
        p_y = f.probs[y]
        log_vals[y] = np.log(p_y) if p_y > 0 else -np.inf
        if w is not None:
            log_vals[y] += w.log(f.theta)
    shift = np.max(log_vals)
    vals = np.exp(log_vals - shift)
    z = vals.sum()
    meta = {
        "Z": float(z * np.exp(shift)),
        "boundary_refits": [y for y, f in enumerate(refits) if not f.interior],
        "refit_theta": [f.theta for f in refits],
    }
    return PredictiveDistribution(_normalized(vals), name, meta)


def snml_predict(family: FiniteExpFamily, summary: SufficientStatSummary, fit: MLFit | None = None) -> PredictiveDistribution:
    """Sequential normalized maximum likelihood (refit once per candidate symbol)."""
    return wsnml_predict(family, summary, None, fit=fit, name="snml")


def mixture_predict(family: FiniteExpFamily, summary: SufficientStatSummary, beta: WeightFunction,
                    fit: MLFit | None = None) -> PredictiveDistribution:
    """Equal mixture of the ML plug-in and the ``beta**2``-weighted SNML predictor."""
    fit = _fit(family, summary, fit)
    ml = ml_predict(family, summary, fit)
    ws = wsnml_predict(family, summary, beta.squared(), fit=fit)
    probs = _normalized(0.5 * ml.probs + 0.5 * ws.probs)
    return PredictiveDistribution(probs, "mixture", {"ml": ml.probs, "wsnml": ws.probs, "Z": ws.meta["Z"]})


def expansion_terms(family: FiniteExpFamily, summary: SufficientStatSummary, beta: WeightFunction,
                    fit: MLFit | None = None) -> dict:
    """Per-symbol terms of the order-1/t correction to the ML prediction.

    Returns a dict with ``p_ml``, ``fisher_norm`` (``s_y' J^{-1} s_y``),
    ``cross`` (``g' J^{-1} s_y`` with ``g = d log beta``), ``dim``, ``t`` and the
    unnormalised ``raw`` values
    ``p_ml(y) * (1 + fisher_norm/(2t) + cross/t - dim/(2t))``.
    """
    fit = _interior_fit(family, summary, fit)
    t = summary.t
    theta = fit.theta
    j = observed_information(family, summary, theta)
    scores = family.features - family.mean_params(theta)
    j_inv_s = np.linalg.solve(j, scores.T)
    fisher_norm = np.einsum("yi,iy->y", scores, j_inv_s)
    g = beta.log_grad(theta)
    cross = g @ j_inv_s
    p_ml = family.prob_table(theta)
    d = family.dim
    raw = p_ml * (1.0 + fisher_norm / (2 * t) + cross / t - d / (2 * t))
    return {"p_ml": p_ml, "fisher_norm": fisher_norm, "cross": cross, "dim": d, "t": t, "raw": raw}


def _from_raw(raw, name, meta) -> PredictiveDistribution:
    meta["raw"] = raw
    meta["raw_sum"] = float(raw.sum())
    clipped = np.clip(raw, 0.0, None)
    meta["clipped"] = bool(np.any(raw < 0))
    return PredictiveDistribution(_normalized(clipped), name, meta)


def expansion_predict(family: FiniteExpFamily, summary: SufficientStatSummary, beta: WeightFunction,
                      fit: MLFit | None = None) -> PredictiveDistribution:
    """Order-1/t expansion shared by the mixture and the Bayes predictor with prior density ``beta`` w.r.t. Jeffreys.

    Raises :class:`BoundaryError` when some symbol has zero ML probability.
    """
    terms = expansion_terms(family, summary, beta, fit)
    raw = terms.pop("raw")
    return _from_raw(raw, "expansion", terms)


def _snml_first_order(family, summary, w, fit, name):
    fit = _interior_fit(family, summary, fit)
    t = summary.t
    theta = fit.theta
    j = observed_information(family, summary, theta)
    fisher = family.fisher_matrix(theta)
    scores = family.features - family.mean_params(theta)
    j_inv_s = np.linalg.solve(j, scores.T)
    quad = np.einsum("yi,iy->y", scores, j_inv_s)
    p_ml = family.prob_table(theta)
    # closed-form normaliser: E_y[s' J^{-1} s] = Tr(J^{-1} I)
    z_closed = 1.0 + np.trace(np.linalg.solve(j, fisher)) / t
    z_explicit = float(p_ml @ (1.0 + quad / t))
    bracket = quad.copy()
    meta = {"Z_closed": float(z_closed), "Z_explicit": z_explicit, "Z_residual": float(abs(z_closed - z_explicit))}
    if w is not None:
        w_term = w.log_grad(theta) @ j_inv_s
        bracket = bracket + w_term
        w_sum = float(p_ml @ w_term)
        meta["w_term_sum"] = w_sum
        meta["w_term_cancels"] = abs(w_sum) <= 1e-12
    raw = p_ml * (1.0 + bracket / t - (z_closed - 1.0))
    return _from_raw(raw, name, meta)


def snml_expansion(family: FiniteExpFamily, summary: SufficientStatSummary, fit: MLFit | None = None) -> PredictiveDistribution:
    """First-order SNML: ``p_ml(y) (1 + s_y' J^{-1} s_y / t - Tr(J^{-1} I) / t)``.

    The normaliser comes from the trace identity rather than a sum over ``y``;
    ``meta`` reports the explicit sum for comparison.
    """
    return _snml_first_order(family, summary, None, fit, "snml-expansion")


def wsnml_expansion(family: FiniteExpFamily, summary: SufficientStatSummary, w: WeightFunction,
                    fit: MLFit | None = None) -> PredictiveDistribution:
    """First-order weighted SNML; the ``d log w`` term averages to zero under ``p_ml``."""
    return _snml_first_order(family, summary, w, fit, "wsnml-expansion")


def trace_identity(family: FiniteExpFamily, theta, j=None) -> tuple[float, float]:
    """Both sides of ``E_y[s_y' J^{-1} s_y] = Tr(J^{-1} I)`` at ``theta``.

    ``j`` defaults to the Fisher matrix. Returns ``(enumerated, trace)``.
    """
    fisher = family.fisher_matrix(theta)
    j = fisher if j is None else np.asarray(j, dtype=float)
    scores = family.features - family.mean_params(theta)
    quad = np.einsum("yi,iy->y", scores, np.linalg.solve(j, scores.T))
    return float(family.prob_table(theta) @ quad), float(np.trace(np.linalg.solve(j, fisher)))
