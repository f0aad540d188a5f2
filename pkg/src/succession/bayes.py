"""Exact Bayesian predictors and posterior means.

Priors are described by their density ``beta`` with respect to the Jeffreys
measure ``sqrt(det I(theta)) dtheta``; the Lebesgue density in natural
coordinates is ``alpha = beta * sqrt(det I)``.

Ground truth comes from two independent routes: Dirichlet conjugacy for
categorical-type families, and tensor Gauss-Legendre quadrature over the mean
parameters (``d <= 2``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from ._numdiff import central_gradient, central_hessian
from .family import FiniteExpFamily
from .fit import MLFit, SufficientStatSummary, ml_fit, observed_information
from .predictor import BoundaryError, PredictiveDistribution, WeightFunction

__all__ = [
    "Prior",
    "parse_prior",
    "QuadratureGrid",
    "make_grid",
    "posterior_weights",
    "conjugate_predict",
    "quad_posterior_predict",
    "quad_posterior_mean",
    "prop4_expansion",
]

DEFAULT_NODES = 200


def _log_det_fisher(family, theta):
    sign, logdet = np.linalg.slogdet(family.fisher_matrix(theta))
    return logdet


@dataclass(frozen=True, eq=False)
class Prior:
    """A prior on the natural parameter of ``family``.

    Attributes
    ----------
    kind : str
        ``jeffreys``, ``uniform`` (uniform on the mean polytope), ``dirichlet``
        (``beta`` is the two-symbol case) or ``custom``.
    alpha : ndarray or None
        Dirichlet pseudo-counts per symbol, for the conjugate kinds.
    """

    kind: str
    family: FiniteExpFamily
    alpha: np.ndarray | None = None
    custom: WeightFunction | None = None

    @classmethod
    def jeffreys(cls, family):
        return cls("jeffreys", family)

    @classmethod
    def uniform(cls, family):
        return cls("uniform", family)

    @classmethod
    def dirichlet(cls, family, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if not family.is_categorical_type:
            raise ValueError("Dirichlet priors need a categorical-type family")
        if alpha.shape != (family.alphabet_size,) or np.any(alpha <= 0):
            raise ValueError(f"need {family.alphabet_size} positive Dirichlet parameters, got {alpha}")
        return cls("dirichlet", family, alpha)

    @classmethod
    def beta_prior(cls, family, a, b):
        """Beta(a, b) on the probability of symbol 1 of a two-symbol family."""
        if family.alphabet_size != 2:
            raise ValueError("beta:a,b priors are for two-symbol (Bernoulli) families")
        return cls.dirichlet(family, [b, a])

    @classmethod
    def from_weight(cls, family, beta: WeightFunction):
        return cls("custom", family, custom=beta)

    @property
    def conjugate_alpha(self) -> np.ndarray | None:
        """Dirichlet parameters when the prior is conjugate for this family, else None."""
        if not self.family.is_categorical_type:
            return None
        k = self.family.alphabet_size
        if self.kind == "jeffreys":
            return np.full(k, 0.5)
        if self.kind == "uniform":
            return np.ones(k)
        if self.kind == "dirichlet":
            return self.alpha
        return None

    def log_beta(self, theta):
        """Log density w.r.t. the Jeffreys measure; broadcasts over ``(..., d)``."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "jeffreys":
            return np.zeros(theta.shape[:-1]) if theta.ndim > 1 else 0.0
        if self.kind == "uniform":
            return 0.5 * _log_det_fisher(self.family, theta)
        if self.kind == "dirichlet":
            a = self.alpha
            log_norm = gammaln(a).sum() - gammaln(a.sum())
            return self.family.log_prob_table(theta) @ (a - 0.5) - log_norm
        return self.custom.log(theta)

    def grad_log_beta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        fam = self.family
        if self.kind == "jeffreys":
            return np.zeros(fam.dim)
        if self.kind == "uniform":
            # d/dtheta_i (1/2) log det I = (1/2) I^{jk} T_ijk
            fisher_inv = np.linalg.inv(fam.fisher_matrix(theta))
            return 0.5 * np.einsum("jk,ijk->i", fisher_inv, fam.skewness_tensor(theta))
        if self.kind == "dirichlet":
            scores = fam.features - fam.mean_params(theta)
            return (self.alpha - 0.5) @ scores
        return self.custom.log_grad(theta)

    @property
    def beta(self) -> WeightFunction:
        return WeightFunction(self.log_beta, self.grad_log_beta, name=f"beta[{self.kind}]")

    def log_alpha(self, theta):
        """Log Lebesgue density in natural coordinates (unnormalised for jeffreys/uniform)."""
        return self.log_beta(theta) + 0.5 * _log_det_fisher(self.family, np.asarray(theta, dtype=float))


def parse_prior(text: str, family: FiniteExpFamily) -> Prior:
    """``jeffreys``, ``uniform``, ``beta:a,b`` or ``dirichlet:a1,...,ak``."""
    kind, _, arg = text.strip().partition(":")
    kind = kind.lower()
    if kind == "jeffreys" and not arg:
        return Prior.jeffreys(family)
    if kind == "uniform" and not arg:
        return Prior.uniform(family)
    if kind in ("beta", "dirichlet"):
        try:
            vals = [float(v) for v in arg.split(",")]
        except ValueError:
            raise ValueError(f"bad prior parameters in {text!r}") from None
        if kind == "beta":
            if len(vals) != 2:
                raise ValueError("beta prior needs two parameters a,b")
            return Prior.beta_prior(family, *vals)
        return Prior.dirichlet(family, vals)
    if kind == "custom":
        raise ValueError("custom:<expr> priors are reserved; build Prior.from_weight in Python instead")
    raise ValueError(f"unknown prior {text!r}")


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Tensor Gauss-Legendre nodes mapped into natural coordinates.

    ``log_dtheta`` are log weights for Lebesgue measure in ``theta``, so
    ``sum(exp(log_dtheta) g(theta))`` approximates ``int g(theta) dtheta``.
    """

    dim: int
    n_nodes: int
    theta: np.ndarray
    log_dtheta: np.ndarray
    log_det_fisher: np.ndarray


def _sin2_axis(n):
    """Nodes on (0,1) after ``s = sin^2(pi u / 2)``: returns ``s``, ``1 - s`` and ``log(w ds/du)``."""
    x, w = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (x + 1.0)
    sin = np.sin(0.5 * np.pi * u)
    cos = np.cos(0.5 * np.pi * u)
    log_w = np.log(0.5 * w) + np.log(np.pi) + np.log(sin) + np.log(cos)
    return sin**2, cos**2, log_w


def _invert_mean_1d(family, mu):
    """Natural parameter with ``E_theta[phi] = mu`` for each entry of ``mu`` (d = 1)."""
    lo, hi = np.full(mu.shape, -60.0), np.full(mu.shape, 60.0)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        above = family.mean_params(mid[:, None])[:, 0] > mu
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    theta = 0.5 * (lo + hi)
    for _ in range(3):
        th = theta[:, None]
        theta = theta + (mu - family.mean_params(th)[:, 0]) / family.fisher_matrix(th)[:, 0, 0]
    return theta[:, None]


def make_grid(family: FiniteExpFamily, n_nodes: int = DEFAULT_NODES) -> QuadratureGrid:
    """Quadrature grid over the mean polytope with a ``sin^2`` endpoint substitution per axis.

    Supported: any family with ``d = 1``, and categorical-type families with
    ``d = 2`` (the simplex is covered by stick-breaking coordinates).
    """
    d = family.dim
    if d > 2:
        raise ValueError(f"tensor quadrature supports d <= 2, family has d = {d}")
    s, one_minus_s, log_ws = _sin2_axis(n_nodes)
    if d == 1:
        phi = family.features[:, 0]
        lo, hi = phi.min(), phi.max()
        log_dmu = log_ws + np.log(hi - lo)
        if family.is_categorical_type:
            probs = np.empty((n_nodes, 2))
            top = int(np.argmax(phi))
            probs[:, top] = s
            probs[:, 1 - top] = one_minus_s
            theta = family.theta_from_probs(probs)
        else:
            theta = _invert_mean_1d(family, lo + (hi - lo) * s)
    else:
        if not family.is_categorical_type:
            raise NotImplementedError("d = 2 quadrature is implemented for categorical-type families only")
        # p = (s, (1-s) r, (1-s)(1-r)); dp1 dp2 = (1-s) ds dr
        s_grid, r_grid = np.meshgrid(np.arange(n_nodes), np.arange(n_nodes), indexing="ij")
        s_grid, r_grid = s_grid.ravel(), r_grid.ravel()
        probs = np.stack([s[s_grid], one_minus_s[s_grid] * s[r_grid], one_minus_s[s_grid] * one_minus_s[r_grid]], axis=1)
        theta = family.theta_from_probs(probs)
        edges = family.features[:2] - family.features[2]
        log_dmu = (log_ws[s_grid] + log_ws[r_grid] + np.log(one_minus_s[s_grid])
                   + np.log(abs(np.linalg.det(edges))))
    log_det = _log_det_fisher(family, theta)
    # d theta = d mu / det I
    return QuadratureGrid(d, n_nodes, theta, log_dmu - log_det, log_det)


def posterior_weights(family: FiniteExpFamily, summary: SufficientStatSummary, prior: Prior,
                      grid: QuadratureGrid) -> np.ndarray:
    """Normalised posterior weights at the grid nodes."""
    if grid.dim != family.dim:
        raise ValueError("grid dimension does not match family")
    log_lik = family.log_prob_table(grid.theta) @ summary.counts
    log_w = grid.log_dtheta + prior.log_beta(grid.theta) + 0.5 * grid.log_det_fisher + log_lik
    if not np.all(np.isfinite(log_w)):
        raise ValueError("prior is not finite at every quadrature node")
    w = np.exp(log_w - logsumexp(log_w))
    return w / w.sum()


def conjugate_predict(family: FiniteExpFamily, summary: SufficientStatSummary, prior: Prior) -> PredictiveDistribution:
    """Exact posterior predictive ``(counts[y] + a_y) / (t + sum a)`` under a Dirichlet prior."""
    alpha = prior.conjugate_alpha
    if alpha is None:
        raise ValueError(f"no conjugate closed form for prior {prior.kind!r} on family {family.name!r}")
    num = summary.counts + alpha
    return PredictiveDistribution(num / num.sum(), f"bayes-exact:{prior.kind}", {"alpha": alpha})


def quad_posterior_mean(family: FiniteExpFamily, summary: SufficientStatSummary, prior: Prior, f,
                        grid: QuadratureGrid | None = None):
    """Posterior mean of ``f(theta)`` by quadrature.

    ``f`` receives the node array of shape ``(N, d)`` and returns shape ``(N,)``
    or ``(N, m)``.
    """
    grid = make_grid(family) if grid is None else grid
    w = posterior_weights(family, summary, prior, grid)
    vals = np.asarray(f(grid.theta), dtype=float)
    out = np.tensordot(w, vals, axes=1)
    return float(out) if np.ndim(out) == 0 else out


def quad_posterior_predict(family: FiniteExpFamily, summary: SufficientStatSummary, prior: Prior,
                           grid: QuadratureGrid | None = None) -> PredictiveDistribution:
    grid = make_grid(family) if grid is None else grid
    probs = quad_posterior_mean(family, summary, prior, family.prob_table, grid)
    return PredictiveDistribution(probs / probs.sum(), f"bayes-quad:{prior.kind}", {"n_nodes": grid.n_nodes})


def prop4_expansion(family: FiniteExpFamily, summary: SufficientStatSummary, prior: Prior, f,
                    df=None, d2f=None, fit: MLFit | None = None) -> float:
    """Posterior mean of ``f`` to order ``1/t`` around the ML estimate.

    ``f(th) + g' J^{-1} df / t + Tr(J^{-1} d2f) / (2t)`` with ``g = d log beta``:
    in natural coordinates ``-d^2 L = I``, so the ratio of the Lebesgue prior
    density to ``sqrt(det(-d^2 L))`` is the Jeffreys density ``beta``.
    ``df``/``d2f`` are callables of ``theta``; finite differences when omitted.
    """
    if summary.t < 1:
        raise ValueError("prop4_expansion needs t >= 1")
    fit = ml_fit(family, summary) if fit is None else fit
    if not fit.interior:
        raise BoundaryError("posterior expansion needs an interior ML estimate")
    theta = fit.theta
    t = summary.t
    j = observed_information(family, summary, theta)
    grad = central_gradient(lambda th: float(f(th)), theta) if df is None else np.atleast_1d(df(theta))
    hess = central_hessian(lambda th: float(f(th)), theta) if d2f is None else np.atleast_2d(d2f(theta))
    g = prior.grad_log_beta(theta)
    return float(f(theta) + g @ np.linalg.solve(j, grad) / t + 0.5 * np.trace(np.linalg.solve(j, hess)) / t)
