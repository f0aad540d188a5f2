"""Fisher-metric geometry in natural coordinates and the ML-to-posterior shift field.

In natural coordinates ``d_i I_jk = T_ijk`` (the skewness tensor), so the
Levi-Civita connection of the Fisher metric is ``Gamma^i_jk = 1/2 I^il T_jkl``.
The shift field ``V`` is computed two ways: the skewness contraction
``1/4 I^ij I^kl T_jkl`` and the log-determinant form
``1/2 (nabla^2 L)^{-1} d log det(-I^{-1} nabla^2 L)`` differentiated numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import Prior, QuadratureGrid, make_grid, posterior_weights
from .family import FiniteExpFamily
from .fit import MLFit, SufficientStatSummary, ml_fit, observed_information
from .predictor import BoundaryError

__all__ = [
    "ShiftCheck",
    "jeffreys_density",
    "christoffel",
    "metric_compatibility_residual",
    "shift_vector_skewness",
    "shift_vector_detform",
    "geodesic_center",
    "posterior_shift_check",
]


def jeffreys_density(family: FiniteExpFamily, theta):
    """``sqrt(det I(theta))``."""
    sign, logdet = np.linalg.slogdet(family.fisher_matrix(theta))
    out = np.exp(0.5 * logdet)
    return float(out) if np.ndim(out) == 0 else out


def christoffel(family: FiniteExpFamily, theta) -> np.ndarray:
    """``Gamma[i, j, k] = Gamma^i_{jk}``, symmetric in ``(j, k)``."""
    fisher_inv = np.linalg.inv(family.fisher_matrix(theta))
    return 0.5 * np.einsum("il,jkl->ijk", fisher_inv, family.skewness_tensor(theta))


def metric_compatibility_residual(family: FiniteExpFamily, theta, dfisher=None) -> np.ndarray:
    """``d_l I_jk - Gamma^m_lj I_mk - Gamma^m_lk I_jm``, indexed ``[l, j, k]``.

    ``dfisher[l]`` is the derivative of the Fisher matrix along ``theta_l``;
    pass a finite-difference estimate to use it as an independent check.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    fisher = family.fisher_matrix(theta)
    gamma = christoffel(family, theta)
    if dfisher is None:
        dfisher = family.skewness_tensor(theta)
    return (np.asarray(dfisher) - np.einsum("mlj,mk->ljk", gamma, fisher)
            - np.einsum("mlk,jm->ljk", gamma, fisher))


def shift_vector_skewness(family: FiniteExpFamily, theta_ml) -> np.ndarray:
    """``V^i = 1/4 I^ij I^kl T_jkl`` at the ML parameter."""
    theta_ml = np.atleast_1d(np.asarray(theta_ml, dtype=float))
    fisher_inv = np.linalg.inv(family.fisher_matrix(theta_ml))
    return 0.25 * np.einsum("ij,kl,jkl->i", fisher_inv, fisher_inv, family.skewness_tensor(theta_ml))


def _covariant_hessian(family, summary, theta):
    """``nabla^2 L = d^2 L - Gamma^i_jk d_i L`` for the average log-likelihood ``L``."""
    grad_l = summary.empirical_mean - family.mean_params(theta)
    return -observed_information(family, summary, theta) - np.einsum("ijk,i->jk", christoffel(family, theta), grad_l)


def _log_det_ratio(family, summary, theta):
    m = -np.linalg.solve(family.fisher_matrix(theta), _covariant_hessian(family, summary, theta))
    sign, logdet = np.linalg.slogdet(m)
    if sign <= 0:
        raise FloatingPointError(f"-I^-1 nabla^2 L is not positive definite at theta={theta}")
    return logdet


def _central(func, x, h):
    out = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h[i]
        out[i] = (func(x + e) - func(x - e)) / (2 * h[i])
    return out


def shift_vector_detform(family: FiniteExpFamily, summary: SufficientStatSummary, fit: MLFit | None = None,
                         rel_step: float = 1e-4) -> np.ndarray:
    """Shift field from the log-determinant form, evaluated at the ML parameter.

    The gradient of ``log det(-I^{-1} nabla^2 L)`` uses central differences
    with step ``rel_step * max(1, |theta_i|)``; if the half-step estimate
    disagrees by more than 1e-5 (relative), the two are Richardson-combined.
    """
    if summary.t < 1:
        raise ValueError("shift_vector_detform needs t >= 1")
    fit = ml_fit(family, summary) if fit is None else fit
    if not fit.interior:
        raise BoundaryError("the shift field is defined at an interior ML estimate only")
    theta = fit.theta
    h = rel_step * np.maximum(1.0, np.abs(theta))

    def f(th):
        return _log_det_ratio(family, summary, th)

    g_h = _central(f, theta, h)
    g_half = _central(f, theta, 0.5 * h)
    scale = max(np.max(np.abs(g_half)), 1e-300)
    grad = g_half
    if np.max(np.abs(g_h - g_half)) > 1e-5 * scale:
        grad = (4.0 * g_half - g_h) / 3.0
    v = 0.5 * np.linalg.solve(_covariant_hessian(family, summary, theta), grad)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite finite-difference estimate of the shift field")
    return v


@dataclass(frozen=True)
class ShiftCheck:
    """Measured vs predicted displacement of the posterior center from the ML estimate.

    ``measured`` uses the Fisher-geodesic (Karcher) center of the posterior;
    ``coordinate_mean_shift`` is the plain posterior mean of ``theta`` minus
    the ML estimate, which is only ``O(1/t^2)`` in natural coordinates.
    """

    t: int
    theta_ml: np.ndarray
    center: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray
    coordinate_mean_shift: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.measured - self.predicted)))


def _sphere_karcher_mean(points, weights, tol=1e-15, max_iter=200):
    """Weighted Karcher mean of unit vectors on the sphere."""
    c = weights @ points
    c /= np.linalg.norm(c)
    for _ in range(max_iter):
        cos = points @ c
        v = points - cos[:, None] * c
        norm_v = np.linalg.norm(v, axis=1)
        ang = np.arctan2(norm_v, cos)
        scale = np.divide(ang, norm_v, out=np.zeros_like(ang), where=norm_v > 0)
        g = weights @ (scale[:, None] * v)
        step = np.linalg.norm(g)
        if step == 0:
            break
        c = np.cos(step) * c + np.sin(step) * g / step
        c /= np.linalg.norm(c)
        if step < tol:
            break
    return c


def geodesic_center(family: FiniteExpFamily, theta_nodes: np.ndarray, weights: np.ndarray, theta_ref) -> np.ndarray:
    """Karcher mean, for the Fisher metric, of a weighted point cloud in natural coordinates.

    Categorical-type families are isometric to a piece of the sphere through
    ``x -> sqrt(p(x))``; other one-dimensional families use the arc-length
    coordinate ``s(theta) = int sqrt(I)`` measured from ``theta_ref``.
    """
    if family.is_categorical_type:
        points = np.sqrt(family.prob_table(theta_nodes))
        c = _sphere_karcher_mean(points, weights)
        return family.theta_from_probs(c**2 / np.sum(c**2))
    if family.dim != 1:
        raise NotImplementedError("geodesic center needs a categorical-type family or d = 1")
    ref = float(np.atleast_1d(theta_ref)[0])
    x, w = np.polynomial.legendre.leggauss(64)

    def arclength(th):
        th = np.asarray(th, dtype=float)
        half = 0.5 * (th - ref)
        pts = ref + half[..., None] * (x + 1.0)
        root_i = np.sqrt(family.fisher_matrix(pts[..., None])[..., 0, 0])
        return half * (root_i @ w)

    target = weights @ arclength(theta_nodes[:, 0])
    th = ref
    for _ in range(50):
        step = (target - arclength(th)) / np.sqrt(family.fisher_matrix([th])[0, 0])
        th += step
        if abs(step) < 1e-15 * max(1.0, abs(th)):
            break
    return np.array([th])


def posterior_shift_check(family: FiniteExpFamily, summary: SufficientStatSummary,
                          grid: QuadratureGrid | None = None, prior: Prior | None = None) -> ShiftCheck:
    """Compare the posterior center with ``theta_ml + V(theta_ml) / t``.

    For a prior with Jeffreys density ``beta`` the field is
    ``I^{-1} d log beta + V_jeffreys``; the default prior is Jeffreys.
    """
    fit = ml_fit(family, summary)
    if not fit.interior:
        raise BoundaryError("posterior_shift_check needs an interior ML estimate")
    grid = make_grid(family) if grid is None else grid
    prior = Prior.jeffreys(family) if prior is None else prior
    w = posterior_weights(family, summary, prior, grid)
    center = geodesic_center(family, grid.theta, w, fit.theta)
    coord_mean = w @ grid.theta
    t = summary.t
    v = shift_vector_skewness(family, fit.theta)
    if prior.kind != "jeffreys":
        v = v + np.linalg.solve(family.fisher_matrix(fit.theta), prior.grad_log_beta(fit.theta))
    predicted = v / t
    return ShiftCheck(t, fit.theta, center, center - fit.theta, predicted, coord_mean - fit.theta)
