"""Finite-alphabet exponential families in natural coordinates.

A family on symbols ``0..k-1`` is given by positive base weights ``q(x)`` and a
feature map ``phi(x)`` in R^d::

    p_theta(x) = q(x) exp(theta . phi(x) - A(theta))
    A(theta)   = log sum_x q(x) exp(theta . phi(x))

Every moment (mean, Fisher matrix, skewness tensor) is an exact sum over the
alphabet. All methods accept a single parameter of shape ``(d,)`` or a batch
of shape ``(..., d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "DegenerateFamilyError",
    "FiniteExpFamily",
    "make_bernoulli",
    "make_categorical",
    "make_custom",
    "parse_family",
]


class DegenerateFamilyError(ValueError):
    """Feature covariance is singular, so the Fisher matrix is not invertible."""


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FiniteExpFamily:
    """Exponential family over a finite alphabet.

    Parameters
    ----------
    base_weights : array_like, shape (k,)
        Strictly positive base measure ``q(x)``.
    features : array_like, shape (k, d)
        Row ``x`` is the sufficient statistic ``phi(x)``.
    name : str
        Label used in reports.
    """

    base_weights: np.ndarray
    features: np.ndarray
    name: str = "custom"
    _log_base: np.ndarray = field(init=False, repr=False)
    _sym_index: tuple = field(init=False, repr=False)

    def __post_init__(self):
        q = np.asarray(self.base_weights, dtype=float)
        phi = np.asarray(self.features, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        if q.ndim != 1 or q.size < 2:
            raise ValueError("base_weights must be a vector with at least two symbols")
        if phi.ndim != 2 or phi.shape[0] != q.size:
            raise ValueError(f"features must have shape ({q.size}, d), got {phi.shape}")
        if phi.shape[1] < 1:
            raise ValueError("parameter dimension must be at least 1")
        if not (np.all(np.isfinite(q)) and np.all(q > 0)):
            raise ValueError("base_weights must be finite and strictly positive")
        if not np.all(np.isfinite(phi)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "base_weights", _readonly(q))
        object.__setattr__(self, "features", _readonly(phi))
        object.__setattr__(self, "_log_base", _readonly(np.log(q)))
        d = phi.shape[1]
        grid = np.indices((d, d, d)).reshape(3, -1)
        sorted_idx = np.sort(grid, axis=0)
        object.__setattr__(self, "_sym_index", tuple(sorted_idx[i].reshape(d, d, d) for i in range(3)))

        fisher0 = self.fisher_matrix(np.zeros(d))
        try:
            np.linalg.cholesky(fisher0)
        except np.linalg.LinAlgError:
            raise DegenerateFamilyError(
                f"feature covariance at theta=0 is not positive definite "
                f"(eigenvalues {np.linalg.eigvalsh(fisher0)}); features are affinely dependent"
            ) from None
        eig = np.linalg.eigvalsh(fisher0)
        if eig[0] <= 1e-12 * eig[-1]:
            raise DegenerateFamilyError(
                f"feature covariance at theta=0 is numerically singular (eigenvalues {eig})"
            )

    @property
    def alphabet_size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_categorical_type(self) -> bool:
        """True when ``k = d + 1``, i.e. the family is the full simplex.

        Non-degeneracy then makes the feature rows affinely independent, so the
        ML distribution is the empirical frequency vector and every distribution
        on the alphabet has exactly one natural parameter.
        """
        return self.alphabet_size == self.dim + 1

    def _theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0 and self.dim == 1:
            theta = theta.reshape(1)
        if theta.shape[-1:] != (self.dim,):
            raise ValueError(f"expected natural parameter(s) with trailing dimension {self.dim}, got {theta.shape}")
        return theta

    def logits(self, theta) -> np.ndarray:
        """Unnormalised log-probabilities ``log q(x) + theta . phi(x)``."""
        return self._theta(theta) @ self.features.T + self._log_base

    def log_partition(self, theta) -> np.ndarray | float:
        out = logsumexp(self.logits(theta), axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def log_prob_table(self, theta) -> np.ndarray:
        z = self.logits(theta)
        return z - logsumexp(z, axis=-1, keepdims=True)

    def prob_table(self, theta) -> np.ndarray:
        """``p_theta(x)`` for every symbol; sums to one along the last axis."""
        p = np.exp(self.log_prob_table(theta))
        return p / p.sum(axis=-1, keepdims=True)

    def mean_params(self, theta) -> np.ndarray:
        return self.prob_table(theta) @ self.features

    def _centered(self, theta):
        p = self.prob_table(theta)
        mu = p @ self.features
        return p, self.features - mu[..., None, :]

    def fisher_matrix(self, theta) -> np.ndarray:
        """Covariance of ``phi`` under ``p_theta`` (the Fisher matrix in natural coordinates)."""
        p, c = self._centered(theta)
        fisher = np.einsum("...x,...xi,...xj->...ij", p, c, c)
        return 0.5 * (fisher + np.swapaxes(fisher, -1, -2))

    def skewness_tensor(self, theta) -> np.ndarray:
        """Third central moment of ``phi``, ``T_jkl = E[s_j s_k s_l]`` with ``s = phi - mu``.

        Only the entries with sorted indices are taken from the enumeration and
        mirrored to the other orderings, so the result is exactly symmetric.
        """
        p, c = self._centered(theta)
        raw = np.einsum("...x,...xi,...xj,...xk->...ijk", p, c, c, c)
        i, j, k = self._sym_index
        return raw[..., i, j, k]

    def score(self, theta, y: int) -> np.ndarray:
        """Gradient ``d/dtheta log p_theta(y) = phi(y) - mu(theta)``."""
        return self.features[y] - self.mean_params(theta)

    def log_prob_hessians(self, theta) -> np.ndarray:
        """Hessian of ``log p_theta(x)`` for every symbol, shape ``(k, d, d)``.

        In natural coordinates this is ``-I(theta)`` whatever ``x`` is.
        """
        fisher = self.fisher_matrix(theta)
        return np.broadcast_to(-fisher, (self.alphabet_size,) + fisher.shape).copy()

    def theta_from_probs(self, probs) -> np.ndarray:
        """Natural parameter of a strictly positive distribution (categorical-type families only).

        Solves ``phi(x) . theta - A = log p(x) - log q(x)`` for ``(theta, A)``.
        """
        if not self.is_categorical_type:
            raise ValueError("theta_from_probs needs a family with alphabet_size == dim + 1")
        probs = np.asarray(probs, dtype=float)
        system = np.hstack([self.features, -np.ones((self.alphabet_size, 1))])
        rhs = np.log(probs) - self._log_base
        sol = np.linalg.solve(system, rhs.reshape(-1, self.alphabet_size).T).T
        return sol[:, : self.dim].reshape(probs.shape[:-1] + (self.dim,))

    def sample(self, theta, seed, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. symbols from ``p_theta`` with a private generator seeded by ``seed``."""
        if n < 0:
            raise ValueError("n must be non-negative")
        rng = np.random.default_rng(seed)
        return rng.choice(self.alphabet_size, size=n, p=self.prob_table(theta)).astype(np.int64)


def make_bernoulli() -> FiniteExpFamily:
    """Symbols ``0`` (tails) and ``1`` (heads), ``phi(x) = x``."""
    return FiniteExpFamily(np.ones(2), np.array([[0.0], [1.0]]), name="bernoulli")


def make_categorical(k: int) -> FiniteExpFamily:
    """Categorical on ``k`` symbols; the last symbol is the reference with zero features."""
    if int(k) != k or k < 2:
        raise ValueError(f"categorical family needs k >= 2, got {k}")
    k = int(k)
    return FiniteExpFamily(np.ones(k), np.eye(k)[:, : k - 1], name=f"categorical:{k}")


def make_custom(base_weights, features, name: str = "custom") -> FiniteExpFamily:
    return FiniteExpFamily(base_weights, features, name=name)


def parse_family(text: str) -> FiniteExpFamily:
    """Build a family from ``bernoulli``, ``categorical:K`` or ``custom:<path.json>``."""
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind == "bernoulli" and not arg:
        return make_bernoulli()
    if kind == "categorical":
        try:
            k = int(arg)
        except ValueError:
            raise ValueError(f"bad categorical size in {text!r}") from None
        return make_categorical(k)
    if kind == "custom":
        path = Path(arg)
        doc = json.loads(path.read_text())
        try:
            return make_custom(doc["base"], doc["features"], name=f"custom:{path.name}")
        except KeyError as exc:
            raise ValueError(f"{path}: missing key {exc.args[0]!r}") from None
    raise ValueError(f"unknown family specification {text!r}")
