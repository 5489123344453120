"""Ornstein-Uhlenbeck transition semigroup on projected coordinates.

For a projection that commutes with the drift, the projected state at time
``t`` is Gaussian with mean ``D_t x`` (``D_t`` the projected flow) and
covariance ``Q_N(t) = P Q_t P^T``.  B-directional derivatives of ``P_t phi``
are expectations of ``phi`` against the Gaussian weight
``<Q_N^{-1} D_t P B k, Y>`` with ``Y`` the centred noise; no derivative of
``phi`` is ever taken.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLawError, SmoothingHypothesisError
from .grid import GridFunction
from .spectral_model import covariance

GAUSS_HERMITE = "gauss_hermite_tensor"
MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class GaussianLaw:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.cov.shape[0]

    def factor(self, ridge=None):
        """Lower Cholesky factor; raises on a (numerically) singular law."""
        return cholesky_factor(self.cov, ridge)


def cholesky_factor(cov, ridge=None):
    eig = np.linalg.eigvalsh(cov)
    top = max(eig.max(), 0.0)
    if ridge is not None:
        cov = cov + ridge * max(top, 1e-300) * np.eye(len(cov))
    elif top <= 0 or eig.min() < 1e-14 * top:
        raise DegenerateLawError(
            f"degenerate law: covariance eigenvalues span [{eig.min():.3e}, {top:.3e}]")
    return np.linalg.cholesky(cov)


@dataclass(frozen=True)
class QuadratureRule:
    """Standard-normal integration nodes.

    ``n`` is the per-axis node count for Gauss-Hermite and the sample count
    for Monte Carlo.
    """

    kind: str = GAUSS_HERMITE
    n: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (GAUSS_HERMITE, MONTE_CARLO):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("quadrature needs at least one node")

    def nodes(self, dim, task=0):
        """Nodes ``z`` of shape ``(Q, dim)`` and weights summing to one."""
        if self.kind == GAUSS_HERMITE:
            x, w = np.polynomial.hermite_e.hermegauss(self.n)
            w = w / w.sum()
            mesh = np.meshgrid(*([x] * dim), indexing="ij")
            wmesh = np.meshgrid(*([w] * dim), indexing="ij")
            z = np.stack([m.ravel() for m in mesh], axis=-1)
            return z, np.prod(np.stack([m.ravel() for m in wmesh]), axis=0)
        z = task_rng(self.seed, task).standard_normal((self.n, dim))
        return z, np.full(self.n, 1.0 / self.n)

    @classmethod
    def default_for(cls, dim):
        """Tensor Gauss-Hermite up to three dimensions, Monte Carlo above."""
        if dim <= 3:
            return cls(GAUSS_HERMITE, {1: 24, 2: 12, 3: 8}[dim])
        return cls(MONTE_CARLO, 20000)


def task_rng(seed, task):
    """Counter-based generator keyed by ``(seed, task)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(task)])))


def projected_law(model, t, x_proj):
    """Law of the projected OU state at time ``t`` started from ``x_proj``."""
    D = model.projected_flow_matrix(t)
    return GaussianLaw(np.asarray(x_proj, float) @ D.T, covariance(model, t, projected_only=True))


def _evaluate(phi, points):
    vals = phi(points) if callable(phi) else phi
    vals = np.asarray(vals, dtype=float)
    if np.isnan(vals).any():
        raise ValueError("NaN encountered in integrand")
    return vals


def _batched(model, x_proj):
    x = np.asarray(x_proj, dtype=float)
    if x.shape[-1] != model.n_proj:
        raise ValueError(f"x_proj needs trailing dimension {model.n_proj}")
    return x.reshape(-1, model.n_proj), x.shape[:-1]


def apply_Pt(model, phi, t, x_proj, quad=None, ridge=None):
    """``E phi(D_t x + Y)`` with ``Y ~ N(0, Q_N(t))``.

    ``phi`` is a :class:`GridFunction` or a callable on arrays of projected
    points; ``x_proj`` may carry leading batch axes.
    """
    if not t > 0:
        raise ValueError("apply_Pt needs t > 0")
    quad = quad or QuadratureRule.default_for(model.n_proj)
    x, lead = _batched(model, x_proj)
    law = projected_law(model, t, x)
    L = law.factor(ridge)
    z, w = quad.nodes(model.n_proj)
    pts = law.mean[:, None, :] + (z @ L.T)[None, :, :]
    vals = _evaluate(phi, pts)
    return (vals @ w).reshape(lead)


def grad_B_Pt(model, phi, t, x_proj, quad=None, ridge=None):
    """B-gradient of ``P_t phi`` at ``x_proj`` via the Gaussian weight formula.

    Returns shape ``(..., d_U)``.
    """
    if not t > 0:
        raise ValueError("grad_B_Pt needs t > 0 (the weight is singular at 0)")
    quad = quad or QuadratureRule.default_for(model.n_proj)
    x, lead = _batched(model, x_proj)
    law = projected_law(model, t, x)
    L = law.factor(ridge)
    weight_dirs = np.linalg.solve(L, model.projected_flow_matrix(t) @ model.projected_control)
    z, w = quad.nodes(model.n_proj)
    pts = law.mean[:, None, :] + (z @ L.T)[None, :, :]
    vals = _evaluate(phi, pts)
    return ((vals * w) @ (z @ weight_dirs)).reshape(lead + (model.d_control,))


def psd_inv_sqrt(S, eps_reg=1e-12):
    """Pseudo-inverse square root of a symmetric PSD matrix.

    Returns ``(S^{-1/2}, retained eigenvectors)``; eigenvalues below
    ``eps_reg * max`` count as exact zeros.
    """
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    top = vals.max() if vals.size else 0.0
    keep = vals > eps_reg * top if top > 0 else np.zeros_like(vals, dtype=bool)
    V = vecs[:, keep]
    return (V / np.sqrt(vals[keep])) @ V.T, V


def _range_checked(S_inv_sqrt, V, M, what):
    resid = M - V @ (V.T @ M)
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(resid).max() > 1e-8 * scale:
        raise SmoothingHypothesisError(
            f"smoothing hypothesis violated numerically: {what} leaves the "
            f"noise range (residual {np.abs(resid).max():.3e})")
    return S_inv_sqrt @ M


def lambda_finite(model, t, eps_reg=1e-12):
    """``Q_N(t)^{-1/2} P exp(tA) B``, shape ``(n_proj, d_U)``."""
    if not t > 0:
        raise ValueError("lambda_finite needs t > 0")
    M = model.projected_flow_matrix(t) @ model.projected_control
    S, V = psd_inv_sqrt(covariance(model, t, projected_only=True), eps_reg)
    return _range_checked(S, V, M, "P exp(tA) B")


def operator_norm(M):
    return float(np.linalg.norm(M, 2)) if M.size else 0.0
