"""Discretized trajectory lifting ``x -> (t -> P exp(tA) x)`` in weighted L2.

A trajectory ``f`` is stored through the coefficients
``c_i = sqrt(w_i exp(-rho t_i)) f(t_i)`` so that the Euclidean norm of the
coefficient vector is the quadrature of the weighted L2 norm.  This module
is a verification instrument: the solver uses the finite operator from
:func:`~mildhjb.gaussian_semigroup.lambda_finite`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .gaussian_semigroup import _range_checked, lambda_finite, operator_norm, psd_inv_sqrt
from .spectral_model import covariance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LiftedOps:
    rho: float
    times: np.ndarray
    weights: np.ndarray
    upsilon: np.ndarray
    n_proj: int
    eps_reg: float = 1e-12

    @property
    def scale(self):
        return np.sqrt(self.weights * np.exp(-self.rho * self.times))

    def coefficients(self, path_values):
        """Coefficients of a trajectory sampled at the nodes, shape ``(m, n_proj)``."""
        return (self.scale[:, None] * np.asarray(path_values, float)).ravel()

    def norm(self, coeffs):
        return float(np.linalg.norm(coeffs))

    def lift(self, x):
        return self.upsilon @ np.asarray(x, dtype=float)

    def adjoint(self, coeffs):
        return self.upsilon.T @ np.asarray(coeffs, dtype=float)

    def sigma(self, model, t):
        """Lifted noise covariance ``Upsilon Q_t Upsilon^T``."""
        return self.upsilon @ covariance(model, t) @ self.upsilon.T

    def shift_matrix(self, t):
        """Left shift ``f -> f(. + t)`` in coefficient space, per H coordinate.

        Node values are linearly interpolated in time; the trajectory is
        taken as zero beyond the last node.
        """
        ts = self.times
        target = ts + t
        m = len(ts)
        S = np.zeros((m, m))
        j = np.searchsorted(ts, target, side="right") - 1
        inside = (j >= 0) & (j < m - 1)
        frac = np.zeros(m)
        frac[inside] = (target[inside] - ts[j[inside]]) / (ts[j[inside] + 1] - ts[j[inside]])
        rows = np.nonzero(inside)[0]
        S[rows, j[inside]] = 1.0 - frac[inside]
        S[rows, j[inside] + 1] = frac[inside]
        exact = np.isclose(target, ts[-1])
        S[exact, -1] = 1.0
        sc = self.scale
        return (sc[:, None] * S) / sc[None, :]


def build_lifted(model, rho=1.0, m_nodes=200, t_max=20.0, grading=2.0, eps_reg=1e-12):
    """Graded nodes ``t_i = t_max (i/m)**grading`` with trapezoid weights in ``s``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    if m_nodes < 4:
        raise ValueError("need at least 4 time nodes")
    s = np.arange(1, m_nodes + 1) / m_nodes
    times = t_max * s ** grading
    weights = t_max * grading * s ** (grading - 1) / m_nodes
    weights[-1] *= 0.5
    scale = np.sqrt(weights * np.exp(-rho * times))
    idx = list(model.projection_indices)
    blocks = [sc * model.flow_matrix(t)[idx] for t, sc in zip(times, scale)]
    return LiftedOps(rho, times, weights, np.vstack(blocks), model.n_proj, eps_reg)


def lifted_lambda(lifted, model, t):
    """``Sigma_t^{-1/2} Upsilon exp(tA) B`` with spectral regularization."""
    if not t > 0:
        raise ValueError("lifted_lambda needs t > 0")
    M = lifted.upsilon @ model.flow_matrix(t) @ model.control_matrix
    S, V = psd_inv_sqrt(lifted.sigma(model, t), lifted.eps_reg)
    return _range_checked(S, V, M, "Upsilon exp(tA) B")


@dataclass(frozen=True)
class SmoothingFit:
    kappa0: float
    gamma: float
    residual: float
    window: tuple
    status: str

    def to_dict(self):
        return {"kappa0": self.kappa0, "gamma": self.gamma, "residual": self.residual,
                "window": list(self.window), "status": self.status}


def fit_smoothing_exponent(times, norms, residual_threshold=0.05):
    """Least-squares fit of ``log|Lambda(t)| = log kappa0 - gamma log t``.

    The residual is the RMS of the log misfit; above ``residual_threshold``
    the fit is returned with status ``"warning"``.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if times.size < 8 or np.log10(times.max() / times.min()) < 2 - 1e-9:
        raise ValueError("smoothing fit needs >= 8 times spanning >= 2 decades")
    if np.any(times <= 0):
        raise ValueError("smoothing fit needs positive times")
    if np.any(norms <= 0):
        raise ValueError("smoothing fit rejected: nonpositive operator norms")
    X = np.column_stack([np.ones_like(times), -np.log(times)])
    coef, *_ = np.linalg.lstsq(X, np.log(norms), rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - np.log(norms)) ** 2)))
    status = "ok" if resid <= residual_threshold else "warning"
    if status == "warning":
        log.warning("smoothing fit residual %.3g above %.3g", resid, residual_threshold)
    return SmoothingFit(float(np.exp(coef[0])), float(coef[1]), resid,
                        (float(times.min()), float(times.max())), status)


def default_fit_times(n=16, window=(1e-3, 1e-1)):
    return np.geomspace(window[0], window[1], n)


def smoothing_profile(model, times, lifted=None):
    """Operator norms of the finite and (optionally) lifted smoothing maps."""
    finite = np.array([operator_norm(lambda_finite(model, t)) for t in times])
    if lifted is None:
        return finite, None
    lifted_norms = np.array([operator_norm(lifted_lambda(lifted, model, t)) for t in times])
    return finite, lifted_norms
