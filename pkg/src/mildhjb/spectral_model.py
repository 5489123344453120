"""Finite spectral truncations of controlled Ornstein-Uhlenbeck dynamics.

The drift is block diagonal: strictly negative 1x1 blocks (heat modes) and
2x2 skew blocks ``[[0, w], [-w, 0]]`` (wave mode pairs in energy coordinates).
Every entry of ``exp(sA)`` is then a single term ``coef * exp(-d s) * trig(w s)``
per block column, which gives closed forms for the covariance and for the
control primitive used by the exact simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SmoothingHypothesisError

_COS, _SIN = 0, 1


@dataclass(frozen=True)
class SpectralModel:
    """Block-diagonal drift ``A`` with noise ``G``, control ``B`` and projection.

    ``drift_blocks`` holds ``("heat", a)`` for a block ``[-a]`` and
    ``("wave", w)`` for ``[[0, w], [-w, 0]]``, in coordinate order.
    """

    drift_blocks: tuple
    noise_matrix: np.ndarray
    control_matrix: np.ndarray
    projection_indices: tuple
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        blocks = tuple((str(k), float(r)) for k, r in self.drift_blocks)
        n = 0
        for kind, rate in blocks:
            if kind == "heat":
                if not rate > 0:
                    raise ConfigError(f"heat block must be strictly negative, got -{rate}")
                n += 1
            elif kind == "wave":
                if not np.isfinite(rate):
                    raise ConfigError("wave rotation rate must be finite")
                n += 2
            else:
                raise ConfigError(f"unknown drift block kind {kind!r}")
        G = np.array(self.noise_matrix, dtype=float, ndmin=2)
        B = np.array(self.control_matrix, dtype=float, ndmin=2)
        if G.shape[0] != n or B.shape[0] != n:
            raise ConfigError(
                f"noise/control matrices need {n} rows, got {G.shape[0]} and {B.shape[0]}")
        proj = tuple(int(i) for i in self.projection_indices)
        if not proj:
            raise ConfigError("projection_indices must be nonempty")
        if min(proj) < 0 or max(proj) >= n or len(set(proj)) != len(proj):
            raise ConfigError(f"projection_indices {proj} out of range for {n} coordinates")
        G.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "drift_blocks", blocks)
        object.__setattr__(self, "noise_matrix", G)
        object.__setattr__(self, "control_matrix", B)
        object.__setattr__(self, "projection_indices", proj)
        object.__setattr__(self, "_terms", _exp_terms(blocks))

    @property
    def n_total(self):
        return self.noise_matrix.shape[0]

    @property
    def n_proj(self):
        return len(self.projection_indices)

    @property
    def d_noise(self):
        return self.noise_matrix.shape[1]

    @property
    def d_control(self):
        return self.control_matrix.shape[1]

    @property
    def growth_bound(self):
        """``(M_sg, omega)`` with ``|exp(tA)| <= M_sg exp(omega t)``."""
        rates = [-r if k == "heat" else 0.0 for k, r in self.drift_blocks]
        return 1.0, max(rates)

    @property
    def generator(self):
        A = np.zeros((self.n_total, self.n_total))
        i = 0
        for kind, rate in self.drift_blocks:
            if kind == "heat":
                A[i, i] = -rate
                i += 1
            else:
                A[i, i + 1] = rate
                A[i + 1, i] = -rate
                i += 2
        return A

    @property
    def commutes(self):
        """True when the projection selects whole drift blocks."""
        sel = set(self.projection_indices)
        i = 0
        for kind, _ in self.drift_blocks:
            size = 1 if kind == "heat" else 2
            inside = [j in sel for j in range(i, i + size)]
            if any(inside) and not all(inside):
                return False
            i += size
        return True

    @property
    def projected_control(self):
        """Rows of ``B`` on the projected coordinates, shape ``(n_proj, d_U)``."""
        return self.control_matrix[list(self.projection_indices)]

    def project(self, x):
        return np.asarray(x, dtype=float)[..., list(self.projection_indices)]

    def flow_matrix(self, t):
        """Dense ``exp(tA)``."""
        return _entry_matrix(self._terms, self.n_total, _exp_values(self._terms, t))

    def projected_flow_matrix(self, t):
        """``P exp(tA)`` restricted to projected coordinates (commuting models)."""
        idx = list(self.projection_indices)
        return self.flow_matrix(t)[np.ix_(idx, idx)]

    def control_primitive(self, t):
        """``int_0^t exp(sA) ds``, used for piecewise-constant controls."""
        return _entry_matrix(self._terms, self.n_total, _exp_integrals(self._terms, t))

    def to_dict(self):
        return {"kind": self.kind, **self.params}


def _exp_terms(blocks):
    """Per-row description of ``exp(sA)``: two (col, coef, decay, freq, trig) terms."""
    rows = []
    i = 0
    for kind, rate in blocks:
        if kind == "heat":
            rows.append([(i, 1.0, rate, 0.0, _COS), (i, 0.0, 0.0, 0.0, _COS)])
            i += 1
        else:
            rows.append([(i, 1.0, 0.0, rate, _COS), (i + 1, 1.0, 0.0, rate, _SIN)])
            rows.append([(i, -1.0, 0.0, rate, _SIN), (i + 1, 1.0, 0.0, rate, _COS)])
            i += 2
    arr = np.array(rows, dtype=float)  # (n, 2, 5)
    return {
        "col": arr[..., 0].astype(int),
        "coef": arr[..., 1],
        "decay": arr[..., 2],
        "freq": arr[..., 3],
        "trig": arr[..., 4].astype(int),
    }


def _exp_values(terms, t):
    arg = terms["freq"] * t
    trig = np.where(terms["trig"] == _COS, np.cos(arg), np.sin(arg))
    return terms["coef"] * np.exp(-terms["decay"] * t) * trig


def _exp_integrals(terms, t):
    return terms["coef"] * _damped_trig_integral(
        terms["decay"], terms["freq"], terms["trig"], t)


def _entry_matrix(terms, n, values):
    M = np.zeros((n, n))
    rows = np.repeat(np.arange(n), 2)
    np.add.at(M, (rows, terms["col"].ravel()), values.ravel())
    return M


def _damped_trig_integral(alpha, beta, trig, t):
    """``int_0^t exp(-alpha s) cos|sin(beta s) ds`` elementwise, closed form."""
    alpha, beta, trig = np.broadcast_arrays(
        np.asarray(alpha, float), np.asarray(beta, float), np.asarray(trig))
    r2 = alpha * alpha + beta * beta
    e = np.exp(-alpha * t)
    cb, sb = np.cos(beta * t), np.sin(beta * t)
    safe = np.where(r2 > 0, r2, 1.0)
    cos_int = np.where(r2 > 0, (alpha - e * (alpha * cb - beta * sb)) / safe, t)
    sin_int = np.where(r2 > 0, (beta - e * (alpha * sb + beta * cb)) / safe, 0.0)
    # small alpha*t loses digits in 1 - exp(-alpha t); use expm1 for pure decay
    pure = (beta == 0) & (alpha > 0)
    cos_int = np.where(pure, -np.expm1(-alpha * t) / np.where(alpha > 0, alpha, 1.0), cos_int)
    return np.where(trig == _COS, cos_int, sin_int)


def flow(model, t, x):
    """Apply ``exp(tA)`` to state vectors ``x`` of shape ``(..., n_total)``."""
    if t < 0:
        raise ValueError("flow needs t >= 0")
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    i = 0
    for kind, rate in model.drift_blocks:
        if kind == "heat":
            out[..., i] = math.exp(-rate * t) * x[..., i]
            i += 1
        else:
            c, s = math.cos(rate * t), math.sin(rate * t)
            q, p = x[..., i], x[..., i + 1]
            out[..., i] = c * q + s * p
            out[..., i + 1] = -s * q + c * p
            i += 2
    return out


def covariance(model, t, projected_only=False):
    """``Q_t = int_0^t exp(sA) G G^T exp(sA^T) ds`` in closed form."""
    if not t > 0:
        raise ValueError("covariance needs t > 0")
    terms = model._terms
    E = model.noise_matrix @ model.noise_matrix.T
    col, coef = terms["col"], terms["coef"]
    d, w, trig = terms["decay"], terms["freq"], terms["trig"]
    # pairwise over (row1, term1, row2, term2)
    c1, c2 = col[:, :, None, None], col[None, None, :, :]
    weight = coef[:, :, None, None] * coef[None, None, :, :] * E[c1, c2]
    alpha = d[:, :, None, None] + d[None, None, :, :]
    w1, w2 = w[:, :, None, None], w[None, None, :, :]
    k1, k2 = trig[:, :, None, None], trig[None, None, :, :]
    plus = _damped_trig_integral(alpha, w1 + w2, _COS, t)
    minus = _damped_trig_integral(alpha, w1 - w2, _COS, t)
    splus = _damped_trig_integral(alpha, w1 + w2, _SIN, t)
    sminus = _damped_trig_integral(alpha, w1 - w2, _SIN, t)
    cc = 0.5 * (minus + plus)
    ss = 0.5 * (minus - plus)
    cs = 0.5 * (splus - sminus)
    sc = 0.5 * (splus + sminus)
    prod = np.select(
        [(k1 == _COS) & (k2 == _COS), (k1 == _SIN) & (k2 == _SIN), k1 == _COS],
        [cc, ss, cs], default=sc)
    Q = (weight * prod).sum(axis=(1, 3))
    Q = 0.5 * (Q + Q.T)
    if projected_only:
        idx = list(model.projection_indices)
        Q = Q[np.ix_(idx, idx)]
    return Q


def stationary_std(model):
    """Per-coordinate stationary standard deviation of the projected state.

    Undamped wave pairs have no stationary law; a horizon of ``10`` time
    units stands in for them.
    """
    rates = [r for k, r in model.drift_blocks if k == "heat"]
    horizon = 10.0 if len(rates) < len(model.drift_blocks) else 10.0 / min(rates)
    return np.sqrt(np.diag(covariance(model, horizon, projected_only=True)))


def dirichlet_coefficient(n, length=math.pi):
    """``<D 1_left, e_n>`` on ``(0, L)``, with ``D 1_left = 1 - xi/L``."""
    if n < 1:
        raise ValueError("mode index starts at 1")
    return math.sqrt(2.0 / length) * length / (n * math.pi)


def build_heat_model(n_modes, length=math.pi, beta=0.0, n_proj=1):
    """Dirichlet heat equation on ``(0, L)`` with left-boundary control."""
    if n_modes < 1 or n_proj < 1 or n_proj > n_modes:
        raise ConfigError("need n_modes >= n_proj >= 1")
    if not length > 0:
        raise ConfigError("domain length must be positive")
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    n = np.arange(1, n_modes + 1)
    eig = (n * math.pi / length) ** 2
    G = np.diag(eig ** (-beta))
    B = np.array([[lam * dirichlet_coefficient(k, length)] for k, lam in zip(n, eig)])
    return SpectralModel(
        drift_blocks=tuple(("heat", lam) for lam in eig),
        noise_matrix=G,
        control_matrix=B,
        projection_indices=tuple(range(n_proj)),
        kind="heat",
        params={"n_modes": int(n_modes), "n_proj": int(n_proj),
                "beta": float(beta), "length": float(length)},
    )


def heat_eigenvalues(model):
    return np.array([r for k, r in model.drift_blocks if k == "heat"])


def build_wave_model(n_mode_pairs, c=1.0, sigma=1.0, n_proj_pairs=1, length=math.pi):
    """Damping-free wave equation with velocity control and velocity noise.

    ``sigma`` is a scalar (``sigma * I`` on the projected pairs) or an
    ``(n_proj_pairs, d_W)`` matrix.
    """
    if n_mode_pairs < 1 or n_proj_pairs < 1 or n_proj_pairs > n_mode_pairs:
        raise ConfigError("need n_mode_pairs >= n_proj_pairs >= 1")
    if not c > 0 or not length > 0:
        raise ConfigError("wave speed and length must be positive")
    sig = np.asarray(sigma, dtype=float)
    if sig.ndim == 0:
        sig = sig * np.eye(n_proj_pairs)
    sig = np.atleast_2d(sig)
    if sig.shape[0] != n_proj_pairs:
        raise ConfigError(f"sigma needs {n_proj_pairs} rows, got {sig.shape[0]}")
    n_total = 2 * n_mode_pairs
    rates = c * np.arange(1, n_mode_pairs + 1) * math.pi / length
    G = np.zeros((n_total, sig.shape[1]))
    G[1:2 * n_proj_pairs:2] = sig
    B = np.zeros((n_total, n_mode_pairs))
    B[np.arange(1, n_total, 2), np.arange(n_mode_pairs)] = 1.0
    sigsig = sig @ sig.T
    if np.linalg.eigvalsh(sigsig).min() <= 1e-12 * max(1.0, np.abs(sigsig).max()):
        raise SmoothingHypothesisError(
            "smoothing hypothesis violated numerically: projected noise "
            "covariance sigma sigma^T is not positive definite")
    return SpectralModel(
        drift_blocks=tuple(("wave", w) for w in rates),
        noise_matrix=G,
        control_matrix=B,
        projection_indices=tuple(range(2 * n_proj_pairs)),
        kind="wave",
        params={"n_mode_pairs": int(n_mode_pairs), "n_proj_pairs": int(n_proj_pairs),
                "c": float(c), "sigma": sig.tolist(), "length": float(length)},
    )


COSINE, LOGISTIC = "cosine", "logistic"


@dataclass(frozen=True)
class CostSpec:
    """Bounded state cost of the projected coordinates.

    ``cosine``: ``amplitude * cos(<weights, x> + phase)`` (zero weights give a
    constant).  ``logistic``: ``amplitude / (1 + exp(-(x^T M x - offset)))``.
    """

    kind: str = COSINE
    amplitude: float = 1.0
    weights: tuple = (1.0,)
    phase: float = 0.0
    matrix: tuple = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind == COSINE:
            object.__setattr__(self, "weights", tuple(np.atleast_1d(np.asarray(self.weights, float))))
        elif self.kind == LOGISTIC:
            M = np.atleast_2d(np.asarray(self.matrix, float))
            if M.shape[0] != M.shape[1]:
                raise ConfigError("logistic cost needs a square matrix")
            object.__setattr__(self, "matrix", tuple(map(tuple, M)))
        else:
            raise ConfigError(f"unknown cost kind {self.kind!r}")

    @property
    def dim(self):
        return len(self.weights) if self.kind == COSINE else len(self.matrix)

    @property
    def bound(self):
        return abs(float(self.amplitude))

    def __call__(self, x_proj):
        x = np.asarray(x_proj, float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"cost expects {self.dim} projected coordinates, got {x.shape[-1]}")
        if self.kind == COSINE:
            return self.amplitude * np.cos(x @ np.asarray(self.weights) + self.phase)
        quad = np.einsum("...i,ij,...j->...", x, np.asarray(self.matrix), x)
        return self.amplitude / (1.0 + np.exp(-(quad - self.offset)))

    def on_state(self, model, x):
        """Cost of full states; only projected coordinates are read."""
        return self(model.project(x))

    def to_dict(self):
        if self.kind == COSINE:
            return {"kind": self.kind, "amplitude": self.amplitude,
                    "weights": list(self.weights), "phase": self.phase}
        return {"kind": self.kind, "amplitude": self.amplitude,
                "matrix": [list(r) for r in self.matrix], "offset": self.offset}
