"""Exact-transition simulation of controlled OU paths and Monte Carlo costs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian_semigroup import task_rng
from .hamiltonian import feedback_control
from .spectral_model import covariance

ZERO, CONSTANT, FEEDBACK = "zero", "constant", "feedback"
_BLOCK = 1000


@dataclass(frozen=True)
class Policy:
    """Control law evaluated at the start of each step.

    ``feedback`` uses ``u(x) = feedback_control(spec, grad_B v(P x))`` with the
    stored gradient grid of ``value``.
    """

    kind: str = ZERO
    spec: object = None
    u0: tuple = None
    value: object = None

    def __post_init__(self):
        if self.kind not in (ZERO, CONSTANT, FEEDBACK):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == CONSTANT:
            u0 = np.atleast_1d(np.asarray(self.u0, float))
            if self.spec is not None and not self.spec.contains(u0):
                raise ValueError(f"constant control {u0} is not in U")
            object.__setattr__(self, "u0", tuple(u0))
        if self.kind == FEEDBACK and (self.spec is None or self.value is None
                                      or self.value.gradient_values is None):
            raise ValueError("feedback policy needs a spec and a value grid with gradients")

    @classmethod
    def zero(cls, spec=None):
        return cls(ZERO, spec)

    @classmethod
    def constant(cls, u0, spec=None):
        return cls(CONSTANT, spec, u0)

    @classmethod
    def feedback(cls, spec, value):
        return cls(FEEDBACK, spec, value=value)

    def __call__(self, x_proj, d_control):
        n = x_proj.shape[0]
        if self.kind == ZERO:
            return np.zeros((n, d_control))
        if self.kind == CONSTANT:
            return np.broadcast_to(np.asarray(self.u0), (n, d_control)).copy()
        return np.asarray(feedback_control(self.spec, self.value.gradient(x_proj)), float).reshape(n, -1)

    def describe(self):
        return {"kind": self.kind, "u0": list(self.u0) if self.u0 is not None else None}


@dataclass(frozen=True)
class PathEnsemble:
    times: np.ndarray
    states: np.ndarray  # (n_paths, n_steps + 1, n_total)
    controls: np.ndarray  # (n_paths, n_steps, d_U)


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    n_paths: int
    horizon: float
    tail_bound: float

    @property
    def half_width(self):
        return 1.96 * self.stderr + self.tail_bound

    @property
    def interval(self):
        return self.mean - self.half_width, self.mean + self.half_width

    def to_dict(self):
        return {"mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
                "horizon": self.horizon, "tail_bound": self.tail_bound,
                "interval": list(self.interval)}


def psd_sqrt(S):
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _initial_state(model, x0):
    x0 = np.asarray(x0, float).ravel()
    if x0.size == model.n_total:
        return x0
    if x0.size == model.n_proj:
        full = np.zeros(model.n_total)
        full[list(model.projection_indices)] = x0
        return full
    raise ValueError(f"x0 needs {model.n_proj} projected or {model.n_total} full coordinates")


def _steps(model, x0, policy, dt, T_h, n_paths, seed):
    """Yield ``(path slice, states, controls)`` per block of paths.

    Path ``k`` draws its Gaussian increments from the stream keyed
    ``(seed, k)``, so results do not depend on the block size.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T_h >= dt:
        raise ValueError("horizon must be at least one step")
    if n_paths < 1:
        raise ValueError("need at least one path")
    n_steps = int(math.ceil(T_h / dt - 1e-9))
    F = model.flow_matrix(dt)
    CB = model.control_primitive(dt) @ model.control_matrix
    S = psd_sqrt(covariance(model, dt))
    start = _initial_state(model, x0)
    idx = list(model.projection_indices)
    for lo in range(0, n_paths, _BLOCK):
        hi = min(lo + _BLOCK, n_paths)
        noise = np.stack([task_rng(seed, k).standard_normal((n_steps, model.n_total))
                          for k in range(lo, hi)])
        x = np.broadcast_to(start, (hi - lo, model.n_total)).copy()
        states = np.empty((hi - lo, n_steps + 1, model.n_total))
        controls = np.empty((hi - lo, n_steps, model.d_control))
        states[:, 0] = x
        for k in range(n_steps):
            u = policy(x[:, idx], model.d_control)
            controls[:, k] = u
            x = x @ F.T + u @ CB.T + noise[:, k] @ S.T
            states[:, k + 1] = x
        yield slice(lo, hi), states, controls
    return n_steps


def simulate_paths(model, x0, policy, dt, T_h, n_paths, seed=0):
    """Exact Gaussian stepping with piecewise-constant controls."""
    n_steps = int(math.ceil(T_h / dt - 1e-9)) if dt > 0 else 0
    states, controls = [], []
    for _, s, c in _steps(model, x0, policy, dt, T_h, n_paths, seed):
        states.append(s)
        controls.append(c)
    return PathEnsemble(np.arange(n_steps + 1) * dt, np.concatenate(states), np.concatenate(controls))


def horizon_for(lam, bound, target_ci):
    """Horizon whose discounted tail ``bound e^{-lam T}/lam`` is ``0.1 target_ci``."""
    return max(1.0, math.log(bound / (0.1 * target_ci * lam)) / lam) if bound > 0 else 1.0


def evaluate_policy_cost(model, spec, l0, x0, policy, lam, dt=0.01, T_h=None, n_paths=10_000,
                         seed=0, target_ci=0.01):
    """Monte Carlo of ``int_0^T e^{-lam t} (l0(X_t) + l1(u_t)) dt``.

    The state term uses the trapezoid rule on the step grid; the control
    term is integrated exactly for the piecewise-constant control.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    bound = float(getattr(l0, "bound", np.nan))
    tail_scale = (bound if np.isfinite(bound) else 0.0) + spec.cost_sup
    T_h = horizon_for(lam, tail_scale, target_ci) if T_h is None else float(T_h)
    totals = np.empty(n_paths)
    idx = list(model.projection_indices)
    for sl, states, controls in _steps(model, x0, policy, dt, T_h, n_paths, seed):
        n_steps = controls.shape[1]
        t = np.arange(n_steps + 1) * dt
        disc = np.exp(-lam * t)
        state_cost = np.asarray(l0(states[:, :, idx]), float) * disc
        trap = dt * (state_cost[:, 1:-1].sum(axis=1) + 0.5 * (state_cost[:, 0] + state_cost[:, -1]))
        step_disc = disc[:-1] * (-math.expm1(-lam * dt)) / lam
        ctrl = np.asarray(spec.cost(controls), float) @ step_disc
        totals[sl] = trap + ctrl
        if not np.all(spec.contains(controls)):
            raise AssertionError("policy emitted a control outside U")
    horizon = n_steps * dt
    tail = tail_scale * math.exp(-lam * horizon) / lam
    stderr = float(totals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else float("inf")
    return CostEstimate(float(math.fsum(totals) / n_paths), stderr, int(n_paths), horizon, tail)
