"""Resolvent, Picard iteration and discount continuation for the mild HJB.

The mild equation ``v = T_lam[l0 + H_min(grad_B v)]`` is solved on a tensor
grid over projected coordinates.  ``T_lam = int_0^inf exp(-lam t) P_t dt`` is
discretized once per discount into a linear map from grid values to values
and B-gradients at the grid nodes; every Picard step is then one product.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import gamma as gamma_fn, gammainc

from .errors import ConfigError, ConvergenceError, QuadratureBudgetError
from .gaussian_semigroup import QuadratureRule, cholesky_factor, lambda_finite, operator_norm
from .grid import GridFunction, interp_stencil, uniform_axes
from .hamiltonian import h_min
from .lifting import default_fit_times, fit_smoothing_exponent
from .spectral_model import covariance, stationary_std

log = logging.getLogger(__name__)

_DEFAULT_NODES = {1: 1601, 2: 81, 3: 25}
_DENSE_MAX_NODES = 2500
_ASSEMBLE_MAX_TRIPLES = 30_000_000


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and iteration controls.

    ``box`` and ``window`` are half-widths per projected coordinate.  ``None``
    derives the box from the stationary law.  The default reporting window
    trims ``window_margin`` stationary deviations from each side of the box
    (never below half of it), which keeps sup norms clear of the boundary
    layer left by clamped interpolation.
    """

    lam: float = 1.0
    gamma: float = 0.5
    t_max: float = None
    n_head: int = 24
    n_panel: int = 8
    panel_ratio: float = 2.0
    box: tuple = None
    n_grid: int = None
    k_sigma: float = 6.0
    tau_pic: float = 1e-5
    max_iter: int = 500
    nu: float = None
    tau_out: float = 1e-5
    max_outer: int = 2000
    theta: float = 1.0
    theta_contr: float = 0.9
    quad: QuadratureRule = None
    budget_tol: float = 1e-3
    window: tuple = None
    window_margin: float = 1.5
    eps_reg: float = 1e-12

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        for name in ("tau_pic", "tau_out", "budget_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.theta <= 1:
            raise ConfigError("damping theta must lie in (0, 1]")
        if not 0 < self.theta_contr < 1:
            raise ConfigError("theta_contr must lie in (0, 1)")
        if self.k_sigma < 4:
            raise ConfigError("k_sigma must be at least 4")
        if self.n_head < 2 or self.n_panel < 2 or self.panel_ratio <= 1:
            raise ConfigError("time mesh needs n_head, n_panel >= 2 and panel_ratio > 1")
        if self.max_iter < 1 or self.max_outer < 1:
            raise ConfigError("iteration limits must be positive")
        if self.t_max is not None and not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if self.nu is not None and not self.nu > 0:
            raise ConfigError("nu must be positive")
        if not self.window_margin >= 0:
            raise ConfigError("window_margin must be nonnegative")

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, QuadratureRule):
                v = {"kind": v.kind, "n": v.n, "seed": v.seed}
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


@dataclass
class ConvergenceTrace:
    deltas: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)

    def record(self, delta, residual, t0):
        if delta < 0:
            raise ValueError("deltas are nonnegative")
        if self.deltas and self.deltas[-1] > 0:
            self.ratios.append(delta / self.deltas[-1])
        self.deltas.append(float(delta))
        self.residuals.append(float(residual))
        self.wall_clock.append(time.perf_counter() - t0)

    @property
    def iterations(self):
        return len(self.deltas)

    def observed_ratio(self, skip=0):
        """Geometric mean of the contraction ratios after ``skip`` leading ones."""
        r = np.asarray(self.ratios[skip:], float)
        r = r[r > 0]
        return float(np.exp(np.mean(np.log(r)))) if r.size else 0.0

    def to_dict(self, wall_clock=False):
        out = {"iterations": self.iterations, "deltas": self.deltas, "ratios": self.ratios,
               "residuals": self.residuals}
        if self.inner_iterations:
            out["inner_iterations"] = self.inner_iterations
        if wall_clock:
            out["wall_clock"] = self.wall_clock
        return out


def default_t_max(lam, tau):
    """Smallest ``T`` with ``exp(-lam T) / lam <= 0.1 tau``, at least 1."""
    return max(1.0, math.log(1.0 / (0.1 * tau * lam)) / lam)


def time_mesh(lam, gamma=0.5, t_max=None, n_head=24, n_panel=8, panel_ratio=2.0, tau=1e-5):
    """Nodes ``t_i`` and discounted weights ``c_i`` with ``sum c_i f(t_i) ~ int e^{-lam t} f``.

    ``[0, min(1, T)]`` uses Gauss-Legendre in ``s`` with ``t = s**(1/(1-gamma))``,
    which removes a ``t**-gamma`` singularity; ``[1, T]`` uses geometric panels.
    The last node sits at ``T`` with weight ``exp(-lam T)/lam``, so the tail is
    carried by the value at ``T`` and constants are integrated exactly.
    """
    T = default_t_max(lam, tau) if t_max is None else float(t_max)
    p = 1.0 / (1.0 - gamma)
    x, w = np.polynomial.legendre.leggauss(n_head)
    s, ws = 0.5 * (x + 1.0), 0.5 * w
    head = min(1.0, T)
    times = [head * s ** p]
    weights = [head * p * s ** (p - 1.0) * ws]
    xp, wp = np.polynomial.legendre.leggauss(n_panel)
    a = head
    while a < T * (1 - 1e-12):
        b = min(a * panel_ratio, T)
        if T - b < 0.25 * (b - a):
            b = T
        times.append(a + 0.5 * (b - a) * (xp + 1.0))
        weights.append(0.5 * (b - a) * wp)
        a = b
    t = np.concatenate(times)
    c = np.concatenate(weights) * np.exp(-lam * t)
    return np.append(t, T), np.append(c, math.exp(-lam * T) / lam)


def contraction_constant(kappa0, gamma, lam):
    """``kappa0 int_0^inf e^{-lam t} max(1, t^-gamma) dt`` in closed form."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    head = lam ** (gamma - 1.0) * gamma_fn(1.0 - gamma) * gammainc(1.0 - gamma, lam)
    return float(kappa0 * (head + math.exp(-lam) / lam))


def smoothing_fit(model, times=None, eps_reg=1e-12):
    times = default_fit_times() if times is None else np.asarray(times, float)
    norms = [operator_norm(lambda_finite(model, t, eps_reg)) for t in times]
    return fit_smoothing_exponent(times, norms)


def estimate_lambda0(model, spec, cfg=None, fit=None, bracket=(1e-3, 1e6)):
    """Smallest discount with ``L_H * C_{lam,gamma} <= theta_contr`` (bisection in log lam)."""
    cfg = cfg or SolverConfig()
    lip = spec.lipschitz
    lo, hi = bracket
    if lip == 0:
        return lo
    if fit is None:
        fit = smoothing_fit(model, eps_reg=cfg.eps_reg)
    if fit is None or not np.isfinite(fit.kappa0):
        raise ValueError("estimate_lambda0 needs a smoothing fit")
    if fit.gamma >= 1:
        raise ValueError(f"fitted exponent {fit.gamma:.3f} is not integrable")

    def ok(lam):
        return lip * contraction_constant(fit.kappa0, fit.gamma, lam) <= cfg.theta_contr

    if ok(lo):
        return lo
    if not ok(hi):
        raise ValueError("no discount in the search bracket meets the contraction threshold")
    a, b = math.log(lo), math.log(hi)
    while b - a > 1e-9:
        m = 0.5 * (a + b)
        a, b = (a, m) if ok(math.exp(m)) else (m, b)
    return math.exp(b)


def solver_axes(model, spec, cfg):
    """Tensor grid covering ``k_sigma`` stationary deviations plus the mean excursion."""
    if cfg.box is not None:
        half = np.broadcast_to(np.asarray(cfg.box, float), (model.n_proj,))
    else:
        std = stationary_std(model)
        rates = _projected_decay(model)
        pb = np.abs(model.projected_control).sum(axis=1) * spec.lipschitz
        excursion = np.where(rates > 0, pb / np.where(rates > 0, rates, 1.0), pb)
        half = cfg.k_sigma * std + excursion
    n = cfg.n_grid or _DEFAULT_NODES.get(model.n_proj, 15)
    return uniform_axes(half, n)


def _projected_decay(model):
    rates = []
    for kind, r in model.drift_blocks:
        rates.extend([r] if kind == "heat" else [0.0, 0.0])
    return np.asarray(rates)[list(model.projection_indices)]


def _grid_nodes(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def window_mask(model, axes, cfg):
    """Boolean mask of grid nodes inside the reporting window."""
    nodes = _grid_nodes(axes)
    centers = np.array([0.5 * (a[0] + a[-1]) for a in axes])
    if cfg.window is None:
        box = np.array([0.5 * (a[-1] - a[0]) for a in axes])
        half = np.maximum(box - cfg.window_margin * stationary_std(model), 0.5 * box)
    else:
        half = np.broadcast_to(np.asarray(cfg.window, float), (len(axes),))
    return np.all(np.abs(nodes - centers) <= half * (1 + 1e-12), axis=1)


def _check(cond, msg):
    if not cond:
        raise AssertionError(msg)


class ResolventOperator:
    """``psi -> (T_lam psi, grad_B T_lam psi)`` at the grid nodes.

    Per time node ``t_i`` the projected law is ``N(D_i x, L_i L_i^T)``; with
    standard-normal nodes ``z_j`` the value is ``sum_i c_i sum_j w_j psi(D_i x + L_i z_j)``
    and the gradient carries the extra weight ``z_j^T L_i^{-1} D_i P B``.
    Grid arguments are interpolated multilinearly, so the discrete operator
    is positive and maps constants to constants times ``sum c_i = 1/lam``.
    """

    def __init__(self, model, axes, lam, cfg=None):
        cfg = cfg or SolverConfig(lam=lam)
        self.model = model
        self.axes = tuple(np.asarray(a, float) for a in axes)
        self.lam = float(lam)
        self.times, self.coeffs = time_mesh(lam, cfg.gamma, cfg.t_max, cfg.n_head,
                                            cfg.n_panel, cfg.panel_ratio, cfg.tau_pic)
        self.quad = cfg.quad or QuadratureRule.default_for(model.n_proj)
        self.z, self.w = self.quad.nodes(model.n_proj)
        self.nodes = _grid_nodes(self.axes)
        b = model.projected_control
        self._D, self._L, self._H = [], [], []
        for t in self.times:
            D = model.projected_flow_matrix(t)
            L = cholesky_factor(covariance(model, t, projected_only=True))
            self._D.append(D)
            self._L.append(L)
            self._H.append(np.linalg.solve(L, D @ b))
        # sup of the discrete gradient per unit sup of psi is at most this
        self.gradient_constant = float(sum(c * operator_norm(H) for c, H in zip(self.coeffs, self._H)))
        self._matrix = None
        self._assembled = False

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def d_control(self):
        return self.model.d_control

    @property
    def t_max(self):
        return float(self.times[-1])

    def tail_bound(self, sup_psi):
        return math.exp(-self.lam * self.t_max) * sup_psi / self.lam

    def _points(self, i, x=None):
        x = self.nodes if x is None else x
        return (x @ self._D[i].T)[:, None, :] + (self.z @ self._L[i].T)[None, :, :]

    def _row_weights(self, i):
        """Per (node, quadrature point) weights for value and gradient rows."""
        base = self.coeffs[i] * self.w
        return base, base[:, None] * (self.z @ self._H[i])

    def _triples(self, i):
        n, q = self.n_nodes, len(self.w)
        idx, wts = interp_stencil(self.axes, self._points(i))
        corners = wts.shape[1]
        vw, gw = self._row_weights(i)
        rows = np.repeat(np.arange(n), q * corners)
        cols = idx.ravel()
        wts = wts.reshape(n, q, corners)
        data = [(wts * vw[None, :, None]).ravel()]
        for k in range(self.d_control):
            data.append((wts * gw[None, :, k, None]).ravel())
        return rows, cols, data

    def _assemble(self):
        self._assembled = True
        n = self.n_nodes
        per_node = n * len(self.w) * 2 ** len(self.axes)
        if per_node * len(self.times) > _ASSEMBLE_MAX_TRIPLES and n > _DENSE_MAX_NODES:
            log.info("resolvent: matrix-free application (%d nodes)", n)
            return
        m = 1 + self.d_control
        dense = n <= _DENSE_MAX_NODES
        total = np.zeros((m * n, n)) if dense else None
        for i in range(len(self.times)):
            rows, cols, data = self._triples(i)
            all_rows = np.concatenate([rows + k * n for k in range(m)])
            block = sparse.coo_matrix((np.concatenate(data), (all_rows, np.tile(cols, m))),
                                      shape=(m * n, n)).tocsr()
            if dense:
                total += block.toarray()
            else:
                total = block if total is None else total + block
        self._matrix = total

    def apply(self, values):
        """Values and gradients of ``T_lam`` applied to grid values ``(n_nodes,)``."""
        psi = np.asarray(values, float).ravel()
        if psi.size != self.n_nodes:
            raise ValueError(f"expected {self.n_nodes} grid values, got {psi.size}")
        if not self._assembled:
            self._assemble()
        n = self.n_nodes
        if self._matrix is not None:
            out = self._matrix @ psi
            v, g = out[:n], out[n:].reshape(self.d_control, n).T
        else:
            v, g = np.zeros(n), np.zeros((n, self.d_control))
            for i in range(len(self.times)):
                idx, wts = interp_stencil(self.axes, self._points(i))
                vals = (psi[idx] * wts).sum(axis=1).reshape(n, -1)
                vw, gw = self._row_weights(i)
                v += vals @ vw
                g += vals @ gw
        self._check_bounds(v, g, float(np.abs(psi).max()) if psi.size else 0.0)
        return v, g

    def apply_callable(self, func):
        """Same as :meth:`apply` with ``psi`` evaluated exactly at the sample points."""
        n = self.n_nodes
        v, g = np.zeros(n), np.zeros((n, self.d_control))
        sup = 0.0
        for i in range(len(self.times)):
            vals = np.asarray(func(self._points(i)), float)
            if np.isnan(vals).any():
                raise ValueError("NaN encountered in integrand")
            sup = max(sup, float(np.abs(vals).max()))
            vw, gw = self._row_weights(i)
            v += vals @ vw
            g += vals @ gw
        self._check_bounds(v, g, sup)
        return v, g

    def _check_bounds(self, v, g, sup):
        slack = 1e-10 * max(sup, 1.0)
        _check(np.abs(v).max() <= sup * float(self.coeffs.sum()) + slack
               and float(self.coeffs.sum()) <= (1 + 1e-10) / self.lam,
               "resolvent bound |T psi| <= |psi| / lambda violated")
        if g.size:
            _check(np.linalg.norm(g, axis=1).max() <= self.gradient_constant * sup * (1 + 1e-8) + slack,
                   "resolvent gradient bound violated")


def interpolation_estimate(values):
    """Multilinear interpolation error proxy: max second difference over 8."""
    vals = np.asarray(values, float)
    est = 0.0
    for k in range(vals.ndim):
        if vals.shape[k] >= 3:
            est = max(est, float(np.abs(np.diff(vals, n=2, axis=k)).max()) / 8.0)
    return est


def _as_source(axes, psi):
    """Split a source into (callable part, grid values) for the resolvent."""
    if isinstance(psi, GridFunction):
        if any(a.shape != b.shape or np.any(a != b) for a, b in zip(psi.axes, axes)):
            return psi, None
        return None, psi.values.ravel()
    if callable(psi):
        return psi, None
    c = float(psi)
    return (lambda x: np.full(np.shape(x)[:-1], c)), None


def resolvent_apply(model, psi, lam, cfg=None, axes=None, operator=None, spec=None):
    """``T_lam psi`` with its B-gradient as a :class:`GridFunction`.

    ``psi`` may be a grid function, a callable on projected points or a
    constant.  The error budget (truncation tail plus an interpolation
    proxy) is stored in ``meta`` and must stay below ``cfg.budget_tol``.
    """
    cfg = cfg or SolverConfig(lam=lam)
    if operator is None:
        if axes is None:
            if spec is None:
                from .hamiltonian import HamiltonianSpec
                spec = HamiltonianSpec(control_kind="points", points=((0.0,) * model.d_control,),
                                       dim=model.d_control, l1_coeff=0.0)
            axes = solver_axes(model, spec, cfg)
        operator = ResolventOperator(model, axes, lam, cfg)
    func, grid = _as_source(operator.axes, psi)
    if grid is not None:
        v, g = operator.apply(grid)
        sup = float(np.abs(grid).max())
        interp = interpolation_estimate(grid.reshape(tuple(len(a) for a in operator.axes))) / lam
    else:
        v, g = operator.apply_callable(func)
        sup = float(np.abs(func(operator.nodes)).max())
        interp = 0.0
    budget = operator.tail_bound(sup) + interp
    if budget > cfg.budget_tol:
        raise QuadratureBudgetError(
            f"resolvent error budget {budget:.3e} exceeds tolerance {cfg.budget_tol:.3e} "
            f"(tail {operator.tail_bound(sup):.3e}, interpolation {interp:.3e})")
    out = GridFunction(operator.axes, v, g)
    out.meta = {"error_budget": budget, "gradient_constant": operator.gradient_constant}
    return out


class HJBProblem:
    """One cost/Hamiltonian pair on a fixed grid with per-discount operator caches."""

    def __init__(self, model, l0, spec, cfg=None, axes=None, cache=None):
        self.model = model
        self.l0 = l0
        self.spec = spec
        self.cfg = cfg or SolverConfig()
        if spec.d_control != model.d_control:
            raise ConfigError(
                f"control dimension mismatch: model {model.d_control}, Hamiltonian {spec.d_control}")
        self.axes = tuple(axes) if axes is not None else solver_axes(model, spec, self.cfg)
        self.shape = tuple(len(a) for a in self.axes)
        self.mask = window_mask(self.model, self.axes, self.cfg)
        self._ops = {} if cache is None else cache
        self._bases = {}
        self._fit = None

    def with_cost(self, l0):
        """Same grid and operators, different state cost."""
        return HJBProblem(self.model, l0, self.spec, self.cfg, self.axes, self._ops)

    @property
    def nodes(self):
        return _grid_nodes(self.axes)

    def operator(self, lam):
        key = float(lam)
        if key not in self._ops:
            self._ops[key] = ResolventOperator(self.model, self.axes, key, self.cfg)
        return self._ops[key]

    def base(self, lam):
        """``T_lam l0`` (values, gradients, sup of l0 seen by the quadrature)."""
        key = float(lam)
        if key not in self._bases:
            op = self.operator(lam)
            func, grid = _as_source(self.axes, self.l0)
            if grid is not None:
                v, g = op.apply(grid)
                sup = float(np.abs(grid).max())
                interp = interpolation_estimate(grid.reshape(self.shape)) / lam
            else:
                v, g = op.apply_callable(func)
                sup = _cost_bound(self.l0, self.nodes)
                interp = 0.0
            self._bases[key] = (v, g, sup, interp)
        return self._bases[key]

    @property
    def fit(self):
        if self._fit is None:
            self._fit = smoothing_fit(self.model, eps_reg=self.cfg.eps_reg)
        return self._fit

    def lambda0(self):
        return estimate_lambda0(self.model, self.spec, self.cfg, self.fit)

    def contraction_bound(self, lam):
        """Fitted ``C_{lam,gamma} L_H``."""
        return contraction_constant(self.fit.kappa0, self.fit.gamma, lam) * self.spec.lipschitz

    def _hamiltonian(self, g):
        return np.asarray(h_min(self.spec, g), float).reshape(-1)

    def _sup(self, x):
        return float(np.abs(np.asarray(x)[self.mask]).max()) if x.size else 0.0

    def _grid(self, v, g, **meta):
        out = GridFunction(self.axes, v.reshape(self.shape), g.reshape(self.shape + (-1,)))
        out.meta = meta
        return out

    def picard(self, lam, init=None, extra=None, tol=None, max_iter=None):
        """Fixed point of ``v = T_lam[l0 + extra + H_min(grad v)]``.

        ``extra`` is an additional grid source (used by continuation);
        ``init`` warm-starts from a grid function's stored gradient.
        """
        cfg = self.cfg
        tol = cfg.tau_pic if tol is None else tol
        max_iter = cfg.max_iter if max_iter is None else max_iter
        op = self.operator(lam)
        bv, bg, sup_l0, interp = self.base(lam)
        sup_src = sup_l0
        if extra is not None:
            extra = np.asarray(extra, float).ravel()
            ev, eg = op.apply(extra)
            bv, bg = bv + ev, bg + eg
            sup_src += float(np.abs(extra).max())
            interp += interpolation_estimate(extra.reshape(self.shape)) / lam
        n = op.n_nodes
        if init is None:
            v, g = np.zeros(n), np.zeros((n, op.d_control))
        else:
            v = np.asarray(init.values, float).ravel().copy()
            g = (np.zeros((n, op.d_control)) if init.gradient_values is None
                 else init.gradient_values.reshape(n, -1).copy())
        trace = ConvergenceTrace()
        t0 = time.perf_counter()
        theta = cfg.theta
        ham_interp = 0.0
        for _ in range(max_iter):
            ham = self._hamiltonian(g)
            dv, dg = op.apply(ham)
            v_new, g_new = bv + dv, bg + dg
            residual = self._sup(v_new - v)
            if theta < 1:
                v_new = (1 - theta) * v + theta * v_new
                g_new = (1 - theta) * g + theta * g_new
            delta = self._sup(v_new - v) if init is not None or trace.iterations else self._sup(v_new)
            trace.record(delta, residual, t0)
            v, g = v_new, g_new
            if self.spec.lipschitz == 0 or delta <= tol:
                ham_interp = interpolation_estimate(ham.reshape(self.shape)) / lam
                break
        else:
            raise ConvergenceError(
                f"Picard iteration did not reach {tol:.1e} in {max_iter} iterations "
                f"(last delta {trace.deltas[-1]:.3e})", trace=trace)
        if lam < self.lambda0() * (1 - 1e-12) and self.spec.lipschitz > 0:
            log.warning("picard_solve at lambda=%.4g below the contraction estimate %.4g",
                        lam, self.lambda0())
        bound = (sup_src + self.spec.cost_sup) / lam
        _check(np.abs(v).max() <= bound * (1 + 1e-9) + 1e-12,
               f"solution bound violated: {np.abs(v).max():.6g} > {bound:.6g}")
        budget = op.tail_bound(sup_src + self.spec.cost_sup) + interp + ham_interp
        return self._grid(v, g, lam=float(lam), error_budget=budget,
                          gradient_constant=op.gradient_constant), trace

    def residual(self, v, lam, extra=None):
        """``sup |v - T_lam[l0 + extra + H_min(grad v)]|`` over the reporting window."""
        op = self.operator(lam)
        bv, _, _, _ = self.base(lam)
        if v.gradient_values is None:
            raise ValueError("residual needs a gradient grid")
        g = v.gradient_values.reshape(op.n_nodes, -1)
        rv, _ = op.apply(self._hamiltonian(g))
        total = bv + rv
        if extra is not None:
            total = total + op.apply(np.asarray(extra, float).ravel())[0]
        return self._sup(v.values.ravel() - total)

    def anchor(self, mu):
        """Continuation anchor ``nu`` (``cfg.nu`` or ``1.5 lambda0``), validated against ``mu``."""
        nu = self.cfg.nu if self.cfg.nu is not None else 1.5 * self.lambda0()
        if nu < mu:
            if self.cfg.nu is not None:
                raise ConfigError(f"continuation anchor nu={nu:.4g} is below target mu={mu:.4g}")
            nu = mu
        return nu

    def continuation(self, mu, init=None, nu=None):
        """Solve at ``mu`` through ``u_{j+1} = R(nu)[l0 + (nu - mu) u_j]``.

        Stops when the a-posteriori bound ``delta r / (1 - r)``, ``r = (nu-mu)/nu``,
        falls below ``tau_out``.
        """
        cfg = self.cfg
        if not mu > 0:
            raise ConfigError("target discount must be positive")
        nu = self.anchor(mu) if nu is None else float(nu)
        if nu < mu:
            raise ConfigError(f"continuation anchor nu={nu:.4g} is below target mu={mu:.4g}")
        if nu == mu:
            v, trace = self.picard(mu, init=init)
            trace.inner_iterations = [trace.iterations]
            v.meta.update(nu=nu, residual=self.residual(v, mu))
            return v, trace
        r = (nu - mu) / nu
        inner_tol = min(cfg.tau_pic, 0.1 * cfg.tau_out)
        n = len(self.nodes)
        u = init
        trace = ConvergenceTrace()
        t0 = time.perf_counter()
        stall = 0
        for _ in range(cfg.max_outer):
            extra = (nu - mu) * (np.zeros(n) if u is None else u.values.ravel())
            v, inner = self.picard(nu, init=u, extra=extra, tol=inner_tol)
            delta = self._sup(v.values.ravel() - (0.0 if u is None else u.values.ravel()))
            prev = trace.deltas[-1] if trace.deltas else np.inf
            trace.record(delta, delta, t0)
            trace.inner_iterations.append(inner.iterations)
            u = v
            if delta * r / (1 - r) <= cfg.tau_out:
                break
            stall = stall + 1 if delta >= prev else 0
            if stall >= 5:
                raise ConvergenceError("continuation stagnated: outer deltas stopped decreasing",
                                       trace=trace)
        else:
            raise ConvergenceError(
                f"continuation did not reach {cfg.tau_out:.1e} in {cfg.max_outer} outer iterations",
                trace=trace)
        v = u
        bound = (_cost_bound(self.l0, self.nodes) + self.spec.cost_sup) / mu
        _check(np.abs(v.values).max() <= bound * (1 + 1e-6) + cfg.tau_out,
               "continuation solution exceeds the bound (|l0| + sup l1) / mu")
        res = self.residual(v, mu)
        budget = v.meta["error_budget"] * nu / mu + cfg.tau_out
        v.meta.update(lam=float(mu), nu=float(nu), residual=res, error_budget=budget)
        return v, trace


def _cost_bound(l0, nodes):
    bound = getattr(l0, "bound", None)
    if bound is not None:
        return float(bound)
    if isinstance(l0, GridFunction):
        return l0.sup_norm()
    if callable(l0):
        return float(np.abs(l0(nodes)).max())
    return abs(float(l0))


def picard_solve(model, l0, spec, lam, cfg=None, init=None):
    """Direct Picard solve at discount ``lam``; returns ``(v, trace)``."""
    cfg = cfg or SolverConfig(lam=lam)
    problem = HJBProblem(model, l0, spec, cfg)
    v, trace = problem.picard(lam, init=init)
    v.meta["residual"] = problem.residual(v, lam)
    return v, trace


def continuation_solve(model, l0, spec, mu, cfg=None, init=None):
    """Solve at any ``mu > 0`` by resolvent-identity continuation from ``nu``."""
    cfg = cfg or SolverConfig(lam=mu)
    return HJBProblem(model, l0, spec, cfg).continuation(mu, init=init)


def solve(model, l0, spec, lam, cfg=None):
    """Direct Picard above the contraction estimate, continuation below it."""
    cfg = cfg or SolverConfig(lam=lam)
    problem = HJBProblem(model, l0, spec, cfg)
    if spec.lipschitz == 0 or lam >= problem.lambda0():
        v, trace = problem.picard(lam)
        v.meta["residual"] = problem.residual(v, lam)
        return v, trace
    return problem.continuation(lam)


def residual(model, v, l0, spec, lam, cfg=None):
    """``sup |v - T_lam[l0 + H_min(grad_B v)]|`` over the grid of ``v``."""
    cfg = cfg or SolverConfig(lam=lam)
    return HJBProblem(model, l0, spec, cfg, axes=v.axes).residual(v, lam)
