"""Minimized Hamiltonian, feedback map and the discrete Nisio family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import GridFunction

BALL, BOX, POINTS = "ball", "box", "points"
QUADRATIC, TABLE = "quadratic", "table"


@dataclass(frozen=True)
class HamiltonianSpec:
    """Control set ``U``, control cost ``l1`` and search settings.

    ``control_kind`` is ``"ball"`` (``radius``, ``dim``), ``"box"``
    (``lower``/``upper``) or ``"points"`` (``points``, shape ``(n, d_U)``).
    ``l1_kind`` is ``"quadratic"`` (``l1_coeff * |u|^2``) or ``"table"``
    (``l1_table`` aligned with ``points``).  A callable ``l1`` overrides both
    and switches ball/box minimization to grid search.
    """

    control_kind: str = BALL
    radius: float = 1.0
    dim: int = 1
    lower: tuple = None
    upper: tuple = None
    points: tuple = None
    l1_kind: str = QUADRATIC
    l1_coeff: float = 0.5
    l1_table: tuple = None
    l1: object = None
    search_resolution: int = 201
    nisio_M: float = None

    def __post_init__(self):
        kind = self.control_kind
        if kind == BALL:
            if not (np.isfinite(self.radius) and self.radius >= 0):
                raise ConfigError("ball radius must be finite and >= 0")
        elif kind == BOX:
            lo = np.atleast_1d(np.asarray(self.lower, float))
            hi = np.atleast_1d(np.asarray(self.upper, float))
            if lo.shape != hi.shape or np.any(lo > hi) or not np.all(np.isfinite(lo + hi)):
                raise ConfigError("box needs finite lower <= upper of equal length")
            object.__setattr__(self, "lower", tuple(lo))
            object.__setattr__(self, "upper", tuple(hi))
            object.__setattr__(self, "dim", len(lo))
        elif kind == POINTS:
            pts = np.asarray(self.points if self.points is not None else (), float)
            if pts.size == 0 or not np.all(np.isfinite(pts)):
                raise ConfigError("finite control set needs at least one finite point")
            pts = pts.reshape(len(pts), -1) if pts.ndim < 2 else pts
            if pts.ndim != 2:
                raise ConfigError("finite control set needs at least one finite point")
            object.__setattr__(self, "points", tuple(map(tuple, pts)))
            object.__setattr__(self, "dim", pts.shape[1])
        else:
            raise ConfigError(f"unknown control kind {kind!r}")
        if self.l1 is None:
            if self.l1_kind == QUADRATIC:
                if self.l1_coeff < 0:
                    raise ConfigError("nonconvex control cost (l1_coeff < 0) is not supported")
            elif self.l1_kind == TABLE:
                if kind != POINTS or self.l1_table is None or len(self.l1_table) != len(self.points):
                    raise ConfigError("table control cost needs one value per control point")
                object.__setattr__(self, "l1_table", tuple(float(v) for v in self.l1_table))
            else:
                raise ConfigError(f"unknown l1 kind {self.l1_kind!r}")
        if self.search_resolution < 3:
            raise ConfigError("search_resolution must be >= 3")

    @property
    def d_control(self):
        return self.dim

    @property
    def control_points(self):
        return np.asarray(self.points, float)

    @property
    def lipschitz(self):
        """``Lip(H_min) = sup_U |u|``."""
        if self.control_kind == BALL:
            return float(self.radius)
        if self.control_kind == BOX:
            return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))
        return float(np.linalg.norm(self.control_points, axis=1).max())

    def cost(self, u):
        """``l1(u)`` for controls of shape ``(..., d_U)``."""
        u = np.asarray(u, float)
        if self.l1 is not None:
            return np.asarray(self.l1(u), float)
        if self.l1_kind == QUADRATIC:
            return self.l1_coeff * np.sum(u * u, axis=-1)
        pts = self.control_points
        match = np.all(np.isclose(u[..., None, :], pts), axis=-1)
        if not np.all(match.any(axis=-1)):
            raise ValueError("table control cost evaluated off the control set")
        return np.asarray(self.l1_table)[match.argmax(axis=-1)]

    @property
    def cost_sup(self):
        """``sup_U |l1|``."""
        if self.control_kind == POINTS:
            return float(np.abs(self.cost(self.control_points)).max())
        if self.l1 is None:
            return self.l1_coeff * self.lipschitz ** 2
        return float(np.abs(self.cost(_control_grid(self, self.search_resolution))).max())

    def contains(self, u, tol=1e-9):
        u = np.asarray(u, float)
        if self.control_kind == BALL:
            return np.linalg.norm(u, axis=-1) <= self.radius + tol
        if self.control_kind == BOX:
            return np.all((u >= np.asarray(self.lower) - tol) & (u <= np.asarray(self.upper) + tol), axis=-1)
        d = np.linalg.norm(u[..., None, :] - self.control_points, axis=-1)
        return d.min(axis=-1) <= tol

    def nisio_bound(self, grad_sup=0.0):
        """``M``; defaults to ``2 max(sup_U |u|, |grad^B v|)``."""
        if self.nisio_M is not None:
            return float(self.nisio_M)
        return 2.0 * max(self.lipschitz, float(grad_sup), 1e-12)


def _control_grid(spec, res):
    d = spec.dim
    if spec.control_kind == BOX:
        axes = [np.linspace(lo, hi, res) for lo, hi in zip(spec.lower, spec.upper)]
    else:
        axes = [np.linspace(-spec.radius, spec.radius, res)] * d
    u = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    if spec.control_kind == BALL:
        u = u[np.linalg.norm(u, axis=-1) <= spec.radius * (1 + 1e-12)]
    return u


def _lexicographic_argmin(values, candidates, rtol=1e-12):
    """Row-wise argmin over candidates; ties go to the lexicographically smallest."""
    best = values.min(axis=-1, keepdims=True)
    tie = values <= best + rtol * np.maximum(1.0, np.abs(best))
    order = np.lexsort(candidates.T[::-1])
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    ranked = np.where(tie, rank[None, :], len(order))
    return ranked.argmin(axis=-1)


def _search(spec, p):
    """Grid search with one local refinement pass; returns (value, argmin)."""
    res = spec.search_resolution
    cand = _control_grid(spec, res)
    vals = p @ cand.T + spec.cost(cand)[None, :]
    u0 = cand[_lexicographic_argmin(vals, cand)]
    if spec.control_kind == BOX:
        step = (np.asarray(spec.upper) - np.asarray(spec.lower)) / (res - 1)
    else:
        step = np.full(spec.dim, 2 * spec.radius / (res - 1))
    offs = np.linspace(-1.0, 1.0, 21)
    local = np.stack([m.ravel() for m in np.meshgrid(*([offs] * spec.dim), indexing="ij")], axis=-1)
    fine = u0[:, None, :] + local[None, :, :] * step
    if spec.control_kind == BOX:
        fine = np.clip(fine, spec.lower, spec.upper)
    else:
        nrm = np.linalg.norm(fine, axis=-1, keepdims=True)
        fine = np.where(nrm > spec.radius, fine * spec.radius / np.maximum(nrm, 1e-300), fine)
    fvals = np.einsum("pd,pkd->pk", p, fine) + spec.cost(fine)
    k = fvals.argmin(axis=-1)
    rows = np.arange(len(p))
    return fvals[rows, k], fine[rows, k]


def _minimize(spec, p):
    p = np.asarray(p, float)
    lead = p.shape[:-1]
    p2 = p.reshape(-1, spec.dim)
    if spec.control_kind == POINTS:
        pts = spec.control_points
        vals = p2 @ pts.T + spec.cost(pts)[None, :]
        idx = _lexicographic_argmin(vals, pts)
        rows = np.arange(len(p2))
        return vals[rows, idx].reshape(lead), pts[idx].reshape(lead + (spec.dim,))
    if spec.l1 is not None:
        v, u = _search(spec, p2)
        return v.reshape(lead), u.reshape(lead + (spec.dim,))
    c = spec.l1_coeff
    if spec.control_kind == BALL:
        R = spec.radius
        norm = np.linalg.norm(p2, axis=-1)
        if c > 0:
            u = -p2 / (2 * c)
            unorm = norm / (2 * c)
            over = unorm > R
            u[over] *= (R / unorm[over])[:, None]
        else:
            u = np.where(norm[:, None] > 0, -R * p2 / np.where(norm > 0, norm, 1.0)[:, None], 0.0)
            zero = norm == 0
            u[zero] = 0.0
            u[zero, 0] = -R
    else:
        lo, hi = np.asarray(spec.lower), np.asarray(spec.upper)
        if c > 0:
            u = np.clip(-p2 / (2 * c), lo, hi)
        else:
            u = np.where(p2 < 0, hi, lo) * np.ones_like(p2)
    vals = np.sum(p2 * u, axis=-1) + c * np.sum(u * u, axis=-1)
    return vals.reshape(lead), u.reshape(lead + (spec.dim,))


def h_min(spec, p):
    """``H_min(p) = inf_{u in U} <p, u> + l1(u)`` for ``p`` of shape ``(..., d_U)``."""
    return _minimize(spec, p)[0]


def h_cv(spec, p, u):
    """Current-value Hamiltonian ``<p, u> + l1(u)``."""
    p, u = np.asarray(p, float), np.asarray(u, float)
    return np.sum(p * u, axis=-1) + spec.cost(u)


def feedback_control(spec, p):
    """A minimizer of ``<p, .> + l1`` over ``U`` (lexicographic tie-break)."""
    return _minimize(spec, p)[1]


def _p_ball_grid(d, M, res):
    axis = np.linspace(-M, M, res)
    p = np.stack([m.ravel() for m in np.meshgrid(*([axis] * d), indexing="ij")], axis=-1)
    return p[np.linalg.norm(p, axis=-1) <= M * (1 + 1e-12)], axis[1] - axis[0]


def nisio_g(spec, alpha, M=None):
    """``g(alpha) = sup_{|p| <= M} H_min(p) - <alpha, p>`` by refined grid search."""
    M = spec.nisio_bound() if M is None else float(M)
    alpha = np.asarray(alpha, float)
    lead = alpha.shape[:-1]
    a2 = alpha.reshape(-1, spec.dim)
    p, step = _p_ball_grid(spec.dim, M, spec.search_resolution)
    hp = h_min(spec, p)
    vals = hp[None, :] - a2 @ p.T
    p0 = p[vals.argmax(axis=-1)]
    offs = np.linspace(-1.0, 1.0, 21) * step
    local = np.stack([m.ravel() for m in np.meshgrid(*([offs] * spec.dim), indexing="ij")], axis=-1)
    fine = p0[:, None, :] + local[None, :, :]
    nrm = np.linalg.norm(fine, axis=-1, keepdims=True)
    fine = np.where(nrm > M, fine * M / np.maximum(nrm, 1e-300), fine)
    fvals = h_min(spec, fine) - np.einsum("ad,akd->ak", a2, fine)
    return np.maximum(fvals.max(axis=-1), vals.max(axis=-1)).reshape(lead)


def nisio_control_grid(spec, M, resolution=None):
    """Sampled auxiliary controls in the ball ``|a| <= M`` (contains 0)."""
    res = resolution or spec.search_resolution
    res = res + 1 - res % 2
    return _p_ball_grid(spec.dim, M, res)[0]


def nisio_step(spec, u, eps, substeps=1, embedding=None, M=None, resolution=None):
    """Discrete Nisio operator with constant auxiliary controls.

    ``N u(x) = min_a  eps g(a) + u(x + eps E a)`` over a sampled ball
    ``|a| <= M``, where ``E`` (``embedding``, shape ``(n_proj, d_U)``) is the
    projected control operator.  ``substeps > 1`` composes steps of size
    ``eps / substeps``.
    """
    if not eps > 0:
        raise ValueError("nisio_step needs eps > 0")
    if embedding is None:
        embedding = np.eye(u.dim, spec.dim)
    embedding = np.asarray(embedding, float).reshape(u.dim, spec.dim)
    if M is None:
        gsup = 0.0 if u.gradient_values is None else float(np.abs(u.gradient_values).max())
        M = spec.nisio_bound(gsup)
    a = nisio_control_grid(spec, M, resolution)
    ga = nisio_g(spec, a, M)
    h = eps / substeps
    nodes = u.nodes()
    shift = a @ embedding.T
    cur = u
    for _ in range(substeps):
        moved = cur(nodes[:, None, :] + h * shift[None, :, :])
        vals = (h * ga[None, :] + moved).min(axis=-1)
        cur = GridFunction(u.axes, vals.reshape(u.shape))
    return cur


def nisio_generator_residual(spec, u, eps, embedding=None, M=None, resolution=None):
    """``sup |(N_eps u - u)/eps - H_min(grad^B u)|`` over grid nodes."""
    n = nisio_step(spec, u, eps, embedding=embedding, M=M, resolution=resolution)
    target = h_min(spec, u.gradient_values.reshape(u.size, -1)).reshape(u.shape)
    return float(np.abs((n.values - u.values) / eps - target).max())


@dataclass(frozen=True)
class ConcavityReport:
    passed: bool
    worst_violation: float
    tolerance: float
    n_samples: int


def search_tolerance(spec):
    """Worst-case error of the minimization used by :func:`h_min`."""
    if spec.control_kind == POINTS or spec.l1 is None:
        return 1e-9
    # refined spacing is step/10; a Lipschitz cost moves at most that much
    step = 2 * spec.lipschitz / (spec.search_resolution - 1) / 10
    return 1e-9 + step * (1.0 + spec.lipschitz) * 4


def check_concavity(spec, n_samples=1000, seed=0, scale=None):
    """Midpoint concavity of ``H_min`` on random pairs."""
    rng = np.random.default_rng(seed)
    scale = scale or 4.0 * max(1.0, spec.lipschitz)
    p = rng.uniform(-scale, scale, (n_samples, spec.dim))
    q = rng.uniform(-scale, scale, (n_samples, spec.dim))
    gap = 0.5 * (h_min(spec, p) + h_min(spec, q)) - h_min(spec, 0.5 * (p + q))
    worst = float(max(gap.max(), 0.0))
    tol = search_tolerance(spec)
    return ConcavityReport(worst <= tol, worst, tol, n_samples)
