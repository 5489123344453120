"""Numerical checks of the resolvent identities, Lipschitz bound and Nisio family.

Each check returns a :class:`CheckReport` whose pass flag is exactly
``defect <= tolerance``; every tolerance is an explicit argument.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .gaussian_semigroup import task_rng
from .grid import GridFunction, uniform_axes
from .hamiltonian import HamiltonianSpec, check_concavity, nisio_generator_residual, nisio_step
from .hjb_solver import HJBProblem, ResolventOperator, SolverConfig, solver_axes, window_mask
from .lifting import default_fit_times, fit_smoothing_exponent, smoothing_profile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckReport:
    name: str
    inputs_digest: str
    defect: float
    tolerance: float
    passed: bool
    artifacts: dict = field(default_factory=dict)

    def __post_init__(self):
        defect = float(self.defect)
        if not defect >= 0:
            raise ValueError(f"check {self.name}: defect must be nonnegative, got {defect}")
        object.__setattr__(self, "defect", defect)
        object.__setattr__(self, "passed", bool(defect <= self.tolerance))

    @classmethod
    def make(cls, name, inputs, defect, tolerance, **artifacts):
        return cls(name, digest(inputs), defect, float(tolerance), False, artifacts)

    def to_dict(self):
        return {"name": self.name, "inputs_digest": self.inputs_digest, "defect": self.defect,
                "tolerance": self.tolerance, "passed": self.passed, "artifacts": self.artifacts}


def digest(obj):
    text = json.dumps(obj, sort_keys=True, default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return repr(obj)


@dataclass(frozen=True)
class CosineMixture:
    """``sum_k a_k cos(<w_k, x> + phi_k)``: bounded and uniformly continuous."""

    amplitudes: tuple
    frequencies: tuple
    phases: tuple
    offset: float = 0.0

    @property
    def bound(self):
        return float(np.abs(self.amplitudes).sum() + abs(self.offset))

    def __call__(self, x):
        x = np.asarray(x, float)
        W = np.asarray(self.frequencies, float)
        arg = x @ W.T + np.asarray(self.phases)
        return np.cos(arg) @ np.asarray(self.amplitudes) + self.offset

    def shifted(self, c):
        return CosineMixture(self.amplitudes, self.frequencies, self.phases, self.offset + c)

    def to_dict(self):
        return {"amplitudes": list(self.amplitudes), "frequencies": [list(w) for w in self.frequencies],
                "phases": list(self.phases), "offset": self.offset}

    @classmethod
    def random(cls, rng, dim, n_terms=3, max_freq=2.0):
        a = rng.uniform(-1.0, 1.0, n_terms) / n_terms
        w = rng.uniform(-max_freq, max_freq, (n_terms, dim))
        phi = rng.uniform(0.0, 2 * np.pi, n_terms)
        return cls(tuple(a), tuple(map(tuple, w)), tuple(phi))


def _zero_hamiltonian(model):
    return HamiltonianSpec(control_kind="points", points=((0.0,) * model.d_control,), l1_coeff=0.0)


def _source_values(psi, nodes):
    if isinstance(psi, GridFunction):
        return psi.values.ravel()
    if callable(psi):
        return np.asarray(psi(nodes), float)
    return np.full(len(nodes), float(psi))


def _describe(psi):
    if hasattr(psi, "to_dict"):
        return psi.to_dict()
    if isinstance(psi, GridFunction):
        return {"grid_digest": digest(psi.values)}
    return repr(psi) if callable(psi) else float(psi)


def check_linear_resolvent_identity(model, psi, mu, nu, cfg=None, tolerance=1e-5, spec=None):
    """``sup |T_mu psi - T_nu[psi + (nu - mu) T_mu psi]|`` over the reporting window."""
    if not (mu > 0 and nu > 0) or mu == nu:
        raise ValueError("linear identity needs distinct positive discounts")
    cfg = cfg or SolverConfig()
    axes = solver_axes(model, spec or _zero_hamiltonian(model), cfg)
    op_mu = ResolventOperator(model, axes, mu, cfg)
    op_nu = ResolventOperator(model, axes, nu, cfg)
    nodes = op_mu.nodes
    if isinstance(psi, GridFunction):
        t_mu, _ = op_mu.apply(psi.values.ravel())
    elif callable(psi):
        t_mu, _ = op_mu.apply_callable(psi)
    else:
        t_mu, _ = op_mu.apply_callable(lambda x: np.full(x.shape[:-1], float(psi)))
    rhs, _ = op_nu.apply(_source_values(psi, nodes) + (nu - mu) * t_mu)
    mask = window_mask(model, axes, cfg)
    defect = float(np.abs(t_mu - rhs)[mask].max())
    inputs = {"model": model.to_dict(), "psi": _describe(psi), "mu": mu, "nu": nu, "cfg": cfg}
    return CheckReport.make("linear_resolvent_identity", inputs, defect, tolerance)


def _solve_at(problem, lam, extra=None):
    """Nonlinear resolvent ``R(lam)`` of the problem's source (Picard or continuation)."""
    if problem.spec.lipschitz == 0 or lam >= problem.lambda0() or extra is not None:
        v, _ = problem.picard(lam, extra=extra)
        return v
    v, _ = problem.continuation(lam)
    return v


def check_nonlinear_resolvent_identity(model, psi, spec, mu, nu, cfg=None, tolerance=None):
    """``sup |R(mu) psi - R(nu)(psi + (nu - mu) R(mu) psi)|`` with Picard solves.

    Default tolerance is ``5 (tau_pic + budget)`` with the larger error budget
    of the two solves.
    """
    cfg = cfg or SolverConfig()
    problem = HJBProblem(model, psi, spec, cfg)
    r_mu = _solve_at(problem, mu)
    if mu == nu:
        r_nu = _solve_at(problem, nu)
    else:
        r_nu, _ = problem.picard(nu, extra=(nu - mu) * r_mu.values.ravel())
    budget = max(r_mu.meta["error_budget"], r_nu.meta["error_budget"])
    if tolerance is None:
        tolerance = 2 * cfg.tau_pic if mu == nu else 5 * (cfg.tau_pic + budget)
    defect = float(np.abs(r_mu.values.ravel() - r_nu.values.ravel())[problem.mask].max())
    inputs = {"model": model.to_dict(), "psi": _describe(psi), "spec": repr(spec),
              "mu": mu, "nu": nu, "cfg": cfg}
    return CheckReport.make("nonlinear_resolvent_identity", inputs, defect, tolerance,
                            error_budget=budget)


def check_lipschitz_bound(model, spec, mu, n_pairs=20, cfg=None, seed=0, tolerance=None,
                          n_terms=3, max_freq=2.0):
    """Largest ``mu |R(mu) phi - R(mu) psi| / |phi - psi|`` over random cosine mixtures.

    Numerators are taken over the reporting window, denominators over the
    whole grid.  The default slack is 2% for direct Picard and 5% when
    ``mu`` needs continuation.
    """
    cfg = cfg or SolverConfig()
    problem = HJBProblem(model, 0.0, spec, cfg)
    direct = spec.lipschitz == 0 or mu >= problem.lambda0()
    if tolerance is None:
        tolerance = 1.02 if direct else 1.05
    rng = task_rng(seed, 0)
    nodes = problem.nodes
    ratios = []
    for _ in range(n_pairs):
        phi = CosineMixture.random(rng, model.n_proj, n_terms, max_freq)
        psi = CosineMixture.random(rng, model.n_proj, n_terms, max_freq)
        diff = float(np.abs(phi(nodes) - psi(nodes)).max())
        if diff == 0:
            continue
        a = _solve_at(problem.with_cost(phi), mu)
        b = _solve_at(problem.with_cost(psi), mu)
        num = float(np.abs(a.values.ravel() - b.values.ravel())[problem.mask].max())
        ratios.append(mu * num / diff)
    inputs = {"model": model.to_dict(), "spec": repr(spec), "mu": mu, "n_pairs": n_pairs,
              "seed": seed, "cfg": cfg}
    return CheckReport.make("lipschitz_bound", inputs, max(ratios), tolerance,
                            ratios=ratios, direct=direct)


def smooth_samples(axes, embedding, n, seed=0):
    """Random smooth grid functions with exact B-gradient grids."""
    rng = task_rng(seed, 1)
    dim = len(axes)
    nodes = GridFunction(axes, np.zeros(tuple(len(a) for a in axes))).nodes()
    E = np.asarray(embedding, float).reshape(dim, -1)
    out = []
    for _ in range(n):
        f = CosineMixture.random(rng, dim, 3, 1.5)
        W = np.asarray(f.frequencies)
        arg = nodes @ W.T + np.asarray(f.phases)
        grad = -(np.sin(arg) * np.asarray(f.amplitudes)) @ W  # (N, dim)
        shape = tuple(len(a) for a in axes)
        out.append(GridFunction(axes, f(nodes).reshape(shape), (grad @ E).reshape(shape + (-1,))))
    return out


def cosine_sample(axes, embedding):
    """``u(x) = cos(x_1)`` with its exact B-gradient grid."""
    shape = tuple(len(a) for a in axes)
    nodes = GridFunction(axes, np.zeros(shape)).nodes()
    grad = np.zeros_like(nodes)
    grad[:, 0] = -np.sin(nodes[:, 0])
    E = np.asarray(embedding, float).reshape(len(axes), -1)
    return GridFunction(axes, np.cos(nodes[:, 0]).reshape(shape), (grad @ E).reshape(shape + (-1,)))


def check_nisio(spec, u_samples, t_list=(0.1, 0.5, 1.0), eps_list=(0.1, 0.05, 0.025),
                embedding=None, M=None, contraction_tol=1e-8, decrease_factor=2.0,
                generator_sample=None, resolution=None):
    """Contraction of the discrete Nisio step and its generator limit.

    Returns two reports.  The contraction defect is the worst excess of
    ``|N u - N v| / |u - v|`` over 1 across consecutive sample pairs.  The
    generator defect, measured on ``generator_sample`` (default the first
    sample), is ``r_last / r_first`` along ``eps_list`` when the residuals
    strictly decrease, else the worst step ratio (>= 1); it must not exceed
    ``1 / decrease_factor``.  ``resolution`` sets the auxiliary control grid,
    whose spacing puts an eps-independent floor under the residual.
    """
    if len(u_samples) < 2:
        raise ValueError("check_nisio needs at least two samples")
    if M is None:
        gsup = max(float(np.abs(u.gradient_values).max()) for u in u_samples)
        M = spec.nisio_bound(gsup)
    worst = 0.0
    for u, v in zip(u_samples[:-1], u_samples[1:]):
        base = float(np.abs(u.values - v.values).max())
        for t in t_list:
            nu_ = nisio_step(spec, u, t, embedding=embedding, M=M, resolution=resolution)
            nv_ = nisio_step(spec, v, t, embedding=embedding, M=M, resolution=resolution)
            worst = max(worst, float(np.abs(nu_.values - nv_.values).max()) / base - 1.0)
    inputs = {"spec": repr(spec), "t": list(t_list), "eps": list(eps_list), "M": M,
              "samples": [digest(u.values) for u in u_samples]}
    contraction = CheckReport.make("nisio_contraction", inputs, max(worst, 0.0), contraction_tol)
    probe = u_samples[0] if generator_sample is None else generator_sample
    res = [nisio_generator_residual(spec, probe, e, embedding=embedding, M=M, resolution=resolution)
           for e in eps_list]
    steps = [b / a for a, b in zip(res[:-1], res[1:])]
    gen_defect = res[-1] / res[0] if all(s < 1 for s in steps) else max(steps)
    generator = CheckReport.make("nisio_generator", inputs, gen_defect, 1.0 / decrease_factor,
                                 residuals=res)
    return contraction, generator


def check_smoothing_fit(model, times=None, interval=(0.0, 1.0), lifted=None):
    """Fitted exponent must lie in ``interval``; the defect is its distance outside."""
    times = default_fit_times() if times is None else np.asarray(times, float)
    finite, lifted_norms = smoothing_profile(model, times, lifted)
    fit = fit_smoothing_exponent(times, finite)
    lo, hi = interval
    defect = max(lo - fit.gamma, fit.gamma - hi, 0.0)
    inputs = {"model": model.to_dict(), "times": times, "interval": list(interval)}
    report = CheckReport.make("smoothing_fit", inputs, defect, 0.0, fit=fit.to_dict())
    return report, fit, finite, lifted_norms


def check_concavity_report(spec, n_samples=1000, seed=0):
    rep = check_concavity(spec, n_samples=n_samples, seed=seed)
    return CheckReport.make("hamiltonian_concavity", {"spec": repr(spec), "n": n_samples, "seed": seed},
                            rep.worst_violation, rep.tolerance)


ALL_CHECKS = ("linear_identity", "nonlinear_identity", "lipschitz", "lipschitz_continuation",
              "nisio", "smoothing", "concavity")


def run_all(config, checks=None):
    """Run the configured checks and return their reports sorted by name."""
    from .config import build_objects

    model, cost, spec, cfg = build_objects(config)
    vc = config.verify
    wanted = set(checks or vc.get("checks", ALL_CHECKS))
    unknown = wanted - set(ALL_CHECKS)
    if unknown:
        from .errors import ConfigError
        raise ConfigError(f"unknown checks: {sorted(unknown)}")
    problem = HJBProblem(model, cost, spec, cfg)
    reports = []
    if "concavity" in wanted:
        reports.append(check_concavity_report(spec, vc.get("concavity_samples", 1000), config.seed))
    if "smoothing" in wanted:
        reports.append(check_smoothing_fit(model)[0])
    if "linear_identity" in wanted:
        mu, nu = vc.get("linear_mu", 0.5), vc.get("linear_nu", 2.0)
        reports.append(check_linear_resolvent_identity(model, cost, mu, nu, cfg,
                                                       vc.get("linear_tol", 1e-5), spec))
    lam0 = problem.lambda0() if wanted & {"nonlinear_identity", "lipschitz",
                                          "lipschitz_continuation"} else None
    if "nonlinear_identity" in wanted:
        reports.append(check_nonlinear_resolvent_identity(
            model, cost, spec, lam0, 2 * lam0, cfg, vc.get("nonlinear_tol")))
    n_pairs = vc.get("lipschitz_pairs", 20)
    if "lipschitz" in wanted:
        rep = check_lipschitz_bound(model, spec, 2 * lam0, n_pairs, cfg, config.seed,
                                    vc.get("lipschitz_tol", 1.02))
        reports.append(rep)
    if "lipschitz_continuation" in wanted:
        rep = check_lipschitz_bound(model, spec, 0.5 * lam0, n_pairs, cfg, config.seed,
                                    vc.get("lipschitz_tol_continuation", 1.05))
        reports.append(CheckReport(rep.name + "_continuation", rep.inputs_digest, rep.defect,
                                   rep.tolerance, False, rep.artifacts))
    if "nisio" in wanted:
        axes = uniform_axes(problem.axes[0][-1] * np.ones(model.n_proj) * 0.8,
                            vc.get("nisio_nodes", 801 if model.n_proj == 1 else 41))
        E = model.projected_control
        samples = smooth_samples(axes, E, vc.get("nisio_pairs", 10) + 1, config.seed)
        reports.extend(check_nisio(spec, samples, vc.get("nisio_t", (0.1, 0.5, 1.0)),
                                   vc.get("nisio_eps", (0.1, 0.05, 0.025)), embedding=E,
                                   contraction_tol=vc.get("nisio_tol", 1e-8),
                                   generator_sample=cosine_sample(axes, E),
                                   resolution=vc.get("nisio_resolution", 1001)))
    return sorted(reports, key=lambda r: r.name)
