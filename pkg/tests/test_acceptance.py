"""Acceptance criteria at their stated tolerances, one summary line each."""

import math
import time

import numpy as np
import pytest

from _oracles import fd_policy_iteration
from _report import record
from mildhjb.cli import run_cli
from mildhjb.grid import GridFunction
from mildhjb.hamiltonian import HamiltonianSpec
from mildhjb.hjb_solver import HJBProblem, SolverConfig, solve
from mildhjb.simulate import Policy, evaluate_policy_cost
from mildhjb.spectral_model import CostSpec, build_heat_model, build_wave_model
from mildhjb.verification import (
    check_linear_resolvent_identity,
    check_lipschitz_bound,
    check_nisio,
    check_nonlinear_resolvent_identity,
    check_smoothing_fit,
    cosine_sample,
    smooth_samples,
)
from mildhjb.grid import uniform_axes

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def problem(scalar_heat, cos_cost, ball):
    return HJBProblem(scalar_heat, cos_cost, ball, SolverConfig())


@pytest.fixture(scope="module")
def value_at_one(problem):
    start = time.perf_counter()
    v = solve(problem.model, problem.l0, problem.spec, 1.0, problem.cfg)[0]
    return v, time.perf_counter() - start


def test_criterion_01_constant_exactness(scalar_heat, zero_control):
    start = time.perf_counter()
    one = CostSpec("cosine", 1.0, (0.0,), 0.0)
    v, _ = solve(scalar_heat, one, zero_control, 0.7, SolverConfig(lam=0.7))
    elapsed = time.perf_counter() - start
    err = float(np.abs(v.values - 1 / 0.7).max())
    ok = err <= 1e-6 and elapsed < 10
    assert record(1, "constant exactness", ok, f"sup error {err:.2e} <= 1e-6, {elapsed:.1f}s < 10s")


def test_criterion_02_linear_identity(scalar_heat, cos_cost):
    start = time.perf_counter()
    rep = check_linear_resolvent_identity(scalar_heat, cos_cost, 0.5, 2.0, tolerance=1e-5)
    elapsed = time.perf_counter() - start
    ok = rep.passed and elapsed < 30
    assert record(2, "linear resolvent identity", ok,
                  f"defect {rep.defect:.2e} <= 1e-5, {elapsed:.1f}s < 30s")


def test_criterion_03_nonlinear_identity(scalar_heat, cos_cost, ball, problem):
    start = time.perf_counter()
    lam0 = problem.lambda0()
    cfg = SolverConfig(tau_pic=1e-5)
    rep = check_nonlinear_resolvent_identity(scalar_heat, cos_cost, ball, lam0, 2 * lam0, cfg)
    elapsed = time.perf_counter() - start
    budget = rep.artifacts["error_budget"]
    tol = 5 * (1e-5 + budget)
    ok = rep.defect <= tol and elapsed < 300
    assert record(3, "nonlinear resolvent identity", ok,
                  f"defect {rep.defect:.2e} <= 5(tau_pic + {budget:.1e}) = {tol:.2e}, {elapsed:.1f}s")


def test_criterion_04_lipschitz(scalar_heat, ball, problem):
    start = time.perf_counter()
    lam0 = problem.lambda0()
    direct = check_lipschitz_bound(scalar_heat, ball, 2 * lam0, 20, tolerance=1.02)
    cont = check_lipschitz_bound(scalar_heat, ball, 0.5 * lam0, 20, tolerance=1.05)
    elapsed = time.perf_counter() - start
    ok = direct.passed and cont.passed and not cont.artifacts["direct"] and elapsed < 600
    assert record(4, "Lipschitz bound", ok,
                  f"direct {direct.defect:.3f} <= 1.02, continuation {cont.defect:.3f} <= 1.05, "
                  f"{elapsed:.0f}s < 600s")


def test_criterion_05_continuation(problem):
    lam0 = problem.lambda0()
    mu, nu = 0.25 * lam0, 1.5 * lam0
    v, trace = problem.continuation(mu, nu=nu)
    ratio = trace.observed_ratio()
    target = (nu - mu) / nu + 0.05
    res = problem.residual(v, mu)
    n = v.values.size
    other = GridFunction(v.axes, np.full(v.shape, 1.0 / mu), np.zeros((n, 1)))
    w, _ = problem.continuation(mu, init=other, nu=nu)
    gap = float(np.abs(v.values - w.values).ravel()[problem.mask].max())
    tau = problem.cfg.tau_out
    ok = ratio <= target and res <= 5e-3 and gap <= 2 * tau
    assert record(5, "continuation convergence", ok,
                  f"ratio {ratio:.4f} <= {target:.4f}, residual {res:.2e} <= 5e-3, "
                  f"init gap {gap:.2e} <= {2 * tau:.0e}")


def test_criterion_06_picard_rate(problem):
    lam = 2 * problem.lambda0()
    _, trace = problem.picard(lam)
    ratio = trace.observed_ratio()
    bound = problem.contraction_bound(lam) + 0.05
    assert record(6, "Picard contraction rate", ratio <= bound,
                  f"observed {ratio:.4f} <= C L_H + 0.05 = {bound:.4f}")


def test_criterion_07_smoothing_exponents():
    start = time.perf_counter()
    wave, wfit, _, _ = check_smoothing_fit(build_wave_model(1, 1.0, 1.0, 1), interval=(0.45, 0.55))
    t_wave = time.perf_counter() - start
    start = time.perf_counter()
    heat = build_heat_model(200, math.pi, 0.25, 2)
    hrep, hfit, _, _ = check_smoothing_fit(heat, interval=(0.4, 1.0))
    t_heat = time.perf_counter() - start
    ok = (wave.passed and hrep.passed and 0.4 < hfit.gamma < 1.0 and hfit.status == "ok"
          and t_wave < 60 and t_heat < 60)
    assert record(7, "smoothing exponents", ok,
                  f"wave {wfit.gamma:.4f} in [0.45, 0.55], heat {hfit.gamma:.4f} in (0.4, 1.0), "
                  f"{t_wave:.1f}s/{t_heat:.1f}s < 60s")


def test_criterion_08_nisio(scalar_heat, ball):
    axes = uniform_axes(np.array([4.0]), 801)
    E = scalar_heat.projected_control
    samples = smooth_samples(axes, E, 11)
    contraction, generator = check_nisio(ball, samples, eps_list=(0.1, 0.05, 0.025), embedding=E,
                                         contraction_tol=1e-8, decrease_factor=2.0,
                                         generator_sample=cosine_sample(axes, E), resolution=1001)
    res = generator.artifacts["residuals"]
    strict = all(b < a for a, b in zip(res, res[1:]))
    ok = contraction.passed and generator.passed and strict
    assert record(8, "Nisio family", ok,
                  f"contraction defect {contraction.defect:.1e} <= 1e-8, residuals "
                  f"{', '.join(f'{r:.2e}' for r in res)} (factor {res[0] / res[-1]:.2f} >= 2)")


def test_criterion_09_oracle(scalar_heat, value_at_one):
    v, elapsed = value_at_one
    b = float(scalar_heat.control_matrix[0, 0])
    x, ref = fd_policy_iteration(1.0, b)
    keep = np.abs(x) <= 4.0
    err = float(np.abs(v(x[keep, None]) - ref[keep]).max())
    ok = err <= 2e-2 and elapsed < 300
    assert record(9, "oracle equivalence", ok, f"L_inf on [-4, 4] {err:.2e} <= 2e-2, {elapsed:.1f}s")


def test_criterion_10_policy_consistency(scalar_heat, cos_cost, ball, value_at_one):
    v, _ = value_at_one
    details, ok = [], True
    policies = [Policy.zero(ball), Policy.constant([0.5], ball), Policy.constant([-0.5], ball)]
    for x0 in (-1.0, 0.0, 1.0):
        value = float(v(np.array([x0])))
        est = evaluate_policy_cost(scalar_heat, ball, cos_cost, [x0], Policy.feedback(ball, v), 1.0,
                                   n_paths=10_000, seed=0)
        inside = value - 0.01 <= est.mean <= value * 1.05 + est.half_width
        worse = [evaluate_policy_cost(scalar_heat, ball, cos_cost, [x0], p, 1.0, n_paths=10_000,
                                      seed=0).mean for p in policies]
        ok &= inside and all(c >= value - 0.01 for c in worse)
        details.append(f"x0={x0:+.0f}: v={value:.4f} mc={est.mean:.4f}+-{est.half_width:.4f} "
                       f"min other={min(worse):.4f}")
    assert record(10, "policy consistency", ok, "; ".join(details))


def test_criterion_11_determinism(tmp_path, heat_config):
    blobs = []
    for k in range(2):
        prefix = tmp_path / f"run{k}" / "out"
        code = run_cli(["solve", "--config", str(heat_config), "--lambda", "3.0", "--plot",
                        "--out-prefix", str(prefix)])
        assert code == 0
        files = sorted(prefix.parent.iterdir())
        blobs.append({f.name: f.read_bytes() for f in files})
    ok = blobs[0] == blobs[1] and len(blobs[0]) == 4
    assert record(11, "determinism", ok, f"{len(blobs[0])} output files byte-identical across runs")
