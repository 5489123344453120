import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mildhjb.config import load_config
from mildhjb.grid import uniform_axes
from mildhjb.hjb_solver import HJBProblem, SolverConfig
from mildhjb.spectral_model import build_wave_model
from mildhjb.verification import (
    CheckReport,
    CosineMixture,
    check_concavity_report,
    check_linear_resolvent_identity,
    check_lipschitz_bound,
    check_nisio,
    check_nonlinear_resolvent_identity,
    check_smoothing_fit,
    cosine_sample,
    digest,
    run_all,
    smooth_samples,
)

COARSE = SolverConfig(n_grid=301)


def test_report_passed_follows_defect():
    assert CheckReport("a", "x", 0.1, 0.2, False).passed
    assert not CheckReport("a", "x", 0.3, 0.2, True).passed
    with pytest.raises(ValueError):
        CheckReport("a", "x", -1.0, 0.2, True)
    with pytest.raises(ValueError):
        CheckReport("a", "x", float("nan"), 0.2, True)
    rep = CheckReport.make("a", {"k": np.arange(3)}, 0.0, 1e-3, extra=[1.0])
    assert json.loads(json.dumps(rep.to_dict()))["passed"] is True


def test_digest_is_stable():
    assert digest({"b": 1, "a": np.float64(2.0)}) == digest({"a": 2.0, "b": 1})
    assert digest({"a": 1}) != digest({"a": 2})


def test_cosine_mixture():
    f = CosineMixture((0.5, -0.25), ((1.0,), (3.0,)), (0.0, 1.0))
    x = np.linspace(-5, 5, 101)[:, None]
    assert np.abs(f(x)).max() <= f.bound
    assert np.allclose(f.shifted(2.0)(x), f(x) + 2.0)
    g = CosineMixture.random(np.random.default_rng(0), 2)
    assert g(np.zeros((4, 2))).shape == (4,)


@pytest.mark.parametrize("mu,nu", [(0.5, 2.0), (2.0, 0.5)])
def test_linear_identity_on_cosine(scalar_heat, cos_cost, mu, nu):
    rep = check_linear_resolvent_identity(scalar_heat, cos_cost, mu, nu)
    assert rep.passed, rep.defect


def test_linear_identity_constant_is_exact(scalar_heat):
    rep = check_linear_resolvent_identity(scalar_heat, 2.0, 0.3, 1.7, COARSE)
    assert rep.defect <= 1e-12


def test_linear_identity_rejects_equal_discounts(scalar_heat, cos_cost):
    with pytest.raises(ValueError):
        check_linear_resolvent_identity(scalar_heat, cos_cost, 1.0, 1.0)


def test_linear_identity_failure_is_reported(scalar_heat, cos_cost):
    rep = check_linear_resolvent_identity(scalar_heat, cos_cost, 0.5, 2.0, COARSE, tolerance=1e-14)
    assert not rep.passed and rep.defect > 0


def test_nonlinear_identity(benchmark, scalar_heat, cos_cost, ball):
    lam0 = benchmark.lambda0()
    rep = check_nonlinear_resolvent_identity(scalar_heat, cos_cost, ball, lam0, 2 * lam0)
    assert rep.passed, (rep.defect, rep.tolerance)
    same = check_nonlinear_resolvent_identity(scalar_heat, cos_cost, ball, 2 * lam0, 2 * lam0)
    assert same.defect == 0.0 and same.passed


def test_lipschitz_direct(scalar_heat, ball):
    lam0 = HJBProblem(scalar_heat, 0.0, ball, COARSE).lambda0()
    rep = check_lipschitz_bound(scalar_heat, ball, 2 * lam0, n_pairs=5, cfg=COARSE)
    assert rep.passed and rep.artifacts["direct"]
    assert len(rep.artifacts["ratios"]) == 5


def test_nisio_checks(ball, scalar_heat):
    axes = uniform_axes(np.array([4.0]), 401)
    E = scalar_heat.projected_control
    samples = smooth_samples(axes, E, 4)
    contraction, generator = check_nisio(ball, samples, embedding=E,
                                         generator_sample=cosine_sample(axes, E), resolution=1001)
    assert contraction.passed, contraction.defect
    assert generator.passed, generator.artifacts["residuals"]
    res = generator.artifacts["residuals"]
    assert res[0] > res[1] > res[2]


def test_nisio_needs_two_samples(ball, scalar_heat):
    axes = uniform_axes(np.array([4.0]), 11)
    with pytest.raises(ValueError):
        check_nisio(ball, smooth_samples(axes, scalar_heat.projected_control, 1))


def test_smoothing_fit_wave_is_half():
    rep, fit, finite, lifted = check_smoothing_fit(build_wave_model(1, 1.0, 1.0, 1))
    assert rep.passed
    assert 0.45 <= fit.gamma <= 0.55
    assert lifted is None and np.all(finite > 0)


def test_concavity_report(ball):
    assert check_concavity_report(ball, 200).passed


def test_run_all_subset(heat_config):
    reports = run_all(load_config(heat_config), ["concavity", "smoothing"])
    assert [r.name for r in reports] == ["hamiltonian_concavity", "smoothing_fit"]
    assert all(r.passed for r in reports)


def test_run_all_unknown_check(heat_config):
    from mildhjb.errors import ConfigError
    with pytest.raises(ConfigError):
        run_all(load_config(heat_config), ["nope"])


@settings(max_examples=5, deadline=None)
@given(st.floats(-1.5, 1.5))
def test_constant_shift_moves_value_by_c_over_lambda(benchmark, c):
    lam = 2 * benchmark.lambda0()
    base, _ = benchmark.picard(lam)
    cost = benchmark.l0
    shifted, _ = benchmark.with_cost(lambda x: cost(x) + c).picard(lam)
    diff = (shifted.values - base.values).ravel()[benchmark.mask]
    assert np.abs(diff - c / lam).max() <= 2 * benchmark.cfg.tau_pic


@settings(max_examples=5, deadline=None)
@given(st.floats(0.0, 1.0))
def test_value_monotone_in_cost(benchmark, c):
    lam = 2 * benchmark.lambda0()
    cost = benchmark.l0
    low, _ = benchmark.with_cost(cost).picard(lam)
    high, _ = benchmark.with_cost(lambda x: cost(x) + c * (1 + np.sin(x[..., 0])) / 2).picard(lam)
    assert np.all(high.values - low.values >= -2 * benchmark.cfg.tau_pic)


def test_contraction_bound_is_below_one_at_lambda0(benchmark):
    lam0 = benchmark.lambda0()
    assert benchmark.contraction_bound(lam0) == pytest.approx(benchmark.cfg.theta_contr, rel=1e-6)
    assert benchmark.contraction_bound(2 * lam0) < benchmark.contraction_bound(lam0)
    assert math.isfinite(lam0)


@pytest.mark.parametrize("coarse", [(2, 2), (3, 2)])
def test_linear_defect_drops_when_time_nodes_double(scalar_heat, cos_cost, coarse):
    nh, npan = coarse
    a = check_linear_resolvent_identity(scalar_heat, cos_cost, 0.5, 2.0,
                                        SolverConfig(n_head=nh, n_panel=npan))
    b = check_linear_resolvent_identity(scalar_heat, cos_cost, 0.5, 2.0,
                                        SolverConfig(n_head=2 * nh, n_panel=2 * npan))
    assert b.defect <= 0.5 * a.defect


def test_reports_are_reproducible(scalar_heat, ball):
    a = check_lipschitz_bound(scalar_heat, ball, 6.0, n_pairs=3, cfg=COARSE, seed=7)
    b = check_lipschitz_bound(scalar_heat, ball, 6.0, n_pairs=3, cfg=COARSE, seed=7)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    c = check_lipschitz_bound(scalar_heat, ball, 6.0, n_pairs=3, cfg=COARSE, seed=8)
    assert c.inputs_digest != a.inputs_digest


def test_injectivity_probe(benchmark):
    lam = 2 * benchmark.lambda0()
    cost = benchmark.l0
    base, _ = benchmark.picard(lam)
    rng = np.random.default_rng(2)
    for _ in range(3):
        bump = CosineMixture.random(rng, 1)
        scale = 0.1 / float(np.abs(bump(benchmark.nodes)).max())
        other, _ = benchmark.with_cost(lambda x: cost(x) + scale * bump(x)).picard(lam)
        gap = float(np.abs(other.values - base.values).max())
        assert gap >= 10 * benchmark.cfg.tau_pic
